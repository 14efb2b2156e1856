//! OpenAI-compatible embeddings endpoint client.
//!
//! Wire shape: `POST {model, input: [texts]}` returning
//! `{data: [{index, embedding}]}`. Responses are reordered by `index` so the
//! output order always matches the input order, and every vector is checked
//! against the configured dimension.

use serde::{Deserialize, Serialize};

use crate::embedder::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::remote::{HttpProvider, RemoteProviderConfig};

pub const DEFAULT_MAX_BATCH: usize = 128;

pub struct RemoteEmbedder {
    http: HttpProvider,
    model: String,
    dim: usize,
    max_batch: usize,
}

impl RemoteEmbedder {
    /// `dim` is declared up front (it is part of the provider contract) and
    /// enforced on every response.
    pub fn new(config: &RemoteProviderConfig, dim: usize, max_batch: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArg(
                "embedding dimension must be at least 1".to_string(),
            ));
        }
        if max_batch == 0 {
            return Err(Error::InvalidArg(
                "embedding batch size must be at least 1".to_string(),
            ));
        }
        Ok(RemoteEmbedder {
            http: HttpProvider::new("embeddings", config)?,
            model: config.model.clone(),
            dim,
            max_batch,
        })
    }

    fn embed_chunk(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let body = EmbeddingsRequest {
            model: &self.model,
            input: texts,
        };
        let response: EmbeddingsResponse = self.http.post_json(&body)?;
        if response.data.len() != texts.len() {
            return Err(Error::Provider {
                provider: "embeddings".to_string(),
                message: format!(
                    "expected {} embeddings, got {}",
                    texts.len(),
                    response.data.len()
                ),
                retryable: false,
                retry_after: None,
            });
        }
        let mut data = response.data;
        data.sort_by_key(|d| d.index);
        data.into_iter()
            .map(|d| {
                let vector = EmbeddingVector::new(d.embedding)?;
                if vector.dim() != self.dim {
                    return Err(Error::DimensionMismatch {
                        left: self.dim,
                        right: vector.dim(),
                    });
                }
                Ok(vector)
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn provider_id(&self) -> &str {
        "openai-compatible"
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if let Some(_empty) = texts.iter().find(|t| t.trim().is_empty()) {
            return Err(Error::EmptyText);
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.max_batch) {
            out.extend(self.embed_chunk(chunk)?);
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f32>,
}
