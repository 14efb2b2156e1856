//! OpenAI-compatible chat completions client.
//!
//! Wire shape: `POST {model, messages: [{role, content}], temperature,
//! max_tokens}`. Prompts are sent as a single user message, matching how the
//! prompt blocks are written (one self-contained block, no separate system
//! turn). Token usage comes from the response when present, otherwise from a
//! whitespace-token fallback so the ledger never silently stalls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{whitespace_tokens, ChatParams, ChatProvider, Completion, TokenUsage};
use crate::remote::{HttpProvider, RemoteProviderConfig};

pub struct RemoteChat {
    http: HttpProvider,
    model: String,
    id: String,
}

impl RemoteChat {
    pub fn new(config: &RemoteProviderConfig) -> Result<Self> {
        Ok(RemoteChat {
            http: HttpProvider::new("chat", config)?,
            model: config.model.clone(),
            id: format!("openai-compatible:{}", config.model),
        })
    }
}

impl ChatProvider for RemoteChat {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str, params: &ChatParams) -> Result<Completion> {
        let body = ChatRequestBody {
            model: &self.model,
            messages: vec![MessageBody {
                role: "user",
                content: prompt,
            }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let response: ChatResponseBody = self.http.post_json(&body)?;
        let choice = response.choices.into_iter().next().ok_or_else(|| Error::Provider {
            provider: self.id.clone(),
            message: "response contained no choices".to_string(),
            retryable: false,
            retry_after: None,
        })?;
        let text = choice.message.content;
        let usage = match response.usage {
            Some(u) => TokenUsage {
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
            },
            None => TokenUsage {
                input_tokens: whitespace_tokens(prompt),
                output_tokens: whitespace_tokens(&text),
            },
        };
        Ok(Completion { text, usage })
    }
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: Vec<MessageBody<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct MessageBody<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<ChoiceBody>,
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct ChoiceBody {
    message: ChoiceMessageBody,
}

#[derive(Deserialize)]
struct ChoiceMessageBody {
    content: String,
}

#[derive(Deserialize)]
struct UsageBody {
    prompt_tokens: u64,
    completion_tokens: u64,
}
