//! Knowledge store: documents, targeted queries, and immutable snapshots.
//!
//! A [`StoreSnapshot`] is never mutated in place. Injection produces a new
//! snapshot so a clean baseline and a poisoned run can coexist in one
//! experiment. Every document carries its [`Origin`] so downstream metrics
//! (recall, detection TPR) can tell benign and injected texts apart without
//! guessing from content.
//!
//! On-disk formats:
//! * raw corpus: line-delimited JSON records `{"id", "text"}`
//! * queries: line-delimited JSON records
//!   `{"id", "question", "correct_answer", "targeted_answer"}`
//! * store: a single JSON container with a `schema_version` field

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a document came from. Injected documents remember the query they
/// were crafted for; that link is the ground truth behind recall and TPR.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Benign,
    Injected {
        query_id: String,
    },
}

impl Origin {
    pub fn is_injected(&self) -> bool {
        matches!(self, Origin::Injected { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub origin: Origin,
}

impl Document {
    pub fn benign(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            origin: Origin::Benign,
        }
    }
}

/// A question the attacker wants answered with `targeted_answer` instead of
/// `correct_answer`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetedQuery {
    pub id: String,
    pub question: String,
    pub correct_answer: String,
    pub targeted_answer: String,
}

impl TargetedQuery {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        correct_answer: impl Into<String>,
        targeted_answer: impl Into<String>,
    ) -> Result<Self> {
        let query = TargetedQuery {
            id: id.into(),
            question: question.into(),
            correct_answer: correct_answer.into(),
            targeted_answer: targeted_answer.into(),
        };
        query.validate()?;
        Ok(query)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidQuery {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("id is empty"));
        }
        if self.question.trim().is_empty() {
            return Err(invalid("question is empty"));
        }
        if self.correct_answer.trim().is_empty() {
            return Err(invalid("correct answer is empty"));
        }
        if self.targeted_answer.trim().is_empty() {
            return Err(invalid("targeted answer is empty"));
        }
        if self.correct_answer == self.targeted_answer {
            return Err(invalid("targeted answer equals the correct answer"));
        }
        Ok(())
    }
}

/// Prefix for ids of injected documents; the suffix is the owning query id.
pub const POISON_ID_PREFIX: &str = "poison:";

/// Deterministic id for the single poison allowed per query.
pub fn poison_doc_id(query_id: &str) -> String {
    format!("{POISON_ID_PREFIX}{query_id}")
}

/// An immutable view of the knowledge database. Documents keep ingestion
/// order; `injected_index` maps query id to the id of its injected document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreSnapshot {
    documents: Vec<Document>,
    injected_index: BTreeMap<String, String>,
}

impl StoreSnapshot {
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut injected_index = BTreeMap::new();
        for doc in &documents {
            if !seen.insert(doc.id.clone()) {
                return Err(Error::DuplicateDocId { id: doc.id.clone() });
            }
            if let Origin::Injected { query_id } = &doc.origin {
                if injected_index
                    .insert(query_id.clone(), doc.id.clone())
                    .is_some()
                {
                    return Err(Error::PoisonConstraint {
                        query_id: query_id.clone(),
                    });
                }
            }
        }
        Ok(StoreSnapshot {
            documents,
            injected_index,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Id of the document injected for `query_id`, if any.
    pub fn injected_for(&self, query_id: &str) -> Option<&str> {
        self.injected_index.get(query_id).map(String::as_str)
    }

    pub fn injected_index(&self) -> &BTreeMap<String, String> {
        &self.injected_index
    }

    /// Returns a new snapshot with one poisoned document appended per entry.
    /// Each entry is `(query_id, full_text)`. At most one injected document
    /// may exist per query across the whole store, so a second poison for the
    /// same query (in this batch or already present) is rejected.
    pub fn inject<'a, I>(&self, poisons: I) -> Result<StoreSnapshot>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut documents = self.documents.clone();
        let mut injected_index = self.injected_index.clone();
        let mut ids: HashSet<String> = documents.iter().map(|d| d.id.clone()).collect();
        for (query_id, full_text) in poisons {
            if injected_index.contains_key(query_id) {
                return Err(Error::PoisonConstraint {
                    query_id: query_id.to_string(),
                });
            }
            let id = poison_doc_id(query_id);
            if !ids.insert(id.clone()) {
                return Err(Error::DuplicateDocId { id });
            }
            injected_index.insert(query_id.to_string(), id.clone());
            documents.push(Document {
                id,
                text: full_text.to_string(),
                origin: Origin::Injected {
                    query_id: query_id.to_string(),
                },
            });
        }
        Ok(StoreSnapshot {
            documents,
            injected_index,
        })
    }

    /// Returns a new snapshot with extra benign documents appended. Ids must
    /// not collide with existing ones.
    pub fn with_benign<'a, I>(&self, extra: I) -> Result<StoreSnapshot>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut documents = self.documents.clone();
        let mut ids: HashSet<String> = documents.iter().map(|d| d.id.clone()).collect();
        for (id, text) in extra {
            if !ids.insert(id.to_string()) {
                return Err(Error::DuplicateDocId { id: id.to_string() });
            }
            documents.push(Document::benign(id, text));
        }
        Ok(StoreSnapshot {
            documents,
            injected_index: self.injected_index.clone(),
        })
    }

    pub fn persist<W: Write>(&self, writer: W) -> Result<()> {
        let container = StoreContainer {
            schema_version: STORE_SCHEMA_VERSION,
            documents: self.documents.clone(),
            injected_index: self.injected_index.clone(),
        };
        serde_json::to_writer_pretty(writer, &container)?;
        Ok(())
    }

    pub fn persist_to_path(&self, path: &Path) -> Result<()> {
        self.persist(File::create(path)?)
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let container: StoreContainer = serde_json::from_reader(reader)?;
        if container.schema_version != STORE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: container.schema_version,
                supported: STORE_SCHEMA_VERSION,
            });
        }
        let snapshot = StoreSnapshot::from_documents(container.documents)?;
        // The stored index is redundant with document origins; a mismatch
        // means the file was edited by hand.
        if snapshot.injected_index != container.injected_index {
            return Err(Error::Config(
                "store file injected_index disagrees with document origins".to_string(),
            ));
        }
        Ok(snapshot)
    }

    pub fn load_from_path(path: &Path) -> Result<Self> {
        StoreSnapshot::load(File::open(path)?)
    }
}

const STORE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoreContainer {
    schema_version: u32,
    documents: Vec<Document>,
    #[serde(default)]
    injected_index: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawCorpusRecord {
    id: String,
    text: String,
}

/// Reads a raw line-delimited corpus into a benign snapshot. Blank lines are
/// skipped; anything else that fails to parse aborts with its line number.
pub fn ingest_corpus<R: BufRead>(reader: R) -> Result<StoreSnapshot> {
    let mut documents = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawCorpusRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: index + 1,
                reason: e.to_string(),
            })?;
        documents.push(Document::benign(record.id, record.text));
    }
    StoreSnapshot::from_documents(documents)
}

pub fn ingest_corpus_from_path(path: &Path) -> Result<StoreSnapshot> {
    ingest_corpus(BufReader::new(File::open(path)?))
}

/// Reads targeted queries from line-delimited JSON, validating each record
/// and rejecting duplicate ids.
pub fn load_queries<R: BufRead>(reader: R) -> Result<Vec<TargetedQuery>> {
    let mut queries: Vec<TargetedQuery> = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let query: TargetedQuery =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: index + 1,
                reason: e.to_string(),
            })?;
        query.validate()?;
        if !seen.insert(query.id.clone()) {
            return Err(Error::MalformedRecord {
                line: index + 1,
                reason: format!("duplicate query id \"{}\"", query.id),
            });
        }
        queries.push(query);
    }
    Ok(queries)
}

pub fn load_queries_from_path(path: &Path) -> Result<Vec<TargetedQuery>> {
    load_queries(BufReader::new(File::open(path)?))
}
