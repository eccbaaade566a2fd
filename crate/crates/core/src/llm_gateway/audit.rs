use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::choice::ChoiceOutcome;
use crate::kg_store::EntityId;
use crate::prompt_forge::PromptKind;

/// One gateway call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// SHA-256 of the serialized request body, hex.
    pub request_hash: String,
    pub prompt_kind: PromptKind,
    pub source: EntityId,
    pub permutation_index: usize,
    pub raw_response: Option<String>,
    pub outcome: Option<ChoiceOutcome>,
    pub error: Option<String>,
    pub latency_ms: u64,
}

/// Append-only JSONL sink shared by all callers.
#[derive(Debug)]
pub struct AuditLog {
    out: Mutex<BufWriter<File>>,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn record(&self, rec: &AuditRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(rec).map_err(std::io::Error::other)?;
        let mut w = self.out.lock().expect("audit log poisoned");
        writeln!(w, "{line}")?;
        w.flush()
    }
}
