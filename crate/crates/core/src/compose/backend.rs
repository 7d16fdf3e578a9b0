//! Backends answer one layer turn at a time with the layer's JSON.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::chat::{ChatClient, ChatError, ChatMessage, SamplingParams};
use crate::codec::{ConversationRecord, LayerInput};
use crate::model::{Canvas, CanvasState, Element, ElementAttributes, LayerPlan, SemanticRole};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("replay transcript: {0}")]
    Replay(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    /// Different seeds can give different answers.
    pub sampling: bool,
    /// `respond` may be called from several threads at once.
    pub parallel: bool,
}

/// Everything a backend may look at when answering turn `turn`.
#[derive(Debug)]
pub struct LayerRequest<'a> {
    /// 1-based turn number, equal to the layer's placement order.
    pub turn: usize,
    /// 0 for the first try, then one more per parse-repair retry.
    pub attempt: usize,
    pub role: SemanticRole,
    pub input: &'a LayerInput,
    /// Conversation so far, ending with this turn's user message.
    pub messages: &'a [ChatMessage],
    pub canvas: &'a Canvas,
    pub elements: &'a [Element],
    pub plan: &'a LayerPlan,
    /// Canvas state before this layer.
    pub state: &'a CanvasState,
    /// Attributes accepted so far, including given members of this layer.
    pub placed: &'a BTreeMap<String, ElementAttributes>,
    pub sampling: SamplingParams,
    /// Seed of a sampled variant; `None` for a plain composition.
    pub variant: Option<u64>,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    fn respond(&self, req: &LayerRequest<'_>) -> Result<String, BackendError>;
}

/// Replays the assistant turns of a recorded conversation.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    record: ConversationRecord,
}

impl ReplayBackend {
    pub fn new(record: ConversationRecord) -> Self {
        Self { record }
    }

    /// Loads the record for `design_id` from a JSONL export, or the first
    /// record when no id is given.
    pub fn from_jsonl(path: &Path, design_id: Option<&str>) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path)
            .map_err(|e| BackendError::Replay(format!("{}: {e}", path.display())))?;
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Replay(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ConversationRecord = serde_json::from_str(&line)
                .map_err(|e| BackendError::Replay(format!("line {}: {e}", n + 1)))?;
            if design_id.is_none_or(|id| id == record.design_id) {
                return Ok(Self::new(record));
            }
        }
        Err(BackendError::Replay(match design_id {
            Some(id) => format!("no record for design `{id}` in {}", path.display()),
            None => format!("{} holds no records", path.display()),
        }))
    }

    pub fn record(&self) -> &ConversationRecord {
        &self.record
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            sampling: false,
            parallel: true,
        }
    }

    fn respond(&self, req: &LayerRequest<'_>) -> Result<String, BackendError> {
        let turn = self
            .record
            .turns
            .get(req.turn - 1)
            .ok_or_else(|| BackendError::Replay(format!("transcript has no turn {}", req.turn)))?;
        if turn.layer != req.role {
            return Err(BackendError::Replay(format!(
                "turn {} is recorded for the {} layer, not {}",
                req.turn, turn.layer, req.role
            )));
        }
        Ok(turn.assistant.clone())
    }
}

/// Chat-completions model answering from the full message history.
#[derive(Debug)]
pub struct RemoteChatBackend {
    client: ChatClient,
}

impl RemoteChatBackend {
    pub fn new(client: ChatClient) -> Self {
        Self { client }
    }
}

impl Backend for RemoteChatBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            sampling: true,
            parallel: true,
        }
    }

    fn respond(&self, req: &LayerRequest<'_>) -> Result<String, BackendError> {
        Ok(self.client.complete(req.messages, req.sampling)?)
    }
}
