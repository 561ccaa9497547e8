use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    /// Stands in for a turn that could not be produced (e.g. an upstream
    /// failure). Only placeholder turns may carry empty text.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub placeholder: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConversationError {
    #[error("turn index {found} breaks contiguity (expected {expected})")]
    NonContiguous { expected: usize, found: usize },
    #[error("turn {0} has empty text but is not a placeholder")]
    EmptyTurn(usize),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Conversation {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ..Self::default()
        }
    }

    /// Appends a turn with the next contiguous index.
    pub fn push(
        &mut self,
        speaker: Speaker,
        text: impl Into<String>,
        timestamp: Option<DateTime<Utc>>,
    ) -> &Turn {
        let index = self.turns.len();
        self.turns.push(Turn {
            speaker,
            text: text.into(),
            index,
            timestamp,
            placeholder: false,
        });
        &self.turns[index]
    }

    pub fn push_placeholder(&mut self, speaker: Speaker, timestamp: Option<DateTime<Utc>>) {
        let index = self.turns.len();
        self.turns.push(Turn {
            speaker,
            text: String::new(),
            index,
            timestamp,
            placeholder: true,
        });
    }

    pub fn last(&self) -> Option<&Turn> {
        self.turns.last()
    }

    /// The most recent non-placeholder turn by `speaker`, searching strictly
    /// before position `before`.
    pub fn last_by(&self, speaker: Speaker, before: usize) -> Option<&Turn> {
        self.turns[..before.min(self.turns.len())]
            .iter()
            .rev()
            .find(|t| t.speaker == speaker && !t.placeholder)
    }

    pub fn validate(&self) -> Result<(), ConversationError> {
        for (expected, turn) in self.turns.iter().enumerate() {
            if turn.index != expected {
                return Err(ConversationError::NonContiguous {
                    expected,
                    found: turn.index,
                });
            }
            if turn.text.is_empty() && !turn.placeholder {
                return Err(ConversationError::EmptyTurn(turn.index));
            }
        }
        Ok(())
    }
}
