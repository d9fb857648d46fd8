//! Scripted mock backend.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// How a scripted or observed attempt failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Retryable (connection error, 5xx, 429, scripted failure).
    Transient,
    Timeout,
    /// Body not parseable under the wire format; not retried.
    Malformed,
    /// Any other non-retryable failure.
    Fatal,
}

impl FailureKind {
    pub fn is_retryable(self) -> bool {
        matches!(self, FailureKind::Transient | FailureKind::Timeout)
    }
}

/// One scripted step: a reply text or a failure marker.
///
/// In JSON a reply is a bare string and a failure is `{"fail": "transient"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockEntry {
    Reply(String),
    Failure { fail: FailureKind },
}

impl MockEntry {
    pub fn reply(s: impl Into<String>) -> Self {
        MockEntry::Reply(s.into())
    }

    pub fn fail() -> Self {
        MockEntry::Failure { fail: FailureKind::Transient }
    }
}

impl From<&str> for MockEntry {
    fn from(s: &str) -> Self {
        MockEntry::Reply(s.to_string())
    }
}

#[derive(Debug, Default)]
pub(crate) struct MockState {
    default: VecDeque<MockEntry>,
    keyed: Vec<(String, VecDeque<MockEntry>)>,
}

pub(crate) enum Pop {
    Entry(MockEntry),
    Exhausted,
}

impl MockState {
    pub fn set_default(&mut self, script: Vec<MockEntry>) {
        self.default = script.into();
    }

    pub fn set_keyed(&mut self, key: String, script: Vec<MockEntry>) {
        match self.keyed.iter_mut().find(|(k, _)| *k == key) {
            Some((_, q)) => *q = script.into(),
            None => self.keyed.push((key, script.into())),
        }
    }

    /// The first registered key contained in `text` selects its queue;
    /// otherwise the default queue is used.
    pub fn pop(&mut self, text: &str) -> Pop {
        let queue = match self.keyed.iter_mut().find(|(k, _)| text.contains(k.as_str())) {
            Some((_, q)) => q,
            None => &mut self.default,
        };
        match queue.pop_front() {
            Some(e) => Pop::Entry(e),
            None => Pop::Exhausted,
        }
    }

    pub fn remaining(&self) -> usize {
        self.default.len() + self.keyed.iter().map(|(_, q)| q.len()).sum::<usize>()
    }
}
