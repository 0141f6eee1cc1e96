//! What a recommendation request carries: static user features and the
//! interaction history.

use std::sync::Arc;

/// One consumed step: the slate's mean item embedding and the per-behavior
/// feedback fractions observed for it.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub item_embedding: Vec<f64>,
    pub feedback: Vec<f64>,
}

impl HistoryEntry {
    /// `item_embedding ++ feedback`, the raw input of the history projection.
    pub fn raw(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.item_embedding.len() + self.feedback.len());
        v.extend_from_slice(&self.item_embedding);
        v.extend_from_slice(&self.feedback);
        v
    }
}

/// Oldest entry first, newest last. Entries are shared between snapshots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionHistory {
    pub entries: Vec<Arc<HistoryEntry>>,
}

impl InteractionHistory {
    pub fn new(entries: Vec<Arc<HistoryEntry>>) -> Self {
        InteractionHistory { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The newest `n` entries.
    pub fn recent(&self, n: usize) -> &[Arc<HistoryEntry>] {
        &self.entries[self.entries.len().saturating_sub(n)..]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserFeatures(pub Vec<f64>);

/// A user request: the raw input of the state encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub user: usize,
    pub features: UserFeatures,
    pub history: InteractionHistory,
}
