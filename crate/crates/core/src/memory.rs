//! Bounded FIFO of embeddings from prior batches.
//!
//! Small batches may miss classes entirely; clustering over the memory plus
//! the current batch keeps every class represented. Stored embeddings are
//! deliberately stale (never re-encoded as the encoder drifts); the momentum
//! coefficient on the bank compensates. The memory is transient state and is
//! excluded from checkpoints.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    embedding: Vec<f64>,
    label: usize,
    age: u64,
}

/// Global FIFO holding at most `capacity_batches * batch_size` entries,
/// evicting strictly oldest-first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMemory {
    capacity_batches: usize,
    batch_size: usize,
    num_classes: usize,
    entries: VecDeque<Entry>,
    batch_counter: u64,
}

impl FeatureMemory {
    pub fn new(capacity_batches: usize, batch_size: usize, num_classes: usize) -> Self {
        Self {
            capacity_batches,
            batch_size,
            num_classes,
            entries: VecDeque::new(),
            batch_counter: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity_batches * self.batch_size
    }

    /// Append a whole batch (row order preserved), then evict oldest entries
    /// down to capacity. With capacity 0 the memory stays empty and clustering
    /// sees only the current batch.
    pub fn push_batch(&mut self, features: &Matrix, labels: &[usize]) -> Result<()> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        let age = self.batch_counter;
        self.batch_counter += 1;
        for (i, &label) in labels.iter().enumerate() {
            self.entries.push_back(Entry {
                embedding: features.row(i).to_vec(),
                label,
                age,
            });
        }
        while self.entries.len() > self.capacity() {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// All embeddings of class `c`: current-batch rows first (batch order),
    /// then memory rows oldest to newest. Returns the features and the number
    /// of leading rows that came from the current batch. An empty result is
    /// valid; callers skip absent classes.
    pub fn gather_class(
        &self,
        current_features: &Matrix,
        current_labels: &[usize],
        c: usize,
    ) -> (Matrix, usize) {
        let dim = if current_features.cols() > 0 {
            current_features.cols()
        } else {
            self.entries.front().map_or(0, |e| e.embedding.len())
        };
        let mut rows: Vec<&[f64]> = Vec::new();
        for (i, &label) in current_labels.iter().enumerate() {
            if label == c {
                rows.push(current_features.row(i));
            }
        }
        let from_batch = rows.len();
        for entry in &self.entries {
            if entry.label == c {
                rows.push(&entry.embedding);
            }
        }
        let mut out = Matrix::zeros(rows.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(r);
        }
        (out, from_batch)
    }

    /// Labels present in memory, ascending and deduplicated.
    pub fn present_labels(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_classes];
        for e in &self.entries {
            seen[e.label] = true;
        }
        (0..self.num_classes).filter(|&c| seen[c]).collect()
    }
}
