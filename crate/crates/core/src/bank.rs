//! The sub-centroid bank: the nonparametric "classifier".
//!
//! Each class c owns K_c unit-norm sub-centroids. They are never touched by
//! backpropagation; the trainer moves them with momentum blends of batch
//! cluster means, and can later anchor each one to the embedding of a real
//! training sample for exemplar-level explanations.

use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, Matrix};
use crate::rng::Prng;

/// Per-class sub-centroid matrices, all rows unit-norm.
///
/// `anchor_ids`, when present, records for every (class, sub) pair the index
/// of the training sample whose embedding the centroid equals bitwise.
#[derive(Clone, Debug, PartialEq)]
pub struct SubCentroidBank {
    classes: Vec<Matrix>,
    dim: usize,
    anchor_ids: Option<Vec<Vec<usize>>>,
}

/// Momentum coefficient for sub-centroid updates. 1 freezes the bank,
/// 0 replaces each centroid by its latest cluster mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumConfig {
    pub mu: f64,
}

impl MomentumConfig {
    pub fn new(mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::Config(format!("mu must be in [0,1], got {mu}")));
        }
        Ok(Self { mu })
    }
}

/// Outcome of a momentum update: which sub-centroids moved, and which hit the
/// degenerate zero-norm blend and were left unchanged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentumOutcome {
    pub updated: Vec<usize>,
    pub degenerate: Vec<usize>,
}

impl SubCentroidBank {
    /// Uniform K for every class; centroids drawn as seeded random unit
    /// vectors, so the same seed always produces the same bank.
    pub fn init(num_classes: usize, per_class: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::init_per_class(&vec![per_class; num_classes], dim, seed)
    }

    /// Static per-class cluster counts.
    pub fn init_per_class(per_class: &[usize], dim: usize, seed: u64) -> Result<Self> {
        if per_class.is_empty() {
            return Err(Error::Config("bank needs at least one class".into()));
        }
        if dim == 0 {
            return Err(Error::Config("bank dimension must be >= 1".into()));
        }
        if per_class.contains(&0) {
            return Err(Error::Config("every class needs at least one sub-centroid".into()));
        }
        let mut rng = Prng::seed_from_u64(seed);
        let classes = per_class
            .iter()
            .map(|&k| {
                let rows: Vec<Vec<f64>> = (0..k).map(|_| rng.unit_vector(dim)).collect();
                Matrix::from_rows(&rows).expect("unit vectors are finite and equal length")
            })
            .collect();
        Ok(Self {
            classes,
            dim,
            anchor_ids: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cluster count for class `c`.
    pub fn k_for(&self, c: usize) -> usize {
        self.classes[c].rows()
    }

    pub fn class_centroids(&self, c: usize) -> &Matrix {
        &self.classes[c]
    }

    pub fn centroid(&self, c: usize, k: usize) -> &[f64] {
        self.classes[c].row(k)
    }

    pub fn anchor_ids(&self) -> Option<&Vec<Vec<usize>>> {
        self.anchor_ids.as_ref()
    }

    pub fn is_anchored(&self) -> bool {
        self.anchor_ids.is_some()
    }

    /// Rebuild from raw per-class matrices (used by checkpoint loading).
    pub fn from_parts(
        classes: Vec<Matrix>,
        dim: usize,
        anchor_ids: Option<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Shape("bank needs at least one class".into()));
        }
        for (c, m) in classes.iter().enumerate() {
            if m.cols() != dim {
                return Err(Error::Shape(format!(
                    "class {c} centroids have width {}, expected {dim}",
                    m.cols()
                )));
            }
        }
        if let Some(ids) = &anchor_ids {
            if ids.len() != classes.len()
                || ids.iter().zip(&classes).any(|(a, m)| a.len() != m.rows())
            {
                return Err(Error::Shape("anchor id table does not match bank shape".into()));
            }
        }
        Ok(Self {
            classes,
            dim,
            anchor_ids,
        })
    }

    /// Momentum blend for class `c`: for every cluster k with a nonzero count,
    /// centroid <- normalize(mu * centroid + (1 - mu) * cluster_mean).
    /// Clusters with count 0 keep their centroid. A blend that cancels to the
    /// zero vector also keeps the old centroid and is reported as degenerate.
    pub fn momentum_update(
        &mut self,
        c: usize,
        cluster_means: &Matrix,
        counts: &[usize],
        cfg: &MomentumConfig,
    ) -> Result<MomentumOutcome> {
        if c >= self.classes.len() {
            return Err(Error::Shape(format!("class {c} out of range")));
        }
        let k = self.classes[c].rows();
        if cluster_means.rows() != k || counts.len() != k {
            return Err(Error::Shape(format!(
                "class {c} expects {k} cluster means, got {} (counts {})",
                cluster_means.rows(),
                counts.len()
            )));
        }
        if cluster_means.cols() != self.dim {
            return Err(Error::Shape(format!(
                "cluster means have width {}, expected {}",
                cluster_means.cols(),
                self.dim
            )));
        }

        let mut outcome = MomentumOutcome::default();
        for ki in 0..k {
            if counts[ki] == 0 {
                continue;
            }
            let blended: Vec<f64> = self.classes[c]
                .row(ki)
                .iter()
                .zip(cluster_means.row(ki))
                .map(|(&old, &mean)| cfg.mu * old + (1.0 - cfg.mu) * mean)
                .collect();
            match l2_normalize(&blended) {
                Ok(unit) => {
                    self.classes[c].row_mut(ki).copy_from_slice(&unit);
                    outcome.updated.push(ki);
                }
                Err(_) => outcome.degenerate.push(ki),
            }
        }
        // Moving a centroid invalidates any anchoring to a concrete sample.
        if !outcome.updated.is_empty() {
            self.anchor_ids = None;
        }
        Ok(outcome)
    }

    /// Replace every sub-centroid by the embedding of its most similar
    /// training sample of the same class (max dot product; ties to the
    /// smallest sample index). Two sub-centroids of one class may anchor to
    /// the same sample.
    pub fn anchor_to_observations(
        &mut self,
        train_features: &Matrix,
        train_labels: &[usize],
    ) -> Result<()> {
        if train_features.rows() != train_labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                train_features.rows(),
                train_labels.len()
            )));
        }
        if train_features.cols() != self.dim {
            return Err(Error::Shape(format!(
                "features have width {}, bank expects {}",
                train_features.cols(),
                self.dim
            )));
        }
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes.len()];
        for (i, &label) in train_labels.iter().enumerate() {
            if label >= self.classes.len() {
                return Err(Error::Data(format!(
                    "label {label} out of range for {} classes",
                    self.classes.len()
                )));
            }
            per_class[label].push(i);
        }
        let empty: Vec<usize> = (0..self.classes.len())
            .filter(|&c| per_class[c].is_empty())
            .collect();
        if !empty.is_empty() {
            return Err(Error::Data(format!(
                "cannot anchor: classes without training samples: {empty:?}"
            )));
        }

        let mut anchors = Vec::with_capacity(self.classes.len());
        for (c, members) in per_class.iter().enumerate() {
            let mut ids = Vec::with_capacity(self.classes[c].rows());
            for ki in 0..self.classes[c].rows() {
                let centroid = self.classes[c].row(ki).to_vec();
                let mut best_id = members[0];
                let mut best_sim = f64::NEG_INFINITY;
                for &i in members {
                    let sim = crate::numerics::dot(&centroid, train_features.row(i));
                    if sim > best_sim {
                        best_sim = sim;
                        best_id = i;
                    }
                }
                ids.push(best_id);
                self.classes[c]
                    .row_mut(ki)
                    .copy_from_slice(train_features.row(best_id));
            }
            anchors.push(ids);
        }
        self.anchor_ids = Some(anchors);
        Ok(())
    }

    /// Re-embed every anchored sample with `embed` and overwrite the
    /// corresponding centroid. Anchor ids are unchanged. `embed` receives the
    /// anchored sample index and must return its current unit-norm embedding.
    pub fn refresh_anchored<F>(&mut self, mut embed: F) -> Result<()>
    where
        F: FnMut(usize) -> Result<Vec<f64>>,
    {
        let anchors = self
            .anchor_ids
            .clone()
            .ok_or_else(|| Error::Contract("refresh_anchored on an unanchored bank".into()))?;
        for (c, ids) in anchors.iter().enumerate() {
            for (ki, &sample_id) in ids.iter().enumerate() {
                let emb = embed(sample_id)?;
                if emb.len() != self.dim {
                    return Err(Error::Shape(format!(
                        "embedding of sample {sample_id} has length {}, expected {}",
                        emb.len(),
                        self.dim
                    )));
                }
                self.classes[c].row_mut(ki).copy_from_slice(&emb);
            }
        }
        Ok(())
    }

    /// Max unit-norm deviation over all centroids; test helper for the bank
    /// invariant.
    pub fn max_norm_deviation(&self) -> f64 {
        self.classes
            .iter()
            .flat_map(|m| m.iter_rows())
            .map(|r| (crate::numerics::l2_norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}
