//! Nearest-sub-centroid decision rule and its training loss.
//!
//! A sample's score for class c is its best cosine similarity over the class's
//! sub-centroids; prediction is winner-takes-all over all (class, sub) pairs.
//! The loss is cross-entropy over the per-class best scores. Gradients flow
//! only into the embeddings: the bank is a buffer moved by momentum updates,
//! never by backprop. Per class, the gradient routes through the winning
//! sub-centroid only (the subgradient of the max; ties pick the smallest k,
//! which keeps runs deterministic).

use crate::bank::SubCentroidBank;
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

/// Winner-takes-all outcome for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_id: usize,
    /// (class, sub-centroid) pair that won globally.
    pub winning_sub: (usize, usize),
    /// Per-class best cosine similarity.
    pub class_scores: Vec<f64>,
}

/// Temperature applied to similarities before the softmax. The similarities
/// live in [-1, 1], so a raw softmax over them is nearly uniform; a larger
/// temperature restores usable gradients. Default 1.0 applies the loss to raw
/// similarities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
}

impl LossConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        Ok(Self { temperature })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { temperature: 1.0 }
    }
}

/// N x C matrix of per-class best similarities plus, for gradient routing,
/// the winning sub-centroid index per (sample, class).
#[derive(Clone, Debug)]
pub struct ClassScores {
    pub scores: Matrix,
    winners: Vec<usize>,
}

impl ClassScores {
    /// Winning sub-centroid of class `c` for sample `n` (ties already broken
    /// toward the smallest k).
    pub fn winner(&self, n: usize, c: usize) -> usize {
        self.winners[n * self.scores.cols() + c]
    }
}

/// Best similarity per class: entry (n, c) = max_k x_n . p^c_k.
pub fn class_scores(x: &Matrix, bank: &SubCentroidBank) -> Result<ClassScores> {
    if x.cols() != bank.dim() {
        return Err(Error::Shape(format!(
            "features have width {}, bank expects {}",
            x.cols(),
            bank.dim()
        )));
    }
    let n = x.rows();
    let c = bank.num_classes();
    let mut scores = Matrix::zeros(n, c);
    let mut winners = vec![0usize; n * c];
    for ni in 0..n {
        let row = x.row(ni);
        for ci in 0..c {
            let centroids = bank.class_centroids(ci);
            let mut best = f64::NEG_INFINITY;
            let mut best_k = 0;
            for ki in 0..centroids.rows() {
                let sim = dot(row, centroids.row(ki));
                if sim > best {
                    best = sim;
                    best_k = ki;
                }
            }
            scores.set(ni, ci, best);
            winners[ni * c + ci] = best_k;
        }
    }
    Ok(ClassScores { scores, winners })
}

/// Winner-takes-all prediction for every row of `x`. Class ties break toward
/// the smallest class id.
pub fn predict(x: &Matrix, bank: &SubCentroidBank) -> Result<Vec<Prediction>> {
    let cs = class_scores(x, bank)?;
    let c = bank.num_classes();
    let mut out = Vec::with_capacity(x.rows());
    for n in 0..x.rows() {
        let mut best_class = 0;
        for ci in 1..c {
            if cs.scores.get(n, ci) > cs.scores.get(n, best_class) {
                best_class = ci;
            }
        }
        out.push(Prediction {
            class_id: best_class,
            winning_sub: (best_class, cs.winner(n, best_class)),
            class_scores: cs.scores.row(n).to_vec(),
        });
    }
    Ok(out)
}

/// Mean cross-entropy over per-class best similarities, and its exact
/// gradient with respect to the embeddings (bank treated as constant).
///
/// Softmax is computed with max-shift stabilization. Returns
/// (loss, dloss/dx as an N x d matrix).
pub fn dnc_loss(
    x: &Matrix,
    labels: &[usize],
    bank: &SubCentroidBank,
    cfg: &LossConfig,
) -> Result<(f64, Matrix)> {
    if x.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows vs {} labels",
            x.rows(),
            labels.len()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if x.has_non_finite() {
        return Err(Error::DegenerateInput("NaN or Inf in features".into()));
    }
    let c = bank.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
    }

    let cs = class_scores(x, bank)?;
    let n = x.rows();
    let tau = cfg.temperature;
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad_x = Matrix::zeros(n, x.cols());

    for ni in 0..n {
        let logits: Vec<f64> = (0..c).map(|ci| tau * cs.scores.get(ni, ci)).collect();
        let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let log_sum = sum.ln() + max;
        loss += inv_n * (log_sum - logits[labels[ni]]);

        for ci in 0..c {
            let p = exp[ci] / sum;
            let indicator = if ci == labels[ni] { 1.0 } else { 0.0 };
            let coeff = inv_n * tau * (p - indicator);
            let winning = bank.centroid(ci, cs.winner(ni, ci));
            let g = grad_x.row_mut(ni);
            for (gj, &pj) in g.iter_mut().zip(winning) {
                *gj += coeff * pj;
            }
        }
    }
    Ok((loss, grad_x))
}
