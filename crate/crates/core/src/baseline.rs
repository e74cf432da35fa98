//! Parametric linear-softmax classifier, the head-to-head counterpart of the
//! nonparametric decision rule: one weight column and bias per class, trained
//! with softmax cross-entropy on the same encoders and data.

use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_transpose_a, matmul_transpose_b, Matrix};
use crate::rng::Prng;

/// d x C weight matrix (one column per class) and length-C bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl LinearClassifier {
    /// Seeded uniform weights in [-1/sqrt(d), 1/sqrt(d)], zero bias.
    pub fn init(dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if dim == 0 || num_classes == 0 {
            return Err(Error::Config("classifier needs dim >= 1 and classes >= 1".into()));
        }
        let mut rng = Prng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let mut w = Matrix::zeros(dim, num_classes);
        for v in w.data_mut() {
            *v = rng.uniform_in(-scale, scale);
        }
        Ok(Self {
            w,
            b: vec![0.0; num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.w.cols()
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }
}

/// Logits = X W + b broadcast over rows.
pub fn linear_logits(x: &Matrix, clf: &LinearClassifier) -> Result<Matrix> {
    if x.cols() != clf.w.rows() {
        return Err(Error::Shape(format!(
            "features have width {}, classifier expects {}",
            x.cols(),
            clf.w.rows()
        )));
    }
    let mut logits = matmul(x, &clf.w)?;
    for n in 0..logits.rows() {
        for (v, &bias) in logits.row_mut(n).iter_mut().zip(&clf.b) {
            *v += bias;
        }
    }
    Ok(logits)
}

/// Mean softmax cross-entropy with stabilized softmax and exact gradients for
/// the features, the weights, and the bias.
pub fn softmax_ce_loss(
    x: &Matrix,
    labels: &[usize],
    clf: &LinearClassifier,
) -> Result<(f64, Matrix, Matrix, Vec<f64>)> {
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
    let c = clf.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
    }
    let logits = linear_logits(x, clf)?;
    let n = x.rows();
    let inv_n = 1.0 / n as f64;

    let mut loss = 0.0;
    // dL/dlogits, needed for all three parameter gradients.
    let mut dlogits = Matrix::zeros(n, c);
    for ni in 0..n {
        let row = logits.row(ni);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exp: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        loss += inv_n * (sum.ln() + max - row[labels[ni]]);
        for ci in 0..c {
            let p = exp[ci] / sum;
            let indicator = if ci == labels[ni] { 1.0 } else { 0.0 };
            dlogits.set(ni, ci, inv_n * (p - indicator));
        }
    }

    let grad_x = matmul_transpose_b(&dlogits, &clf.w)?; // N x d
    let grad_w = matmul_transpose_a(x, &dlogits)?; // d x C
    let grad_b: Vec<f64> = (0..c)
        .map(|ci| (0..n).map(|ni| dlogits.get(ni, ci)).sum())
        .collect();
    Ok((loss, grad_x, grad_w, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_mixed_rel_err, numeric_grad};
    use crate::rng::Prng;

    fn random_features(rng: &mut Prng, n: usize, d: usize) -> Matrix {
        Matrix::from_rows(&(0..n).map(|_| rng.unit_vector(d)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let clf = LinearClassifier {
            w: Matrix::zeros(3, 2),
            b: vec![0.0; 2],
        };
        let x = Matrix::from_rows(&[vec![0.3, -0.4, 0.8]]).unwrap();
        let logits = linear_logits(&x, &clf).unwrap();
        assert_eq!(logits.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn identity_weights_pass_basis_rows_through() {
        let mut w = Matrix::zeros(3, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        let clf = LinearClassifier { w, b: vec![0.0; 3] };
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let logits = linear_logits(&x, &clf).unwrap();
        assert_eq!(logits, x);
    }

    #[test]
    fn logits_match_dot_product_oracle() {
        let mut rng = Prng::seed_from_u64(2);
        let clf = LinearClassifier::init(5, 3, 7).unwrap();
        let x = random_features(&mut rng, 4, 5);
        let logits = linear_logits(&x, &clf).unwrap();
        for n in 0..4 {
            for c in 0..3 {
                let mut acc = 0.0;
                for j in 0..5 {
                    acc += x.get(n, j) * clf.w.get(j, c);
                }
                acc += clf.b[c];
                assert!((logits.get(n, c) - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    #[allow(clippy::approx_constant)] // frozen oracle value, ln 2
    fn zero_logits_two_classes_is_ln_two() {
        let clf = LinearClassifier {
            w: Matrix::zeros(4, 2),
            b: vec![0.0; 2],
        };
        let mut rng = Prng::seed_from_u64(3);
        let x = random_features(&mut rng, 5, 4);
        let labels = vec![0, 1, 0, 1, 1];
        let (loss, _, _, _) = softmax_ce_loss(&x, &labels, &clf).unwrap();
        assert!((loss - 0.693147181).abs() < 1e-9);
    }

    #[test]
    fn saturated_softmax_loss_vanishes() {
        // Correct logit dominates by +50: loss below 1e-20.
        let mut clf = LinearClassifier {
            w: Matrix::zeros(1, 2),
            b: vec![50.0, 0.0],
        };
        clf.w.set(0, 0, 0.0);
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let (loss, _, _, _) = softmax_ce_loss(&x, &[0], &clf).unwrap();
        assert!(loss < 1e-20, "loss {loss}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        for seed in 0..100u64 {
            let mut rng = Prng::seed_from_u64(seed);
            let n = 1 + rng.below(4);
            let d = 2 + rng.below(4);
            let c = 2 + rng.below(4);
            let clf = LinearClassifier::init(d, c, rng.next_u64()).unwrap();
            let x = random_features(&mut rng, n, d);
            let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();

            let (_, gx, gw, gb) = softmax_ce_loss(&x, &labels, &clf).unwrap();

            let nx = numeric_grad(
                n * d,
                |i, delta| {
                    let mut xp = x.clone();
                    xp.data_mut()[i] += delta;
                    softmax_ce_loss(&xp, &labels, &clf).unwrap().0
                },
                h,
            );
            assert!(max_mixed_rel_err(gx.data(), &nx) < 1e-4, "grad_x seed {seed}");

            let nw = numeric_grad(
                d * c,
                |i, delta| {
                    let mut cp = clf.clone();
                    cp.w.data_mut()[i] += delta;
                    softmax_ce_loss(&x, &labels, &cp).unwrap().0
                },
                h,
            );
            assert!(max_mixed_rel_err(gw.data(), &nw) < 1e-4, "grad_w seed {seed}");

            let nb = numeric_grad(
                c,
                |i, delta| {
                    let mut cp = clf.clone();
                    cp.b[i] += delta;
                    softmax_ce_loss(&x, &labels, &cp).unwrap().0
                },
                h,
            );
            assert!(max_mixed_rel_err(&gb, &nb) < 1e-4, "grad_b seed {seed}");
        }
    }

    #[test]
    fn constant_logit_shift_changes_nothing() {
        let mut rng = Prng::seed_from_u64(11);
        let clf = LinearClassifier::init(4, 3, 5).unwrap();
        let mut shifted = clf.clone();
        for b in shifted.b.iter_mut() {
            *b += 7.5;
        }
        let x = random_features(&mut rng, 6, 4);
        let labels: Vec<usize> = (0..6).map(|_| rng.below(3)).collect();
        let (l0, gx0, gw0, gb0) = softmax_ce_loss(&x, &labels, &clf).unwrap();
        let (l1, gx1, gw1, gb1) = softmax_ce_loss(&x, &labels, &shifted).unwrap();
        assert!((l0 - l1).abs() < 1e-12);
        assert!(max_mixed_rel_err(gx0.data(), gx1.data()) < 1e-12);
        assert!(max_mixed_rel_err(gw0.data(), gw1.data()) < 1e-12);
        assert!(max_mixed_rel_err(&gb0, &gb1) < 1e-12);
    }

    #[test]
    fn grad_b_equals_softmax_minus_onehot_column_mean() {
        let mut rng = Prng::seed_from_u64(13);
        let clf = LinearClassifier::init(3, 4, 17).unwrap();
        let x = random_features(&mut rng, 8, 3);
        let labels: Vec<usize> = (0..8).map(|_| rng.below(4)).collect();
        let (_, _, _, gb) = softmax_ce_loss(&x, &labels, &clf).unwrap();

        let logits = linear_logits(&x, &clf).unwrap();
        let mut expected = vec![0.0; 4];
        for n in 0..8 {
            let row = logits.row(n);
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exp: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            for c in 0..4 {
                let onehot = if labels[n] == c { 1.0 } else { 0.0 };
                expected[c] += (exp[c] / sum - onehot) / 8.0;
            }
        }
        assert!(max_mixed_rel_err(&gb, &expected) < 1e-12);
    }
}
