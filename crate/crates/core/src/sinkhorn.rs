//! Within-class cluster assignment via Sinkhorn-Knopp iteration.
//!
//! Maximizing Tr(Q^T S) over one-hot assignment matrices with an equipartition
//! constraint (each of the K clusters receives N/K samples) is a binary
//! integer program. Relaxing the feasible set to the transportation polytope
//! turns it into an entropic optimal-transport problem whose solution is a
//! normalized exponential of the score matrix. The iteration below alternates
//! row and column rescaling:
//!
//! ```text
//! Q = exp(S / epsilon); Q /= sum(Q)
//! repeat R times:
//!     Q[k,:] /= sum_n Q[k,n];  Q /= K      (row pass)
//!     Q[:,n] /= sum_k Q[k,n];  Q /= N      (column pass)
//! Q *= N
//! ```
//!
//! After the final rescale every column sums to 1 and row sums approach N/K.
//! The equipartition pressure is what prevents the degenerate solution that
//! maps every sample to the same cluster. Hardening takes the per-column
//! argmax.

use crate::error::{Error, Result};
use crate::numerics::{similarity_matrix, Matrix};

/// Temperature and iteration count for the assignment solver.
///
/// Smaller `epsilon` gives sharper (closer to hard) assignments at the cost of
/// slower convergence; `iterations` is the number of row+column passes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub iterations: usize,
}

impl SinkhornConfig {
    pub fn new(epsilon: f64, iterations: usize) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        if iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        Ok(Self {
            epsilon,
            iterations,
        })
    }
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            iterations: 3,
        }
    }
}

/// K x N soft assignment. Entries are nonnegative and every column sums to 1
/// after [`sinkhorn_soft_assign`].
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    values: Matrix,
}

impl AssignmentMatrix {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn clusters(&self) -> usize {
        self.values.rows()
    }

    pub fn samples(&self) -> usize {
        self.values.cols()
    }
}

/// Solve the relaxed assignment for a K x N score matrix.
///
/// The exponential is computed in a shifted log domain (per-matrix max
/// subtracted first), so large score scales never overflow. K > N is allowed;
/// some clusters simply receive no hard member.
pub fn sinkhorn_soft_assign(scores: &Matrix, cfg: &SinkhornConfig) -> Result<AssignmentMatrix> {
    let k = scores.rows();
    let n = scores.cols();
    if k == 0 || n == 0 {
        return Err(Error::Shape(format!("empty score matrix {k}x{n}")));
    }
    if scores.has_non_finite() {
        return Err(Error::DegenerateInput("non-finite score entry".into()));
    }

    let max = scores
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
    let mut q = Matrix::zeros(k, n);
    for i in 0..k {
        for j in 0..n {
            q.set(i, j, ((scores.get(i, j) - max) / cfg.epsilon).exp());
        }
    }

    let total: f64 = q.data().iter().sum();
    scale(&mut q, 1.0 / total);

    for _ in 0..cfg.iterations {
        // Row pass: each row to sum 1, then divide the matrix by K.
        for i in 0..k {
            let s: f64 = q.row(i).iter().sum();
            if s > 0.0 {
                let inv = 1.0 / s;
                for v in q.row_mut(i) {
                    *v *= inv;
                }
            }
        }
        scale(&mut q, 1.0 / k as f64);

        // Column pass: each column to sum 1, then divide the matrix by N.
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..k {
                s += q.get(i, j);
            }
            if s > 0.0 {
                let inv = 1.0 / s;
                for i in 0..k {
                    q.set(i, j, q.get(i, j) * inv);
                }
            }
        }
        scale(&mut q, 1.0 / n as f64);
    }

    scale(&mut q, n as f64);
    Ok(AssignmentMatrix { values: q })
}

fn scale(m: &mut Matrix, factor: f64) {
    for v in m.data_mut() {
        *v *= factor;
    }
}

/// Per-column argmax of the soft assignment; ties go to the smallest cluster
/// index.
pub fn harden(q: &AssignmentMatrix) -> Vec<usize> {
    let m = q.values();
    let mut out = Vec::with_capacity(m.cols());
    for j in 0..m.cols() {
        let mut best_k = 0;
        let mut best = m.get(0, j);
        for i in 1..m.rows() {
            let v = m.get(i, j);
            if v > best {
                best = v;
                best_k = i;
            }
        }
        out.push(best_k);
    }
    out
}

/// Cluster N row-normalized features against K row-normalized centroids:
/// scores = centroid-to-feature similarities, soft-assigned then hardened.
pub fn cluster_class(
    features: &Matrix,
    centroids: &Matrix,
    cfg: &SinkhornConfig,
) -> Result<Vec<usize>> {
    let scores = similarity_matrix(centroids, features)?;
    let q = sinkhorn_soft_assign(&scores, cfg)?;
    Ok(harden(&q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use proptest::prelude::*;

    fn random_scores(rng: &mut Prng, k: usize, n: usize) -> Matrix {
        let mut m = Matrix::zeros(k, n);
        for i in 0..k {
            for j in 0..n {
                m.set(i, j, rng.uniform_in(-1.0, 1.0));
            }
        }
        m
    }

    fn column_sums(q: &AssignmentMatrix) -> Vec<f64> {
        let m = q.values();
        (0..m.cols())
            .map(|j| (0..m.rows()).map(|i| m.get(i, j)).sum())
            .collect()
    }

    fn row_sums(q: &AssignmentMatrix) -> Vec<f64> {
        q.values().iter_rows().map(|r| r.iter().sum()).collect()
    }

    /// Enumerate every balanced hard assignment (cluster sizes all floor or
    /// ceil of N/K) and return the best trace objective sum_n S[a(n), n].
    pub(crate) fn best_balanced_trace(scores: &Matrix) -> f64 {
        let k = scores.rows();
        let n = scores.cols();
        let lo = n / k;
        let hi = n.div_ceil(k);
        let mut best = f64::NEG_INFINITY;
        let mut assign = vec![0usize; n];
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assign {
                counts[a] += 1;
            }
            if counts.iter().all(|&c| c >= lo && c <= hi) {
                let trace: f64 = assign.iter().enumerate().map(|(j, &a)| scores.get(a, j)).sum();
                best = best.max(trace);
            }
            // Odometer increment over K^N assignments.
            let mut pos = 0;
            loop {
                if pos == n {
                    return best;
                }
                assign[pos] += 1;
                if assign[pos] < k {
                    break;
                }
                assign[pos] = 0;
                pos += 1;
            }
        }
    }

    pub(crate) fn trace_of(scores: &Matrix, assign: &[usize]) -> f64 {
        assign
            .iter()
            .enumerate()
            .map(|(j, &a)| scores.get(a, j))
            .sum()
    }

    #[test]
    fn single_cluster_gives_all_ones_row() {
        let mut rng = Prng::seed_from_u64(0);
        for n in [1, 3, 7] {
            let scores = random_scores(&mut rng, 1, n);
            let q = sinkhorn_soft_assign(&scores, &SinkhornConfig::default()).unwrap();
            for &v in q.values().data() {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strongly_diagonal_scores_assign_identity() {
        let scores = Matrix::from_rows(&[vec![10.0, 0.0], vec![0.0, 10.0]]).unwrap();
        let cfg = SinkhornConfig::new(0.05, 3).unwrap();
        let q = sinkhorn_soft_assign(&scores, &cfg).unwrap();
        assert_eq!(harden(&q), vec![0, 1]);
        // Exhaustive check: that assignment is the balanced-trace optimum.
        assert_eq!(best_balanced_trace(&scores), 20.0);
    }

    #[test]
    fn uniform_scores_give_uniform_assignment() {
        let scores = Matrix::from_flat(2, 4, vec![0.3; 8]).unwrap();
        let q = sinkhorn_soft_assign(&scores, &SinkhornConfig::default()).unwrap();
        for &v in q.values().data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_scores_do_not_overflow() {
        let scores = Matrix::from_rows(&[vec![4000.0, -4000.0], vec![-4000.0, 4000.0]]).unwrap();
        let q = sinkhorn_soft_assign(&scores, &SinkhornConfig::default()).unwrap();
        assert!(!q.values().has_non_finite());
        assert_eq!(harden(&q), vec![0, 1]);
    }

    #[test]
    fn column_sums_are_one() {
        let mut rng = Prng::seed_from_u64(1);
        for _ in 0..50 {
            let k = 1 + rng.below(6);
            let n = 1 + rng.below(40);
            let scores = random_scores(&mut rng, k, n);
            let q = sinkhorn_soft_assign(&scores, &SinkhornConfig::default()).unwrap();
            for s in column_sums(&q) {
                assert!((s - 1.0).abs() < 1e-9, "column sum {s}");
            }
        }
    }

    #[test]
    fn row_sums_approach_equipartition_with_more_iterations() {
        let mut rng = Prng::seed_from_u64(2);
        let k = 4;
        let n = 32;
        let scores = random_scores(&mut rng, k, n);
        let loose = sinkhorn_soft_assign(&scores, &SinkhornConfig::new(0.05, 50).unwrap()).unwrap();
        let target = n as f64 / k as f64;
        for s in row_sums(&loose) {
            assert!(
                (s - target).abs() / target < 0.01,
                "row sum {s} not within 1% of {target}"
            );
        }
    }

    /// Frozen equipartition regression bounds, measured over this exact seed
    /// and instance stream: worst relative row-sum deviation 0.9531 at R=3 and
    /// 0.0326 at R=50 (K <= 8, N <= 128 divisible, uniform scores in [-1,1],
    /// eps = 0.05). Asserted with a small headroom so genuine regressions
    /// trip it while rounding jitter does not.
    #[test]
    fn equipartition_deviation_regression() {
        let mut rng = Prng::seed_from_u64(3);
        let mut worst3: f64 = 0.0;
        let mut worst50: f64 = 0.0;
        for _ in 0..300 {
            let k = 1 + rng.below(8);
            let mult = 1 + rng.below(128 / k);
            let n = k * mult;
            let scores = random_scores(&mut rng, k, n);
            let target = n as f64 / k as f64;
            for (r, worst) in [(3usize, &mut worst3), (50, &mut worst50)] {
                let q =
                    sinkhorn_soft_assign(&scores, &SinkhornConfig::new(0.05, r).unwrap()).unwrap();
                for i in 0..k {
                    let s: f64 = q.values().row(i).iter().sum();
                    *worst = worst.max((s - target).abs() / target);
                }
            }
        }
        assert!(worst3 < 0.96, "R=3 worst deviation grew to {worst3}");
        assert!(worst50 < 0.034, "R=50 worst deviation grew to {worst50}");
    }

    #[test]
    fn harden_takes_column_argmax_with_smallest_index_ties() {
        let q = AssignmentMatrix {
            values: Matrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(),
        };
        assert_eq!(harden(&q), vec![0, 1]);
        let tie = AssignmentMatrix {
            values: Matrix::from_rows(&[vec![0.5], vec![0.5]]).unwrap(),
        };
        assert_eq!(harden(&tie), vec![0]);
    }

    #[test]
    fn self_clustering_matches_permutation_oracle() {
        // N = K, centroids equal to the (well separated) features: the optimum
        // over permutations is each sample in its own cluster.
        let mut rng = Prng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..4).map(|_| rng.unit_vector(8)).collect();
        let features = Matrix::from_rows(&rows).unwrap();
        let cfg = SinkhornConfig::new(0.01, 50).unwrap();
        let assign = cluster_class(&features, &features, &cfg).unwrap();

        let scores = similarity_matrix(&features, &features).unwrap();
        let oracle = best_balanced_trace(&scores);
        assert!((trace_of(&scores, &assign) - oracle).abs() < 1e-9);
        assert_eq!(assign, vec![0, 1, 2, 3]);
    }

    #[test]
    fn antipodal_pairs_split_evenly() {
        let dir = vec![1.0, 0.0, 0.0];
        let anti: Vec<f64> = dir.iter().map(|x| -x).collect();
        let features =
            Matrix::from_rows(&[dir.clone(), dir.clone(), anti.clone(), anti.clone()]).unwrap();
        let centroids = Matrix::from_rows(&[dir, anti]).unwrap();
        let cfg = SinkhornConfig::new(0.05, 50).unwrap();
        let assign = cluster_class(&features, &centroids, &cfg).unwrap();
        assert_eq!(assign, vec![0, 0, 1, 1]);
    }

    #[test]
    fn k_equal_one_puts_everything_in_cluster_zero() {
        let mut rng = Prng::seed_from_u64(4);
        let features =
            Matrix::from_rows(&(0..5).map(|_| rng.unit_vector(3)).collect::<Vec<_>>()).unwrap();
        let centroids = Matrix::from_rows(&[rng.unit_vector(3)]).unwrap();
        let assign = cluster_class(&features, &centroids, &SinkhornConfig::default()).unwrap();
        assert_eq!(assign, vec![0; 5]);
    }

    #[test]
    fn more_clusters_than_samples_allowed() {
        let mut rng = Prng::seed_from_u64(5);
        let scores = random_scores(&mut rng, 5, 2);
        let q = sinkhorn_soft_assign(&scores, &SinkhornConfig::default()).unwrap();
        for s in column_sums(&q) {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SinkhornConfig::new(0.0, 3).is_err());
        assert!(SinkhornConfig::new(-1.0, 3).is_err());
        assert!(SinkhornConfig::new(0.05, 0).is_err());
    }

    #[test]
    fn decreasing_epsilon_sharpens_assignments() {
        // Per-column entropy shrinks monotonically as epsilon drops.
        let mut rng = Prng::seed_from_u64(6);
        let scores = random_scores(&mut rng, 3, 9);
        let entropy = |q: &AssignmentMatrix| -> f64 {
            let m = q.values();
            let mut h = 0.0;
            for j in 0..m.cols() {
                for i in 0..m.rows() {
                    let p = m.get(i, j);
                    if p > 0.0 {
                        h -= p * p.ln();
                    }
                }
            }
            h
        };
        let mut last = f64::INFINITY;
        for eps in [0.5, 0.1, 0.05, 0.01] {
            let cfg = SinkhornConfig::new(eps, 3).unwrap();
            let h = entropy(&sinkhorn_soft_assign(&scores, &cfg).unwrap());
            assert!(h <= last + 1e-9, "entropy rose from {last} to {h} at eps={eps}");
            last = h;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        /// With N >= 2K and R >= 3 the equipartition pressure prevents the
        /// all-in-one-cluster degeneracy.
        #[test]
        fn never_collapses_to_single_cluster(seed in 0u64..u64::MAX) {
            let mut rng = Prng::seed_from_u64(seed);
            let k = 2 + rng.below(3);
            let n = 2 * k + rng.below(10);
            let scores = random_scores(&mut rng, k, n);
            let assign = harden(&sinkhorn_soft_assign(&scores, &SinkhornConfig::default()).unwrap());
            let first = assign[0];
            prop_assert!(assign.iter().any(|&a| a != first), "collapsed: {:?}", assign);
        }

        #[test]
        fn hardened_matches_per_column_argmax_oracle(seed in 0u64..1000) {
            let mut rng = Prng::seed_from_u64(seed);
            let k = 1 + rng.below(5);
            let n = 1 + rng.below(12);
            let scores = random_scores(&mut rng, k, n);
            let q = sinkhorn_soft_assign(&scores, &SinkhornConfig::default()).unwrap();
            let hardened = harden(&q);
            for j in 0..n {
                let mut best = 0;
                for i in 0..k {
                    if q.values().get(i, j) > q.values().get(best, j) {
                        best = i;
                    }
                }
                prop_assert_eq!(hardened[j], best);
            }
        }
    }
}
