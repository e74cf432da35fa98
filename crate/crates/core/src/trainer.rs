//! Training orchestration: the two-step alternation (class-wise clustering,
//! then sub-centroid classification), evaluation, the coarse-to-fine 1-NN
//! induction protocol, and a classic k-means arm kept as a clustering
//! comparison baseline.
//!
//! One training step, in order: forward the batch; compute the loss and its
//! feature gradient; for every class present in the batch, gather that class
//! from memory plus batch, cluster it, average the batch members of each
//! cluster and momentum-blend the result into the bank; push the batch into
//! the memory; backpropagate and apply the gradient step.
//!
//! Cluster means are computed over current-batch members only; the memory
//! features widen the clustering population and shape the assignment geometry
//! but do not enter the mean.

use crate::bank::{MomentumConfig, SubCentroidBank};
use crate::baseline::{linear_logits, softmax_ce_loss, LinearClassifier};
use crate::error::{Error, Result};
use crate::head::{class_scores, dnc_loss, LossConfig};
use crate::io::dataset::LabeledDataset;
use crate::memory::FeatureMemory;
use crate::net::{EncoderParams, SgdConfig};
use crate::numerics::{dot, l2_normalize, Matrix};
use crate::rng::Prng;
use crate::sinkhorn::{cluster_class, SinkhornConfig};

/// Which classification head to train.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Dnc,
    Softmax,
}

/// Clustering algorithm used for sub-centroid discovery. KMeans exists only
/// as a comparison arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterAlgo {
    Sinkhorn,
    KMeans,
}

/// Sub-centroid count: one global K or a static per-class map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KSpec {
    Global(usize),
    PerClass(Vec<usize>),
}

impl KSpec {
    pub fn resolve(&self, num_classes: usize) -> Result<Vec<usize>> {
        let ks = match self {
            KSpec::Global(k) => vec![*k; num_classes],
            KSpec::PerClass(list) => {
                if list.len() != num_classes {
                    return Err(Error::Config(format!(
                        "per-class K map has {} entries for {num_classes} classes",
                        list.len()
                    )));
                }
                list.clone()
            }
        };
        if ks.contains(&0) {
            return Err(Error::Config("every class needs K >= 1".into()));
        }
        Ok(ks)
    }
}

/// Everything a training run needs; a fixed config and seed reproduce the run
/// bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub classifier: ClassifierKind,
    pub k: KSpec,
    pub mu: f64,
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub memory_batches: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Number of completed epochs after which sub-centroids anchor to real
    /// observations; the remaining epochs run in the anchored regime.
    pub anchor_after_epoch: Option<usize>,
    pub cluster_algo: ClusterAlgo,
    /// Final embedding dimensionality d.
    pub output_dim: usize,
    /// Hidden widths of the encoder.
    pub hidden_dims: Vec<usize>,
    /// Optional polynomial learning-rate decay power; constant rate when off.
    pub poly_decay_power: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            classifier: ClassifierKind::Dnc,
            k: KSpec::Global(4),
            mu: 0.999,
            epsilon: 0.05,
            sinkhorn_iters: 3,
            memory_batches: 8,
            temperature: 1.0,
            learning_rate: 0.5,
            seed: 0,
            anchor_after_epoch: None,
            cluster_algo: ClusterAlgo::Sinkhorn,
            output_dim: 16,
            hidden_dims: vec![64, 64],
            poly_decay_power: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.output_dim == 0 {
            return Err(Error::Config("output dim must be >= 1".into()));
        }
        MomentumConfig::new(self.mu)?;
        SinkhornConfig::new(self.epsilon, self.sinkhorn_iters)?;
        LossConfig::new(self.temperature)?;
        SgdConfig::new(self.learning_rate)?;
        if let Some(a) = self.anchor_after_epoch {
            if a >= self.epochs {
                return Err(Error::Config(format!(
                    "anchor-after-epoch {a} must be < epochs {}",
                    self.epochs
                )));
            }
        }
        if let Some(p) = self.poly_decay_power {
            if !p.is_finite() || p <= 0.0 {
                return Err(Error::Config("poly decay power must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// The classification half of the model state.
#[derive(Clone, Debug, PartialEq)]
pub enum ClassifierState {
    Dnc {
        bank: SubCentroidBank,
        memory: FeatureMemory,
    },
    Softmax(LinearClassifier),
}

/// Full mutable training state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub encoder: EncoderParams,
    pub classifier: ClassifierState,
    pub shuffle_rng: Prng,
    pub cluster_rng: Prng,
    pub completed_epochs: usize,
    pub completed_steps: usize,
    pub total_steps: usize,
}

/// Per-epoch training summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub degenerate_updates: usize,
}

/// Evaluation metrics. When fewer than five classes exist the top-5 figure is
/// trivially 1.0 and flagged undefined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub top1: f64,
    pub top5: f64,
    pub top5_defined: bool,
}

/// Training driver borrowing the dataset.
pub struct Trainer<'a> {
    pub state: TrainState,
    dataset: &'a LabeledDataset,
}

impl TrainState {
    pub fn init(config: TrainConfig, input_dim: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        if num_classes == 0 {
            return Err(Error::Data("dataset has no classes".into()));
        }
        let mut master = Prng::seed_from_u64(config.seed);
        // Fixed fork order: encoder, classifier, shuffle, clustering.
        let encoder_seed = master.next_u64();
        let classifier_seed = master.next_u64();
        let shuffle_rng = master.fork();
        let cluster_rng = master.fork();

        let mut dims = Vec::with_capacity(config.hidden_dims.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&config.hidden_dims);
        dims.push(config.output_dim);
        let encoder = EncoderParams::init(&dims, encoder_seed)?;

        let classifier = match config.classifier {
            ClassifierKind::Dnc => {
                let ks = config.k.resolve(num_classes)?;
                let bank = SubCentroidBank::init_per_class(&ks, config.output_dim, classifier_seed)?;
                let memory =
                    FeatureMemory::new(config.memory_batches, config.batch_size, num_classes);
                ClassifierState::Dnc { bank, memory }
            }
            ClassifierKind::Softmax => ClassifierState::Softmax(LinearClassifier::init(
                config.output_dim,
                num_classes,
                classifier_seed,
            )?),
        };
        Ok(Self {
            config,
            encoder,
            classifier,
            shuffle_rng,
            cluster_rng,
            completed_epochs: 0,
            completed_steps: 0,
            total_steps: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        match &self.classifier {
            ClassifierState::Dnc { bank, .. } => bank.num_classes(),
            ClassifierState::Softmax(clf) => clf.num_classes(),
        }
    }

    fn current_learning_rate(&self) -> f64 {
        match self.config.poly_decay_power {
            None => self.config.learning_rate,
            Some(p) => {
                let total = self.total_steps.max(1) as f64;
                let done = (self.completed_steps as f64).min(total - 1.0);
                self.config.learning_rate * (1.0 - done / total).powf(p)
            }
        }
    }

    fn anchored_regime(&self) -> bool {
        match &self.classifier {
            ClassifierState::Dnc { bank, .. } => bank.is_anchored(),
            ClassifierState::Softmax(_) => false,
        }
    }
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, dataset: &'a LabeledDataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        let mut state = TrainState::init(config, dataset.dim(), dataset.num_classes())?;
        let steps_per_epoch = dataset.len().div_ceil(state.config.batch_size);
        state.total_steps = steps_per_epoch * state.config.epochs;
        Ok(Self { state, dataset })
    }

    /// Resume from a loaded state (memory starts empty by design).
    pub fn from_state(state: TrainState, dataset: &'a LabeledDataset) -> Self {
        Self { state, dataset }
    }

    pub fn dataset(&self) -> &LabeledDataset {
        self.dataset
    }

    /// One full training pass. Returns per-epoch mean losses.
    pub fn run(&mut self) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        if self.state.config.anchor_after_epoch == Some(0) && !self.state.anchored_regime() {
            self.anchor_now()?;
        }
        for _ in 0..self.state.config.epochs {
            let mut order: Vec<usize> = (0..self.dataset.len()).collect();
            self.state.shuffle_rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            let mut steps = 0usize;
            for chunk in order.chunks(self.state.config.batch_size) {
                let (loss, degenerate) = self.step(chunk)?;
                epoch_loss += loss;
                report.degenerate_updates += degenerate;
                steps += 1;
            }
            report.loss_curve.push(epoch_loss / steps.max(1) as f64);
            self.state.completed_epochs += 1;

            if self.state.config.anchor_after_epoch == Some(self.state.completed_epochs)
                && !self.state.anchored_regime()
            {
                self.anchor_now()?;
            } else if self.state.anchored_regime() {
                self.refresh_anchors()?;
            }
        }
        Ok(report)
    }

    /// One alternation over the given dataset rows. Returns the batch loss and
    /// the number of degenerate (skipped) momentum updates.
    pub fn step(&mut self, batch_indices: &[usize]) -> Result<(f64, usize)> {
        if batch_indices.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        if self.state.anchored_regime() {
            self.refresh_anchors()?;
        }
        let inputs = self.dataset.inputs().select_rows(batch_indices);
        let labels: Vec<usize> = batch_indices
            .iter()
            .map(|&i| self.dataset.labels()[i])
            .collect();

        let (features, tape) = self.state.encoder.forward(&inputs)?;
        let lr = SgdConfig::new(self.state.current_learning_rate())?;

        let (loss, degenerate) = match &mut self.state.classifier {
            ClassifierState::Dnc { bank, memory } => {
                let loss_cfg = LossConfig::new(self.state.config.temperature)?;
                let (loss, grad_features) = dnc_loss(&features, &labels, bank, &loss_cfg)?;

                let mut degenerate = 0usize;
                if !bank.is_anchored() {
                    degenerate = update_bank_from_batch(
                        bank,
                        memory,
                        &features,
                        &labels,
                        &self.state.config,
                        &mut self.state.cluster_rng,
                    )?;
                }
                memory.push_batch(&features, &labels)?;

                let grads = self.state.encoder.backward(&tape, &grad_features)?;
                self.state.encoder.sgd_step(&grads, &lr)?;
                (loss, degenerate)
            }
            ClassifierState::Softmax(clf) => {
                let (loss, grad_x, grad_w, grad_b) = softmax_ce_loss(&features, &labels, clf)?;
                let grads = self.state.encoder.backward(&tape, &grad_x)?;
                self.state.encoder.sgd_step(&grads, &lr)?;
                for (w, &g) in clf.w.data_mut().iter_mut().zip(grad_w.data()) {
                    *w -= lr.learning_rate * g;
                }
                for (b, &g) in clf.b.iter_mut().zip(&grad_b) {
                    *b -= lr.learning_rate * g;
                }
                (loss, 0)
            }
        };
        self.state.completed_steps += 1;
        Ok((loss, degenerate))
    }

    /// Anchor every sub-centroid to its nearest training observation under the
    /// current encoder.
    pub fn anchor_now(&mut self) -> Result<()> {
        let (all_features, _) = self.state.encoder.forward(self.dataset.inputs())?;
        match &mut self.state.classifier {
            ClassifierState::Dnc { bank, .. } => {
                bank.anchor_to_observations(&all_features, self.dataset.labels())
            }
            ClassifierState::Softmax(_) => Err(Error::Config(
                "anchoring applies only to the dnc classifier".into(),
            )),
        }
    }

    /// Re-embed anchored samples with the current encoder.
    fn refresh_anchors(&mut self) -> Result<()> {
        let encoder = &self.state.encoder;
        let dataset = self.dataset;
        match &mut self.state.classifier {
            ClassifierState::Dnc { bank, .. } => bank.refresh_anchored(|sample_id| {
                if sample_id >= dataset.len() {
                    return Err(Error::Data(format!(
                        "anchored sample {sample_id} missing from dataset of {} rows",
                        dataset.len()
                    )));
                }
                let row = dataset.inputs().select_rows(&[sample_id]);
                let (feature, _) = encoder.forward(&row)?;
                Ok(feature.row(0).to_vec())
            }),
            ClassifierState::Softmax(_) => Ok(()),
        }
    }
}

/// Cluster each class present in the batch over memory plus batch, then blend
/// batch-member cluster means into the bank. Returns the number of degenerate
/// momentum updates.
fn update_bank_from_batch(
    bank: &mut SubCentroidBank,
    memory: &FeatureMemory,
    features: &Matrix,
    labels: &[usize],
    config: &TrainConfig,
    cluster_rng: &mut Prng,
) -> Result<usize> {
    let momentum = MomentumConfig::new(config.mu)?;
    let sinkhorn_cfg = SinkhornConfig::new(config.epsilon, config.sinkhorn_iters)?;

    let mut present = vec![false; bank.num_classes()];
    for &l in labels {
        present[l] = true;
    }
    let mut degenerate = 0usize;
    for c in 0..bank.num_classes() {
        if !present[c] {
            continue;
        }
        let (gathered, from_batch) = memory.gather_class(features, labels, c);
        let k = bank.k_for(c);
        let assignments = match config.cluster_algo {
            ClusterAlgo::Sinkhorn => cluster_class(&gathered, bank.class_centroids(c), &sinkhorn_cfg)?,
            ClusterAlgo::KMeans => {
                if gathered.rows() < k {
                    continue; // too few samples to seed k centers this step
                }
                kmeans_baseline_cluster(&gathered, k, cluster_rng.next_u64())?
            }
        };

        let mut sums = Matrix::zeros(k, bank.dim());
        let mut counts = vec![0usize; k];
        for i in 0..from_batch {
            let cluster = assignments[i];
            counts[cluster] += 1;
            let row = sums.row_mut(cluster);
            for (s, &v) in row.iter_mut().zip(gathered.row(i)) {
                *s += v;
            }
        }
        let mut means = Matrix::zeros(k, bank.dim());
        for ki in 0..k {
            if counts[ki] == 0 {
                continue;
            }
            let inv = 1.0 / counts[ki] as f64;
            let scaled: Vec<f64> = sums.row(ki).iter().map(|&v| v * inv).collect();
            match l2_normalize(&scaled) {
                Ok(unit) => means.row_mut(ki).copy_from_slice(&unit),
                Err(_) => {
                    counts[ki] = 0; // cancelled mean: treat the cluster as empty
                    degenerate += 1;
                }
            }
        }
        let outcome = bank.momentum_update(c, &means, &counts, &momentum)?;
        degenerate += outcome.degenerate.len();
    }
    Ok(degenerate)
}

/// Top-1 / top-5 accuracy of a trained state on a dataset.
pub fn evaluate(
    encoder: &EncoderParams,
    classifier: &ClassifierState,
    dataset: &LabeledDataset,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let (features, _) = encoder.forward(dataset.inputs())?;
    let scores = match classifier {
        ClassifierState::Dnc { bank, .. } => class_scores(&features, bank)?.scores,
        ClassifierState::Softmax(clf) => linear_logits(&features, clf)?,
    };
    let num_classes = scores.cols();
    let mut top1_hits = 0usize;
    let mut top5_hits = 0usize;
    for (n, &label) in dataset.labels().iter().enumerate() {
        if label >= num_classes {
            return Err(Error::Data(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        let row = scores.row(n);
        // Rank classes by score descending, class id ascending on ties.
        let mut argmax = 0usize;
        for c in 1..num_classes {
            if row[c] > row[argmax] {
                argmax = c;
            }
        }
        if argmax == label {
            top1_hits += 1;
        }
        let better = (0..num_classes)
            .filter(|&c| row[c] > row[label] || (row[c] == row[label] && c < label))
            .count();
        if better < 5 {
            top5_hits += 1;
        }
    }
    let n = dataset.len() as f64;
    let top5_defined = num_classes >= 5;
    Ok(Metrics {
        top1: top1_hits as f64 / n,
        top5: if top5_defined {
            top5_hits as f64 / n
        } else {
            1.0
        },
        top5_defined,
    })
}

/// 1-NN induction accuracy: label each test sample with the fine label of its
/// most similar training sample in the current feature space.
pub fn knn_induction_eval(
    encoder: &EncoderParams,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::Data("1-NN evaluation needs a non-empty training set".into()));
    }
    let train_fine = train
        .fine_labels()
        .ok_or_else(|| Error::Data("training set has no fine labels".into()))?;
    let test_fine = test
        .fine_labels()
        .ok_or_else(|| Error::Data("test set has no fine labels".into()))?;

    let (train_features, _) = encoder.forward(train.inputs())?;
    let (test_features, _) = encoder.forward(test.inputs())?;
    let mut hits = 0usize;
    for n in 0..test.len() {
        let query = test_features.row(n);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for i in 0..train.len() {
            let sim = dot(query, train_features.row(i));
            if sim > best.0 {
                best = (sim, i);
            }
        }
        if train_fine[best.1] == test_fine[n] {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

/// Classic Lloyd k-means on feature rows: seeded random-point initialization,
/// nearest-center assignment (squared Euclidean, ties to the smaller index),
/// plain-mean center updates, run to an assignment fixpoint or 100 rounds.
pub fn kmeans_baseline_cluster(features: &Matrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = features.rows();
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if n < k {
        return Err(Error::Shape(format!("{n} samples cannot seed {k} clusters")));
    }
    let mut rng = Prng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut pool);
    let mut centers = features.select_rows(&pool[..k]);

    let mut assignments = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let row = features.row(i);
            let mut best = (f64::INFINITY, 0usize);
            for c in 0..k {
                let center = centers.row(c);
                let mut dist = 0.0;
                for j in 0..row.len() {
                    let d = row[j] - center[j];
                    dist += d * d;
                }
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            if assignments[i] != best.1 {
                assignments[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, features.cols());
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, &v) in sums.row_mut(a).iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    Ok(assignments)
}
