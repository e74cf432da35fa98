//! Single-file checkpoint format.
//!
//! A checkpoint is a textual manifest of `key=value` lines (format version,
//! config snapshot, shapes, classifier kind, generator state) terminated by a
//! `payload` line, followed by the raw little-endian IEEE-754 f64 arrays in
//! manifest order: encoder layer weights and biases in layer order, then the
//! classifier arrays (per-class centroid rows for the nonparametric head;
//! weight matrix then bias for the linear one). Values are stored at full
//! f64 precision so a save/load round trip is bitwise.
//!
//! The feature memory is transient training state and deliberately not part
//! of the file.

use std::collections::BTreeMap;
use std::path::Path;

use crate::bank::SubCentroidBank;
use crate::baseline::LinearClassifier;
use crate::error::{Error, Result};
use crate::net::{EncoderParams, Layer};
use crate::numerics::Matrix;
use crate::rng::PrngState;
use crate::trainer::{
    ClassifierKind, ClassifierState, ClusterAlgo, KSpec, TrainConfig, TrainState,
};
use crate::memory::FeatureMemory;

const MAGIC: &str = "dnc-checkpoint";
const FORMAT_VERSION: u32 = 1;

/// In-memory form of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub encoder: EncoderParams,
    pub classifier: ClassifierCheckpoint,
    pub shuffle_rng_state: PrngState,
    pub cluster_rng_state: PrngState,
    pub completed_epochs: usize,
    pub completed_steps: usize,
    pub total_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClassifierCheckpoint {
    Dnc(SubCentroidBank),
    Softmax(LinearClassifier),
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        let classifier = match &state.classifier {
            ClassifierState::Dnc { bank, .. } => ClassifierCheckpoint::Dnc(bank.clone()),
            ClassifierState::Softmax(clf) => ClassifierCheckpoint::Softmax(clf.clone()),
        };
        Self {
            config: state.config.clone(),
            encoder: state.encoder.clone(),
            classifier,
            shuffle_rng_state: state.shuffle_rng.state(),
            cluster_rng_state: state.cluster_rng.state(),
            completed_epochs: state.completed_epochs,
            completed_steps: state.completed_steps,
            total_steps: state.total_steps,
        }
    }

    /// Rebuild a training state; the feature memory starts empty.
    pub fn into_state(self) -> Result<TrainState> {
        let num_classes = match &self.classifier {
            ClassifierCheckpoint::Dnc(bank) => bank.num_classes(),
            ClassifierCheckpoint::Softmax(clf) => clf.num_classes(),
        };
        let classifier = match self.classifier {
            ClassifierCheckpoint::Dnc(bank) => ClassifierState::Dnc {
                memory: FeatureMemory::new(
                    self.config.memory_batches,
                    self.config.batch_size,
                    num_classes,
                ),
                bank,
            },
            ClassifierCheckpoint::Softmax(clf) => ClassifierState::Softmax(clf),
        };
        Ok(TrainState {
            config: self.config,
            encoder: self.encoder,
            classifier,
            shuffle_rng: crate::rng::Prng::from_state(&self.shuffle_rng_state),
            cluster_rng: crate::rng::Prng::from_state(&self.cluster_rng_state),
            completed_epochs: self.completed_epochs,
            completed_steps: self.completed_steps,
            total_steps: self.total_steps,
        })
    }
}

fn fmt_usize_list(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|c| {
            c.trim()
                .parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad integer list entry '{c}'")))
        })
        .collect()
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let mut manifest = String::new();
    let mut payload: Vec<f64> = Vec::new();
    let mut push = |line: String| {
        manifest.push_str(&line);
        manifest.push('\n');
    };

    push(format!("{MAGIC} format_version={FORMAT_VERSION}"));

    let cfg = &ckpt.config;
    push(format!(
        "classifier={}",
        match cfg.classifier {
            ClassifierKind::Dnc => "dnc",
            ClassifierKind::Softmax => "softmax",
        }
    ));
    push(format!("config.epochs={}", cfg.epochs));
    push(format!("config.batch_size={}", cfg.batch_size));
    let k_list = match &cfg.k {
        KSpec::Global(k) => vec![*k],
        KSpec::PerClass(list) => list.clone(),
    };
    push(format!(
        "config.k_kind={}",
        if matches!(cfg.k, KSpec::Global(_)) {
            "global"
        } else {
            "per_class"
        }
    ));
    push(format!("config.k={}", fmt_usize_list(&k_list)));
    push(format!("config.mu={}", cfg.mu));
    push(format!("config.epsilon={}", cfg.epsilon));
    push(format!("config.sinkhorn_iters={}", cfg.sinkhorn_iters));
    push(format!("config.memory_batches={}", cfg.memory_batches));
    push(format!("config.temperature={}", cfg.temperature));
    push(format!("config.learning_rate={}", cfg.learning_rate));
    push(format!("config.seed={}", cfg.seed));
    if let Some(a) = cfg.anchor_after_epoch {
        push(format!("config.anchor_after_epoch={a}"));
    }
    push(format!(
        "config.cluster_algo={}",
        match cfg.cluster_algo {
            ClusterAlgo::Sinkhorn => "sinkhorn",
            ClusterAlgo::KMeans => "kmeans",
        }
    ));
    push(format!("config.output_dim={}", cfg.output_dim));
    push(format!("config.hidden_dims={}", fmt_usize_list(&cfg.hidden_dims)));
    if let Some(p) = cfg.poly_decay_power {
        push(format!("config.poly_decay_power={p}"));
    }
    push(format!("progress.epochs={}", ckpt.completed_epochs));
    push(format!("progress.steps={}", ckpt.completed_steps));
    push(format!("progress.total_steps={}", ckpt.total_steps));

    push(format!("encoder.layers={}", ckpt.encoder.layers().len()));
    for (i, layer) in ckpt.encoder.layers().iter().enumerate() {
        push(format!(
            "encoder.layer{i}.shape={}x{}",
            layer.weights.rows(),
            layer.weights.cols()
        ));
        payload.extend_from_slice(layer.weights.data());
        payload.extend_from_slice(&layer.bias);
    }

    match &ckpt.classifier {
        ClassifierCheckpoint::Dnc(bank) => {
            push(format!("bank.dim={}", bank.dim()));
            let ks: Vec<usize> = (0..bank.num_classes()).map(|c| bank.k_for(c)).collect();
            push(format!("bank.k={}", fmt_usize_list(&ks)));
            match bank.anchor_ids() {
                Some(ids) => {
                    push("bank.anchored=true".into());
                    let flat: Vec<usize> = ids.iter().flatten().copied().collect();
                    push(format!("bank.anchors={}", fmt_usize_list(&flat)));
                }
                None => push("bank.anchored=false".into()),
            }
            for c in 0..bank.num_classes() {
                payload.extend_from_slice(bank.class_centroids(c).data());
            }
        }
        ClassifierCheckpoint::Softmax(clf) => {
            push(format!("linear.shape={}x{}", clf.w.rows(), clf.w.cols()));
            payload.extend_from_slice(clf.w.data());
            payload.extend_from_slice(&clf.b);
        }
    }

    for (prefix, state) in [
        ("rng.shuffle", &ckpt.shuffle_rng_state),
        ("rng.cluster", &ckpt.cluster_rng_state),
    ] {
        push(format!("{prefix}.seed={}", hex_encode(&state.seed)));
        push(format!("{prefix}.stream={}", state.stream));
        push(format!("{prefix}.word_pos={}", state.word_pos));
    }
    push(format!("payload.f64={}", payload.len()));

    let mut bytes = manifest.into_bytes();
    for v in &payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path.as_ref(), bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path.as_ref())?;

    // Manifest ends right after the payload.f64 line.
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut offset = 0usize;
    let mut first = true;
    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("manifest ended before payload line".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Checkpoint("manifest is not valid UTF-8".into()))?;
        offset += nl + 1;
        if first {
            first = false;
            let expected = format!("{MAGIC} format_version={FORMAT_VERSION}");
            if line != expected {
                return Err(Error::Checkpoint(format!(
                    "unsupported header '{line}', expected '{expected}'"
                )));
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed manifest line '{line}'")))?;
        fields.insert(key.to_string(), value.to_string());
        if key == "payload.f64" {
            break;
        }
    }

    let get = |key: &str| -> Result<&String> {
        fields
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing manifest key '{key}'")))
    };
    let parse_num = |key: &str| -> Result<f64> {
        get(key)?
            .parse::<f64>()
            .map_err(|_| Error::Checkpoint(format!("bad numeric value for '{key}'")))
    };
    let parse_int = |key: &str| -> Result<usize> {
        get(key)?
            .parse::<usize>()
            .map_err(|_| Error::Checkpoint(format!("bad integer value for '{key}'")))
    };

    let payload_len = parse_int("payload.f64")?;
    let expected_bytes = payload_len * 8;
    let actual_bytes = bytes.len() - offset;
    if actual_bytes != expected_bytes {
        return Err(Error::Checkpoint(format!(
            "payload holds {actual_bytes} bytes but manifest declares {expected_bytes}"
        )));
    }
    let mut payload = Vec::with_capacity(payload_len);
    for chunk in bytes[offset..].chunks_exact(8) {
        payload.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let mut cursor = 0usize;
    let mut take = |count: usize| -> Result<&[f64]> {
        if cursor + count > payload.len() {
            return Err(Error::Checkpoint("payload shorter than declared shapes".into()));
        }
        let slice = &payload[cursor..cursor + count];
        cursor += count;
        Ok(slice)
    };

    // Encoder.
    let num_layers = parse_int("encoder.layers")?;
    let mut layers = Vec::with_capacity(num_layers);
    for i in 0..num_layers {
        let shape = get(&format!("encoder.layer{i}.shape"))?;
        let (r, c) = shape
            .split_once('x')
            .ok_or_else(|| Error::Checkpoint(format!("bad shape '{shape}'")))?;
        let rows: usize = r
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad shape '{shape}'")))?;
        let cols: usize = c
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad shape '{shape}'")))?;
        let weights = Matrix::from_flat(rows, cols, take(rows * cols)?.to_vec())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let bias = take(cols)?.to_vec();
        layers.push(Layer { weights, bias });
    }
    let encoder = EncoderParams::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))?;

    // Classifier.
    let classifier_kind = get("classifier")?.clone();
    let classifier = match classifier_kind.as_str() {
        "dnc" => {
            let dim = parse_int("bank.dim")?;
            let ks = parse_usize_list(get("bank.k")?)?;
            let mut classes = Vec::with_capacity(ks.len());
            for &k in &ks {
                classes.push(
                    Matrix::from_flat(k, dim, take(k * dim)?.to_vec())
                        .map_err(|e| Error::Checkpoint(e.to_string()))?,
                );
            }
            let anchored = get("bank.anchored")? == "true";
            let anchor_ids = if anchored {
                let flat = parse_usize_list(get("bank.anchors")?)?;
                if flat.len() != ks.iter().sum::<usize>() {
                    return Err(Error::Checkpoint("anchor table length mismatch".into()));
                }
                let mut ids = Vec::with_capacity(ks.len());
                let mut at = 0usize;
                for &k in &ks {
                    ids.push(flat[at..at + k].to_vec());
                    at += k;
                }
                Some(ids)
            } else {
                None
            };
            ClassifierCheckpoint::Dnc(
                SubCentroidBank::from_parts(classes, dim, anchor_ids)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
            )
        }
        "softmax" => {
            let shape = get("linear.shape")?;
            let (r, c) = shape
                .split_once('x')
                .ok_or_else(|| Error::Checkpoint(format!("bad shape '{shape}'")))?;
            let rows: usize = r
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad shape '{shape}'")))?;
            let cols: usize = c
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad shape '{shape}'")))?;
            let w = Matrix::from_flat(rows, cols, take(rows * cols)?.to_vec())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let b = take(cols)?.to_vec();
            ClassifierCheckpoint::Softmax(LinearClassifier { w, b })
        }
        other => {
            return Err(Error::Checkpoint(format!("unknown classifier kind '{other}'")));
        }
    };
    if cursor != payload.len() {
        return Err(Error::Checkpoint(format!(
            "payload has {} unread values past the declared shapes",
            payload.len() - cursor
        )));
    }

    // Config snapshot.
    let k_kind = get("config.k_kind")?.clone();
    let k_list = parse_usize_list(get("config.k")?)?;
    let k = match k_kind.as_str() {
        "global" => {
            if k_list.len() != 1 {
                return Err(Error::Checkpoint("global K must be a single value".into()));
            }
            KSpec::Global(k_list[0])
        }
        "per_class" => KSpec::PerClass(k_list),
        other => return Err(Error::Checkpoint(format!("unknown k kind '{other}'"))),
    };
    let config = TrainConfig {
        epochs: parse_int("config.epochs")?,
        batch_size: parse_int("config.batch_size")?,
        classifier: match classifier_kind.as_str() {
            "dnc" => ClassifierKind::Dnc,
            _ => ClassifierKind::Softmax,
        },
        k,
        mu: parse_num("config.mu")?,
        epsilon: parse_num("config.epsilon")?,
        sinkhorn_iters: parse_int("config.sinkhorn_iters")?,
        memory_batches: parse_int("config.memory_batches")?,
        temperature: parse_num("config.temperature")?,
        learning_rate: parse_num("config.learning_rate")?,
        seed: get("config.seed")?
            .parse::<u64>()
            .map_err(|_| Error::Checkpoint("bad seed".into()))?,
        anchor_after_epoch: match fields.get("config.anchor_after_epoch") {
            Some(v) => Some(
                v.parse::<usize>()
                    .map_err(|_| Error::Checkpoint("bad anchor epoch".into()))?,
            ),
            None => None,
        },
        cluster_algo: match get("config.cluster_algo")?.as_str() {
            "sinkhorn" => ClusterAlgo::Sinkhorn,
            "kmeans" => ClusterAlgo::KMeans,
            other => return Err(Error::Checkpoint(format!("unknown cluster algo '{other}'"))),
        },
        output_dim: parse_int("config.output_dim")?,
        hidden_dims: parse_usize_list(get("config.hidden_dims")?)?,
        poly_decay_power: match fields.get("config.poly_decay_power") {
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::Checkpoint("bad decay power".into()))?,
            ),
            None => None,
        },
    };

    let read_rng = |prefix: &str| -> Result<PrngState> {
        Ok(PrngState {
            seed: hex_decode(get(&format!("{prefix}.seed"))?)?,
            stream: get(&format!("{prefix}.stream"))?
                .parse::<u64>()
                .map_err(|_| Error::Checkpoint("bad rng stream".into()))?,
            word_pos: get(&format!("{prefix}.word_pos"))?
                .parse::<u128>()
                .map_err(|_| Error::Checkpoint("bad rng word position".into()))?,
        })
    };

    Ok(Checkpoint {
        config,
        encoder,
        classifier,
        shuffle_rng_state: read_rng("rng.shuffle")?,
        cluster_rng_state: read_rng("rng.cluster")?,
        completed_epochs: parse_int("progress.epochs")?,
        completed_steps: parse_int("progress.steps")?,
        total_steps: parse_int("progress.total_steps")?,
    })
}

fn hex_encode(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(text: &str) -> Result<[u8; 32]> {
    if text.len() != 64 {
        return Err(Error::Checkpoint("rng seed must be 64 hex chars".into()));
    }
    let mut out = [0u8; 32];
    for (i, chunk) in text.as_bytes().chunks_exact(2).enumerate() {
        let s = std::str::from_utf8(chunk).map_err(|_| Error::Checkpoint("bad hex".into()))?;
        out[i] = u8::from_str_radix(s, 16).map_err(|_| Error::Checkpoint("bad hex".into()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::dataset::{gen_synthetic, SyntheticSpec};
    use crate::trainer::Trainer;

    fn trained_state(classifier: ClassifierKind) -> TrainState {
        let dataset = gen_synthetic(&SyntheticSpec {
            classes: 3,
            subclusters: 2,
            dim: 5,
            per_cluster: 8,
            sigma: 0.1,
            seed: 3,
            class_spread: SyntheticSpec::DEFAULT_CLASS_SPREAD,
        })
        .unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 12,
            classifier,
            k: KSpec::Global(2),
            output_dim: 6,
            hidden_dims: vec![8],
            temperature: 8.0,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(config, &dataset).unwrap();
        trainer.run().unwrap();
        trainer.state
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("dnc_checkpoint_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn dnc_checkpoint_round_trips_bitwise() {
        let state = trained_state(ClassifierKind::Dnc);
        let ckpt = Checkpoint::from_state(&state);
        let path = tmp("dnc.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, loaded);
        // Saving the loaded checkpoint reproduces the same bytes.
        let path2 = tmp("dnc2.ckpt");
        save_checkpoint(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn softmax_checkpoint_round_trips() {
        let state = trained_state(ClassifierKind::Softmax);
        let ckpt = Checkpoint::from_state(&state);
        let path = tmp("softmax.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn anchored_bank_round_trips_with_ids() {
        let dataset = gen_synthetic(&SyntheticSpec {
            classes: 2,
            subclusters: 2,
            dim: 4,
            per_cluster: 6,
            sigma: 0.1,
            seed: 9,
            class_spread: SyntheticSpec::DEFAULT_CLASS_SPREAD,
        })
        .unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            anchor_after_epoch: Some(1),
            k: KSpec::Global(2),
            output_dim: 5,
            hidden_dims: vec![8],
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(config, &dataset).unwrap();
        trainer.run().unwrap();
        let ckpt = Checkpoint::from_state(&trainer.state);
        let path = tmp("anchored.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        match (&loaded.classifier, &ckpt.classifier) {
            (ClassifierCheckpoint::Dnc(a), ClassifierCheckpoint::Dnc(b)) => {
                assert_eq!(a.anchor_ids(), b.anchor_ids());
                assert!(a.is_anchored());
            }
            _ => panic!("expected dnc classifiers"),
        }
    }

    #[test]
    fn truncated_payload_is_reported() {
        let state = trained_state(ClassifierKind::Dnc);
        let path = tmp("trunc.ckpt");
        save_checkpoint(&path, &Checkpoint::from_state(&state)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn foreign_version_is_rejected() {
        let path = tmp("foreign.ckpt");
        std::fs::write(&path, b"dnc-checkpoint format_version=99\npayload.f64=0\n").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("format_version"), "{err}");
    }

    #[test]
    fn state_round_trip_restores_rng_stream() {
        let state = trained_state(ClassifierKind::Dnc);
        let ckpt = Checkpoint::from_state(&state);
        let mut restored = ckpt.clone().into_state().unwrap();
        let mut original = state;
        assert_eq!(
            original.shuffle_rng.next_u64(),
            restored.shuffle_rng.next_u64()
        );
        assert_eq!(original.encoder, restored.encoder);
    }
}
