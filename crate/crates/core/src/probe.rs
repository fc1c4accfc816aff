//! Representation-quality probe.
//!
//! A trained content encoder is frozen and a small feedforward classifier
//! (one tanh hidden layer of width `N_h`, softmax output over `k` classes)
//! is fit on its `z_t` representations. Downstream accuracy then measures
//! how much label-relevant structure the representation carries.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{sequential_batches, PairExample};
use crate::error::{Error, Result};
use crate::model::{self, ModelConfig, ModelParams};
use crate::numerics::graph::Graph;
use crate::numerics::params::GroupName;
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;
use crate::trainer::{adam_step, AdamSlot, TrainConfig};

/// JSONL record of a labeled example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub text: String,
    pub summary: String,
    pub label: usize,
}

pub fn read_labeled_jsonl(path: &Path) -> Result<Vec<LabeledRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabeledRecord = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}

/// One hidden tanh layer over a representation, projected to `classes`.
#[derive(Debug, Clone)]
pub struct ProbeClassifier<F> {
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
    pub classes: usize,
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { steps: 300, batch_size: 32, lr: 0.01, seed: 0 }
    }
}

/// `z_t` of each source sequence under the frozen encoder, in input order.
pub fn encode_representations<F: Scalar>(
    params: &ModelParams<Tensor<F>>,
    model_cfg: &ModelConfig,
    sources: &[Vec<u32>],
) -> Result<Vec<Vec<F>>> {
    let pairs: Vec<PairExample> = sources
        .iter()
        .map(|s| PairExample { source: s.clone(), summary: vec![crate::corpus::EOS], score: None })
        .collect();
    let mut reps = Vec::with_capacity(sources.len());
    for batch in sequential_batches(&pairs, 32) {
        let mut g: Graph<F> = Graph::new();
        let leaves = params.leaves(&mut g);
        let enc = model::encode_content(
            &mut g,
            &leaves,
            &batch.source_ids,
            &batch.source_mask,
            batch.size,
            batch.source_len,
            model_cfg,
        )?;
        let data = g.data(enc.z);
        for b in 0..batch.size {
            reps.push(data[b * model_cfg.n_h..(b + 1) * model_cfg.n_h].to_vec());
        }
    }
    Ok(reps)
}

/// Class distribution of one representation.
pub fn class_probabilities<F: Scalar>(clf: &ProbeClassifier<F>, rep: &[F]) -> Result<Vec<F>> {
    let mut g: Graph<F> = Graph::new();
    let z = g.leaf(Tensor::matrix(1, rep.len(), rep.to_vec()));
    let ids = classifier_leaves(&mut g, clf);
    let dist = classifier_forward(&mut g, &ids, z)?;
    Ok(g.data(dist).to_vec())
}

type ClassifierLeaves = [crate::numerics::graph::ValueId; 4];

fn classifier_leaves<F: Scalar>(g: &mut Graph<F>, clf: &ProbeClassifier<F>) -> ClassifierLeaves {
    [
        g.leaf(clf.w1.clone()),
        g.leaf(clf.b1.clone()),
        g.leaf(clf.w2.clone()),
        g.leaf(clf.b2.clone()),
    ]
}

fn classifier_forward<F: Scalar>(
    g: &mut Graph<F>,
    [w1, b1, w2, b2]: &ClassifierLeaves,
    z: crate::numerics::graph::ValueId,
) -> Result<crate::numerics::graph::ValueId> {
    let h = g.matmul(z, *w1)?;
    let h = g.add_row(h, *b1)?;
    let h = g.tanh(h);
    let logits = g.matmul(h, *w2)?;
    let logits = g.add_row(logits, *b2)?;
    g.softmax(logits)
}

/// Argmax class per representation; ties take the smaller class index.
pub fn classify<F: Scalar>(clf: &ProbeClassifier<F>, reps: &[Vec<F>]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(reps.len());
    for rep in reps {
        let probs = class_probabilities(clf, rep)?;
        let mut best = 0;
        for (j, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Fit the classifier on precomputed representations with Adam and cross
/// entropy.
pub fn train_probe_on_representations<F: Scalar>(
    reps: &[Vec<F>],
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeClassifier<F>> {
    if classes < 2 {
        return Err(Error::InvalidArgument("probe needs at least 2 classes".into()));
    }
    if reps.is_empty() || reps.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} representations for {} labels",
            reps.len(),
            labels.len()
        )));
    }
    for &label in labels {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    let width = reps[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut clf = ProbeClassifier {
        w1: Tensor::uniform(vec![width, width], 0.08, &mut rng),
        b1: Tensor::zeros(vec![width]),
        w2: Tensor::uniform(vec![width, classes], 0.08, &mut rng),
        b2: Tensor::zeros(vec![classes]),
        classes,
    };
    let adam_cfg = TrainConfig { lr: cfg.lr, ..TrainConfig::desk() };
    let mut slots: Vec<AdamSlot<F>> = [&clf.w1, &clf.b1, &clf.w2, &clf.b2]
        .iter()
        .map(|t| AdamSlot { m: vec![F::zero(); t.numel()], v: vec![F::zero(); t.numel()], t: 0 })
        .collect();

    let mut order: Vec<usize> = (0..reps.len()).collect();
    let mut step = 0;
    'outer: loop {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let rows = chunk.len();
            let mut z_data = Vec::with_capacity(rows * width);
            let mut targets = Vec::with_capacity(rows);
            for &i in chunk {
                z_data.extend_from_slice(&reps[i]);
                targets.push(labels[i]);
            }
            let mut g: Graph<F> = Graph::new();
            let z = g.leaf(Tensor::matrix(rows, width, z_data));
            let ids = classifier_leaves(&mut g, &clf);
            let dist = classifier_forward(&mut g, &ids, z)?;
            let picked = g.take_per_row(dist, &targets)?;
            let lp = g.ln(picked);
            let total = g.sum(lp);
            let loss = g.affine(total, F::from_f64(-1.0 / rows as f64), F::zero());
            g.backward(loss)?;
            let tensors = [&mut clf.w1, &mut clf.b1, &mut clf.w2, &mut clf.b2];
            for ((tensor, id), slot) in tensors.into_iter().zip(ids).zip(&mut slots) {
                let grad = g.grad_tensor(id);
                adam_step(tensor, grad.data(), slot, &adam_cfg)?;
            }
            if step >= cfg.steps {
                break 'outer;
            }
        }
    }
    Ok(clf)
}

fn encoder_fingerprint<F: Scalar>(params: &ModelParams<Tensor<F>>) -> [u64; 4] {
    GroupName::ALL.map(|g| params.group_hash(g))
}

/// Encode the labeled sources under the frozen encoder and fit the probe.
/// The encoder is asserted bit-unchanged afterwards.
pub fn train_probe<F: Scalar>(
    encoder: &ModelParams<Tensor<F>>,
    model_cfg: &ModelConfig,
    examples: &[(Vec<u32>, usize)],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeClassifier<F>> {
    let before = encoder_fingerprint(encoder);
    let sources: Vec<Vec<u32>> = examples.iter().map(|(s, _)| s.clone()).collect();
    let labels: Vec<usize> = examples.iter().map(|(_, l)| *l).collect();
    let reps = encode_representations(encoder, model_cfg, &sources)?;
    let clf = train_probe_on_representations(&reps, &labels, classes, cfg)?;
    assert_eq!(
        before,
        encoder_fingerprint(encoder),
        "probe training modified the frozen encoder"
    );
    Ok(clf)
}

/// Fraction of argmax-correct predictions on held-out labeled examples.
pub fn probe_accuracy<F: Scalar>(
    clf: &ProbeClassifier<F>,
    encoder: &ModelParams<Tensor<F>>,
    model_cfg: &ModelConfig,
    examples: &[(Vec<u32>, usize)],
    classes: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput { what: "probe test set" });
    }
    for &(_, label) in examples {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    let sources: Vec<Vec<u32>> = examples.iter().map(|(s, _)| s.clone()).collect();
    let reps = encode_representations(encoder, model_cfg, &sources)?;
    let predicted = classify(clf, &reps)?;
    let correct = predicted
        .iter()
        .zip(examples)
        .filter(|(p, (_, l))| *p == l)
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable_data(n: usize) -> (Vec<Vec<f32>>, Vec<usize>) {
        // Class 0 sits at (+1, ..) and class 1 at (-1, ..) with a fixed
        // nuisance pattern in the remaining coordinates.
        let mut reps = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            let wiggle = (i as f32 * 0.37).sin() * 0.1;
            reps.push(vec![sign + wiggle, -sign * 0.5, wiggle, 0.25]);
            labels.push(label);
        }
        (reps, labels)
    }

    #[test]
    fn separable_representations_reach_high_accuracy() {
        let (reps, labels) = separable_data(64);
        let cfg = ProbeConfig { steps: 200, ..ProbeConfig::default() };
        let clf = train_probe_on_representations(&reps, &labels, 2, &cfg).unwrap();
        let predicted = classify(&clf, &reps).unwrap();
        let correct = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
        assert!(correct as f64 / labels.len() as f64 >= 0.99);
    }

    #[test]
    fn class_distribution_sums_to_one() {
        let (reps, labels) = separable_data(16);
        let cfg = ProbeConfig { steps: 20, ..ProbeConfig::default() };
        let clf = train_probe_on_representations(&reps, &labels, 2, &cfg).unwrap();
        let probs = class_probabilities(&clf, &reps[0]).unwrap();
        assert_eq!(probs.len(), 2);
        let total: f32 = probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn majority_class_bias_scores_majority_fraction() {
        // Zero weights with an output bias on class 1: every prediction is
        // class 1, so accuracy equals its share of the labels.
        let clf = ProbeClassifier::<f32> {
            w1: Tensor::zeros(vec![4, 4]),
            b1: Tensor::zeros(vec![4]),
            w2: Tensor::zeros(vec![4, 2]),
            b2: Tensor::vector(vec![0.0, 1.0]),
            classes: 2,
        };
        let (reps, labels) = separable_data(10);
        let predicted = classify(&clf, &reps).unwrap();
        assert!(predicted.iter().all(|&p| p == 1));
        let majority = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
        let correct = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
        assert!((correct as f64 / labels.len() as f64 - majority).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let (reps, mut labels) = separable_data(8);
        labels[3] = 7;
        let err = train_probe_on_representations(&reps, &labels, 2, &ProbeConfig::default());
        assert!(matches!(err, Err(Error::LabelOutOfRange { label: 7, classes: 2 })));
    }

    #[test]
    fn probe_leaves_encoder_untouched_and_accuracy_is_order_invariant() {
        let model_cfg = ModelConfig { vocab_size: 9, embed_size: 5, hidden_size: 6, layers: 1, n_h: 6 };
        let encoder: ModelParams<Tensor<f32>> = ModelParams::init(&model_cfg, 4);
        let examples: Vec<(Vec<u32>, usize)> = (0..12)
            .map(|i| {
                let tok = 4 + (i % 2) as u32;
                (vec![tok, tok + 2, tok], (i % 2) as usize)
            })
            .collect();
        let before = encoder.group_hash(GroupName::ContentEncoder);
        let cfg = ProbeConfig { steps: 40, ..ProbeConfig::default() };
        let clf = train_probe(&encoder, &model_cfg, &examples, 2, &cfg).unwrap();
        assert_eq!(encoder.group_hash(GroupName::ContentEncoder), before);

        let acc = probe_accuracy(&clf, &encoder, &model_cfg, &examples, 2).unwrap();
        let mut shuffled = examples.clone();
        shuffled.reverse();
        let acc_rev = probe_accuracy(&clf, &encoder, &model_cfg, &shuffled, 2).unwrap();
        assert!((acc - acc_rev).abs() < 1e-12);

        assert!(probe_accuracy(&clf, &encoder, &model_cfg, &[], 2).is_err());
    }
}
