//! The optimization loop.
//!
//! One training step runs up to three sub-steps, each with its own fresh
//! graph and its own gradient clipping:
//!
//! 1. backward on `total_main`, Adam update of the two encoders and the
//!    decoder;
//! 2. backward on `L_D`, update of the discriminator only;
//! 3. backward on `L_G`, update of the two encoders only.
//!
//! Representations are recomputed in (2) and (3) against the parameters
//! the earlier sub-steps produced. Gradients are computed for the whole
//! graph every time; *applying* them only to the sub-step's groups is what
//! enforces the parameter partition.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{make_batches, PairExample, Vocab};
use crate::decode;
use crate::error::{Error, Result};
use crate::model::checkpoint::{self, read_container, write_container};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::graph::Graph;
use crate::numerics::params::GroupName;
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;
use crate::objective::{self, LossBreakdown, ObjectiveConfig};
use crate::rouge;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub adversarial_enabled: bool,
    pub lambda: f64,
    /// `false` trains a plain seq2seq baseline: no summary encoder, no
    /// supervision, no adversarial sub-steps.
    pub ae_enabled: bool,
    pub batch_mean: bool,
    /// Validate (and possibly checkpoint) every this many steps; 0 means
    /// only at the end.
    pub validate_every: usize,
}

impl TrainConfig {
    /// Synthetic-corpus scale: small batches, short runs.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 10.0,
            batch_size: 16,
            max_steps: 500,
            seed: 0,
            adversarial_enabled: true,
            lambda: 0.3,
            ae_enabled: true,
            batch_mean: true,
            validate_every: 50,
        }
    }

    /// Full-corpus settings (batch 64); everything else matches desk.
    pub fn paper() -> Self {
        TrainConfig { batch_size: 64, ..TrainConfig::desk() }
    }

    pub fn objective(&self, n_h: usize) -> ObjectiveConfig {
        let mut cfg = ObjectiveConfig::new(self.lambda, n_h);
        cfg.batch_mean = self.batch_mean;
        cfg.ae_enabled = self.ae_enabled;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
            ("clip_norm", self.clip_norm),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::InvalidArgument("batch_size and max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-parameter Adam moments; `t` counts this parameter's own updates.
#[derive(Debug, Clone)]
pub struct AdamSlot<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u64,
}

/// Moment buffers aligned with the canonical parameter order.
#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    pub slots: Vec<AdamSlot<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(params: &ModelParams<Tensor<F>>) -> Self {
        let mut slots = Vec::new();
        params.visit(&mut |_, _, t| {
            slots.push(AdamSlot { m: vec![F::zero(); t.numel()], v: vec![F::zero(); t.numel()], t: 0 })
        });
        Optimizer { slots }
    }
}

/// Bias-corrected Adam update of one parameter in place.
pub fn adam_step<F: Scalar>(
    param: &mut Tensor<F>,
    grad: &[F],
    slot: &mut AdamSlot<F>,
    cfg: &TrainConfig,
) -> Result<()> {
    if grad.len() != param.numel() {
        return Err(Error::Shape {
            op: "adam_step",
            detail: format!("{} gradient entries for {} parameters", grad.len(), param.numel()),
        });
    }
    slot.t += 1;
    let b1 = F::from_f64(cfg.beta1);
    let b2 = F::from_f64(cfg.beta2);
    let lr = F::from_f64(cfg.lr);
    let eps = F::from_f64(cfg.adam_eps);
    let corr1 = F::from_f64(1.0 - cfg.beta1.powi(slot.t as i32));
    let corr2 = F::from_f64(1.0 - cfg.beta2.powi(slot.t as i32));
    for ((x, &g), (m, v)) in param
        .data_mut()
        .iter_mut()
        .zip(grad)
        .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
    {
        *m = b1 * *m + (F::one() - b1) * g;
        *v = b2 * *v + (F::one() - b2) * g * g;
        let m_hat = *m / corr1;
        let v_hat = *v / corr2;
        *x -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Scale `grads` so their joint L2 norm is at most `max_norm`; returns the
/// pre-clip norm. `names` supplies the diagnostic when a gradient is not
/// finite.
pub fn clip_gradients<F: Scalar>(
    grads: &mut [Option<Tensor<F>>],
    names: &[(GroupName, String)],
    max_norm: f64,
) -> Result<f64> {
    let mut sq = 0.0f64;
    for (grad, (_, name)) in grads.iter().zip(names) {
        if let Some(t) = grad {
            for x in t.data() {
                let x = x.as_f64();
                if !x.is_finite() {
                    return Err(Error::NonFinite { what: format!("gradient of {name}") });
                }
                sq += x * x;
            }
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = F::from_f64(max_norm / norm);
        for grad in grads.iter_mut().flatten() {
            for x in grad.data_mut() {
                *x *= scale;
            }
        }
    }
    Ok(norm)
}

/// Gradients of the selected groups only, in canonical order; parameters
/// outside `groups` get `None` even if the graph reached them.
fn collect_group_grads<F: Scalar>(
    g: &Graph<F>,
    leaves: &ModelParams<crate::numerics::graph::ValueId>,
    groups: &[GroupName],
) -> Vec<Option<Tensor<F>>> {
    let mut grads = Vec::new();
    leaves.visit(&mut |group, _, &id| {
        if groups.contains(&group) {
            grads.push(Some(g.grad_tensor(id)));
        } else {
            grads.push(None);
        }
    });
    grads
}

/// Clip the collected gradients and apply Adam to every parameter of the
/// selected groups. Returns the pre-clip global norm.
fn apply_updates<F: Scalar>(
    params: &mut ModelParams<Tensor<F>>,
    opt: &mut Optimizer<F>,
    mut grads: Vec<Option<Tensor<F>>>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let names = params.names();
    let norm = clip_gradients(&mut grads, &names, cfg.clip_norm)?;
    let mut idx = 0;
    let mut failure = None;
    params.visit_mut(&mut |_, _, t| {
        if let Some(grad) = &grads[idx] {
            if let Err(e) = adam_step(t, grad.data(), &mut opt.slots[idx], cfg) {
                failure.get_or_insert(e);
            }
        }
        idx += 1;
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(norm),
    }
}

const MAIN_GROUPS: [GroupName; 3] =
    [GroupName::ContentEncoder, GroupName::SummaryEncoder, GroupName::Decoder];
const ENCODER_GROUPS: [GroupName; 2] = [GroupName::ContentEncoder, GroupName::SummaryEncoder];

/// Sub-step 1: minimize `total_main` over encoders and decoder.
/// Returns the partial breakdown and the pre-clip gradient norm.
pub fn main_substep<F: Scalar>(
    params: &mut ModelParams<Tensor<F>>,
    opt: &mut Optimizer<F>,
    batch: &crate::corpus::Batch,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, f64)> {
    let obj = cfg.objective(model_cfg.n_h);
    let mut g: Graph<F> = Graph::new();
    let leaves = params.leaves(&mut g);
    let main = objective::build_main_losses(&mut g, &leaves, batch, model_cfg, &obj)?;
    g.backward(main.total_main)?;
    let breakdown = LossBreakdown {
        l_seq2seq: g.item(main.l_seq2seq).as_f64(),
        l_ae: main.l_ae.map_or(0.0, |id| g.item(id).as_f64()),
        l_s: main.l_s.map_or(0.0, |id| g.item(id).as_f64()),
        l_d: 0.0,
        l_g: 0.0,
        total_main: g.item(main.total_main).as_f64(),
    };
    let grads = collect_group_grads(&g, &leaves, &MAIN_GROUPS);
    drop(g);
    let norm = apply_updates(params, opt, grads, cfg)?;
    Ok((breakdown, norm))
}

/// Sub-step 2: minimize `L_D`; only the discriminator moves.
pub fn discriminator_substep<F: Scalar>(
    params: &mut ModelParams<Tensor<F>>,
    opt: &mut Optimizer<F>,
    batch: &crate::corpus::Batch,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<f64> {
    let obj = cfg.objective(model_cfg.n_h);
    let mut g: Graph<F> = Graph::new();
    let leaves = params.leaves(&mut g);
    let (l_d, _) = objective::build_adversarial_losses(&mut g, &leaves, batch, model_cfg, &obj)?;
    g.backward(l_d)?;
    let value = g.item(l_d).as_f64();
    let grads = collect_group_grads(&g, &leaves, &[GroupName::Discriminator]);
    drop(g);
    apply_updates(params, opt, grads, cfg)?;
    Ok(value)
}

/// Sub-step 3: minimize `L_G`; only the two encoders move.
pub fn generator_substep<F: Scalar>(
    params: &mut ModelParams<Tensor<F>>,
    opt: &mut Optimizer<F>,
    batch: &crate::corpus::Batch,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<f64> {
    let obj = cfg.objective(model_cfg.n_h);
    let mut g: Graph<F> = Graph::new();
    let leaves = params.leaves(&mut g);
    let (_, l_g) = objective::build_adversarial_losses(&mut g, &leaves, batch, model_cfg, &obj)?;
    g.backward(l_g)?;
    let value = g.item(l_g).as_f64();
    let grads = collect_group_grads(&g, &leaves, &ENCODER_GROUPS);
    drop(g);
    apply_updates(params, opt, grads, cfg)?;
    Ok(value)
}

#[derive(Debug, Clone, Copy)]
pub struct StepMetrics {
    /// Pre-clip global gradient norm of the main sub-step.
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// One full training step: main update, then (when adversarial training is
/// on) the discriminator and encoder-adversarial sub-steps in order, with
/// representations recomputed between sub-steps.
pub fn train_step<F: Scalar>(
    params: &mut ModelParams<Tensor<F>>,
    opt: &mut Optimizer<F>,
    batch: &crate::corpus::Batch,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, StepMetrics)> {
    let start = Instant::now();
    let (mut breakdown, grad_norm) = main_substep(params, opt, batch, model_cfg, cfg)?;
    if cfg.adversarial_enabled && cfg.ae_enabled {
        breakdown.l_d = discriminator_substep(params, opt, batch, model_cfg, cfg)?;
        breakdown.l_g = generator_substep(params, opt, batch, model_cfg, cfg)?;
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((breakdown, StepMetrics { grad_norm, wall_ms }))
}

/// One line of the training log.
#[derive(Debug, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub l_seq2seq: f64,
    pub l_ae: f64,
    pub l_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_g: Option<f64>,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug)]
pub struct FitReport {
    pub steps: usize,
    pub best_val_rouge_l: Option<f64>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub last_breakdown: LossBreakdown,
}

/// Mean greedy-decode ROUGE-L F1 against the reference summaries.
pub fn validation_rouge_l<F: Scalar>(
    params: &ModelParams<Tensor<F>>,
    model_cfg: &ModelConfig,
    pairs: &[PairExample],
) -> Result<f64> {
    let mut scored = Vec::with_capacity(pairs.len());
    for p in pairs {
        let out = decode::greedy_decode(&p.source, params, model_cfg, decode::default_max_len(p.source.len()))?;
        scored.push((out, p.summary.clone()));
    }
    Ok(rouge::corpus_rouge(&scored)?.rouge_l.f1)
}

/// Train on `train`, shuffling each epoch, validating periodically on
/// `val`, and keeping the checkpoint with the best validation ROUGE-L
/// (the final one when `val` is empty). Deterministic for a fixed config.
pub fn fit<F: Scalar>(
    train: &[PairExample],
    val: &[PairExample],
    vocab: &Vocab,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<FitReport> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput { what: "training set" });
    }
    if model_cfg.vocab_size != vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "model vocab_size {} != vocabulary size {}",
            model_cfg.vocab_size,
            vocab.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let ckpt_path = out_dir.join("model.ckpt");
    let opt_path = out_dir.join("model.opt");
    let log_path = out_dir.join("train_log.jsonl");

    let mut params: ModelParams<Tensor<F>> = ModelParams::init(model_cfg, cfg.seed);
    let mut opt = Optimizer::new(&params);
    let log_file = File::create(&log_path).map_err(|e| Error::io(log_path.display().to_string(), e))?;
    let mut log = BufWriter::new(log_file);

    let mut step = 0usize;
    let mut epoch = 0u64;
    let mut best_val: Option<f64> = None;
    let mut saved_any = false;
    let mut last_breakdown: Option<LossBreakdown> = None;

    'outer: loop {
        let batches = make_batches(train, cfg.batch_size, cfg.seed.wrapping_add(epoch));
        for batch in &batches {
            step += 1;
            let (breakdown, metrics) = train_step(&mut params, &mut opt, batch, model_cfg, cfg)?;
            let adversarial = cfg.adversarial_enabled && cfg.ae_enabled;
            let record = LogRecord {
                step,
                l_seq2seq: breakdown.l_seq2seq,
                l_ae: breakdown.l_ae,
                l_s: breakdown.l_s,
                l_d: adversarial.then_some(breakdown.l_d),
                l_g: adversarial.then_some(breakdown.l_g),
                grad_norm: metrics.grad_norm,
                wall_ms: metrics.wall_ms,
            };
            let line = serde_json::to_string(&record)
                .map_err(|e| Error::json(log_path.display().to_string(), e))?;
            writeln!(log, "{line}").map_err(|e| Error::io(log_path.display().to_string(), e))?;
            last_breakdown.replace(breakdown);

            let due = cfg.validate_every > 0 && step.is_multiple_of(cfg.validate_every);
            if due && !val.is_empty() {
                let score = validation_rouge_l(&params, model_cfg, val)?;
                if best_val.is_none_or(|b| score > b) {
                    best_val = Some(score);
                    checkpoint::save(&ckpt_path, model_cfg, &params)?;
                    save_optimizer(&opt_path, &params, &opt)?;
                    saved_any = true;
                }
            }
            if step >= cfg.max_steps {
                break 'outer;
            }
        }
        epoch += 1;
    }
    log.flush().map_err(|e| Error::io(log_path.display().to_string(), e))?;

    // Final validation so the last parameters can compete, then make sure
    // a checkpoint exists even without validation data.
    if !val.is_empty() {
        let score = validation_rouge_l(&params, model_cfg, val)?;
        if best_val.is_none_or(|b| score > b) {
            best_val = Some(score);
            checkpoint::save(&ckpt_path, model_cfg, &params)?;
            save_optimizer(&opt_path, &params, &opt)?;
            saved_any = true;
        }
    }
    if !saved_any {
        checkpoint::save(&ckpt_path, model_cfg, &params)?;
        save_optimizer(&opt_path, &params, &opt)?;
    }

    Ok(FitReport {
        steps: step,
        best_val_rouge_l: best_val,
        checkpoint: ckpt_path,
        log: log_path,
        last_breakdown: last_breakdown.expect("at least one step ran"),
    })
}

pub const OPT_MAGIC: &str = "SUPERAE_OPT_V1";

#[derive(Serialize, Deserialize)]
struct OptManifest {
    entries: Vec<OptEntry>,
}

#[derive(Serialize, Deserialize)]
struct OptEntry {
    name: String,
    t: u64,
    m_offset: u64,
    v_offset: u64,
    len: usize,
}

/// Optimizer-state sidecar in the checkpoint container format.
pub fn save_optimizer<F: Scalar>(
    path: &Path,
    params: &ModelParams<Tensor<F>>,
    opt: &Optimizer<F>,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut idx = 0usize;
    params.visit(&mut |_, name, _| {
        let slot = &opt.slots[idx];
        let m_offset = blob.len() as u64;
        for x in &slot.m {
            blob.extend_from_slice(&x.as_f32().to_le_bytes());
        }
        let v_offset = blob.len() as u64;
        for x in &slot.v {
            blob.extend_from_slice(&x.as_f32().to_le_bytes());
        }
        entries.push(OptEntry { name, t: slot.t, m_offset, v_offset, len: slot.m.len() });
        idx += 1;
    });
    let json = serde_json::to_vec(&OptManifest { entries })
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    write_container(path, OPT_MAGIC, &json, &blob)
}

pub fn load_optimizer<F: Scalar>(path: &Path, params: &ModelParams<Tensor<F>>) -> Result<Optimizer<F>> {
    let (manifest, blob): (OptManifest, Vec<u8>) = read_container(path, OPT_MAGIC)?;
    let names = params.names();
    if manifest.entries.len() != names.len() {
        return Err(Error::Malformed {
            what: "optimizer state",
            detail: format!("{} entries for {} parameters", manifest.entries.len(), names.len()),
        });
    }
    let mut slots = Vec::with_capacity(names.len());
    for (entry, (_, name)) in manifest.entries.iter().zip(&names) {
        if &entry.name != name {
            return Err(Error::Malformed {
                what: "optimizer state",
                detail: format!("entry {} does not match parameter {name}", entry.name),
            });
        }
        let read = |offset: u64| -> Result<Vec<F>> {
            let start = offset as usize;
            let end = start + 4 * entry.len;
            if end > blob.len() {
                return Err(Error::Malformed { what: "optimizer state", detail: "blob too short".into() });
            }
            Ok(blob[start..end]
                .chunks_exact(4)
                .map(|c| F::from_f32(f32::from_le_bytes(c.try_into().unwrap())))
                .collect())
        };
        slots.push(AdamSlot { m: read(entry.m_offset)?, v: read(entry.v_offset)?, t: entry.t });
    }
    Ok(Optimizer { slots })
}
