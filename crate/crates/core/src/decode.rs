//! Beam-search and greedy inference over the content-encoder path.
//!
//! Scores are cumulative log probabilities with no length normalization;
//! ties break towards the lexicographically smaller token-id sequence so
//! decoding is reproducible. A hypothesis finishes on EOS or at `max_len`.

use crate::corpus::{self, PairExample, BOS, EOS, UNK};
use crate::error::{Error, Result};
use crate::model::{self, DecoderState, ModelConfig, ModelParams, PreparedAttention};
use crate::numerics::graph::Graph;
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// Hard ceiling on generated length regardless of source length.
pub const MAX_DECODE_LEN: usize = 200;

/// 1.5× the source length, capped at [`MAX_DECODE_LEN`].
pub fn default_max_len(source_len: usize) -> usize {
    (source_len + source_len / 2).clamp(1, MAX_DECODE_LEN)
}

/// A completed decode candidate. `tokens` includes the terminating EOS when
/// the hypothesis finished by emitting one.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens with the terminating EOS stripped — what the summary reads as.
    pub fn surface_tokens(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == EOS => rest,
            _ => &self.tokens,
        }
    }
}

/// `(log_prob, tokens)` ordering: higher probability first, then
/// lexicographically smaller token sequence.
fn better(a_lp: f64, a_tokens: &[u32], b_lp: f64, b_tokens: &[u32]) -> std::cmp::Ordering {
    b_lp.partial_cmp(&a_lp)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| a_tokens.cmp(b_tokens))
}

struct LiveHyp {
    tokens: Vec<u32>,
    log_prob: f64,
    state: DecoderState,
}

pub struct DecodeOptions {
    pub beam_size: usize,
    pub max_len: usize,
    /// Skip UNK expansions entirely.
    pub suppress_unk: bool,
}

impl DecodeOptions {
    pub fn beam(beam_size: usize, max_len: usize) -> Self {
        DecodeOptions { beam_size, max_len, suppress_unk: false }
    }
}

/// Standard beam search from `init_decoder(z_t)`: expand every live
/// hypothesis over the vocabulary, keep the global top `beam_size`
/// expansions, retire those that emitted EOS, and return the best finished
/// hypothesis. Live hypotheses surviving at `max_len` finish unscored-EOS.
pub fn beam_search<F: Scalar>(
    source: &[u32],
    params: &ModelParams<Tensor<F>>,
    cfg: &ModelConfig,
    opts: &DecodeOptions,
) -> Result<Hypothesis> {
    if opts.beam_size < 1 || opts.max_len < 1 {
        return Err(Error::InvalidArgument(format!(
            "beam_size {} / max_len {} must be >= 1",
            opts.beam_size, opts.max_len
        )));
    }
    if source.is_empty() {
        return Err(Error::EmptySequence { op: "beam_search" });
    }

    let mut g: Graph<F> = Graph::new();
    let leaves = params.leaves(&mut g);
    let pair = PairExample { source: source.to_vec(), summary: vec![EOS], score: None };
    let batch = corpus::single_batch(&pair);
    let enc = model::encode_content(
        &mut g,
        &leaves,
        &batch.source_ids,
        &batch.source_mask,
        1,
        batch.source_len,
        cfg,
    )?;
    let attention =
        PreparedAttention::new(&mut g, &leaves.decoder.attention, &enc.annotations, &batch.source_mask, 1)?;
    let init = model::init_decoder(&mut g, enc.z, cfg)?;

    let mut live = vec![LiveHyp { tokens: Vec::new(), log_prob: 0.0, state: init }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..opts.max_len {
        if live.is_empty() {
            break;
        }
        // (log_prob, tokens, parent index, token)
        let mut expansions: Vec<(f64, Vec<u32>, usize, u32)> = Vec::new();
        let mut stepped: Vec<DecoderState> = Vec::new();
        for (idx, hyp) in live.iter().enumerate() {
            let prev = *hyp.tokens.last().unwrap_or(&BOS) as usize;
            let mut state = hyp.state.clone();
            let dist = model::decode_step(&mut g, &leaves.decoder, &[prev], &mut state, &attention, cfg)?;
            stepped.push(state);
            for (tok, &p) in g.data(dist).iter().enumerate() {
                if opts.suppress_unk && tok as u32 == UNK {
                    continue;
                }
                let lp = hyp.log_prob + p.as_f64().max(f64::MIN_POSITIVE).ln();
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok as u32);
                expansions.push((lp, tokens, idx, tok as u32));
            }
        }
        expansions.sort_by(|a, b| better(a.0, &a.1, b.0, &b.1));
        expansions.truncate(opts.beam_size);

        let mut next_live = Vec::new();
        for (lp, tokens, parent, tok) in expansions {
            if tok == EOS {
                finished.push(Hypothesis { tokens, log_prob: lp, finished: true });
            } else {
                next_live.push(LiveHyp { tokens, log_prob: lp, state: stepped[parent].clone() });
            }
        }
        live = next_live;
    }

    // Anything still alive finished by running out of length.
    for hyp in live {
        finished.push(Hypothesis { tokens: hyp.tokens, log_prob: hyp.log_prob, finished: true });
    }
    finished
        .into_iter()
        .min_by(|a, b| better(a.log_prob, &a.tokens, b.log_prob, &b.tokens))
        .ok_or(Error::EmptySequence { op: "beam_search pool" })
}

/// Argmax decoding; ties take the smaller token id. Stops at EOS (not
/// included in the output) or `max_len`.
pub fn greedy_decode<F: Scalar>(
    source: &[u32],
    params: &ModelParams<Tensor<F>>,
    cfg: &ModelConfig,
    max_len: usize,
) -> Result<Vec<u32>> {
    if max_len < 1 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    let best = beam_search(source, params, cfg, &DecodeOptions::beam(1, max_len))?;
    Ok(best.surface_tokens().to_vec())
}

/// Sum of per-step log probabilities of `tokens` replayed through the
/// model — the independent check that a hypothesis score is what its token
/// sequence implies.
pub fn replay_log_prob<F: Scalar>(
    source: &[u32],
    tokens: &[u32],
    params: &ModelParams<Tensor<F>>,
    cfg: &ModelConfig,
) -> Result<f64> {
    let mut g: Graph<F> = Graph::new();
    let leaves = params.leaves(&mut g);
    let pair = PairExample { source: source.to_vec(), summary: vec![EOS], score: None };
    let batch = corpus::single_batch(&pair);
    let enc = model::encode_content(
        &mut g,
        &leaves,
        &batch.source_ids,
        &batch.source_mask,
        1,
        batch.source_len,
        cfg,
    )?;
    let attention =
        PreparedAttention::new(&mut g, &leaves.decoder.attention, &enc.annotations, &batch.source_mask, 1)?;
    let mut state = model::init_decoder(&mut g, enc.z, cfg)?;
    let mut prev = BOS;
    let mut total = 0.0;
    for &tok in tokens {
        let dist = model::decode_step(&mut g, &leaves.decoder, &[prev as usize], &mut state, &attention, cfg)?;
        total += g.data(dist)[tok as usize].as_f64().max(f64::MIN_POSITIVE).ln();
        prev = tok;
    }
    Ok(total)
}

/// Exhaustive search over every terminated sequence up to `max_len` —
/// the brute-force oracle beam search is checked against. Exponential in
/// `max_len`; test sizes only.
pub fn exhaustive_best<F: Scalar>(
    source: &[u32],
    params: &ModelParams<Tensor<F>>,
    cfg: &ModelConfig,
    max_len: usize,
) -> Result<Hypothesis> {
    let mut best: Option<Hypothesis> = None;
    let mut consider = |cand: Hypothesis| {
        let replace = match &best {
            None => true,
            Some(b) => better(cand.log_prob, &cand.tokens, b.log_prob, &b.tokens).is_lt(),
        };
        if replace {
            best = Some(cand);
        }
    };

    // Depth-first over non-EOS prefixes; every prefix either terminates
    // with a scored EOS or is cut off at max_len.
    let mut stack: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        let dist = replay_distribution(source, &prefix, params, cfg)?;
        if prefix.len() < max_len {
            for tok in 0..cfg.vocab_size as u32 {
                let step_lp = dist[tok as usize].max(f64::MIN_POSITIVE).ln();
                let mut tokens = prefix.clone();
                tokens.push(tok);
                let total = lp + step_lp;
                if tok == EOS || tokens.len() == max_len {
                    consider(Hypothesis { tokens, log_prob: total, finished: true });
                } else {
                    stack.push((tokens, total));
                }
            }
        }
    }
    best.ok_or(Error::EmptySequence { op: "exhaustive_best" })
}

fn replay_distribution<F: Scalar>(
    source: &[u32],
    prefix: &[u32],
    params: &ModelParams<Tensor<F>>,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    let mut g: Graph<F> = Graph::new();
    let leaves = params.leaves(&mut g);
    let pair = PairExample { source: source.to_vec(), summary: vec![EOS], score: None };
    let batch = corpus::single_batch(&pair);
    let enc = model::encode_content(
        &mut g,
        &leaves,
        &batch.source_ids,
        &batch.source_mask,
        1,
        batch.source_len,
        cfg,
    )?;
    let attention =
        PreparedAttention::new(&mut g, &leaves.decoder.attention, &enc.annotations, &batch.source_mask, 1)?;
    let mut state = model::init_decoder(&mut g, enc.z, cfg)?;
    let mut prev = BOS;
    let mut dist = Vec::new();
    for step in 0..=prefix.len() {
        let d = model::decode_step(&mut g, &leaves.decoder, &[prev as usize], &mut state, &attention, cfg)?;
        dist = g.data(d).iter().map(|x| x.as_f64()).collect();
        if step < prefix.len() {
            prev = prefix[step];
        }
    }
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64) -> (ModelConfig, ModelParams<Tensor<f64>>) {
        let cfg = ModelConfig { vocab_size: 5, embed_size: 4, hidden_size: 4, layers: 1, n_h: 4 };
        (cfg.clone(), ModelParams::init(&cfg, seed))
    }

    #[test]
    fn beam_one_equals_greedy() {
        for seed in [1, 2, 3] {
            let (cfg, params) = small_model(seed);
            let source = [4u32, 3, 4];
            let beam = beam_search(&source, &params, &cfg, &DecodeOptions::beam(1, 6)).unwrap();
            let greedy = greedy_decode(&source, &params, &cfg, 6).unwrap();
            assert_eq!(beam.surface_tokens(), &greedy[..], "seed {seed}");
        }
    }

    #[test]
    fn beam_matches_exhaustive_oracle() {
        for seed in [11, 12] {
            let (cfg, params) = small_model(seed);
            let source = [4u32, 3];
            let oracle = exhaustive_best(&source, &params, &cfg, 3).unwrap();
            let beam = beam_search(&source, &params, &cfg, &DecodeOptions::beam(125, 3)).unwrap();
            assert_eq!(beam.tokens, oracle.tokens, "seed {seed}");
            assert!((beam.log_prob - oracle.log_prob).abs() < 1e-9);
        }
    }

    #[test]
    fn replayed_score_matches_reported_score() {
        let (cfg, params) = small_model(9);
        let source = [4u32, 3, 4, 3];
        let hyp = beam_search(&source, &params, &cfg, &DecodeOptions::beam(4, 8)).unwrap();
        let replayed = replay_log_prob(&source, &hyp.tokens, &params, &cfg).unwrap();
        assert!((hyp.log_prob - replayed).abs() < 1e-5, "{} vs {replayed}", hyp.log_prob);
    }

    #[test]
    fn wider_beams_never_score_worse() {
        for seed in [21, 22, 23, 24] {
            let (cfg, params) = small_model(seed);
            let source = [4u32, 3, 4];
            let mut prev = f64::NEG_INFINITY;
            for beam in [1, 2, 3, 5, 8, 16] {
                let hyp = beam_search(&source, &params, &cfg, &DecodeOptions::beam(beam, 5)).unwrap();
                assert!(
                    hyp.log_prob >= prev - 1e-12,
                    "seed {seed}: beam {beam} scored {} after {prev}",
                    hyp.log_prob
                );
                prev = hyp.log_prob;
            }
        }
    }

    #[test]
    fn uniform_model_beam_finds_short_eos_greedy_ties_low() {
        // Zero parameters give uniform distributions at every step. A beam
        // of 3 admits the step-1 EOS into the pool and nothing longer can
        // beat it; greedy's argmax tie-break picks the smallest id (PAD)
        // forever, so it runs to max_len.
        let cfg = ModelConfig { vocab_size: 5, embed_size: 4, hidden_size: 4, layers: 1, n_h: 4 };
        let params: ModelParams<Tensor<f64>> = ModelParams::zeros(&cfg);
        let hyp = beam_search(&[4u32, 3], &params, &cfg, &DecodeOptions::beam(3, 4)).unwrap();
        assert_eq!(hyp.tokens, vec![EOS]);
        assert!((hyp.log_prob - (0.2f64).ln()).abs() < 1e-9);
        let greedy = greedy_decode(&[4u32, 3], &params, &cfg, 4).unwrap();
        assert_eq!(greedy, vec![0, 0, 0, 0]);
    }

    #[test]
    fn unk_suppression_skips_unk_expansions() {
        // Output bias pushed onto UNK: the unsuppressed beam emits it, the
        // suppressed one may not.
        let cfg = ModelConfig { vocab_size: 5, embed_size: 4, hidden_size: 4, layers: 1, n_h: 4 };
        let mut params: ModelParams<Tensor<f64>> = ModelParams::zeros(&cfg);
        params.decoder.out_b.data_mut()[UNK as usize] = 5.0;

        let plain = beam_search(&[4u32, 3], &params, &cfg, &DecodeOptions::beam(2, 3)).unwrap();
        assert!(plain.tokens.contains(&UNK));

        let opts = DecodeOptions { beam_size: 2, max_len: 3, suppress_unk: true };
        let clean = beam_search(&[4u32, 3], &params, &cfg, &opts).unwrap();
        assert!(!clean.tokens.contains(&UNK));
    }

    #[test]
    fn certain_eos_gives_empty_summary() {
        // Output bias forced onto EOS → probability ~1 on EOS at step one.
        let cfg = ModelConfig { vocab_size: 5, embed_size: 4, hidden_size: 4, layers: 1, n_h: 4 };
        let mut params: ModelParams<Tensor<f64>> = ModelParams::zeros(&cfg);
        params.decoder.out_b.data_mut()[EOS as usize] = 100.0;
        let greedy = greedy_decode(&[4u32, 3], &params, &cfg, 6).unwrap();
        assert!(greedy.is_empty());
    }

    #[test]
    fn output_length_is_bounded() {
        let (cfg, params) = small_model(31);
        for max_len in [1, 2, 5] {
            let out = greedy_decode(&[4u32, 3, 4, 3, 4], &params, &cfg, max_len).unwrap();
            assert!(out.len() <= max_len);
        }
    }

    #[test]
    fn invalid_sizes_rejected() {
        let (cfg, params) = small_model(1);
        assert!(beam_search(&[4], &params, &cfg, &DecodeOptions::beam(0, 5)).is_err());
        assert!(beam_search(&[4], &params, &cfg, &DecodeOptions::beam(2, 0)).is_err());
        assert!(greedy_decode(&[4], &params, &cfg, 0).is_err());
    }

    #[test]
    fn decoding_is_deterministic() {
        let (cfg, params) = small_model(17);
        let a = beam_search(&[4u32, 3], &params, &cfg, &DecodeOptions::beam(3, 5)).unwrap();
        let b = beam_search(&[4u32, 3], &params, &cfg, &DecodeOptions::beam(3, 5)).unwrap();
        assert_eq!(a, b);
    }
}
