//! Dataset ingestion, character vocabulary, score filtering, and padded
//! batch assembly.
//!
//! Input corpora are UTF-8 JSON lines, one object per line:
//! `{"text": str, "summary": str, "score": int (optional)}`. Extra fields
//! (such as probe labels) are ignored here.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
const NUM_SPECIALS: usize = 4;

/// Bidirectional character↔id map. Ids 0–3 are reserved for
/// PAD/BOS/EOS/UNK in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: HashMap<char, u32>,
    id_to_token: Vec<char>,
}

impl Vocab {
    /// Character vocabulary over `texts`, ranked by frequency with ties
    /// broken by ascending code point, truncated so the total size
    /// (specials included) stays within `max_size`.
    pub fn build<S: AsRef<str>>(texts: &[S], max_size: usize) -> Result<Self> {
        if max_size < NUM_SPECIALS + 1 {
            return Err(Error::InvalidArgument(format!(
                "max vocab size {max_size} leaves no room for tokens"
            )));
        }
        let mut counts: HashMap<char, u64> = HashMap::new();
        for t in texts {
            for ch in t.as_ref().chars() {
                *counts.entry(ch).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_SPECIALS);

        let mut vocab = Vocab { token_to_id: HashMap::new(), id_to_token: Vec::new() };
        for (ch, _) in ranked {
            let id = (vocab.id_to_token.len() + NUM_SPECIALS) as u32;
            vocab.token_to_id.insert(ch, id);
            vocab.id_to_token.push(ch);
        }
        Ok(vocab)
    }

    /// Total size including the four specials.
    pub fn len(&self) -> usize {
        self.id_to_token.len() + NUM_SPECIALS
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn id_of(&self, ch: char) -> u32 {
        self.token_to_id.get(&ch).copied().unwrap_or(UNK)
    }

    pub fn token_of(&self, id: u32) -> Option<char> {
        let id = id as usize;
        if id < NUM_SPECIALS {
            None
        } else {
            self.id_to_token.get(id - NUM_SPECIALS).copied()
        }
    }

    /// One id per Unicode scalar value; unknown characters map to UNK. No
    /// BOS/EOS framing here — batching adds it.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.chars().map(|ch| self.id_of(ch)).collect()
    }

    /// Renders non-special ids back to text; specials are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().filter_map(|&id| self.token_of(id)).collect()
    }

    /// One token per line after a header documenting the id convention;
    /// backslash and control characters are escaped so every token stays on
    /// its own line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>, s: String| -> Result<()> {
            w.write_all(s.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
        };
        write(&mut w, format!("# superae vocab v1: token on line k has id k+{NUM_SPECIALS}, ids 0-3 are PAD/BOS/EOS/UNK; \\\\ \\n \\r \\t escaped\n"))?;
        for &ch in &self.id_to_token {
            let escaped = match ch {
                '\\' => "\\\\".to_string(),
                '\n' => "\\n".to_string(),
                '\r' => "\\r".to_string(),
                '\t' => "\\t".to_string(),
                other => other.to_string(),
            };
            write(&mut w, format!("{escaped}\n"))?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .unwrap_or_default();
        if !header.starts_with("# superae vocab v1") {
            return Err(Error::Malformed { what: "vocab file", detail: "missing v1 header".into() });
        }
        let mut vocab = Vocab { token_to_id: HashMap::new(), id_to_token: Vec::new() };
        for line in lines {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            let ch = match line.as_str() {
                "\\\\" => '\\',
                "\\n" => '\n',
                "\\r" => '\r',
                "\\t" => '\t',
                s => {
                    let mut chars = s.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => c,
                        _ => {
                            return Err(Error::Malformed {
                                what: "vocab file",
                                detail: format!("line {s:?} is not a single token"),
                            })
                        }
                    }
                }
            };
            let id = (vocab.id_to_token.len() + NUM_SPECIALS) as u32;
            vocab.token_to_id.insert(ch, id);
            vocab.id_to_token.push(ch);
        }
        Ok(vocab)
    }
}

/// One source/summary pair, encoded. The relevance score is present only on
/// annotated validation/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub source: Vec<u32>,
    pub summary: Vec<u32>,
    pub score: Option<i32>,
}

/// Raw JSONL record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawPair {
    pub text: String,
    pub summary: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<i32>,
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<RawPair>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawPair = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[RawPair]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        let line = serde_json::to_string(p).map_err(|e| Error::json(path.display().to_string(), e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Encode raw pairs against a vocabulary, dropping pairs with an empty side.
pub fn encode_pairs(raw: &[RawPair], vocab: &Vocab) -> Vec<PairExample> {
    raw.iter()
        .filter(|p| !p.text.is_empty() && !p.summary.is_empty())
        .map(|p| PairExample {
            source: vocab.encode(&p.text),
            summary: vocab.encode(&p.summary),
            score: p.score,
        })
        .collect()
}

/// Keep pairs whose score is at least `min_score`; unscored pairs pass (the
/// training split carries no annotations).
pub fn filter_by_score(pairs: Vec<PairExample>, min_score: i32) -> Vec<PairExample> {
    pairs
        .into_iter()
        .filter(|p| p.score.is_none_or(|s| s >= min_score))
        .collect()
}

/// Cut overlong sequences down to the given lengths; 0 leaves a side
/// untouched (the desk-scale default — synthetic corpora are short).
pub fn truncate_pairs(pairs: &mut [PairExample], max_source: usize, max_summary: usize) {
    for p in pairs {
        if max_source > 0 && p.source.len() > max_source {
            p.source.truncate(max_source);
        }
        if max_summary > 0 && p.summary.len() > max_summary {
            p.summary.truncate(max_summary);
        }
    }
}

/// A padded minibatch. Sources are padded to the batch max source length;
/// the decoder frame is BOS-prefixed inputs and EOS-suffixed targets padded
/// to `max summary length + 1`. `mask[b*T + t] = 1` iff position `t` is
/// real for example `b`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub source_len: usize,
    pub target_len: usize,
    pub source_ids: Vec<u32>,
    pub source_mask: Vec<f32>,
    pub decoder_inputs: Vec<u32>,
    pub decoder_targets: Vec<u32>,
    pub target_mask: Vec<f32>,
}

impl Batch {
    fn from_pairs(pairs: &[&PairExample]) -> Batch {
        let size = pairs.len();
        let source_len = pairs.iter().map(|p| p.source.len()).max().unwrap_or(0);
        let target_len = pairs.iter().map(|p| p.summary.len()).max().unwrap_or(0) + 1;

        let mut source_ids = vec![PAD; size * source_len];
        let mut source_mask = vec![0.0; size * source_len];
        let mut decoder_inputs = vec![PAD; size * target_len];
        let mut decoder_targets = vec![PAD; size * target_len];
        let mut target_mask = vec![0.0; size * target_len];

        for (b, p) in pairs.iter().enumerate() {
            for (t, &id) in p.source.iter().enumerate() {
                source_ids[b * source_len + t] = id;
                source_mask[b * source_len + t] = 1.0;
            }
            decoder_inputs[b * target_len] = BOS;
            for (t, &id) in p.summary.iter().enumerate() {
                decoder_inputs[b * target_len + t + 1] = id;
                decoder_targets[b * target_len + t] = id;
            }
            decoder_targets[b * target_len + p.summary.len()] = EOS;
            for t in 0..=p.summary.len() {
                target_mask[b * target_len + t] = 1.0;
            }
        }
        Batch {
            size,
            source_len,
            target_len,
            source_ids,
            source_mask,
            decoder_inputs,
            decoder_targets,
            target_mask,
        }
    }

    /// Column `t` of a `[size, len]` id matrix.
    pub fn column(ids: &[u32], size: usize, len: usize, t: usize) -> Vec<usize> {
        (0..size).map(|b| ids[b * len + t] as usize).collect()
    }

    /// Column `t` of the mask as scalars.
    pub fn mask_column(mask: &[f32], size: usize, len: usize, t: usize) -> Vec<f32> {
        (0..size).map(|b| mask[b * len + t]).collect()
    }

    /// The raw summary tokens (no BOS/EOS), as a `[size, target_len - 1]`
    /// view for the summary encoder. Alignment: dropping the BOS column of
    /// the decoder inputs leaves exactly the summary characters, and the
    /// target mask shifted by one marks exactly those positions.
    pub fn summary_tokens(&self) -> (Vec<u32>, Vec<f32>, usize) {
        let len = self.target_len - 1;
        let mut ids = vec![PAD; self.size * len];
        let mut mask = vec![0.0; self.size * len];
        for b in 0..self.size {
            for t in 0..len {
                ids[b * len + t] = self.decoder_inputs[b * self.target_len + t + 1];
                mask[b * len + t] = self.target_mask[b * self.target_len + t + 1];
            }
        }
        (ids, mask, len)
    }

    pub fn real_token_count(&self) -> usize {
        self.source_mask.iter().chain(&self.target_mask).map(|&m| m as usize).sum()
    }
}

/// Deterministically shuffle `pairs` and cut them into padded batches.
pub fn make_batches(pairs: &[PairExample], batch_size: usize, shuffle_seed: u64) -> Vec<Batch> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&PairExample> = chunk.iter().map(|&i| &pairs[i]).collect();
            Batch::from_pairs(&refs)
        })
        .collect()
}

/// Order-preserving batches, for evaluation passes.
pub fn sequential_batches(pairs: &[PairExample], batch_size: usize) -> Vec<Batch> {
    assert!(batch_size >= 1);
    pairs
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&PairExample> = chunk.iter().collect();
            Batch::from_pairs(&refs)
        })
        .collect()
}

/// A single pair as a batch of one, for decoding and probing.
pub fn single_batch(pair: &PairExample) -> Batch {
    Batch::from_pairs(&[pair])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocab_ranks_by_frequency() {
        let v = Vocab::build(&["aab"], 10).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id_of('a'), 4);
        assert_eq!(v.id_of('b'), 5);
    }

    #[test]
    fn vocab_truncates_to_max_size() {
        // 5 distinct chars with distinct frequencies, room for only 2.
        let v = Vocab::build(&["eeeee", "dddd", "ccc", "bb", "a"], 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id_of('e'), 4);
        assert_eq!(v.id_of('d'), 5);
        assert_eq!(v.id_of('c'), UNK);
    }

    #[test]
    fn empty_corpus_keeps_specials_only() {
        let v = Vocab::build(&[] as &[&str], 10).unwrap();
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn frequency_ties_break_by_code_point() {
        let v = Vocab::build(&["ba"], 10).unwrap();
        assert_eq!(v.id_of('a'), 4);
        assert_eq!(v.id_of('b'), 5);
    }

    #[test]
    fn encode_maps_unknown_to_unk() {
        let v = Vocab::build(&["ab"], 10).unwrap();
        assert_eq!(v.encode("ab"), vec![4, 5]);
        assert_eq!(v.encode("az"), vec![4, UNK]);
        assert_eq!(v.encode(""), Vec::<u32>::new());
    }

    #[test]
    fn filter_keeps_high_scores_and_unscored() {
        let mk = |score| PairExample { source: vec![4], summary: vec![4], score };
        let pairs = vec![mk(Some(5)), mk(Some(3)), mk(Some(2))];
        let kept = filter_by_score(pairs, 3);
        assert_eq!(kept.len(), 2);

        let unscored = vec![mk(None), mk(None)];
        assert_eq!(filter_by_score(unscored, 3).len(), 2);

        let pairs = vec![mk(Some(1)), mk(Some(5))];
        assert_eq!(filter_by_score(pairs, 1).len(), 2);
    }

    #[test]
    fn truncation_respects_zero_as_off() {
        let mut pairs = vec![PairExample { source: vec![4; 10], summary: vec![5; 6], score: None }];
        truncate_pairs(&mut pairs, 0, 0);
        assert_eq!(pairs[0].source.len(), 10);
        truncate_pairs(&mut pairs, 4, 3);
        assert_eq!(pairs[0].source.len(), 4);
        assert_eq!(pairs[0].summary.len(), 3);
        truncate_pairs(&mut pairs, 8, 8);
        assert_eq!(pairs[0].source.len(), 4, "shorter sequences stay put");
    }

    #[test]
    fn filter_is_idempotent() {
        let mk = |score| PairExample { source: vec![4], summary: vec![4], score };
        let pairs = vec![mk(Some(5)), mk(Some(2)), mk(None), mk(Some(3))];
        let once = filter_by_score(pairs, 3);
        let twice = filter_by_score(once.clone(), 3);
        assert_eq!(once, twice);
    }

    #[test]
    fn batch_sizes_and_framing() {
        let mk = |n: usize| PairExample {
            source: vec![4; n],
            summary: vec![7, 8],
            score: None,
        };
        let pairs: Vec<_> = (1..=5).map(mk).collect();
        let batches = make_batches(&pairs, 2, 0);
        let sizes: Vec<usize> = batches.iter().map(|b| b.size).collect();
        assert_eq!(sizes, vec![2, 2, 1]);

        let b = single_batch(&pairs[0]);
        assert_eq!(b.decoder_inputs, vec![BOS, 7, 8]);
        assert_eq!(b.decoder_targets, vec![7, 8, EOS]);
        assert_eq!(b.target_mask, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn same_seed_same_order() {
        let pairs: Vec<PairExample> = (0..20)
            .map(|i| PairExample { source: vec![4 + i], summary: vec![4 + i], score: None })
            .collect();
        let a = make_batches(&pairs, 3, 99);
        let b = make_batches(&pairs, 3, 99);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.source_ids, y.source_ids);
        }
    }

    #[test]
    fn summary_token_view_aligns() {
        let pair = PairExample { source: vec![4, 5], summary: vec![6, 7, 8], score: None };
        let short = PairExample { source: vec![4], summary: vec![9], score: None };
        let b = Batch::from_pairs(&[&pair, &short]);
        let (ids, mask, len) = b.summary_tokens();
        assert_eq!(len, 3);
        assert_eq!(&ids[0..3], &[6, 7, 8]);
        assert_eq!(&ids[3..6], &[9, PAD, PAD]);
        assert_eq!(&mask[0..3], &[1.0, 1.0, 1.0]);
        assert_eq!(&mask[3..6], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn vocab_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::build(&["hello\nworld\t\\"], 50).unwrap();
        v.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(v, loaded);
    }

    proptest! {
        #[test]
        fn round_trip_in_vocab_strings(s in "[a-f]{0,24}") {
            let v = Vocab::build(&["abcdef"], 20).unwrap();
            let decoded = v.decode(&v.encode(&s));
            prop_assert_eq!(decoded, s);
        }

        #[test]
        fn mask_counts_real_tokens(lens in proptest::collection::vec((1usize..7, 1usize..5), 1..6)) {
            let pairs: Vec<PairExample> = lens
                .iter()
                .map(|&(s, t)| PairExample { source: vec![4; s], summary: vec![5; t], score: None })
                .collect();
            let total_real: usize = lens.iter().map(|&(s, t)| s + t + 1).sum();
            let batches = make_batches(&pairs, 2, 7);
            let masked: usize = batches.iter().map(|b| b.real_token_count()).sum();
            prop_assert_eq!(masked, total_real);
        }
    }
}
