//! Synthetic token-audio corpus generation, manifests, and frame stacking.
//!
//! Each vocabulary token renders as a run of noisy one-hot frames. Positive
//! utterances embed one keyword between random context tokens; negatives
//! avoid keywords entirely, except for an optional fraction of distractors
//! (a keyword with one substituted token). Everything is derived from a
//! single seed so a corpus regenerates byte-identically.

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_features, write_features};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct SyntheticTaskConfig {
    pub vocab_size: usize,
    /// Raw per-frame feature dimension; must admit one-hot tokens.
    pub raw_dim: usize,
    /// Keyword name -> token sequence.
    pub keywords: BTreeMap<String, Vec<usize>>,
    /// Frames per token, inclusive range.
    pub dur_min: usize,
    pub dur_max: usize,
    pub noise_sigma: f64,
    /// Probability that a negative is a one-token-corrupted keyword.
    pub distractor_prob: f64,
    pub num_pos: usize,
    pub num_neg: usize,
    /// Context tokens on each side of the keyword, inclusive range.
    pub context_min: usize,
    pub context_max: usize,
    pub seed: u64,
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be >= 1".into()));
        }
        if self.raw_dim < self.vocab_size {
            return Err(Error::Config(format!(
                "raw_dim {} < vocab_size {}: one-hot tokens do not fit",
                self.raw_dim, self.vocab_size
            )));
        }
        if self.keywords.is_empty() {
            return Err(Error::Config("at least one keyword is required".into()));
        }
        for (name, tokens) in &self.keywords {
            if tokens.is_empty() {
                return Err(Error::Config(format!("keyword '{}' is empty", name)));
            }
            if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
                return Err(Error::Config(format!(
                    "keyword '{}' token {} outside vocabulary of {}",
                    name, bad, self.vocab_size
                )));
            }
        }
        if self.dur_min == 0 || self.dur_min > self.dur_max {
            return Err(Error::Config(format!(
                "invalid duration range [{}, {}]",
                self.dur_min, self.dur_max
            )));
        }
        if self.context_min > self.context_max {
            return Err(Error::Config(format!(
                "invalid context range [{}, {}]",
                self.context_min, self.context_max
            )));
        }
        if !(0.0..=1.0).contains(&self.distractor_prob) {
            return Err(Error::Config(format!(
                "distractor_prob {} outside [0, 1]",
                self.distractor_prob
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    /// Feature file path relative to the manifest's directory.
    pub feat_path: PathBuf,
    pub is_positive: bool,
    /// Full transcript tokens (context included for positives).
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let toks: Vec<String> = e.tokens.iter().map(|t| t.to_string()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.utt_id,
                e.feat_path.display(),
                if e.is_positive { "pos" } else { "neg" },
                toks.join(" ")
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 4 tab-separated fields, got {}",
                    i + 1,
                    fields.len()
                )));
            }
            let is_positive = match fields[2] {
                "pos" => true,
                "neg" => false,
                other => {
                    return Err(Error::Format(format!(
                        "manifest line {}: label '{}' is not pos/neg",
                        i + 1,
                        other
                    )))
                }
            };
            let tokens = fields[3]
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| {
                        Error::Format(format!("manifest line {}: bad token '{}'", i + 1, t))
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
            entries.push(ManifestEntry {
                utt_id: fields[0].to_string(),
                feat_path: PathBuf::from(fields[1]),
                is_positive,
                tokens,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_tsv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Manifest::from_tsv(&text)
    }
}

/// Keyword table serialization: `name \t tok tok tok` per line.
pub fn write_keywords(path: &Path, keywords: &BTreeMap<String, Vec<usize>>) -> Result<()> {
    let mut out = String::new();
    for (name, tokens) in keywords {
        let toks: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
        out.push_str(&format!("{}\t{}\n", name, toks.join(" ")));
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_keywords(path: &Path) -> Result<BTreeMap<String, Vec<usize>>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (name, rest) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!("keywords line {}: missing tab separator", i + 1))
        })?;
        let tokens = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Format(format!("keywords line {}: bad token '{}'", i + 1, t)))
            })
            .collect::<Result<Vec<usize>>>()?;
        if tokens.is_empty() {
            return Err(Error::Format(format!("keywords line {}: empty keyword", i + 1)));
        }
        map.insert(name.to_string(), tokens);
    }
    if map.is_empty() {
        return Err(Error::Format("keywords file has no entries".into()));
    }
    Ok(map)
}

/// Render a token sequence as noisy one-hot frames.
pub fn render_tokens(
    tokens: &[usize],
    cfg: &SyntheticTaskConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let normal = Normal::new(0.0, 1.0).map_err(|_| Error::Numerical("bad normal parameters".into()))?;
    let mut frames: Vec<f64> = Vec::new();
    let mut t = 0usize;
    for &tok in tokens {
        if tok >= cfg.vocab_size {
            return Err(Error::Index(format!("token {} outside vocabulary", tok)));
        }
        let dur = rng.gen_range(cfg.dur_min..=cfg.dur_max);
        for _ in 0..dur {
            for d in 0..cfg.raw_dim {
                let base = if d == tok { 1.0 } else { 0.0 };
                frames.push(base + cfg.noise_sigma * normal.sample(rng));
            }
            t += 1;
        }
    }
    Tensor::new(vec![t, cfg.raw_dim], frames)
}

/// True iff `haystack` contains `needle` as a contiguous subsequence.
pub fn contains_subsequence(haystack: &[usize], needle: &[usize]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// True iff `needle` occurs in order, not necessarily contiguously.
/// Transducer keyword search skips interleaved tokens through blanks, so a
/// scattered occurrence scores like a true detection; negatives must avoid
/// these, not just contiguous matches.
pub fn contains_scattered(haystack: &[usize], needle: &[usize]) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut i = 0;
    for &h in haystack {
        if h == needle[i] {
            i += 1;
            if i == needle.len() {
                return true;
            }
        }
    }
    false
}

fn contains_any_keyword(tokens: &[usize], cfg: &SyntheticTaskConfig) -> bool {
    cfg.keywords.values().any(|kw| contains_scattered(tokens, kw))
}

/// Random token sequence with no keyword occurrence.
fn sample_clean_tokens(len: usize, cfg: &SyntheticTaskConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
        if !contains_any_keyword(&tokens, cfg) {
            return tokens;
        }
    }
}

/// A keyword with one token substituted, resampled until it is not itself
/// a keyword (or a container of one).
fn sample_distractor(cfg: &SyntheticTaskConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let names: Vec<&String> = cfg.keywords.keys().collect();
    loop {
        let name = names[rng.gen_range(0..names.len())];
        let mut tokens = cfg.keywords[name].clone();
        let pos = rng.gen_range(0..tokens.len());
        tokens[pos] = rng.gen_range(0..cfg.vocab_size);
        if !contains_any_keyword(&tokens, cfg) {
            return tokens;
        }
    }
}

/// Transcript of one positive: context, keyword, context. The context
/// segments are resampled until the full transcript contains the keyword
/// exactly where it was planted and no other keyword by accident.
fn sample_positive(
    keyword: &[usize],
    cfg: &SyntheticTaskConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    loop {
        let left_len = rng.gen_range(cfg.context_min..=cfg.context_max);
        let right_len = rng.gen_range(cfg.context_min..=cfg.context_max);
        let left: Vec<usize> = (0..left_len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
        let right: Vec<usize> = (0..right_len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
        let mut tokens = left;
        tokens.extend_from_slice(keyword);
        tokens.extend_from_slice(&right);
        // exactly one contiguous occurrence of the planted keyword, and no
        // other keyword even as a scattered occurrence, keeps labels clean
        let own_occurrences = tokens
            .windows(keyword.len())
            .filter(|w| *w == keyword)
            .count();
        let other_hit = cfg
            .keywords
            .values()
            .filter(|kw| kw.as_slice() != keyword)
            .any(|kw| contains_scattered(&tokens, kw));
        if own_occurrences == 1 && !other_hit {
            return tokens;
        }
    }
}

/// Generated corpus layout under `out_dir`:
///   features/<utt_id>.feat   one file per utterance
///   manifest.tsv             utt_id, relative path, pos/neg, tokens
///   keywords.tsv             keyword name -> token sequence
pub fn generate_corpus(cfg: &SyntheticTaskConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let feat_dir = out_dir.join("features");
    std::fs::create_dir_all(&feat_dir)?;

    let names: Vec<&String> = cfg.keywords.keys().collect();
    let mut entries = Vec::with_capacity(cfg.num_pos + cfg.num_neg);

    for i in 0..cfg.num_pos {
        let name = names[i % names.len()];
        let keyword = &cfg.keywords[name];
        let tokens = sample_positive(keyword, cfg, &mut rng);
        let utt_id = format!("pos_{:05}_{}", i, name);
        let rel = PathBuf::from("features").join(format!("{}.feat", utt_id));
        let feats = render_tokens(&tokens, cfg, &mut rng)?;
        write_features(&out_dir.join(&rel), &feats)?;
        entries.push(ManifestEntry {
            utt_id,
            feat_path: rel,
            is_positive: true,
            tokens,
        });
    }
    for i in 0..cfg.num_neg {
        let tokens = if rng.gen::<f64>() < cfg.distractor_prob {
            sample_distractor(cfg, &mut rng)
        } else {
            let len = rng.gen_range((cfg.context_min.max(1))..=(cfg.context_max.max(2)));
            sample_clean_tokens(len, cfg, &mut rng)
        };
        let utt_id = format!("neg_{:05}", i);
        let rel = PathBuf::from("features").join(format!("{}.feat", utt_id));
        let feats = render_tokens(&tokens, cfg, &mut rng)?;
        write_features(&out_dir.join(&rel), &feats)?;
        entries.push(ManifestEntry {
            utt_id,
            feat_path: rel,
            is_positive: false,
            tokens,
        });
    }

    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.shuffle(&mut rng);
    let entries: Vec<ManifestEntry> = order.into_iter().map(|i| entries[i].clone()).collect();

    let manifest = Manifest { entries };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    write_keywords(&out_dir.join("keywords.tsv"), &cfg.keywords)?;
    Ok(manifest)
}

/// Load features for one manifest entry (paths resolve against `root`).
pub fn load_entry_features(root: &Path, entry: &ManifestEntry) -> Result<Tensor> {
    read_features(&root.join(&entry.feat_path))
}

/// Splice each frame with `left` past and `right` future frames,
/// replicating the edges. Output dim is `f · (left + 1 + right)`.
pub fn stack_frames(features: &Tensor, left: usize, right: usize) -> Result<Tensor> {
    let (t, f) = features.dims2()?;
    if t == 0 {
        return Err(Error::Dimension("stack_frames: T = 0".into()));
    }
    let width = left + 1 + right;
    let mut out = Vec::with_capacity(t * f * width);
    let data = features.data();
    for i in 0..t {
        for off in -(left as isize)..=(right as isize) {
            let j = (i as isize + off).clamp(0, t as isize - 1) as usize;
            out.extend_from_slice(&data[j * f..(j + 1) * f]);
        }
    }
    Tensor::new(vec![t, f * width], out)
}
