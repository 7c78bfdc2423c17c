//! Streaming keyword detection over a keyword-restricted lattice.
//!
//! Two Viterbi recursions (predictor-driven and fully-masked) run in
//! parallel over the same time axis; their terminal path scores are fused
//! with a coefficient `alpha`, length-normalized, and optionally pruned by
//! a frame-span timeout. `alpha = 1` is pure AR decoding, `alpha = 0` pure
//! NAR decoding.

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::TransducerModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordSpec {
    pub name: String,
    pub tokens: Vec<usize>,
}

impl KeywordSpec {
    pub fn new(name: impl Into<String>, tokens: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Parameter("keyword must have at least one token".into()));
        }
        Ok(KeywordSpec {
            name: name.into(),
            tokens,
        })
    }
}

/// Probability-domain posteriors over `(time × predictor-state × vocab+1)`,
/// restricted to the keyword's predictor rows.
#[derive(Debug, Clone)]
pub struct PosteriorLattice {
    pub probs: Tensor,
}

impl PosteriorLattice {
    pub fn from_log(logp: &Tensor) -> Result<Self> {
        logp.dims3()?;
        Ok(PosteriorLattice {
            probs: logp.map(f64::exp),
        })
    }

    pub fn frames(&self) -> usize {
        self.probs.shape()[0]
    }

    /// Keep only the first `t` frames.
    pub fn truncate(&self, t: usize) -> Result<Self> {
        let (t_len, u_len, k) = self.probs.dims3()?;
        if t == 0 || t > t_len {
            return Err(Error::Parameter(format!(
                "truncate to {} frames of {}",
                t, t_len
            )));
        }
        let data = self.probs.data()[..t * u_len * k].to_vec();
        Ok(PosteriorLattice {
            probs: Tensor::new(vec![t, u_len, k], data)?,
        })
    }
}

/// Which branch's best path defines the normalization length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchRule {
    /// The branch with the larger alpha-weighted raw term (ties go AR).
    #[default]
    DominantWeighted,
    AlwaysAr,
    /// The longer of the two best paths.
    MaxLength,
}

impl std::str::FromStr for BranchRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dominant" => Ok(BranchRule::DominantWeighted),
            "always-ar" => Ok(BranchRule::AlwaysAr),
            "max-length" => Ok(BranchRule::MaxLength),
            other => Err(Error::Config(format!(
                "unknown branch rule '{}' (dominant, always-ar, max-length)",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeParams {
    /// Fusion coefficient: weight of the AR branch.
    pub alpha: f64,
    /// Multiplicative prior applied before length normalization.
    pub s_bonus: f64,
    /// Maximum admissible path span in frames; paths longer than this
    /// score zero. Use `usize::MAX` (or T) to disable.
    pub t_out: usize,
    pub branch_rule: BranchRule,
}

impl DecodeParams {
    pub fn new(alpha: f64, s_bonus: f64, t_out: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!("alpha {} outside [0, 1]", alpha)));
        }
        if s_bonus <= 0.0 {
            return Err(Error::Parameter(format!("s_bonus {} must be positive", s_bonus)));
        }
        if t_out == 0 {
            return Err(Error::Parameter("t_out must be >= 1".into()));
        }
        Ok(DecodeParams {
            alpha,
            s_bonus,
            t_out,
            branch_rule: BranchRule::default(),
        })
    }
}

/// Per-frame decoding results.
#[derive(Debug, Clone)]
pub struct DecodeTrace {
    /// Normalized activation scores, one per frame.
    pub scores: Vec<f64>,
    /// Best-path start frame per branch (0-based).
    pub start_ar: Vec<usize>,
    pub start_nar: Vec<usize>,
    /// Frame span of the dominant branch's best path.
    pub path_len: Vec<usize>,
}

struct BranchState {
    /// δ(t, u) for the current frame.
    delta: Vec<f64>,
    /// Start frame propagated through the max recursion.
    start: Vec<usize>,
}

impl BranchState {
    fn new(u_len: usize) -> Self {
        BranchState {
            delta: vec![0.0; u_len],
            start: vec![0; u_len],
        }
    }
}

/// One frame of the keyword Viterbi recursion.
///
/// `prev` holds δ(t−1, ·); token transitions stay within the frame and
/// inherit the start frame diagonally, blank transitions advance the frame.
/// Ties prefer the token-emission predecessor so traces are deterministic.
fn advance_branch(
    cur: &mut BranchState,
    prev: &BranchState,
    probs: &Tensor,
    tokens: &[usize],
    blank: usize,
    t: usize,
) {
    let u_count = tokens.len();
    cur.delta[0] = 1.0;
    cur.start[0] = t;
    for u in 1..=u_count {
        let via_token = cur.delta[u - 1] * probs.at3(t, u - 1, tokens[u - 1]);
        let via_blank = if t > 0 {
            prev.delta[u] * probs.at3(t - 1, u, blank)
        } else {
            0.0
        };
        if via_token >= via_blank {
            cur.delta[u] = via_token;
            cur.start[u] = cur.start[u - 1];
        } else {
            cur.delta[u] = via_blank;
            cur.start[u] = prev.start[u];
        }
    }
}

/// Fused streaming decode. `S[t]` depends only on lattice columns `1..t`;
/// truncating the lattices reproduces the score prefix bit-exactly.
pub fn sar_stream_decode(
    p_ar: &PosteriorLattice,
    p_nar: &PosteriorLattice,
    keyword: &KeywordSpec,
    params: &DecodeParams,
) -> Result<DecodeTrace> {
    let (t_len, u_len, k) = p_ar.probs.dims3()?;
    if p_nar.probs.shape() != p_ar.probs.shape() {
        return Err(Error::Dimension(format!(
            "lattice shapes differ: {:?} vs {:?}",
            p_ar.probs.shape(),
            p_nar.probs.shape()
        )));
    }
    let u_count = keyword.tokens.len();
    if u_len != u_count + 1 {
        return Err(Error::Dimension(format!(
            "lattice has {} predictor rows for a {}-token keyword",
            u_len, u_count
        )));
    }
    let blank = k - 1;
    if keyword.tokens.iter().any(|&y| y >= blank) {
        return Err(Error::Index("keyword token outside vocabulary".into()));
    }

    let mut trace = DecodeTrace {
        scores: Vec::with_capacity(t_len),
        start_ar: Vec::with_capacity(t_len),
        start_nar: Vec::with_capacity(t_len),
        path_len: Vec::with_capacity(t_len),
    };
    let mut ar_prev = BranchState::new(u_len);
    let mut ar_cur = BranchState::new(u_len);
    let mut nar_prev = BranchState::new(u_len);
    let mut nar_cur = BranchState::new(u_len);

    for t in 0..t_len {
        advance_branch(&mut ar_cur, &ar_prev, &p_ar.probs, &keyword.tokens, blank, t);
        advance_branch(&mut nar_cur, &nar_prev, &p_nar.probs, &keyword.tokens, blank, t);

        // terminal blank closes the keyword on each branch
        let raw_ar = ar_cur.delta[u_count] * p_ar.probs.at3(t, u_count, blank);
        let raw_nar = nar_cur.delta[u_count] * p_nar.probs.at3(t, u_count, blank);
        let weighted_ar = params.alpha * raw_ar;
        let weighted_nar = (1.0 - params.alpha) * raw_nar;
        let mut score = weighted_ar + weighted_nar;

        let span_ar = t - ar_cur.start[u_count] + 1;
        let span_nar = t - nar_cur.start[u_count] + 1;
        let len = match params.branch_rule {
            BranchRule::DominantWeighted => {
                if weighted_ar >= weighted_nar {
                    span_ar
                } else {
                    span_nar
                }
            }
            BranchRule::AlwaysAr => span_ar,
            BranchRule::MaxLength => span_ar.max(span_nar),
        };
        if len > params.t_out {
            score = 0.0;
        }
        score = (params.s_bonus * score).powf(1.0 / len as f64);

        trace.scores.push(score);
        trace.start_ar.push(ar_cur.start[u_count]);
        trace.start_nar.push(nar_cur.start[u_count]);
        trace.path_len.push(len);

        std::mem::swap(&mut ar_prev, &mut ar_cur);
        std::mem::swap(&mut nar_prev, &mut nar_cur);
    }
    Ok(trace)
}

/// AR and NAR posterior lattices for one utterance: the AR side feeds the
/// keyword to the predictor, the NAR side replaces the predictor output
/// with zero rows of the same shape.
pub fn decode_posteriors(
    model: &TransducerModel,
    features: &Tensor,
    keyword: &KeywordSpec,
) -> Result<(PosteriorLattice, PosteriorLattice)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let h_audio = model.encode(&mut tape, &vars, features)?;
    let h_text = model.predict(&mut tape, &vars, &keyword.tokens)?;
    let logp_ar = model.joint(&mut tape, &vars, h_audio, h_text)?;

    let zero_rows = Tensor::zeros(tape.value(h_text).shape());
    let h_zero = tape.leaf(zero_rows);
    let logp_nar = model.joint(&mut tape, &vars, h_audio, h_zero)?;

    Ok((
        PosteriorLattice::from_log(tape.value(logp_ar))?,
        PosteriorLattice::from_log(tape.value(logp_nar))?,
    ))
}

/// Exhaustive oracle: enumerate every start-anywhere monotonic path that
/// consumes the keyword with arbitrary blank padding, ending with the
/// terminal blank at frame `t`. Returns (max path product, frame span)
/// per frame; frames with no complete path report (0, 1).
pub fn brute_force_keyword_score(
    lattice: &PosteriorLattice,
    keyword: &KeywordSpec,
    budget: usize,
) -> Result<Vec<(f64, usize)>> {
    let (t_len, u_len, k) = lattice.probs.dims3()?;
    let u_count = keyword.tokens.len();
    if u_len != u_count + 1 {
        return Err(Error::Dimension(format!(
            "lattice has {} predictor rows for a {}-token keyword",
            u_len, u_count
        )));
    }
    let blank = k - 1;

    // paths from one start frame: C((t−s)+U, U) interleavings; bound the sum
    let mut total_paths: usize = 0;
    for s in 0..t_len {
        for t in s..t_len {
            let n = (t - s) + u_count;
            let mut c: usize = 1;
            for i in 0..u_count {
                c = c.saturating_mul(n - i) / (i + 1);
            }
            total_paths = total_paths.saturating_add(c);
        }
    }
    if total_paths > budget {
        return Err(Error::Size(format!(
            "path enumeration needs {} paths, budget {}",
            total_paths, budget
        )));
    }

    let mut best: Vec<(f64, usize)> = vec![(0.0, 1); t_len];
    // depth-first over (t, u, product) from each start frame
    fn walk(
        probs: &Tensor,
        tokens: &[usize],
        blank: usize,
        t_len: usize,
        start: usize,
        t: usize,
        u: usize,
        acc: f64,
        best: &mut [(f64, usize)],
    ) {
        if u == tokens.len() {
            let score = acc * probs.at3(t, u, blank);
            let span = t - start + 1;
            if score > best[t].0 {
                best[t] = (score, span);
            }
        }
        if u < tokens.len() {
            walk(
                probs,
                tokens,
                blank,
                t_len,
                start,
                t,
                u + 1,
                acc * probs.at3(t, u, tokens[u]),
                best,
            );
        }
        if t + 1 < t_len {
            walk(
                probs,
                tokens,
                blank,
                t_len,
                start,
                t + 1,
                u,
                acc * probs.at3(t, u, blank),
                best,
            );
        }
    }
    for s in 0..t_len {
        walk(
            &lattice.probs,
            &keyword.tokens,
            blank,
            t_len,
            s,
            s,
            0,
            1.0,
            &mut best,
        );
    }
    Ok(best)
}

/// Utterance-level reduction: the peak frame score, earliest frame on ties.
/// Frames are reported 1-based.
pub fn utterance_score(trace: &DecodeTrace) -> (f64, usize) {
    let mut best = 0.0;
    let mut frame = 1;
    for (i, &s) in trace.scores.iter().enumerate() {
        if s > best {
            best = s;
            frame = i + 1;
        }
    }
    (best, frame)
}
