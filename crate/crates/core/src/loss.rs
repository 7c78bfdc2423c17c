//! Training objective: transducer lattice loss on the unmasked and masked
//! joiner outputs plus a teacher-detached KL between the two.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::{random_mask, TransducerModel};
use crate::tensor::{logsumexp2, Tensor};

/// Per-sample loss terms. `total` is always assembled as
/// `l_rnnt + lambda_mask·l_rnnt_mask + lambda_msd·l_msd`, in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_rnnt: f64,
    pub l_rnnt_mask: f64,
    pub l_msd: f64,
    pub total: f64,
    pub lambda_mask: f64,
    pub lambda_msd: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossOptions {
    pub gamma_mask: f64,
    pub lambda_mask: f64,
    pub lambda_msd: f64,
    /// Seed for the per-sample mask draw; vary it per sample per epoch.
    pub mask_seed: u64,
    /// Experiment switch: restrict the KL sum to cells whose predictor
    /// row was actually masked.
    pub msd_masked_cells_only: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            gamma_mask: 0.35,
            lambda_mask: 1.0,
            lambda_msd: 0.003,
            mask_seed: 0,
            msd_masked_cells_only: false,
        }
    }
}

fn check_lattice(logp: &Tensor, tokens: &[usize]) -> Result<(usize, usize, usize)> {
    let (t_len, u_len, k) = logp.dims3()?;
    if t_len == 0 {
        return Err(Error::Dimension("transducer lattice: T = 0".into()));
    }
    if u_len != tokens.len() + 1 {
        return Err(Error::Dimension(format!(
            "transducer lattice: {} predictor rows for {} tokens",
            u_len,
            tokens.len()
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&y| y >= k) {
        return Err(Error::Index(format!(
            "transducer lattice: token {} outside the {}-way output",
            bad, k
        )));
    }
    if logp.data().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numerical("transducer lattice: non-finite log-posterior".into()));
    }
    Ok((t_len, u_len, k))
}

/// Log-domain forward recursion over the (t, u) lattice; returns
/// `log p(y | x)` for the full utterance. Blank is the last output index.
pub fn rnnt_log_prob(logp: &Tensor, tokens: &[usize], blank: usize) -> Result<f64> {
    let (t_len, u_len, _) = check_lattice(logp, tokens)?;
    let u_count = tokens.len();
    let mut alpha = vec![f64::NEG_INFINITY; t_len * u_len];
    alpha[0] = 0.0;
    for t in 0..t_len {
        for u in 0..=u_count {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 {
                alpha[(t - 1) * u_len + u] + logp.at3(t - 1, u, blank)
            } else {
                f64::NEG_INFINITY
            };
            let from_token = if u > 0 {
                alpha[t * u_len + u - 1] + logp.at3(t, u - 1, tokens[u - 1])
            } else {
                f64::NEG_INFINITY
            };
            alpha[t * u_len + u] = logsumexp2(from_blank, from_token);
        }
    }
    Ok(alpha[(t_len - 1) * u_len + u_count] + logp.at3(t_len - 1, u_count, blank))
}

/// Gradient of `−log p(y | x)` with respect to the log-posteriors, via the
/// standard α/β formulation. Cells unreachable by any alignment get zero.
/// The log-softmax backward upstream turns this into logits gradients.
pub fn rnnt_grad(logp: &Tensor, tokens: &[usize], blank: usize) -> Result<Tensor> {
    let (t_len, u_len, _) = check_lattice(logp, tokens)?;
    let u_count = tokens.len();

    let mut alpha = vec![f64::NEG_INFINITY; t_len * u_len];
    alpha[0] = 0.0;
    for t in 0..t_len {
        for u in 0..=u_count {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 {
                alpha[(t - 1) * u_len + u] + logp.at3(t - 1, u, blank)
            } else {
                f64::NEG_INFINITY
            };
            let from_token = if u > 0 {
                alpha[t * u_len + u - 1] + logp.at3(t, u - 1, tokens[u - 1])
            } else {
                f64::NEG_INFINITY
            };
            alpha[t * u_len + u] = logsumexp2(from_blank, from_token);
        }
    }
    // beta(t, u): log-probability of completing the utterance from (t, u),
    // including the emission consumed at (t, u).
    let mut beta = vec![f64::NEG_INFINITY; t_len * u_len];
    for t in (0..t_len).rev() {
        for u in (0..=u_count).rev() {
            if t == t_len - 1 && u == u_count {
                beta[t * u_len + u] = logp.at3(t, u, blank);
                continue;
            }
            let via_blank = if t + 1 < t_len {
                logp.at3(t, u, blank) + beta[(t + 1) * u_len + u]
            } else {
                f64::NEG_INFINITY
            };
            let via_token = if u < u_count {
                logp.at3(t, u, tokens[u]) + beta[t * u_len + u + 1]
            } else {
                f64::NEG_INFINITY
            };
            beta[t * u_len + u] = logsumexp2(via_blank, via_token);
        }
    }
    let log_p = alpha[(t_len - 1) * u_len + u_count] + logp.at3(t_len - 1, u_count, blank);
    if log_p == f64::NEG_INFINITY {
        return Err(Error::Numerical(
            "transducer gradient: sequence has zero probability".into(),
        ));
    }

    let mut grad = Tensor::zeros_like(logp);
    let k = logp.shape()[2];
    for t in 0..t_len {
        for u in 0..=u_count {
            let a = alpha[t * u_len + u];
            if a == f64::NEG_INFINITY {
                continue;
            }
            // blank continuation: next frame, or path completion at (T, U)
            let blank_cont = if t + 1 < t_len {
                beta[(t + 1) * u_len + u]
            } else if u == u_count {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            if blank_cont > f64::NEG_INFINITY {
                let occ = a + logp.at3(t, u, blank) + blank_cont - log_p;
                grad.data_mut()[(t * u_len + u) * k + blank] -= occ.exp();
            }
            if u < u_count {
                let token_cont = beta[t * u_len + u + 1];
                if token_cont > f64::NEG_INFINITY {
                    let occ = a + logp.at3(t, u, tokens[u]) + token_cont - log_p;
                    grad.data_mut()[(t * u_len + u) * k + tokens[u]] -= occ.exp();
                }
            }
        }
    }
    Ok(grad)
}

/// Tape op for the transducer loss: value is `−log p(y | x)`.
pub fn rnnt_loss_op(
    tape: &mut Tape,
    logp: NodeId,
    tokens: &[usize],
    blank: usize,
) -> Result<NodeId> {
    let value = -rnnt_log_prob(tape.value(logp), tokens, blank)?;
    let saved = tape.value(logp).clone();
    let tokens = tokens.to_vec();
    let grad_lattice = rnnt_grad(&saved, &tokens, blank)?;
    let back = Box::new(move |g: &Tensor| vec![grad_lattice.scale(g.item())]);
    Ok(tape.push_custom(Tensor::scalar(value), vec![logp], back))
}

/// `Σ_{t,u} Σ_k p·(log p − log q)` over normalized log-distributions.
/// Pure value form; see `msd_kl_op` for the tape op with teacher detach.
pub fn msd_kl(p_log: &Tensor, q_log: &Tensor) -> Result<f64> {
    if p_log.shape() != q_log.shape() {
        return Err(Error::Dimension(format!(
            "msd_kl: shape {:?} vs {:?}",
            p_log.shape(),
            q_log.shape()
        )));
    }
    let mut total = 0.0;
    for (&p, &q) in p_log.data().iter().zip(q_log.data()) {
        total += p.exp() * (p - q);
    }
    Ok(total)
}

/// KL tape op. The teacher distribution is treated as a constant: gradient
/// flows only into the student (masked) log-posteriors. `cell_rows`, when
/// given, restricts the sum to predictor rows with a true flag.
pub fn msd_kl_op(
    tape: &mut Tape,
    teacher_log: &Tensor,
    student: NodeId,
    cell_rows: Option<&[bool]>,
) -> Result<NodeId> {
    let q_log = tape.value(student);
    if teacher_log.shape() != q_log.shape() {
        return Err(Error::Dimension(format!(
            "msd_kl: shape {:?} vs {:?}",
            teacher_log.shape(),
            q_log.shape()
        )));
    }
    let (t_len, u_len, k) = teacher_log.dims3()?;
    let row_on = |u: usize| cell_rows.map_or(true, |rows| rows[u]);
    if let Some(rows) = cell_rows {
        if rows.len() != u_len {
            return Err(Error::Dimension(format!(
                "msd_kl: {} row flags for {} predictor rows",
                rows.len(),
                u_len
            )));
        }
    }
    let mut value = 0.0;
    for t in 0..t_len {
        for u in 0..u_len {
            if !row_on(u) {
                continue;
            }
            for j in 0..k {
                let p = teacher_log.at3(t, u, j);
                value += p.exp() * (p - q_log.at3(t, u, j));
            }
        }
    }
    let teacher = teacher_log.clone();
    let rows: Option<Vec<bool>> = cell_rows.map(|r| r.to_vec());
    let back = Box::new(move |g: &Tensor| {
        let s = g.item();
        let mut gd = vec![0.0; teacher.numel()];
        for t in 0..t_len {
            for u in 0..u_len {
                if let Some(rows) = &rows {
                    if !rows[u] {
                        continue;
                    }
                }
                for j in 0..k {
                    gd[(t * u_len + u) * k + j] = -s * teacher.at3(t, u, j).exp();
                }
            }
        }
        vec![Tensor::new(teacher.shape().to_vec(), gd).expect("shape")]
    });
    Ok(tape.push_custom(Tensor::scalar(value), vec![student], back))
}

/// One training sample through the full objective. The encoder and
/// predictor run once; the joiner runs twice (unmasked teacher and masked
/// student). Returns the loss terms and, when `with_grads` holds, the
/// gradients for every parameter in canonical order.
pub fn total_loss(
    model: &TransducerModel,
    features: &Tensor,
    tokens: &[usize],
    opts: &LossOptions,
    with_grads: bool,
) -> Result<(LossBreakdown, Option<Vec<Tensor>>)> {
    total_loss_with_teacher(model, features, tokens, opts, with_grads, None)
}

/// Forward-only unmasked log-posterior lattice — the teacher distribution
/// the KL term detaches. Exposed so gradient checks can freeze it: the
/// objective differentiated analytically is `total(θ; teacher(θ₀))`, so
/// finite differences must hold the teacher at the center point too.
pub fn teacher_lattice(
    model: &TransducerModel,
    features: &Tensor,
    tokens: &[usize],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let h_audio = model.encode(&mut tape, &vars, features)?;
    let h_text = model.predict(&mut tape, &vars, tokens)?;
    let p_token = model.joint(&mut tape, &vars, h_audio, h_text)?;
    Ok(tape.value(p_token).clone())
}

/// `total_loss` with an optional frozen teacher for the KL term (see
/// [`teacher_lattice`]). Training always passes `None`.
pub fn total_loss_with_teacher(
    model: &TransducerModel,
    features: &Tensor,
    tokens: &[usize],
    opts: &LossOptions,
    with_grads: bool,
    frozen_teacher: Option<&Tensor>,
) -> Result<(LossBreakdown, Option<Vec<Tensor>>)> {
    let blank = model.config.blank_id();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let h_audio = model.encode(&mut tape, &vars, features)?;
    let h_text = model.predict(&mut tape, &vars, tokens)?;
    let (h_mask, mask) = random_mask(&mut tape, h_text, opts.gamma_mask, opts.mask_seed)?;

    let p_token = model.joint(&mut tape, &vars, h_audio, h_text)?;
    let p_mtoken = model.joint(&mut tape, &vars, h_audio, h_mask)?;

    let l_rnnt = rnnt_loss_op(&mut tape, p_token, tokens, blank)?;
    let l_mask = rnnt_loss_op(&mut tape, p_mtoken, tokens, blank)?;
    let teacher = match frozen_teacher {
        Some(t) => t.clone(),
        None => tape.value(p_token).clone(),
    };
    let rows = if opts.msd_masked_cells_only {
        Some(mask.as_slice())
    } else {
        None
    };
    let l_msd = msd_kl_op(&mut tape, &teacher, p_mtoken, rows)?;

    let weighted_mask = tape.scale(l_mask, opts.lambda_mask);
    let weighted_msd = tape.scale(l_msd, opts.lambda_msd);
    let partial = tape.add(l_rnnt, weighted_mask)?;
    let total = tape.add(partial, weighted_msd)?;

    let breakdown = LossBreakdown {
        l_rnnt: tape.value(l_rnnt).item(),
        l_rnnt_mask: tape.value(l_mask).item(),
        l_msd: tape.value(l_msd).item(),
        total: tape.value(total).item(),
        lambda_mask: opts.lambda_mask,
        lambda_msd: opts.lambda_msd,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numerical(format!(
            "total loss is not finite: {:?}",
            breakdown
        )));
    }
    let grads = if with_grads {
        tape.backward(total)?;
        Some(vars.grads(&tape))
    } else {
        None
    };
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: sum `p(alignment)` over every monotonic lattice
    /// path by explicit recursion, in linear probability space.
    pub fn enumerate_log_prob(logp: &Tensor, tokens: &[usize], blank: usize) -> f64 {
        fn walk(
            logp: &Tensor,
            tokens: &[usize],
            blank: usize,
            t: usize,
            u: usize,
            acc: f64,
            out: &mut Vec<f64>,
        ) {
            let (t_len, _, _) = logp.dims3().unwrap();
            if t == t_len - 1 && u == tokens.len() {
                out.push(acc + logp.at3(t, u, blank));
                // token moves may still continue below even at the corner?
                // no: u == U, only the terminal blank remains
            }
            if t + 1 < t_len {
                walk(logp, tokens, blank, t + 1, u, acc + logp.at3(t, u, blank), out);
            }
            if u < tokens.len() {
                walk(logp, tokens, blank, t, u + 1, acc + logp.at3(t, u, tokens[u]), out);
            }
        }
        let mut terms = Vec::new();
        walk(logp, tokens, blank, 0, 0, 0.0, &mut terms);
        crate::tensor::logsumexp(&terms)
    }

    pub fn random_lattice(rng: &mut ChaCha8Rng, t_len: usize, u_len: usize, k: usize) -> Tensor {
        let mut data = Vec::with_capacity(t_len * u_len * k);
        for _ in 0..t_len * u_len {
            let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lse = crate::tensor::logsumexp(&logits);
            data.extend(logits.iter().map(|v| v - lse));
        }
        Tensor::new(vec![t_len, u_len, k], data).unwrap()
    }

    #[test]
    fn single_frame_no_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lattice = random_lattice(&mut rng, 1, 1, 3);
        let lp = rnnt_log_prob(&lattice, &[], 2).unwrap();
        assert!((lp - lattice.at3(0, 0, 2)).abs() < 1e-15);
    }

    #[test]
    fn uniform_two_frame_lattice() {
        // T=2, U=1, uniform over 3 classes: two alignments of three
        // emissions each, so p = 2·(1/3)³.
        let k = 3;
        let cell = (1.0f64 / 3.0).ln();
        let lattice = Tensor::filled(&[2, 2, k], cell);
        let lp = rnnt_log_prob(&lattice, &[0], 2).unwrap();
        assert!((lp - (2.0 * (1.0f64 / 27.0)).ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let t_len = rng.gen_range(1..=4);
            let u_count = rng.gen_range(0..=3usize);
            let v = rng.gen_range(1..=4);
            let lattice = random_lattice(&mut rng, t_len, u_count + 1, v + 1);
            let tokens: Vec<usize> = (0..u_count).map(|_| rng.gen_range(0..v)).collect();
            let fast = rnnt_log_prob(&lattice, &tokens, v).unwrap();
            let slow = enumerate_log_prob(&lattice, &tokens, v);
            assert!((fast - slow).abs() < 1e-9, "{} vs {}", fast, slow);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lattice = random_lattice(&mut rng, 3, 3, 4);
        let tokens = [1usize, 0];
        let blank = 3;
        let analytic = rnnt_grad(&lattice, &tokens, blank).unwrap();
        let eps = 1e-6;
        for idx in 0..lattice.numel() {
            let mut plus = lattice.clone();
            plus.data_mut()[idx] += eps;
            let mut minus = lattice.clone();
            minus.data_mut()[idx] -= eps;
            let numeric = (-rnnt_log_prob(&plus, &tokens, blank).unwrap()
                + rnnt_log_prob(&minus, &tokens, blank).unwrap())
                / (2.0 * eps);
            let a = analytic.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / denom < 1e-6,
                "idx {}: {} vs {}",
                idx,
                a,
                numeric
            );
        }
    }

    #[test]
    fn grad_zero_on_unreachable_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // T=2, U=2: cell (t=1, u=0) can still be reached; but (t=0, u>0)
        // cells' blank entries at the last frame boundary are unreachable
        // continuations. Check the documented property directly: any cell
        // with −inf α or no finite continuation has zero gradient mass.
        let lattice = random_lattice(&mut rng, 2, 3, 4);
        let tokens = [0usize, 1];
        let grad = rnnt_grad(&lattice, &tokens, 3).unwrap();
        // at t = T−1 (last frame), a blank before consuming all tokens is
        // impossible: gradient there must be zero
        assert_eq!(grad.at3(1, 0, 3), 0.0);
        assert_eq!(grad.at3(1, 1, 3), 0.0);
    }

    #[test]
    fn grad_rejects_nonfinite() {
        let mut lattice = Tensor::filled(&[1, 1, 2], (0.5f64).ln());
        lattice.data_mut()[0] = f64::NAN;
        assert!(matches!(
            rnnt_log_prob(&lattice, &[], 1),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn kl_identical_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_lattice(&mut rng, 2, 2, 3);
        assert_eq!(msd_kl(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_example() {
        let p = Tensor::new(vec![1, 1, 2], vec![(0.5f64).ln(), (0.5f64).ln()]).unwrap();
        let q = Tensor::new(vec![1, 1, 2], vec![(0.25f64).ln(), (0.75f64).ln()]).unwrap();
        let kl = msd_kl(&p, &q).unwrap();
        let expect = 0.5 * (2.0f64).ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl - expect).abs() < 1e-12);
        assert!((kl - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn kl_nonnegative_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let p = random_lattice(&mut rng, 2, 3, 4);
            let q = random_lattice(&mut rng, 2, 3, 4);
            assert!(msd_kl(&p, &q).unwrap() >= -1e-12);
        }
    }

    fn tiny_model() -> TransducerModel {
        let config = ModelConfig {
            feature_dim: 6,
            encoder_layers: 2,
            encoder_hidden: 8,
            encoder_out: 5,
            dfsmn_left: 2,
            dfsmn_right: 1,
            predictor_context: 2,
            embed_dim: 4,
            joiner_hidden: 6,
            vocab_size: 4,
            mask_prob: 0.35,
        };
        TransducerModel::init(config, 31).unwrap()
    }

    fn rand_feats(t: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![t, f], (0..t * f).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn zero_weights_drop_terms() {
        let model = tiny_model();
        let feats = rand_feats(4, 6, 7);
        let tokens = [1usize, 2];
        let opts = LossOptions {
            lambda_mask: 0.0,
            lambda_msd: 0.0,
            gamma_mask: 0.5,
            mask_seed: 3,
            ..Default::default()
        };
        let (b, _) = total_loss(&model, &feats, &tokens, &opts, false).unwrap();
        assert_eq!(b.total, b.l_rnnt);
    }

    #[test]
    fn gamma_zero_degenerates() {
        let model = tiny_model();
        let feats = rand_feats(4, 6, 8);
        let tokens = [0usize, 3];
        let opts = LossOptions {
            gamma_mask: 0.0,
            mask_seed: 11,
            ..Default::default()
        };
        let (b, _) = total_loss(&model, &feats, &tokens, &opts, false).unwrap();
        assert_eq!(b.l_rnnt_mask, b.l_rnnt);
        assert_eq!(b.l_msd, 0.0);
    }

    #[test]
    fn breakdown_total_is_exact_sum() {
        let model = tiny_model();
        let feats = rand_feats(5, 6, 9);
        let tokens = [2usize, 1, 3];
        let opts = LossOptions {
            gamma_mask: 0.5,
            mask_seed: 13,
            ..Default::default()
        };
        let (b, _) = total_loss(&model, &feats, &tokens, &opts, false).unwrap();
        assert_eq!(
            b.total,
            b.l_rnnt + b.lambda_mask * b.l_rnnt_mask + b.lambda_msd * b.l_msd
        );
        assert!(b.l_msd >= 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let model = tiny_model();
        let feats = rand_feats(4, 6, 10);
        let tokens = [1usize];
        let opts = LossOptions {
            gamma_mask: 0.5,
            mask_seed: 17,
            ..Default::default()
        };
        let (a, _) = total_loss(&model, &feats, &tokens, &opts, false).unwrap();
        let (b, _) = total_loss(&model, &feats, &tokens, &opts, false).unwrap();
        assert_eq!(a, b);
    }

    /// Full-objective gradient vs central finite differences, every
    /// parameter tensor, on a genuinely tiny model.
    #[test]
    fn full_objective_grad_check() {
        let model = tiny_model();
        let feats = rand_feats(4, 6, 12);
        let tokens = vec![1usize, 2];
        let opts = LossOptions {
            gamma_mask: 0.35,
            lambda_mask: 1.0,
            lambda_msd: 0.003,
            mask_seed: 19,
            msd_masked_cells_only: false,
        };
        let named: Vec<(String, Tensor)> = model
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let config = model.config.clone();
        // the detached teacher must stay fixed under FD perturbation
        let teacher = teacher_lattice(&model, &feats, &tokens).unwrap();
        let f = |values: &[Tensor]| -> crate::error::Result<(f64, Vec<Tensor>)> {
            let mut m = TransducerModel::init(config.clone(), 0)?;
            for ((_, slot), v) in m.named_params_mut().into_iter().zip(values) {
                *slot = v.clone();
            }
            let (b, grads) =
                total_loss_with_teacher(&m, &feats, &tokens, &opts, true, Some(&teacher))?;
            Ok((b.total, grads.unwrap()))
        };
        let report = crate::gradcheck::grad_check(&f, &named, 1e-5).unwrap();
        assert!(
            report.max_rel_err < 1e-3,
            "max rel err {} ({:?})",
            report.max_rel_err,
            report
                .per_tensor
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
        );
    }
}
