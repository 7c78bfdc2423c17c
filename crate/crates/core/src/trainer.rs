//! Mini-batch training loop: AdamW, plateau-driven learning-rate decay,
//! per-epoch checkpoints with full optimizer state for exact resume.

use crate::error::{Error, Result};
use crate::io;
use crate::loss::{total_loss, LossOptions};
use crate::model::TransducerModel;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Batch caps: a batch closes at whichever limit is hit first.
    pub max_frames: usize,
    pub max_samples: usize,
    pub epochs: usize,
    pub gamma_mask: f64,
    pub lambda_mask: f64,
    pub lambda_msd: f64,
    pub seed: u64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_improvement: f64,
    pub val_fraction: f64,
    pub msd_masked_cells_only: bool,
    pub checkpoint_dir: PathBuf,
}

impl TrainConfig {
    pub fn defaults(checkpoint_dir: PathBuf) -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            max_frames: 12_288,
            max_samples: 64,
            epochs: 10,
            gamma_mask: 0.35,
            lambda_mask: 1.0,
            lambda_msd: 0.003,
            seed: 0,
            plateau_factor: 0.5,
            plateau_patience: 2,
            min_improvement: 1e-4,
            val_fraction: 0.1,
            msd_masked_cells_only: false,
            checkpoint_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{} must be in [0, 1)", name)));
            }
        }
        if self.max_frames == 0 || self.max_samples == 0 {
            return Err(Error::Config("batch caps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub utt_id: String,
    /// Stacked features, `[T × feature_dim]`.
    pub features: Tensor,
    pub tokens: Vec<usize>,
}

/// Adam moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
            v: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
            step: 0,
        }
    }
}

/// One AdamW update: decoupled weight decay first, then the
/// bias-corrected moment update.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("adamw_step: non-finite gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = &grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.numel() {
            let pv = p.data()[j];
            let gv = g.data()[j];
            let decayed = pv - lr * weight_decay * pv;
            let mj = beta1 * m.data()[j] + (1.0 - beta1) * gv;
            let vj = beta2 * v.data()[j] + (1.0 - beta2) * gv * gv;
            m.data_mut()[j] = mj;
            v.data_mut()[j] = vj;
            p.data_mut()[j] = decayed - lr * (mj / bc1) / ((vj / bc2).sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_rnnt: f64,
    pub l_rnnt_mask: f64,
    pub l_msd: f64,
    pub total: f64,
    pub lr: f64,
    pub val_total: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over a combined word; stable across platforms
    let mut z = seed ^ a.wrapping_mul(0x9E3779B97F4A7C15) ^ b.wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

struct SchedState {
    lr: f64,
    best_val: f64,
    bad_epochs: usize,
}

fn checkpoint_entries(
    model: &TransducerModel,
    opt: &AdamState,
    sched: &SchedState,
    epoch: usize,
) -> Vec<(String, Tensor)> {
    let mut entries = model.to_entries();
    for ((name, _), (m, v)) in model
        .named_params()
        .iter()
        .zip(opt.m.iter().zip(opt.v.iter()))
    {
        entries.push((format!("opt.{}.m", name), m.clone()));
        entries.push((format!("opt.{}.v", name), v.clone()));
    }
    entries.push(("opt.step".into(), Tensor::scalar(opt.step as f64)));
    entries.push(("sched.lr".into(), Tensor::scalar(sched.lr)));
    entries.push(("sched.best_val".into(), Tensor::scalar(sched.best_val)));
    entries.push((
        "sched.bad_epochs".into(),
        Tensor::scalar(sched.bad_epochs as f64),
    ));
    entries.push(("train.epoch".into(), Tensor::scalar(epoch as f64)));
    entries
}

/// Load a training checkpoint: model, optimizer, scheduler, epoch index.
pub fn load_train_checkpoint(
    path: &Path,
) -> Result<(TransducerModel, AdamState, f64, f64, usize, usize)> {
    let entries = io::read_tensors(path)?;
    let model = TransducerModel::from_entries(&entries)?;
    let map: BTreeMap<&str, &Tensor> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let fetch = |name: &str| -> Result<&Tensor> {
        map.get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {}", name)))
    };
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, p) in model.named_params() {
        let mm = fetch(&format!("opt.{}.m", name))?;
        let vv = fetch(&format!("opt.{}.v", name))?;
        if mm.shape() != p.shape() || vv.shape() != p.shape() {
            return Err(Error::Format(format!("optimizer state shape mismatch for {}", name)));
        }
        m.push(mm.clone());
        v.push(vv.clone());
    }
    let opt = AdamState {
        m,
        v,
        step: fetch("opt.step")?.item() as u64,
    };
    let lr = fetch("sched.lr")?.item();
    let best_val = fetch("sched.best_val")?.item();
    let bad_epochs = fetch("sched.bad_epochs")?.item() as usize;
    let epoch = fetch("train.epoch")?.item() as usize;
    Ok((model, opt, lr, best_val, bad_epochs, epoch))
}

/// Deterministic split of sample indices into (train, validation).
fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xA11, 0));
    indices.shuffle(&mut rng);
    let n_val = ((n as f64) * val_fraction).floor() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = indices[..n_val].to_vec();
    let train = indices[n_val..].to_vec();
    (train, val)
}

pub fn train(
    model: &mut TransducerModel,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    resume_from: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("train: empty sample list".into()));
    }
    std::fs::create_dir_all(&cfg.checkpoint_dir)?;

    let mut opt;
    let mut sched;
    let mut start_epoch = 0usize;
    if let Some(path) = resume_from {
        let (m, o, lr, best_val, bad, epoch) = load_train_checkpoint(path)?;
        *model = m;
        opt = o;
        sched = SchedState {
            lr,
            best_val,
            bad_epochs: bad,
        };
        start_epoch = epoch + 1;
    } else {
        let params: Vec<&Tensor> = model.named_params().into_iter().map(|(_, t)| t).collect();
        opt = AdamState::zeros_like(&params);
        sched = SchedState {
            lr: cfg.lr,
            best_val: f64::INFINITY,
            bad_epochs: 0,
        };
    }

    let (train_idx, val_idx) = split_indices(samples.len(), cfg.val_fraction, cfg.seed);
    let mut log = Vec::new();
    let mut best_epoch = start_epoch;
    let best_path = cfg.checkpoint_dir.join("best.ckpt");
    let mut log_lines = String::new();

    for epoch in start_epoch..cfg.epochs {
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xE90C, epoch as u64));
        order.shuffle(&mut rng);

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut cursor = 0usize;
        while cursor < order.len() {
            // assemble a batch under both caps, always taking at least one
            let mut batch = Vec::new();
            let mut frames = 0usize;
            while cursor < order.len() && batch.len() < cfg.max_samples {
                let idx = order[cursor];
                let t = samples[idx].features.shape()[0];
                if !batch.is_empty() && frames + t > cfg.max_frames {
                    break;
                }
                batch.push(idx);
                frames += t;
                cursor += 1;
            }

            let results: Vec<_> = batch
                .par_iter()
                .map(|&idx| {
                    let opts = LossOptions {
                        gamma_mask: cfg.gamma_mask,
                        lambda_mask: cfg.lambda_mask,
                        lambda_msd: cfg.lambda_msd,
                        mask_seed: mix_seed(cfg.seed, epoch as u64 + 1, idx as u64),
                        msd_masked_cells_only: cfg.msd_masked_cells_only,
                    };
                    let s = &samples[idx];
                    total_loss(model, &s.features, &s.tokens, &opts, true).map_err(|e| {
                        Error::Data(format!("utterance {}: {}", s.utt_id, e))
                    })
                })
                .collect();

            let scale = 1.0 / batch.len() as f64;
            let mut mean_grads: Option<Vec<Tensor>> = None;
            for r in results {
                let (b, grads) = r?;
                sums.0 += b.l_rnnt;
                sums.1 += b.l_rnnt_mask;
                sums.2 += b.l_msd;
                sums.3 += b.total;
                let grads = grads.expect("requested gradients");
                match &mut mean_grads {
                    None => mean_grads = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let mut grads = mean_grads.expect("non-empty batch");
            for g in &mut grads {
                *g = g.scale(scale);
            }
            let mut params: Vec<&mut Tensor> = model
                .named_params_mut()
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            adamw_step(
                &mut params,
                &grads,
                &mut opt,
                sched.lr,
                cfg.beta1,
                cfg.beta2,
                cfg.eps,
                cfg.weight_decay,
            )?;
        }

        let n_train = train_idx.len() as f64;
        // validation metric for the plateau scheduler: mean total loss on
        // the held-out split, with masks fixed per sample across epochs
        let val_total = if val_idx.is_empty() {
            sums.3 / n_train
        } else {
            let vals: Vec<_> = val_idx
                .par_iter()
                .map(|&idx| {
                    let opts = LossOptions {
                        gamma_mask: cfg.gamma_mask,
                        lambda_mask: cfg.lambda_mask,
                        lambda_msd: cfg.lambda_msd,
                        mask_seed: mix_seed(cfg.seed, 0, idx as u64),
                        msd_masked_cells_only: cfg.msd_masked_cells_only,
                    };
                    let s = &samples[idx];
                    total_loss(model, &s.features, &s.tokens, &opts, false)
                        .map(|(b, _)| b.total)
                })
                .collect::<Result<Vec<f64>>>()?;
            vals.iter().sum::<f64>() / vals.len() as f64
        };

        let stats = EpochStats {
            epoch,
            l_rnnt: sums.0 / n_train,
            l_rnnt_mask: sums.1 / n_train,
            l_msd: sums.2 / n_train,
            total: sums.3 / n_train,
            lr: sched.lr,
            val_total,
        };
        log_lines.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6e}\n",
            stats.epoch, stats.l_rnnt, stats.l_rnnt_mask, stats.l_msd, stats.total, stats.lr
        ));

        let improved = val_total < sched.best_val - cfg.min_improvement;
        if improved {
            sched.best_val = val_total;
            sched.bad_epochs = 0;
        } else {
            sched.bad_epochs += 1;
            if sched.bad_epochs >= cfg.plateau_patience {
                sched.lr *= cfg.plateau_factor;
                sched.bad_epochs = 0;
            }
        }

        let ckpt = cfg
            .checkpoint_dir
            .join(format!("epoch_{:03}.ckpt", epoch));
        let entries = checkpoint_entries(model, &opt, &sched, epoch);
        io::write_tensors(&ckpt, &entries)?;
        if improved || epoch == start_epoch {
            io::write_tensors(&best_path, &entries)?;
            best_epoch = epoch;
        }
        log.push(stats);
    }

    io::atomic_write(&cfg.checkpoint_dir.join("train.log"), log_lines.as_bytes())?;
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_checkpoint: best_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::Rng;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut state = AdamState::zeros_like(&[&p]);
        adamw_step(&mut [&mut p], &[g], &mut state, 1e-3, 0.9, 0.999, 1e-8, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_against_gradient() {
        let mut p = Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let g = Tensor::new(vec![3], vec![0.5, -2.0, 1e-3]).unwrap();
        let mut state = AdamState::zeros_like(&[&p]);
        adamw_step(&mut [&mut p], &[g.clone()], &mut state, 1e-3, 0.9, 0.999, 1e-8, 0.0)
            .unwrap();
        for (pv, gv) in p.data().iter().zip(g.data()) {
            assert_eq!(pv.signum(), -gv.signum());
        }
    }

    #[test]
    fn quadratic_converges() {
        // f(p) = ‖p‖², gradient 2p, from p₀ = 1
        let mut p = Tensor::filled(&[4], 1.0);
        let mut state = AdamState::zeros_like(&[&p]);
        for _ in 0..200 {
            let g = p.scale(2.0);
            adamw_step(&mut [&mut p], &[g], &mut state, 0.05, 0.9, 0.999, 1e-8, 0.0).unwrap();
        }
        for &v in p.data() {
            assert!(v.abs() < 1e-2, "p = {}", v);
        }
    }

    #[test]
    fn nonfinite_gradient_aborts() {
        let mut p = Tensor::filled(&[1], 1.0);
        let g = Tensor::new(vec![1], vec![f64::NAN]).unwrap();
        let mut state = AdamState::zeros_like(&[&p]);
        assert!(matches!(
            adamw_step(&mut [&mut p], &[g], &mut state, 1e-3, 0.9, 0.999, 1e-8, 0.0),
            Err(Error::Numerical(_))
        ));
    }

    fn tiny_samples(n: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let t = rng.gen_range(3..7);
                let feats = Tensor::new(
                    vec![t, 6],
                    (0..t * 6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                let u = rng.gen_range(1..3);
                TrainSample {
                    utt_id: format!("utt{}", i),
                    features: feats,
                    tokens: (0..u).map(|_| rng.gen_range(0..4)).collect(),
                }
            })
            .collect()
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_dim: 6,
            encoder_layers: 1,
            encoder_hidden: 8,
            encoder_out: 5,
            dfsmn_left: 2,
            dfsmn_right: 1,
            predictor_context: 2,
            embed_dim: 4,
            joiner_hidden: 6,
            vocab_size: 4,
            mask_prob: 0.35,
        }
    }

    #[test]
    fn two_epoch_determinism() {
        let samples = tiny_samples(12, 41);
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let mut cfg = TrainConfig::defaults(dir1.path().to_path_buf());
        cfg.epochs = 2;
        cfg.max_samples = 4;
        let mut m1 = TransducerModel::init(tiny_config(), 5).unwrap();
        let out1 = train(&mut m1, &samples, &cfg, None).unwrap();
        cfg.checkpoint_dir = dir2.path().to_path_buf();
        let mut m2 = TransducerModel::init(tiny_config(), 5).unwrap();
        let out2 = train(&mut m2, &samples, &cfg, None).unwrap();
        for (a, b) in out1.log.iter().zip(&out2.log) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
        assert_eq!(
            std::fs::read(dir1.path().join("train.log")).unwrap(),
            std::fs::read(dir2.path().join("train.log")).unwrap()
        );
    }

    #[test]
    fn resume_reproduces_trajectory() {
        let samples = tiny_samples(10, 43);
        let full_dir = tempfile::tempdir().unwrap();
        let mut cfg = TrainConfig::defaults(full_dir.path().to_path_buf());
        cfg.epochs = 4;
        cfg.max_samples = 4;
        let mut full = TransducerModel::init(tiny_config(), 7).unwrap();
        let full_out = train(&mut full, &samples, &cfg, None).unwrap();

        let half_dir = tempfile::tempdir().unwrap();
        let mut cfg_half = cfg.clone();
        cfg_half.checkpoint_dir = half_dir.path().to_path_buf();
        cfg_half.epochs = 2;
        let mut half = TransducerModel::init(tiny_config(), 7).unwrap();
        train(&mut half, &samples, &cfg_half, None).unwrap();

        let resume_dir = tempfile::tempdir().unwrap();
        let mut cfg_resume = cfg.clone();
        cfg_resume.checkpoint_dir = resume_dir.path().to_path_buf();
        let mut resumed = TransducerModel::init(tiny_config(), 999).unwrap();
        let resume_out = train(
            &mut resumed,
            &samples,
            &cfg_resume,
            Some(&half_dir.path().join("epoch_001.ckpt")),
        )
        .unwrap();

        let tail = &full_out.log[2..];
        for (a, b) in tail.iter().zip(&resume_out.log) {
            assert_eq!(a.epoch, b.epoch);
            assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
        // final parameters identical too
        for ((_, t1), (_, t2)) in full.named_params().iter().zip(resumed.named_params()) {
            assert_eq!(*t1, t2);
        }
    }

    #[test]
    fn params_stay_finite() {
        let samples = tiny_samples(8, 47);
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = TrainConfig::defaults(dir.path().to_path_buf());
        cfg.epochs = 3;
        let mut model = TransducerModel::init(tiny_config(), 9).unwrap();
        train(&mut model, &samples, &cfg, None).unwrap();
        for (name, t) in model.named_params() {
            assert!(t.is_finite(), "{} went non-finite", name);
        }
    }
}
