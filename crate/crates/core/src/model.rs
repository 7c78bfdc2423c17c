//! The transducer: DFSMN encoder, stateless predictor, joiner, and the
//! token-level random mask applied to the predictor output.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

pub const META_CONFIG: &str = "meta.config";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Per-frame input size after frame stacking.
    pub feature_dim: usize,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub encoder_out: usize,
    /// Left memory taps per DFSMN layer (frames).
    pub dfsmn_left: usize,
    /// Right memory taps per DFSMN layer (frames); structural lookahead.
    pub dfsmn_right: usize,
    /// Stateless predictor history window.
    pub predictor_context: usize,
    pub embed_dim: usize,
    pub joiner_hidden: usize,
    /// Token vocabulary size, excluding blank.
    pub vocab_size: usize,
    pub mask_prob: f64,
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk_scale() -> Self {
        ModelConfig {
            feature_dim: 24,
            encoder_layers: 3,
            encoder_hidden: 64,
            encoder_out: 32,
            dfsmn_left: 4,
            dfsmn_right: 2,
            predictor_context: 2,
            embed_dim: 32,
            joiner_hidden: 32,
            vocab_size: 8,
            mask_prob: 0.35,
        }
    }

    /// Blank is the last index of the V+1 joiner output.
    pub fn blank_id(&self) -> usize {
        self.vocab_size
    }

    /// Start-symbol row of the predictor embedding table.
    pub fn start_id(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.feature_dim,
            self.encoder_layers,
            self.encoder_hidden,
            self.encoder_out,
            self.predictor_context,
            self.embed_dim,
            self.joiner_hidden,
            self.vocab_size,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!(
                "mask_prob {} outside [0, 1]",
                self.mask_prob
            )));
        }
        Ok(())
    }

    fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![11],
            vec![
                self.feature_dim as f64,
                self.encoder_layers as f64,
                self.encoder_hidden as f64,
                self.encoder_out as f64,
                self.dfsmn_left as f64,
                self.dfsmn_right as f64,
                self.predictor_context as f64,
                self.embed_dim as f64,
                self.joiner_hidden as f64,
                self.vocab_size as f64,
                self.mask_prob,
            ],
        )
        .expect("fixed shape")
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape() != [11] {
            return Err(Error::Format(format!(
                "meta.config has shape {:?}, expected [11]",
                t.shape()
            )));
        }
        let d = t.data();
        let cfg = ModelConfig {
            feature_dim: d[0] as usize,
            encoder_layers: d[1] as usize,
            encoder_hidden: d[2] as usize,
            encoder_out: d[3] as usize,
            dfsmn_left: d[4] as usize,
            dfsmn_right: d[5] as usize,
            predictor_context: d[6] as usize,
            embed_dim: d[7] as usize,
            joiner_hidden: d[8] as usize,
            vocab_size: d[9] as usize,
            mask_prob: d[10],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct DfsmnLayer {
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub w_mem: Tensor,
    pub b_mem: Tensor,
    pub taps_left: Tensor,
    pub taps_right: Tensor,
}

#[derive(Debug, Clone)]
pub struct TransducerModel {
    pub config: ModelConfig,
    pub layers: Vec<DfsmnLayer>,
    pub w_enc_out: Tensor,
    pub b_enc_out: Tensor,
    /// (V+2)×E: token rows, a blank row, and a start-symbol row.
    pub embed: Tensor,
    pub w_pred: Tensor,
    pub b_pred: Tensor,
    pub w_join_audio: Tensor,
    pub w_join_text: Tensor,
    pub b_join: Tensor,
    pub w_join_out: Tensor,
    pub b_join_out: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

impl TransducerModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let h = c.encoder_hidden;
        let mut layers = Vec::with_capacity(c.encoder_layers);
        for l in 0..c.encoder_layers {
            let in_dim = if l == 0 { c.feature_dim } else { h };
            let s_in = 1.0 / (in_dim as f64).sqrt();
            let s_mem = 1.0 / (h as f64).sqrt();
            layers.push(DfsmnLayer {
                w_in: uniform(&mut rng, &[in_dim, h], s_in),
                b_in: Tensor::zeros(&[h]),
                w_mem: uniform(&mut rng, &[h, h], s_mem),
                b_mem: Tensor::zeros(&[h]),
                taps_left: uniform(&mut rng, &[c.dfsmn_left, h], 0.1),
                taps_right: uniform(&mut rng, &[c.dfsmn_right, h], 0.1),
            });
        }
        let d = c.encoder_out;
        let model = TransducerModel {
            layers,
            w_enc_out: uniform(&mut rng, &[h, d], 1.0 / (h as f64).sqrt()),
            b_enc_out: Tensor::zeros(&[d]),
            embed: uniform(
                &mut rng,
                &[c.vocab_size + 2, c.embed_dim],
                1.0 / (c.embed_dim as f64).sqrt(),
            ),
            w_pred: uniform(
                &mut rng,
                &[c.predictor_context * c.embed_dim, d],
                1.0 / ((c.predictor_context * c.embed_dim) as f64).sqrt(),
            ),
            b_pred: Tensor::zeros(&[d]),
            w_join_audio: uniform(&mut rng, &[d, c.joiner_hidden], 1.0 / (d as f64).sqrt()),
            w_join_text: uniform(&mut rng, &[d, c.joiner_hidden], 1.0 / (d as f64).sqrt()),
            b_join: Tensor::zeros(&[c.joiner_hidden]),
            w_join_out: uniform(
                &mut rng,
                &[c.joiner_hidden, c.vocab_size + 1],
                1.0 / (c.joiner_hidden as f64).sqrt(),
            ),
            b_join_out: Tensor::zeros(&[c.vocab_size + 1]),
            config,
        };
        Ok(model)
    }

    /// Parameters in canonical order. Checkpointing, the optimizer, and
    /// tape binding all share this ordering.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("enc.{}.w_in", l), &layer.w_in));
            out.push((format!("enc.{}.b_in", l), &layer.b_in));
            out.push((format!("enc.{}.w_mem", l), &layer.w_mem));
            out.push((format!("enc.{}.b_mem", l), &layer.b_mem));
            out.push((format!("enc.{}.taps_left", l), &layer.taps_left));
            out.push((format!("enc.{}.taps_right", l), &layer.taps_right));
        }
        out.push(("enc.out.w".into(), &self.w_enc_out));
        out.push(("enc.out.b".into(), &self.b_enc_out));
        out.push(("pred.embed".into(), &self.embed));
        out.push(("pred.w".into(), &self.w_pred));
        out.push(("pred.b".into(), &self.b_pred));
        out.push(("join.w_audio".into(), &self.w_join_audio));
        out.push(("join.w_text".into(), &self.w_join_text));
        out.push(("join.b".into(), &self.b_join));
        out.push(("join.w_out".into(), &self.w_join_out));
        out.push(("join.b_out".into(), &self.b_join_out));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("enc.{}.w_in", l), &mut layer.w_in));
            out.push((format!("enc.{}.b_in", l), &mut layer.b_in));
            out.push((format!("enc.{}.w_mem", l), &mut layer.w_mem));
            out.push((format!("enc.{}.b_mem", l), &mut layer.b_mem));
            out.push((format!("enc.{}.taps_left", l), &mut layer.taps_left));
            out.push((format!("enc.{}.taps_right", l), &mut layer.taps_right));
        }
        out.push(("enc.out.w".into(), &mut self.w_enc_out));
        out.push(("enc.out.b".into(), &mut self.b_enc_out));
        out.push(("pred.embed".into(), &mut self.embed));
        out.push(("pred.w".into(), &mut self.w_pred));
        out.push(("pred.b".into(), &mut self.b_pred));
        out.push(("join.w_audio".into(), &mut self.w_join_audio));
        out.push(("join.w_text".into(), &mut self.w_join_text));
        out.push(("join.b".into(), &mut self.b_join));
        out.push(("join.w_out".into(), &mut self.w_join_out));
        out.push(("join.b_out".into(), &mut self.b_join_out));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checkpoint entries: config metadata followed by parameters.
    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        let mut entries = vec![(META_CONFIG.to_string(), self.config.to_tensor())];
        for (name, t) in self.named_params() {
            entries.push((name, t.clone()));
        }
        entries
    }

    /// Rebuild a model from container entries, validating every shape
    /// against the embedded config. Extra entries (optimizer state,
    /// pipeline metadata) are ignored.
    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Self> {
        let map: BTreeMap<&str, &Tensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let config = ModelConfig::from_tensor(map.get(META_CONFIG).ok_or_else(|| {
            Error::Format("checkpoint is missing the meta.config tensor".into())
        })?)?;
        let mut model = TransducerModel::init(config, 0)?;
        for (name, slot) in model.named_params_mut() {
            let src = map.get(name.as_str()).ok_or_else(|| {
                Error::Format(format!("checkpoint is missing tensor {}", name))
            })?;
            if src.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "tensor {} has shape {:?}, config implies {:?}",
                    name,
                    src.shape(),
                    slot.shape()
                )));
            }
            *slot = (*src).clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_tensors(path, &self.to_entries())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_entries(&io::read_tensors(path)?)
    }

    /// Register every parameter on the tape, in canonical order.
    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let ids: Vec<NodeId> = self
            .named_params()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        ModelVars {
            per_layer: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, _)| {
                    let base = l * 6;
                    LayerVars {
                        w_in: ids[base],
                        b_in: ids[base + 1],
                        w_mem: ids[base + 2],
                        b_mem: ids[base + 3],
                        taps_left: ids[base + 4],
                        taps_right: ids[base + 5],
                    }
                })
                .collect(),
            tail: {
                let base = self.layers.len() * 6;
                TailVars {
                    w_enc_out: ids[base],
                    b_enc_out: ids[base + 1],
                    embed: ids[base + 2],
                    w_pred: ids[base + 3],
                    b_pred: ids[base + 4],
                    w_join_audio: ids[base + 5],
                    w_join_text: ids[base + 6],
                    b_join: ids[base + 7],
                    w_join_out: ids[base + 8],
                    b_join_out: ids[base + 9],
                }
            },
            ordered: ids,
        }
    }

    /// DFSMN encoder: per layer an affine+ReLU projection, a memory-stream
    /// projection, learned left/right taps, and a skip connection to the
    /// previous layer's memory stream when shapes agree.
    pub fn encode(&self, tape: &mut Tape, vars: &ModelVars, features: &Tensor) -> Result<NodeId> {
        let (t, f) = features.dims2()?;
        if t == 0 {
            return Err(Error::Dimension("encode: empty input (T = 0)".into()));
        }
        if f != self.config.feature_dim {
            return Err(Error::Dimension(format!(
                "encode: feature dim {} does not match config feature_dim {}",
                f, self.config.feature_dim
            )));
        }
        let mut x = tape.leaf(features.clone());
        let mut prev_mem: Option<NodeId> = None;
        for lv in &vars.per_layer {
            let h = tape.matmul(x, lv.w_in)?;
            let h = tape.add_row(h, lv.b_in)?;
            let h = tape.relu(h);
            let p = tape.matmul(h, lv.w_mem)?;
            let p = tape.add_row(p, lv.b_mem)?;
            let mut m = tape.fsmn_memory(p, lv.taps_left, lv.taps_right)?;
            if let Some(prev) = prev_mem {
                if tape.value(prev).shape() == tape.value(m).shape() {
                    m = tape.add(m, prev)?;
                }
            }
            prev_mem = Some(m);
            x = m;
        }
        let out = tape.matmul(x, vars.tail.w_enc_out)?;
        tape.add_row(out, vars.tail.b_enc_out)
    }

    /// Stateless predictor. Row `u` (0-based, `u = 0..U`) encodes the last
    /// `predictor_context` tokens of the first `u` tokens, with missing
    /// positions filled by the start symbol.
    pub fn predict(&self, tape: &mut Tape, vars: &ModelVars, tokens: &[usize]) -> Result<NodeId> {
        let c = self.config.predictor_context;
        let v = self.config.vocab_size;
        if let Some(&bad) = tokens.iter().find(|&&t| t >= v) {
            return Err(Error::Index(format!(
                "predict: token id {} out of range (vocab {})",
                bad, v
            )));
        }
        let u_len = tokens.len() + 1;
        let mut ids = Vec::with_capacity(u_len * c);
        for u in 0..u_len {
            for k in 0..c {
                let pos = u as isize - c as isize + k as isize;
                ids.push(if pos < 0 {
                    self.config.start_id()
                } else {
                    tokens[pos as usize]
                });
            }
        }
        let emb = tape.embedding(vars.tail.embed, &ids)?;
        let flat = tape.reshape(emb, vec![u_len, c * self.config.embed_dim])?;
        let h = tape.matmul(flat, vars.tail.w_pred)?;
        let h = tape.add_row(h, vars.tail.b_pred)?;
        Ok(tape.relu(h))
    }

    /// Joiner: add-then-tanh combination, affine to V+1, log-softmax.
    /// Output shape is `[T, U+1, V+1]`, normalized per (t, u) slice.
    pub fn joint(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        h_audio: NodeId,
        h_dec: NodeId,
    ) -> Result<NodeId> {
        let d = self.config.encoder_out;
        if tape.value(h_audio).last_dim() != d || tape.value(h_dec).last_dim() != d {
            return Err(Error::Dimension(format!(
                "joint: latent dims {:?} / {:?} do not share D = {}",
                tape.value(h_audio).shape(),
                tape.value(h_dec).shape(),
                d
            )));
        }
        let a = tape.matmul(h_audio, vars.tail.w_join_audio)?;
        let b = tape.matmul(h_dec, vars.tail.w_join_text)?;
        let b = tape.add_row(b, vars.tail.b_join)?;
        let z = tape.outer_add(a, b)?;
        let z = tape.tanh(z);
        let logits = tape.matmul(z, vars.tail.w_join_out)?;
        let logits = tape.add_row(logits, vars.tail.b_join_out)?;
        tape.log_softmax(logits)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w_in: NodeId,
    pub b_in: NodeId,
    pub w_mem: NodeId,
    pub b_mem: NodeId,
    pub taps_left: NodeId,
    pub taps_right: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct TailVars {
    pub w_enc_out: NodeId,
    pub b_enc_out: NodeId,
    pub embed: NodeId,
    pub w_pred: NodeId,
    pub b_pred: NodeId,
    pub w_join_audio: NodeId,
    pub w_join_text: NodeId,
    pub b_join: NodeId,
    pub w_join_out: NodeId,
    pub b_join_out: NodeId,
}

/// Tape bindings for every model parameter, in canonical order.
pub struct ModelVars {
    pub per_layer: Vec<LayerVars>,
    pub tail: TailVars,
    pub ordered: Vec<NodeId>,
}

impl ModelVars {
    /// Gradients for every parameter, in canonical order.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.ordered.iter().map(|&id| tape.grad(id).clone()).collect()
    }
}

/// Token-level random mask of the predictor output: each row is zeroed
/// independently with probability `gamma`. Surviving rows are not rescaled;
/// the unmasked forward pass supplies the teacher statistics instead.
pub fn random_mask(
    tape: &mut Tape,
    h_text: NodeId,
    gamma: f64,
    seed: u64,
) -> Result<(NodeId, Vec<bool>)> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Parameter(format!("mask probability {} outside [0, 1]", gamma)));
    }
    let rows = tape.value(h_text).shape()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask: Vec<bool> = (0..rows).map(|_| rng.gen::<f64>() < gamma).collect();
    let masked = tape.mask_rows(h_text, &mask)?;
    Ok((masked, mask))
}

/// Draw a mask vector without a tape, for statistics and tests.
pub fn draw_mask(rows: usize, gamma: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows).map(|_| rng.gen::<f64>() < gamma).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_dim: 6,
            encoder_layers: 2,
            encoder_hidden: 8,
            encoder_out: 5,
            dfsmn_left: 2,
            dfsmn_right: 2,
            predictor_context: 2,
            embed_dim: 4,
            joiner_hidden: 7,
            vocab_size: 4,
            mask_prob: 0.35,
        }
    }

    fn rand_feats(t: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![t, f], (0..t * f).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_encoder_output() {
        let mut model = TransducerModel::init(tiny_config(), 1).unwrap();
        for (_, t) in model.named_params_mut() {
            t.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let out = model.encode(&mut tape, &vars, &rand_feats(4, 6, 2)).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_rejects_empty_input() {
        let model = TransducerModel::init(tiny_config(), 1).unwrap();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let feats = Tensor::zeros(&[0, 6]);
        assert!(matches!(
            model.encode(&mut tape, &vars, &feats),
            Err(Error::Dimension(_))
        ));
    }

    /// With T=1 and out-of-range taps everywhere, the memory term must be
    /// p_1 alone: a loop-free reference of the single-frame case.
    #[test]
    fn single_frame_memory_is_projection_only() {
        let model = TransducerModel::init(tiny_config(), 3).unwrap();
        let feats = rand_feats(1, 6, 4);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let out = model.encode(&mut tape, &vars, &feats).unwrap();

        // reference: same math with taps never applied (T = 1 has no neighbors)
        let mut x = feats.clone();
        let mut prev: Option<Tensor> = None;
        for layer in &model.layers {
            let mut h = x.matmul(&layer.w_in).unwrap();
            for (v, b) in h.data_mut().iter_mut().zip(layer.b_in.data()) {
                *v = (*v + b).max(0.0);
            }
            let mut p = h.matmul(&layer.w_mem).unwrap();
            for (v, b) in p.data_mut().iter_mut().zip(layer.b_mem.data()) {
                *v += b;
            }
            if let Some(prev) = &prev {
                p = p.add(prev).unwrap();
            }
            prev = Some(p.clone());
            x = p;
        }
        let mut reference = x.matmul(&model.w_enc_out).unwrap();
        for (v, b) in reference.data_mut().iter_mut().zip(model.b_enc_out.data()) {
            *v += b;
        }
        for (a, b) in tape.value(out).data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Naive per-equation loop oracle for the full encoder.
    #[test]
    fn encode_matches_loop_reference() {
        let model = TransducerModel::init(tiny_config(), 5).unwrap();
        let feats = rand_feats(7, 6, 6);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let out = model.encode(&mut tape, &vars, &feats).unwrap();

        let c = &model.config;
        let h_dim = c.encoder_hidden;
        let mut x = feats.clone();
        let mut prev_mem: Option<Tensor> = None;
        for layer in &model.layers {
            let t_len = x.shape()[0];
            let mut h = x.matmul(&layer.w_in).unwrap();
            for r in 0..t_len {
                for j in 0..h_dim {
                    let v = h.data()[r * h_dim + j] + layer.b_in.data()[j];
                    h.data_mut()[r * h_dim + j] = v.max(0.0);
                }
            }
            let mut p = h.matmul(&layer.w_mem).unwrap();
            for r in 0..t_len {
                for j in 0..h_dim {
                    p.data_mut()[r * h_dim + j] += layer.b_mem.data()[j];
                }
            }
            let mut m = p.clone();
            for t in 0..t_len {
                for i in 1..=c.dfsmn_left {
                    if t >= i {
                        for ch in 0..h_dim {
                            m.data_mut()[t * h_dim + ch] += layer.taps_left.data()
                                [(i - 1) * h_dim + ch]
                                * p.data()[(t - i) * h_dim + ch];
                        }
                    }
                }
                for j in 1..=c.dfsmn_right {
                    if t + j < t_len {
                        for ch in 0..h_dim {
                            m.data_mut()[t * h_dim + ch] += layer.taps_right.data()
                                [(j - 1) * h_dim + ch]
                                * p.data()[(t + j) * h_dim + ch];
                        }
                    }
                }
            }
            if let Some(prev) = &prev_mem {
                m = m.add(prev).unwrap();
            }
            prev_mem = Some(m.clone());
            x = m;
        }
        let mut reference = x.matmul(&model.w_enc_out).unwrap();
        let d = c.encoder_out;
        for r in 0..reference.shape()[0] {
            for j in 0..d {
                reference.data_mut()[r * d + j] += model.b_enc_out.data()[j];
            }
        }
        for (a, b) in tape.value(out).data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    /// Interior outputs shift with the input: translation covariance away
    /// from the utterance edges.
    #[test]
    fn encode_translation_covariant_in_interior() {
        let model = TransducerModel::init(tiny_config(), 7).unwrap();
        let c = &model.config;
        let t_len = 16;
        let base = rand_feats(t_len, 6, 8);
        let shift = 3usize;
        // shifted input: rows moved right by `shift`, front filled with fresh rows
        let filler = rand_feats(shift, 6, 9);
        let mut shifted_data = filler.data().to_vec();
        shifted_data.extend_from_slice(&base.data()[..(t_len - shift) * 6]);
        let shifted = Tensor::new(vec![t_len, 6], shifted_data).unwrap();

        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let out_a = model.encode(&mut tape, &vars, &base).unwrap();
        let out_b = model.encode(&mut tape, &vars, &shifted).unwrap();
        let d = c.encoder_out;
        // frame t of `base` equals frame t+shift of `shifted` when both are
        // far enough from the edges of either signal
        let reach_left = c.dfsmn_left * c.encoder_layers;
        let reach_right = c.dfsmn_right * c.encoder_layers;
        for t in reach_left..(t_len - shift - reach_right) {
            for j in 0..d {
                let a = tape.value(out_a).data()[t * d + j];
                let b = tape.value(out_b).data()[(t + shift) * d + j];
                assert!((a - b).abs() < 1e-12, "t={} j={}: {} vs {}", t, j, a, b);
            }
        }
    }

    #[test]
    fn predict_empty_history() {
        let model = TransducerModel::init(tiny_config(), 1).unwrap();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let out = model.predict(&mut tape, &vars, &[]).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 5]);
    }

    #[test]
    fn predict_history_windows() {
        let model = TransducerModel::init(tiny_config(), 11).unwrap();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        // rows: u=0 (start,start), u=1 (start,3), u=2 (3,0)
        let out = model.predict(&mut tape, &vars, &[3, 0]).unwrap();
        assert_eq!(tape.value(out).shape(), &[3, 5]);
        // row 1 must match row 1 of any token list starting with 3
        let out2 = model.predict(&mut tape, &vars, &[3, 1]).unwrap();
        let d = 5;
        for j in 0..d {
            assert_eq!(
                tape.value(out).data()[d + j],
                tape.value(out2).data()[d + j]
            );
        }
    }

    #[test]
    fn predict_is_stateless_beyond_context() {
        let model = TransducerModel::init(tiny_config(), 13).unwrap();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        // row 3 depends on tokens 1 and 2 only; mutating token 0 must not matter
        let a = model.predict(&mut tape, &vars, &[0, 2, 3]).unwrap();
        let b = model.predict(&mut tape, &vars, &[1, 2, 3]).unwrap();
        let d = 5;
        for j in 0..d {
            assert_eq!(
                tape.value(a).data()[3 * d + j],
                tape.value(b).data()[3 * d + j]
            );
        }
        // but permuting the two context tokens changes row 3
        let c = model.predict(&mut tape, &vars, &[0, 3, 2]).unwrap();
        let row_a: &[f64] = &tape.value(a).data()[3 * d..4 * d];
        let row_c: &[f64] = &tape.value(c).data()[3 * d..4 * d];
        assert_ne!(row_a, row_c);
    }

    #[test]
    fn predict_rejects_out_of_vocab() {
        let model = TransducerModel::init(tiny_config(), 1).unwrap();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        assert!(matches!(
            model.predict(&mut tape, &vars, &[4]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn joint_normalized_and_mask_degenerate() {
        let model = TransducerModel::init(tiny_config(), 17).unwrap();
        let feats = rand_feats(3, 6, 18);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let h_audio = model.encode(&mut tape, &vars, &feats).unwrap();
        let h_text = model.predict(&mut tape, &vars, &[1, 2]).unwrap();
        let logp = model.joint(&mut tape, &vars, h_audio, h_text).unwrap();
        let (t_len, u_len, k) = tape.value(logp).dims3().unwrap();
        assert_eq!((t_len, u_len, k), (3, 3, 5));
        for t in 0..t_len {
            for u in 0..u_len {
                let s: f64 = (0..k).map(|j| tape.value(logp).at3(t, u, j).exp()).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        // γ=0 mask leaves the joint output bit-identical
        let (masked, mask) = random_mask(&mut tape, h_text, 0.0, 99).unwrap();
        assert!(mask.iter().all(|&m| !m));
        let logp_masked = model.joint(&mut tape, &vars, h_audio, masked).unwrap();
        assert_eq!(tape.value(logp), tape.value(logp_masked));
        // full mask makes slices independent of u
        let (masked, mask) = random_mask(&mut tape, h_text, 1.0, 99).unwrap();
        assert!(mask.iter().all(|&m| m));
        let logp_nar = model.joint(&mut tape, &vars, h_audio, masked).unwrap();
        for t in 0..t_len {
            for u in 1..u_len {
                for j in 0..k {
                    assert_eq!(
                        tape.value(logp_nar).at3(t, 0, j),
                        tape.value(logp_nar).at3(t, u, j)
                    );
                }
            }
        }
    }

    #[test]
    fn mask_reproducible_and_extremes() {
        let a = draw_mask(100, 0.35, 42);
        let b = draw_mask(100, 0.35, 42);
        assert_eq!(a, b);
        assert!(draw_mask(50, 0.0, 1).iter().all(|&m| !m));
        assert!(draw_mask(50, 1.0, 1).iter().all(|&m| m));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = TransducerModel::init(tiny_config(), 23).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let loaded = TransducerModel::load(&path).unwrap();
        assert_eq!(model.config, loaded.config);
        for ((n1, t1), (n2, t2)) in model.named_params().iter().zip(loaded.named_params()) {
            assert_eq!(*n1, n2);
            assert_eq!(*t1, t2);
        }
        // second save is byte-identical
        let path2 = dir.path().join("m2.ckpt");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }
}
