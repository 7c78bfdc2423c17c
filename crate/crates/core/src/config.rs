//! Flat key=value run configuration shared by the CLI subcommands.
//!
//! Files use one `key = value` pair per line with `#` comments. Unknown
//! keys are hard errors so typos never silently fall back to defaults.
//! `keyword.<name>` keys define the keyword inventory; every other key is
//! fixed. `--set key=value` overrides reuse the same parser.

use crate::data::SyntheticTaskConfig;
use crate::decoder::{BranchRule, DecodeParams};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Frames of past/future context spliced onto each raw frame.
    pub stack_left: usize,
    pub stack_right: usize,
    pub train: TrainConfig,
    pub data: SyntheticTaskConfig,
    pub alpha: f64,
    pub s_bonus: f64,
    pub t_out: usize,
    pub branch_rule: BranchRule,
    pub n_fa: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut keywords = BTreeMap::new();
        keywords.insert("alpha".to_string(), vec![1, 2, 3]);
        keywords.insert("bravo".to_string(), vec![4, 0, 6]);
        RunConfig {
            model: ModelConfig::desk_scale(),
            stack_left: 1,
            stack_right: 1,
            train: TrainConfig::defaults(PathBuf::from("checkpoints")),
            data: SyntheticTaskConfig {
                vocab_size: 8,
                raw_dim: 8,
                keywords,
                dur_min: 2,
                dur_max: 4,
                noise_sigma: 0.3,
                distractor_prob: 0.0,
                num_pos: 2000,
                num_neg: 2000,
                context_min: 0,
                context_max: 3,
                seed: 0,
            },
            alpha: 0.5,
            s_bonus: 1.0,
            t_out: 16,
            branch_rule: BranchRule::DominantWeighted,
            n_fa: 4,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("key '{}': cannot parse value '{}'", key, value)))
}

fn parse_tokens(key: &str, value: &str) -> Result<Vec<usize>> {
    let tokens = value
        .split_whitespace()
        .map(|t| parse::<usize>(key, t))
        .collect::<Result<Vec<usize>>>()?;
    if tokens.is_empty() {
        return Err(Error::Config(format!("key '{}': empty token list", key)));
    }
    Ok(tokens)
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        if let Some(name) = key.strip_prefix("keyword.") {
            if name.is_empty() {
                return Err(Error::Config("keyword name is empty".into()));
            }
            self.data
                .keywords
                .insert(name.to_string(), parse_tokens(key, value)?);
            return Ok(());
        }
        match key {
            "model.feature_dim" => self.model.feature_dim = parse(key, value)?,
            "model.encoder_layers" => self.model.encoder_layers = parse(key, value)?,
            "model.encoder_hidden" => self.model.encoder_hidden = parse(key, value)?,
            "model.encoder_out" => self.model.encoder_out = parse(key, value)?,
            "model.dfsmn_left" => self.model.dfsmn_left = parse(key, value)?,
            "model.dfsmn_right" => self.model.dfsmn_right = parse(key, value)?,
            "model.predictor_context" => self.model.predictor_context = parse(key, value)?,
            "model.embed_dim" => self.model.embed_dim = parse(key, value)?,
            "model.joiner_hidden" => self.model.joiner_hidden = parse(key, value)?,
            "model.vocab_size" => self.model.vocab_size = parse(key, value)?,
            "model.mask_prob" => self.model.mask_prob = parse(key, value)?,
            "stack.left" => self.stack_left = parse(key, value)?,
            "stack.right" => self.stack_right = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.beta1" => self.train.beta1 = parse(key, value)?,
            "train.beta2" => self.train.beta2 = parse(key, value)?,
            "train.eps" => self.train.eps = parse(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, value)?,
            "train.max_frames" => self.train.max_frames = parse(key, value)?,
            "train.max_samples" => self.train.max_samples = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.gamma_mask" => self.train.gamma_mask = parse(key, value)?,
            "train.lambda_mask" => self.train.lambda_mask = parse(key, value)?,
            "train.lambda_msd" => self.train.lambda_msd = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.plateau_factor" => self.train.plateau_factor = parse(key, value)?,
            "train.plateau_patience" => self.train.plateau_patience = parse(key, value)?,
            "train.min_improvement" => self.train.min_improvement = parse(key, value)?,
            "train.val_fraction" => self.train.val_fraction = parse(key, value)?,
            "train.msd_masked_cells_only" => {
                self.train.msd_masked_cells_only = parse(key, value)?
            }
            "data.vocab_size" => self.data.vocab_size = parse(key, value)?,
            "data.raw_dim" => self.data.raw_dim = parse(key, value)?,
            "data.dur_min" => self.data.dur_min = parse(key, value)?,
            "data.dur_max" => self.data.dur_max = parse(key, value)?,
            "data.noise_sigma" => self.data.noise_sigma = parse(key, value)?,
            "data.distractor_prob" => self.data.distractor_prob = parse(key, value)?,
            "data.num_pos" => self.data.num_pos = parse(key, value)?,
            "data.num_neg" => self.data.num_neg = parse(key, value)?,
            "data.context_min" => self.data.context_min = parse(key, value)?,
            "data.context_max" => self.data.context_max = parse(key, value)?,
            "data.seed" => self.data.seed = parse(key, value)?,
            "decode.alpha" => self.alpha = parse(key, value)?,
            "decode.s_bonus" => self.s_bonus = parse(key, value)?,
            "decode.t_out" => self.t_out = parse(key, value)?,
            "decode.branch_rule" => self.branch_rule = parse(key, value)?,
            "eval.n_fa" => self.n_fa = parse(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown config key '{}'", other)));
            }
        }
        Ok(())
    }

    pub fn parse_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got '{}'", i + 1, line))
            })?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.parse_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Cross-field checks after all assignments.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        let stacked = self.data.raw_dim * (self.stack_left + 1 + self.stack_right);
        if stacked != self.model.feature_dim {
            return Err(Error::Config(format!(
                "stacked feature dim {} (raw {} × window {}) != model.feature_dim {}",
                stacked,
                self.data.raw_dim,
                self.stack_left + 1 + self.stack_right,
                self.model.feature_dim
            )));
        }
        if self.data.vocab_size != self.model.vocab_size {
            return Err(Error::Config(format!(
                "data.vocab_size {} != model.vocab_size {}",
                self.data.vocab_size, self.model.vocab_size
            )));
        }
        DecodeParams::new(self.alpha, self.s_bonus, self.t_out)?;
        Ok(())
    }

    pub fn decode_params(&self) -> Result<DecodeParams> {
        let mut p = DecodeParams::new(self.alpha, self.s_bonus, self.t_out)?;
        p.branch_rule = self.branch_rule;
        Ok(p)
    }

    /// Every key in a stable order, for echoing the resolved configuration.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{} = {}\n", k, v));
        kv("model.feature_dim", self.model.feature_dim.to_string());
        kv("model.encoder_layers", self.model.encoder_layers.to_string());
        kv("model.encoder_hidden", self.model.encoder_hidden.to_string());
        kv("model.encoder_out", self.model.encoder_out.to_string());
        kv("model.dfsmn_left", self.model.dfsmn_left.to_string());
        kv("model.dfsmn_right", self.model.dfsmn_right.to_string());
        kv("model.predictor_context", self.model.predictor_context.to_string());
        kv("model.embed_dim", self.model.embed_dim.to_string());
        kv("model.joiner_hidden", self.model.joiner_hidden.to_string());
        kv("model.vocab_size", self.model.vocab_size.to_string());
        kv("model.mask_prob", self.model.mask_prob.to_string());
        kv("stack.left", self.stack_left.to_string());
        kv("stack.right", self.stack_right.to_string());
        kv("train.lr", self.train.lr.to_string());
        kv("train.beta1", self.train.beta1.to_string());
        kv("train.beta2", self.train.beta2.to_string());
        kv("train.eps", self.train.eps.to_string());
        kv("train.weight_decay", self.train.weight_decay.to_string());
        kv("train.max_frames", self.train.max_frames.to_string());
        kv("train.max_samples", self.train.max_samples.to_string());
        kv("train.epochs", self.train.epochs.to_string());
        kv("train.gamma_mask", self.train.gamma_mask.to_string());
        kv("train.lambda_mask", self.train.lambda_mask.to_string());
        kv("train.lambda_msd", self.train.lambda_msd.to_string());
        kv("train.seed", self.train.seed.to_string());
        kv("train.plateau_factor", self.train.plateau_factor.to_string());
        kv("train.plateau_patience", self.train.plateau_patience.to_string());
        kv("train.min_improvement", self.train.min_improvement.to_string());
        kv("train.val_fraction", self.train.val_fraction.to_string());
        kv(
            "train.msd_masked_cells_only",
            self.train.msd_masked_cells_only.to_string(),
        );
        kv("data.vocab_size", self.data.vocab_size.to_string());
        kv("data.raw_dim", self.data.raw_dim.to_string());
        kv("data.dur_min", self.data.dur_min.to_string());
        kv("data.dur_max", self.data.dur_max.to_string());
        kv("data.noise_sigma", self.data.noise_sigma.to_string());
        kv("data.distractor_prob", self.data.distractor_prob.to_string());
        kv("data.num_pos", self.data.num_pos.to_string());
        kv("data.num_neg", self.data.num_neg.to_string());
        kv("data.context_min", self.data.context_min.to_string());
        kv("data.context_max", self.data.context_max.to_string());
        kv("data.seed", self.data.seed.to_string());
        kv("decode.alpha", self.alpha.to_string());
        kv("decode.s_bonus", self.s_bonus.to_string());
        kv("decode.t_out", self.t_out.to_string());
        kv(
            "decode.branch_rule",
            match self.branch_rule {
                BranchRule::DominantWeighted => "dominant".to_string(),
                BranchRule::AlwaysAr => "always-ar".to_string(),
                BranchRule::MaxLength => "max-length".to_string(),
            },
        );
        kv("eval.n_fa", self.n_fa.to_string());
        for (name, tokens) in &self.data.keywords {
            let toks: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
            out.push_str(&format!("keyword.{} = {}\n", name, toks.join(" ")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_with_comments_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.parse_text(
            "# experiment\n\
             train.lr = 0.002   # bumped\n\
             decode.alpha = 0.3\n\
             \n\
             keyword.charlie = 2 5 7\n",
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.002);
        assert_eq!(cfg.alpha, 0.3);
        assert_eq!(cfg.data.keywords["charlie"], vec![2, 5, 7]);
    }

    #[test]
    fn unknown_key_is_named_in_error() {
        let mut cfg = RunConfig::default();
        match cfg.parse_text("train.learning_rate = 0.1\n") {
            Err(Error::Config(msg)) => assert!(msg.contains("train.learning_rate"), "{}", msg),
            other => panic!("expected config error, got {:?}", other),
        }
    }

    #[test]
    fn bad_value_reports_key_and_line() {
        let mut cfg = RunConfig::default();
        match cfg.parse_text("x = 1\ntrain.epochs = soon\n") {
            Err(Error::Config(msg)) => assert!(msg.contains("line 1"), "{}", msg),
            other => panic!("{:?}", other),
        }
        let mut cfg = RunConfig::default();
        match cfg.parse_text("train.epochs = soon\n") {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("train.epochs") && msg.contains("soon"), "{}", msg)
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn cross_field_validation() {
        let mut cfg = RunConfig::default();
        cfg.set("data.raw_dim", "10").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.set("decode.alpha", "1.5").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn resolved_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("train.lr", "0.0005").unwrap();
        cfg.set("keyword.delta", "0 7").unwrap();
        let text = cfg.resolved();
        let mut back = RunConfig::default();
        back.parse_text(&text).unwrap();
        assert_eq!(back.resolved(), text);
    }
}
