//! Flat `key=value` run configuration shared by every subcommand.
//!
//! Resolution order is defaults ← config file ← overrides; later sources win.
//! Unknown keys and unparsable values are rejected naming the key. The
//! resolved configuration is written next to every artifact, and reading that
//! file back reproduces the same run.

use std::path::Path;
use std::str::FromStr;

use crate::adapt::{AdaptConfig, AdaptMode};
use crate::error::{Error, Result};
use crate::model::{content_hash, KvBlock, LmConfig, ModelConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Master seed: model initialisation and every training run derive from it.
    pub seed: u64,
    pub workers: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    /// External fusion LM training.
    pub lm_train: TrainConfig,
    pub lm_hidden: usize,
    pub lm_layers: usize,
    pub lm_embedding_width: usize,
    /// NN-LM head training.
    pub head_train: TrainConfig,
    pub beam: usize,
    pub fusion_weight: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lm = LmConfig::desk(ModelConfig::desk().alphabet);
        let mut head_train = TrainConfig::desk_lm();
        head_train.epochs = 20;
        head_train.max_lr = 3e-3;
        head_train.start_lr = 3e-4;
        let mut c = RunConfig {
            seed: 1,
            workers: 1,
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
            adapt: AdaptConfig::desk(AdaptMode::TogP),
            lm_train: TrainConfig::desk_lm(),
            lm_hidden: lm.hidden,
            lm_layers: lm.layers,
            lm_embedding_width: lm.embedding_width,
            head_train,
            beam: 8,
            fusion_weight: None,
        };
        c.sync();
        c
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse value {value:?} for key {key:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse value {value:?} for key {key:?} (expected true/false)"))),
    }
}

fn parse_optional<T: FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>> {
    if value.trim() == none {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn fmt_optional<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or(none.to_string(), T::to_string)
}

/// The `epochs/warmup/max_lr/start_lr/batch_size` keys of a secondary
/// schedule, under `prefix`.
fn apply_schedule(cfg: &mut TrainConfig, field: &str, key: &str, value: &str) -> Result<bool> {
    match field {
        "epochs" => cfg.epochs = parse(key, value)?,
        "warmup_epochs" => cfg.warmup_epochs = parse(key, value)?,
        "max_lr" => cfg.max_lr = parse(key, value)?,
        "start_lr" => cfg.start_lr = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn schedule_kv(kv: &mut KvBlock, prefix: &str, cfg: &TrainConfig) {
    kv.set(&format!("{prefix}epochs"), cfg.epochs);
    kv.set(&format!("{prefix}warmup_epochs"), cfg.warmup_epochs);
    kv.set(&format!("{prefix}max_lr"), cfg.max_lr);
    kv.set(&format!("{prefix}start_lr"), cfg.start_lr);
    kv.set(&format!("{prefix}batch_size"), cfg.batch_size);
}

impl RunConfig {
    /// Sets one key. Returns an error naming the key if it is unknown or its
    /// value does not parse.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let a = &mut t.augment;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "raw_speech_width" => m.raw_speech_width = parse(key, value)?,
            "text_input" => m.text_input = parse_bool(key, value)?,
            "textogram_duration" => m.textogram_duration = parse(key, value)?,
            "encoder_layers" => m.encoder_layers = parse(key, value)?,
            "encoder_width" => m.encoder_width = parse(key, value)?,
            "prediction_width" => m.prediction_width = parse(key, value)?,
            "embedding_width" => m.embedding_width = parse(key, value)?,
            "joint_width" => m.joint_width = parse(key, value)?,
            "head_width" => m.head_width = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "warmup_epochs" => t.warmup_epochs = parse(key, value)?,
            "max_lr" => t.max_lr = parse(key, value)?,
            "start_lr" => t.start_lr = parse(key, value)?,
            "end_lr" => t.end_lr = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "clip_norm" => t.clip_norm = parse(key, value)?,
            "bucket_width" => t.bucket_width = parse(key, value)?,
            "text_replicas" => t.text_replicas = parse_bool(key, value)?,
            "seq_noise_prob" => a.seq_noise_prob = parse(key, value)?,
            "seq_noise_scale" => a.seq_noise_scale = parse(key, value)?,
            "time_mask_count" => a.time_mask_count = parse(key, value)?,
            "time_mask_max" => a.time_mask_max = parse(key, value)?,
            "feature_mask_count" => a.feature_mask_count = parse(key, value)?,
            "feature_mask_max" => a.feature_mask_max = parse_optional(key, value, "auto")?,
            "speed_factors" => {
                a.speed_factors = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "textogram_mask_rate" => a.textogram_mask_rate = parse(key, value)?,
            "adapt_mode" => self.adapt.mode = AdaptMode::parse(value.trim())?,
            "adapt_mask_rate" => self.adapt.train.augment.textogram_mask_rate = parse(key, value)?,
            "nnlm_weight" => self.adapt.nnlm_weight = parse(key, value)?,
            "kl_weight" => self.adapt.kl_weight = parse(key, value)?,
            "l2_weight" => self.adapt.l2_weight = parse(key, value)?,
            "lm_hidden" => self.lm_hidden = parse(key, value)?,
            "lm_layers" => self.lm_layers = parse(key, value)?,
            "lm_embedding_width" => self.lm_embedding_width = parse(key, value)?,
            "beam" => self.beam = parse(key, value)?,
            "fusion_weight" => self.fusion_weight = parse_optional(key, value, "none")?,
            _ => {
                let known = if let Some(f) = key.strip_prefix("adapt_") {
                    apply_schedule(&mut self.adapt.train, f, key, value)?
                } else if let Some(f) = key.strip_prefix("lm_") {
                    apply_schedule(&mut self.lm_train, f, key, value)?
                } else if let Some(f) = key.strip_prefix("head_") {
                    apply_schedule(&mut self.head_train, f, key, value)?
                } else {
                    false
                };
                if !known {
                    return Err(Error::Config(format!("unknown config key {key:?}")));
                }
            }
        }
        self.sync();
        Ok(())
    }

    /// Propagates the shared seed and worker count into every schedule.
    fn sync(&mut self) {
        for t in [&mut self.train, &mut self.adapt.train, &mut self.lm_train, &mut self.head_train] {
            t.seed = self.seed;
            t.workers = self.workers;
        }
    }

    /// Parses `key=value` lines (`#` comments and blank lines ignored). A key
    /// given twice keeps its last value; each repetition produces a warning,
    /// which is also returned.
    pub fn apply_text(&mut self, text: &str) -> Result<Vec<String>> {
        let mut seen = std::collections::HashSet::new();
        let mut warnings = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                let w = format!("config key {k:?} repeated on line {}; the last value wins", n + 1);
                log::warn!("{w}");
                warnings.push(w);
            }
            self.set(k, v.trim())?;
        }
        Ok(warnings)
    }

    /// Defaults, then the optional file, then `overrides` in order.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<(Self, Vec<String>)> {
        let mut cfg = RunConfig::default();
        let mut warnings = Vec::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            warnings = cfg.apply_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if let Some(w) = self.fusion_weight {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("fusion_weight must be finite and >= 0, got {w}")));
            }
        }
        if self.lm_hidden == 0 || self.lm_layers == 0 || self.lm_embedding_width == 0 {
            return Err(Error::Config("lm_hidden, lm_layers and lm_embedding_width must be at least 1".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.adapt.validate()?;
        self.lm_train.validate()?;
        self.head_train.validate()
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            alphabet: self.model.alphabet.clone(),
            embedding_width: self.lm_embedding_width,
            hidden: self.lm_hidden,
            layers: self.lm_layers,
        }
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_kv(&self) -> KvBlock {
        let (m, t) = (&self.model, &self.train);
        let mut kv = KvBlock::new();
        kv.set("seed", self.seed);
        kv.set("workers", self.workers);
        kv.set("raw_speech_width", m.raw_speech_width);
        kv.set("text_input", m.text_input);
        kv.set("textogram_duration", m.textogram_duration);
        kv.set("encoder_layers", m.encoder_layers);
        kv.set("encoder_width", m.encoder_width);
        kv.set("prediction_width", m.prediction_width);
        kv.set("embedding_width", m.embedding_width);
        kv.set("joint_width", m.joint_width);
        kv.set("head_width", m.head_width);
        for (k, v) in t.to_kv().entries().iter().filter(|(k, _)| k != "seed") {
            kv.set(k, v);
        }
        kv.set("adapt_mode", self.adapt.mode);
        schedule_kv(&mut kv, "adapt_", &self.adapt.train);
        kv.set("adapt_mask_rate", self.adapt.train.augment.textogram_mask_rate);
        kv.set("nnlm_weight", self.adapt.nnlm_weight);
        kv.set("kl_weight", self.adapt.kl_weight);
        kv.set("l2_weight", self.adapt.l2_weight);
        schedule_kv(&mut kv, "lm_", &self.lm_train);
        kv.set("lm_hidden", self.lm_hidden);
        kv.set("lm_layers", self.lm_layers);
        kv.set("lm_embedding_width", self.lm_embedding_width);
        schedule_kv(&mut kv, "head_", &self.head_train);
        kv.set("beam", self.beam);
        kv.set("fusion_weight", fmt_optional(&self.fusion_weight, "none"));
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }

    pub fn hash(&self) -> String {
        content_hash(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("").unwrap().is_empty());
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.seed, c.seed);
        assert_eq!(c.head_train.seed, c.seed);
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "epochs=20\nwarmup_epochs=6\n").unwrap();
        let (c, _) = RunConfig::resolve(Some(&p), &[("epochs".into(), "8".into())]).unwrap();
        assert_eq!(c.train.epochs, 8);
        assert_eq!(c.train.warmup_epochs, 6);
    }

    #[test]
    fn duplicate_key_last_wins_with_warning() {
        let mut c = RunConfig::default();
        let w = c.apply_text("beam=3\n# comment\nbeam=5\n").unwrap();
        assert_eq!(c.beam, 5);
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("beam"));
    }

    #[test]
    fn unknown_and_bad_values_name_the_key() {
        let mut c = RunConfig::default();
        assert!(c.set("epoch", "3").unwrap_err().to_string().contains("\"epoch\""));
        assert!(c.set("max_lr", "fast").unwrap_err().to_string().contains("max_lr"));
        assert!(c.set("adapt_foo", "1").unwrap_err().to_string().contains("adapt_foo"));
        assert!(c.apply_text("no equals sign").is_err());
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("seed=42\nadapt_mode=tog-p+nnlm\nlm_epochs=3\nfeature_mask_max=2\nfusion_weight=0.4\nspeed_factors=0.8,1.2\n")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(back.adapt.train.seed, 42);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn invalid_combinations_rejected() {
        let over = |k: &str, v: &str| RunConfig::resolve(None, &[(k.into(), v.into())]);
        assert!(over("workers", "0").is_err());
        assert!(over("warmup_epochs", "40").is_err());
        assert!(over("fusion_weight", "-1").is_err());
        assert!(over("beam", "2").is_ok());
    }
}
