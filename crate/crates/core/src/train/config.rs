use crate::error::{Error, Result};
use crate::features::AugmentPolicy;
use crate::model::{content_hash, KvBlock};

/// Optimisation settings shared by training, LM training and adaptation.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub max_lr: f64,
    pub start_lr: f64,
    pub end_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub seed: u64,
    /// Batches only group samples whose stacked lengths share a bucket of
    /// this many frames.
    pub bucket_width: usize,
    pub workers: usize,
    /// Add a textogram sample for every speech transcript.
    pub text_replicas: bool,
    pub augment: AugmentPolicy,
}

impl TrainConfig {
    /// Published schedule: 20 epochs, warm-up 2e-5 → 2e-4 over 6, anneal to 0.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 20,
            warmup_epochs: 6,
            max_lr: 2e-4,
            start_lr: 2e-5,
            end_lr: 0.0,
            batch_size: 128,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
            bucket_width: 32,
            workers: 1,
            text_replicas: true,
            augment: AugmentPolicy::default(),
        }
    }

    /// Same shape at desk scale: 16 epochs, smaller batches and a higher peak
    /// rate so a tiny model converges in a few minutes.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 16,
            warmup_epochs: 4,
            batch_size: 16,
            max_lr: 5e-3,
            start_lr: 5e-4,
            ..Self::paper()
        }
    }

    /// Character LMs (the external fusion LM and the NN-LM head) are small
    /// and cheap per step, so they get more epochs at a higher rate.
    pub fn desk_lm() -> Self {
        TrainConfig {
            epochs: 30,
            warmup_epochs: 2,
            max_lr: 1e-2,
            start_lr: 1e-3,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_lr > 0.0 && self.start_lr <= self.max_lr) {
            return Err(Error::Config(format!(
                "need 0 < start_lr ({}) <= max_lr ({})",
                self.start_lr, self.max_lr
            )));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 || self.bucket_width == 0 || self.workers == 0 {
            return Err(Error::Config("batch_size, bucket_width and workers must be positive".into()));
        }
        if self.end_lr < 0.0 || self.weight_decay < 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::Config("end_lr and weight_decay must be >= 0, clip_norm > 0".into()));
        }
        self.augment.validate()
    }

    /// Settings that shape the optimisation trajectory (worker count excluded:
    /// it does not change results).
    pub fn to_kv(&self) -> KvBlock {
        let a = &self.augment;
        let mut kv = KvBlock::new();
        kv.set("epochs", self.epochs);
        kv.set("warmup_epochs", self.warmup_epochs);
        kv.set("max_lr", self.max_lr);
        kv.set("start_lr", self.start_lr);
        kv.set("end_lr", self.end_lr);
        kv.set("batch_size", self.batch_size);
        kv.set("weight_decay", self.weight_decay);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("adam_eps", self.adam_eps);
        kv.set("clip_norm", self.clip_norm);
        kv.set("seed", self.seed);
        kv.set("bucket_width", self.bucket_width);
        kv.set("text_replicas", self.text_replicas);
        kv.set("seq_noise_prob", a.seq_noise_prob);
        kv.set("seq_noise_scale", a.seq_noise_scale);
        kv.set("time_mask_count", a.time_mask_count);
        kv.set("time_mask_max", a.time_mask_max);
        kv.set("feature_mask_count", a.feature_mask_count);
        kv.set(
            "feature_mask_max",
            a.feature_mask_max.map_or("auto".to_string(), |v| v.to_string()),
        );
        kv.set(
            "speed_factors",
            a.speed_factors.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.set("textogram_mask_rate", a.textogram_mask_rate);
        kv
    }

    pub fn hash(&self) -> String {
        content_hash(&self.to_kv().to_text())
    }
}
