use std::fmt;

use crate::error::{Error, Result};
use crate::model::ParamGroup;
use crate::train::TrainConfig;

/// Text-only adaptation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaptMode {
    /// Prediction network as a neural LM through the temporary head.
    Nnlm,
    /// Textogram transducer loss, prediction network only.
    TogP,
    /// Textogram transducer loss, prediction and joint networks.
    TogPj,
    /// Textogram transducer loss plus the weighted NN-LM loss, prediction only.
    TogPNnlm,
}

impl AdaptMode {
    pub const ALL: [AdaptMode; 4] = [AdaptMode::Nnlm, AdaptMode::TogP, AdaptMode::TogPj, AdaptMode::TogPNnlm];

    pub fn as_str(self) -> &'static str {
        match self {
            AdaptMode::Nnlm => "nnlm",
            AdaptMode::TogP => "tog-p",
            AdaptMode::TogPj => "tog-pj",
            AdaptMode::TogPNnlm => "tog-p+nnlm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown adaptation mode {s:?} (expected nnlm, tog-p, tog-pj or tog-p+nnlm)")))
    }

    pub fn freeze_policy(self) -> FreezePolicy {
        match self {
            AdaptMode::TogPj => FreezePolicy::prediction_and_joint(),
            _ => FreezePolicy::prediction(),
        }
    }
}

impl fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameter groups an adaptation run may update; everything else (always
/// including the encoder and normalisation statistics) stays frozen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezePolicy {
    trainable: Vec<ParamGroup>,
}

impl FreezePolicy {
    pub fn new(trainable: &[ParamGroup]) -> Result<Self> {
        if trainable.is_empty() {
            return Err(Error::Config("adaptation needs at least one trainable group".into()));
        }
        if let Some(g) = trainable.iter().find(|g| matches!(g, ParamGroup::Encoder | ParamGroup::Norm)) {
            return Err(Error::Config(format!("{g:?} parameters are never adapted")));
        }
        let mut t = trainable.to_vec();
        t.dedup();
        Ok(FreezePolicy { trainable: t })
    }

    pub fn prediction() -> Self {
        FreezePolicy { trainable: vec![ParamGroup::Prediction] }
    }

    pub fn prediction_and_joint() -> Self {
        FreezePolicy { trainable: vec![ParamGroup::Prediction, ParamGroup::Joint] }
    }

    pub fn head_only() -> Self {
        FreezePolicy { trainable: vec![ParamGroup::Head] }
    }

    pub fn trainable(&self) -> &[ParamGroup] {
        &self.trainable
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub mode: AdaptMode,
    /// Schedule, optimiser and seed; `augment.textogram_mask_rate` sets the
    /// textogram masking used for adaptation samples.
    pub train: TrainConfig,
    pub nnlm_weight: f64,
    pub kl_weight: f64,
    pub l2_weight: f64,
}

impl AdaptConfig {
    /// Published settings: 20 epochs, one-cycle to 2e-4, NN-LM weight 200.
    pub fn paper(mode: AdaptMode) -> Self {
        AdaptConfig {
            mode,
            train: TrainConfig::paper(),
            nnlm_weight: 200.0,
            kl_weight: 1.0,
            l2_weight: 0.01,
        }
    }

    pub fn desk(mode: AdaptMode) -> Self {
        let mut train = TrainConfig::desk();
        train.epochs = 8;
        train.warmup_epochs = 2;
        train.max_lr = 1e-3;
        train.start_lr = 1e-4;
        AdaptConfig { train, ..Self::paper(mode) }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("nnlm_weight", self.nnlm_weight), ("kl_weight", self.kl_weight), ("l2_weight", self.l2_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {w}")));
            }
        }
        self.train.validate()
    }
}
