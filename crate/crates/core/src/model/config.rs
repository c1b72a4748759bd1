use super::checkpoint::{content_hash, KvBlock};
use crate::error::{Error, Result};
use crate::features::{InputWidths, SymbolTable};

/// Network shape. Everything that changes parameter shapes or the input
/// layout lives here and feeds the config hash.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub alphabet: SymbolTable,
    /// Per-frame speech feature width before deltas and stacking.
    pub raw_speech_width: usize,
    /// Whether the encoder input carries a textogram block.
    pub text_input: bool,
    pub textogram_duration: usize,
    pub frame_period_ms: u32,
    pub encoder_layers: usize,
    pub encoder_width: usize,
    pub prediction_width: usize,
    pub embedding_width: usize,
    pub joint_width: usize,
    pub head_width: usize,
}

impl ModelConfig {
    /// Small dual-modality model that trains in minutes on one core.
    pub fn desk() -> Self {
        ModelConfig {
            alphabet: SymbolTable::desk(),
            raw_speech_width: 16,
            text_input: true,
            textogram_duration: 4,
            frame_period_ms: 10,
            // A deeper encoder at this budget settles into ignoring its
            // input and letting the prediction network model the grammar.
            encoder_layers: 1,
            encoder_width: 64,
            prediction_width: 96,
            embedding_width: 24,
            joint_width: 48,
            head_width: 48,
        }
    }

    /// Widths of the published system; `alphabet` must hold 41 graphemes.
    pub fn paper(alphabet: SymbolTable) -> Self {
        ModelConfig {
            alphabet,
            raw_speech_width: 40,
            text_input: true,
            textogram_duration: 4,
            frame_period_ms: 10,
            encoder_layers: 6,
            encoder_width: 640,
            prediction_width: 1024,
            embedding_width: 256,
            joint_width: 256,
            head_width: 256,
        }
    }

    pub fn speech_only(mut self) -> Self {
        self.text_input = false;
        self
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn widths(&self) -> InputWidths {
        let full = InputWidths::for_raw(self.raw_speech_width, self.alphabet_size());
        InputWidths {
            speech: full.speech,
            text: if self.text_input { full.text } else { 0 },
        }
    }

    pub fn input_width(&self) -> usize {
        self.widths().combined()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("raw_speech_width", self.raw_speech_width),
            ("textogram_duration", self.textogram_duration),
            ("encoder_layers", self.encoder_layers),
            ("encoder_width", self.encoder_width),
            ("prediction_width", self.prediction_width),
            ("embedding_width", self.embedding_width),
            ("joint_width", self.joint_width),
            ("head_width", self.head_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.alphabet_size() < 2 {
            return Err(Error::Config("alphabet needs BLANK plus one symbol".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.set("alphabet", self.alphabet.to_config_value());
        kv.set("raw_speech_width", self.raw_speech_width);
        kv.set("speech_width", self.widths().speech);
        kv.set("text_width", self.widths().text);
        kv.set("textogram_duration", self.textogram_duration);
        kv.set("frame_period_ms", self.frame_period_ms);
        kv.set("encoder_layers", self.encoder_layers);
        kv.set("encoder_width", self.encoder_width);
        kv.set("prediction_width", self.prediction_width);
        kv.set("embedding_width", self.embedding_width);
        kv.set("joint_width", self.joint_width);
        kv.set("head_width", self.head_width);
        kv
    }

    pub fn from_kv(kv: &KvBlock) -> Result<Self> {
        let cfg = ModelConfig {
            alphabet: SymbolTable::from_config_value(kv.require("alphabet")?)?,
            raw_speech_width: kv.parse("raw_speech_width")?,
            text_input: kv.parse::<usize>("text_width")? > 0,
            textogram_duration: kv.parse("textogram_duration")?,
            frame_period_ms: kv.parse("frame_period_ms")?,
            encoder_layers: kv.parse("encoder_layers")?,
            encoder_width: kv.parse("encoder_width")?,
            prediction_width: kv.parse("prediction_width")?,
            embedding_width: kv.parse("embedding_width")?,
            joint_width: kv.parse("joint_width")?,
            head_width: kv.parse("head_width")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        content_hash(&self.to_kv().to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_widths() {
        let c = ModelConfig::desk();
        assert_eq!((c.widths().speech, c.widths().text, c.input_width()), (96, 58, 154));
        assert_eq!(c.clone().speech_only().input_width(), 96);
    }

    #[test]
    fn kv_round_trip_preserves_hash() {
        let c = ModelConfig::desk();
        let back = ModelConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(c.clone().speech_only().hash(), c.hash());
    }

    #[test]
    fn paper_widths() {
        let g: Vec<char> = "abcdefghijklmnopqrstuvwxyz0123456789 '-.,".chars().collect();
        let c = ModelConfig::paper(SymbolTable::new(&g).unwrap());
        assert_eq!(c.alphabet_size(), 42);
        assert_eq!(c.input_width(), 324);
    }
}
