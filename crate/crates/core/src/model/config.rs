use crate::error::{Error, Result};
use crate::kv::Entries;

/// Transformer encoder-decoder dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub heads: usize,
    pub dropout: f64,
    pub max_context: usize,
    pub max_target: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// 12+12 layers, 768 hidden, 3072 feed-forward, 12 heads.
    pub fn base(vocab_size: usize) -> Self {
        Self {
            enc_layers: 12,
            dec_layers: 12,
            hidden: 768,
            ffn: 3072,
            heads: 12,
            dropout: 0.1,
            max_context: 400,
            max_target: 100,
            vocab_size,
        }
    }

    /// Laptop-sized default.
    pub fn desk(vocab_size: usize) -> Self {
        Self { enc_layers: 2, dec_layers: 2, hidden: 128, ffn: 512, heads: 4, ..Self::base(vocab_size) }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("ffn", self.ffn),
            ("heads", self.heads),
            ("max_context", self.max_context),
            ("max_target", self.max_target),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(k, "must be positive"));
            }
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config("heads", format!("hidden {} not divisible by {}", self.hidden, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must be in [0, 1)"));
        }
        if self.vocab_size <= crate::tokenizer::NUM_SPECIALS {
            return Err(Error::config("vocab_size", "must exceed the special tokens"));
        }
        Ok(())
    }

    pub fn take_from(&mut self, e: &mut Entries) -> Result<()> {
        e.take("enc_layers", &mut self.enc_layers)?;
        e.take("dec_layers", &mut self.dec_layers)?;
        e.take("hidden", &mut self.hidden)?;
        e.take("ffn", &mut self.ffn)?;
        e.take("heads", &mut self.heads)?;
        e.take("dropout", &mut self.dropout)?;
        e.take("max_context", &mut self.max_context)?;
        e.take("max_target", &mut self.max_target)?;
        e.take("vocab_size", &mut self.vocab_size)?;
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("enc_layers", self.enc_layers.to_string()),
            ("dec_layers", self.dec_layers.to_string()),
            ("hidden", self.hidden.to_string()),
            ("ffn", self.ffn.to_string()),
            ("heads", self.heads.to_string()),
            ("dropout", self.dropout.to_string()),
            ("max_context", self.max_context.to_string()),
            ("max_target", self.max_target.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        let p = ModelConfig::base(30000);
        p.validate().unwrap();
        assert_eq!((p.enc_layers, p.dec_layers, p.hidden, p.ffn, p.heads), (12, 12, 768, 3072, 12));
        assert_eq!(p.dropout, 0.1);
        ModelConfig::desk(1000).validate().unwrap();
    }

    #[test]
    fn heads_must_divide_hidden() {
        let c = ModelConfig { heads: 5, ..ModelConfig::desk(100) };
        assert!(c.validate().is_err());
    }
}
