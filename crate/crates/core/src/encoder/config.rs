use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityLabel {
    O,
    Malware,
    Indicator,
    System,
    Organization,
    Vulnerability,
}

impl EntityLabel {
    pub const ALL: [EntityLabel; 6] = [
        EntityLabel::O,
        EntityLabel::Malware,
        EntityLabel::Indicator,
        EntityLabel::System,
        EntityLabel::Organization,
        EntityLabel::Vulnerability,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityLabel::O => "O",
            EntityLabel::Malware => "Malware",
            EntityLabel::Indicator => "Indicator",
            EntityLabel::System => "System",
            EntityLabel::Organization => "Organization",
            EntityLabel::Vulnerability => "Vulnerability",
        }
    }

    /// Entity type of a BIO tag such as `B-Malware`.
    pub fn from_bio(tag: &str) -> Result<Self> {
        if tag == "O" {
            return Ok(EntityLabel::O);
        }
        let ty = tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-")).unwrap_or(tag);
        Self::ALL[1..]
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(ty))
            .ok_or_else(|| ForgeError::Input(format!("unknown entity tag `{tag}`")))
    }
}

/// Converts per-token entity types to BIO; each run of one type is one span.
pub fn io_to_bio(labels: &[EntityLabel]) -> Vec<String> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            EntityLabel::O => "O".to_string(),
            _ if i > 0 && labels[i - 1] == *l => format!("I-{}", l.name()),
            _ => format!("B-{}", l.name()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub num_labels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            max_len: 1024,
            dropout: 0.0,
            num_labels: EntityLabel::ALL.len(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.vocab_size, self.d_model, self.n_heads, self.n_layers, self.d_ff, self.max_len, self.num_labels];
        if dims.contains(&0) {
            return Err(ForgeError::Config(format!("encoder dimensions must all be at least 1: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ForgeError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 4 {
            return Err(ForgeError::Config(format!("max_len must be at least 4, got {}", self.max_len)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ForgeError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of total steps spent warming up.
    pub warmup_ratio: f64,
    pub epochs: usize,
    /// Overrides `epochs * steps_per_epoch` when set.
    pub max_steps: Option<usize>,
    pub grad_clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Validation rounds without improvement before stopping.
    pub patience: usize,
    /// Validation cadence in steps; 0 means once per epoch.
    pub eval_every: usize,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 5e-5,
            weight_decay: 0.01,
            warmup_ratio: 0.06,
            epochs: 20,
            max_steps: None,
            grad_clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 3,
            eval_every: 0,
            max_len: 1024,
        }
    }
}

impl TrainConfig {
    pub fn mlm() -> Self {
        Self::default()
    }

    pub fn retrieval() -> Self {
        Self { learning_rate: 2e-5, warmup_ratio: 0.1, epochs: 10, ..Self::default() }
    }

    pub fn ner() -> Self {
        Self { batch_size: 8, learning_rate: 1e-5, weight_decay: 0.001, warmup_ratio: 0.0, epochs: 20, ..Self::default() }
    }

    pub fn vuln() -> Self {
        Self { batch_size: 8, learning_rate: 1e-5, weight_decay: 0.01, warmup_ratio: 0.0, epochs: 10, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ForgeError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || !(self.grad_clip_norm > 0.0) {
            return Err(ForgeError::Config(format!(
                "learning rate and clip norm must be positive and weight decay non-negative: {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(ForgeError::Config(format!("warmup_ratio must lie in [0, 1], got {}", self.warmup_ratio)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(ForgeError::Config("adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self, steps_per_epoch: usize) -> usize {
        self.max_steps.unwrap_or(self.epochs * steps_per_epoch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bio_round_trip() {
        use EntityLabel::*;
        let io = [O, Malware, Malware, O, System, Indicator];
        assert_eq!(io_to_bio(&io), vec!["O", "B-Malware", "I-Malware", "O", "B-System", "B-Indicator"]);
        assert_eq!(EntityLabel::from_bio("I-Vulnerability").unwrap(), Vulnerability);
        assert!(EntityLabel::from_bio("B-Person").is_err());
    }

    #[test]
    fn config_checks() {
        let ok = EncoderConfig { vocab_size: 10, ..Default::default() };
        assert!(ok.validate().is_ok());
        assert!(EncoderConfig { n_heads: 3, ..ok }.validate().is_err());
        assert!(EncoderConfig { vocab_size: 0, ..ok }.validate().is_err());
        assert_eq!(TrainConfig::ner().batch_size, 8);
        assert_eq!(TrainConfig::vuln().epochs, 10);
        assert!(TrainConfig { warmup_ratio: 1.5, ..Default::default() }.validate().is_err());
    }
}
