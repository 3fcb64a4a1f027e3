use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::TruncationCaps;
use crate::error::{Error, Result};
use crate::model::{Dims, Variant};

/// Training hyperparameters. Serialized as flat `key=value` lines, the same
/// format the CLI reads from `--config` files.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub embed: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip: f64,
    pub trainable_embeddings: bool,
    pub variant: Variant,
    pub caps: TruncationCaps,
    /// Inverted-dropout rate on embedded inputs; 0 disables it.
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let dims = Dims::default();
        TrainConfig {
            embed: dims.embed,
            hidden: dims.hidden,
            lr: 1e-3,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            clip: 5.0,
            trainable_embeddings: false,
            variant: Variant::Full,
            caps: TruncationCaps::default(),
            dropout: 0.0,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in serialization order.
pub const CONFIG_KEYS: [&str; 13] = [
    "d",
    "l",
    "lr",
    "batch",
    "epochs",
    "seed",
    "clip",
    "trainable_emb",
    "variant",
    "max_sentence_tokens",
    "max_question_tokens",
    "max_option_tokens",
    "dropout",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn dims(&self) -> Result<Dims> {
        Dims::new(self.embed, self.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims()?;
        let positive = [
            ("batch", self.batch_size),
            ("max_sentence_tokens", self.caps.sentence),
            ("max_question_tokens", self.caps.question),
            ("max_option_tokens", self.caps.option),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(Error::Config(format!(
                "clip must be positive, got {}",
                self.clip
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Sets one field by its config key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.embed = parse(key, value)?,
            "l" => self.hidden = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "trainable_emb" => self.trainable_embeddings = parse(key, value)?,
            "variant" => self.variant = value.trim().parse()?,
            "max_sentence_tokens" => self.caps.sentence = parse(key, value)?,
            "max_question_tokens" => self.caps.question = parse(key, value)?,
            "max_option_tokens" => self.caps.option = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "d" => self.embed.to_string(),
            "l" => self.hidden.to_string(),
            "lr" => self.lr.to_string(),
            "batch" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "clip" => self.clip.to_string(),
            "trainable_emb" => self.trainable_embeddings.to_string(),
            "variant" => self.variant.to_string(),
            "max_sentence_tokens" => self.caps.sentence.to_string(),
            "max_question_tokens" => self.caps.question.to_string(),
            "max_option_tokens" => self.caps.option.to_string(),
            "dropout" => self.dropout.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_lines(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_lines(text)?;
        Ok(c)
    }

    /// Every key, one `key=value` per line. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for k in CONFIG_KEYS {
            let _ = writeln!(out, "{k}={}", self.get(k).unwrap_or_default());
        }
        out
    }
}
