//! Run configuration: a flat `key = value` file whose keys mirror
//! [`TrainConfig`] fields. Unknown keys are hard errors so typos can't
//! silently fall back to defaults.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::{InterLevelInput, LossWeights};
use crate::hash::fnv1a64;
use crate::opt::AdamConfig;
use crate::textprep::PipelineConfig;

/// Which branches participate. Text and image gate the stage-1 inputs;
/// network gates whether stage 2 runs at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalityMask {
    pub text: bool,
    pub image: bool,
    pub network: bool,
}

impl Default for ModalityMask {
    fn default() -> Self {
        ModalityMask {
            text: true,
            image: true,
            network: true,
        }
    }
}

impl ModalityMask {
    /// Parse a comma-separated subset of `text`, `image`, `network`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut mask = ModalityMask {
            text: false,
            image: false,
            network: false,
        };
        let mut seen = BTreeSet::new();
        for part in s.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            if !seen.insert(part.to_string()) {
                return Err(Error::Config(format!("modality `{part}` listed twice")));
            }
            match part {
                "text" => mask.text = true,
                "image" => mask.image = true,
                "network" => mask.network = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown modality `{other}` (expected text, image, network)"
                    )))
                }
            }
        }
        mask.validate()?;
        Ok(mask)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.text || self.image || self.network) {
            return Err(Error::Config("modality mask enables nothing".into()));
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        let mut parts = Vec::new();
        if self.text {
            parts.push("text");
        }
        if self.image {
            parts.push("image");
        }
        if self.network {
            parts.push("network");
        }
        parts.join(",")
    }
}

/// Which taxonomy levels a command reports on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LevelSelect {
    #[default]
    All,
    One(usize),
}

impl LevelSelect {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(LevelSelect::All),
            "1" => Ok(LevelSelect::One(1)),
            "2" => Ok(LevelSelect::One(2)),
            "3" => Ok(LevelSelect::One(3)),
            other => Err(Error::Config(format!(
                "level must be 1, 2, 3 or all, got `{other}`"
            ))),
        }
    }

    pub fn levels(&self) -> Vec<usize> {
        match self {
            LevelSelect::All => vec![1, 2, 3],
            LevelSelect::One(l) => vec![*l],
        }
    }

    pub fn canonical(&self) -> String {
        match self {
            LevelSelect::All => "all".into(),
            LevelSelect::One(l) => l.to_string(),
        }
    }
}

/// Everything a training run needs to be reproducible. The defaults are the
/// published settings; desk-scale experiments override via config files.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub learning_rate: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub zeta3: f64,
    /// GRU state width per direction; document vectors are twice this.
    pub gru_hidden: usize,
    /// Width of the per-modality sigmoid projections.
    pub projection_dim: usize,
    /// Fallback image-feature width when no document carries features.
    pub image_feature_dim: usize,
    pub sage_hidden: usize,
    pub fanout1: usize,
    pub fanout2: usize,
    pub max_sentences: usize,
    pub max_words: usize,
    pub max_total_words: usize,
    pub wiring: InterLevelInput,
    pub mask: ModalityMask,
    pub level: LevelSelect,
    /// Training arithmetic width. Only `f64` is supported; the field exists
    /// so configs state it explicitly.
    pub precision: String,
    /// Unsupervised graph pretraining epochs before the supervised pass.
    pub unsup_epochs: usize,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub negatives: usize,
    pub ablation_runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            batch_size: 64,
            epochs_stage1: 10,
            epochs_stage2: 10,
            learning_rate: 1e-3,
            zeta1: 0.05,
            zeta2: 0.1,
            zeta3: 0.85,
            gru_hidden: 128,
            projection_dim: 256,
            image_feature_dim: 1024,
            sage_hidden: 1024,
            fanout1: 5,
            fanout2: 2,
            max_sentences: 25,
            max_words: 10,
            max_total_words: 250,
            wiring: InterLevelInput::Fused,
            mask: ModalityMask::default(),
            level: LevelSelect::All,
            precision: "f64".into(),
            unsup_epochs: 0,
            walk_length: 3,
            walks_per_node: 2,
            negatives: 5,
            ablation_runs: 3,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "bad value `{value}` for `{key}` at line {line}"
        ))
    })
}

impl TrainConfig {
    /// Apply one `key = value` assignment. `line` is for error messages only.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value, line)?,
            "batch_size" => self.batch_size = parse_num(key, value, line)?,
            "epochs_stage1" => self.epochs_stage1 = parse_num(key, value, line)?,
            "epochs_stage2" => self.epochs_stage2 = parse_num(key, value, line)?,
            "learning_rate" => self.learning_rate = parse_num(key, value, line)?,
            "zeta1" => self.zeta1 = parse_num(key, value, line)?,
            "zeta2" => self.zeta2 = parse_num(key, value, line)?,
            "zeta3" => self.zeta3 = parse_num(key, value, line)?,
            "gru_hidden" => self.gru_hidden = parse_num(key, value, line)?,
            "projection_dim" => self.projection_dim = parse_num(key, value, line)?,
            "image_feature_dim" => self.image_feature_dim = parse_num(key, value, line)?,
            "sage_hidden" => self.sage_hidden = parse_num(key, value, line)?,
            "fanout1" => self.fanout1 = parse_num(key, value, line)?,
            "fanout2" => self.fanout2 = parse_num(key, value, line)?,
            "max_sentences" => self.max_sentences = parse_num(key, value, line)?,
            "max_words" => self.max_words = parse_num(key, value, line)?,
            "max_total_words" => self.max_total_words = parse_num(key, value, line)?,
            "wiring" => {
                self.wiring = match value {
                    "fused" => InterLevelInput::Fused,
                    "probs" => InterLevelInput::Probs,
                    other => {
                        return Err(Error::Config(format!(
                            "wiring must be `fused` or `probs`, got `{other}` at line {line}"
                        )))
                    }
                }
            }
            "mask" => self.mask = ModalityMask::parse(value)?,
            "level" => self.level = LevelSelect::parse(value)?,
            "precision" => {
                if value != "f64" {
                    return Err(Error::Config(format!(
                        "precision `{value}` unsupported (training runs in f64)"
                    )));
                }
                self.precision = value.into();
            }
            "unsup_epochs" => self.unsup_epochs = parse_num(key, value, line)?,
            "walk_length" => self.walk_length = parse_num(key, value, line)?,
            "walks_per_node" => self.walks_per_node = parse_num(key, value, line)?,
            "negatives" => self.negatives = parse_num(key, value, line)?,
            "ablation_runs" => self.ablation_runs = parse_num(key, value, line)?,
            _ => {
                return Err(Error::UnknownConfigKey {
                    key: key.to_string(),
                    line,
                })
            }
        }
        Ok(())
    }

    /// Parse a config file body: `key = value` lines, `#` comments, blank
    /// lines ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line} is not `key = value`: `{stripped}`"))
            })?;
            cfg.set(key.trim(), value.trim(), line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.loss_weights().validate()?;
        for (name, v) in [
            ("gru_hidden", self.gru_hidden),
            ("projection_dim", self.projection_dim),
            ("image_feature_dim", self.image_feature_dim),
            ("sage_hidden", self.sage_hidden),
            ("fanout1", self.fanout1),
            ("fanout2", self.fanout2),
            ("walk_length", self.walk_length),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.ablation_runs == 0 {
            return Err(Error::Config("ablation_runs must be at least 1".into()));
        }
        self.mask.validate()?;
        self.pipeline().validate()?;
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            z1: self.zeta1,
            z2: self.zeta2,
            z3: self.zeta3,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            max_sentences: self.max_sentences,
            max_words_per_sentence: self.max_words,
            max_total_words: self.max_total_words,
            ..PipelineConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn fanouts(&self) -> (usize, usize) {
        (self.fanout1, self.fanout2)
    }

    /// One line per field in declaration order; `{:?}` keeps float text exact
    /// under round-trip.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("seed", self.seed.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs_stage1", self.epochs_stage1.to_string());
        kv("epochs_stage2", self.epochs_stage2.to_string());
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("zeta1", format!("{:?}", self.zeta1));
        kv("zeta2", format!("{:?}", self.zeta2));
        kv("zeta3", format!("{:?}", self.zeta3));
        kv("gru_hidden", self.gru_hidden.to_string());
        kv("projection_dim", self.projection_dim.to_string());
        kv("image_feature_dim", self.image_feature_dim.to_string());
        kv("sage_hidden", self.sage_hidden.to_string());
        kv("fanout1", self.fanout1.to_string());
        kv("fanout2", self.fanout2.to_string());
        kv("max_sentences", self.max_sentences.to_string());
        kv("max_words", self.max_words.to_string());
        kv("max_total_words", self.max_total_words.to_string());
        kv(
            "wiring",
            match self.wiring {
                InterLevelInput::Fused => "fused".into(),
                InterLevelInput::Probs => "probs".into(),
            },
        );
        kv("mask", self.mask.canonical());
        kv("level", self.level.canonical());
        kv("precision", self.precision.clone());
        kv("unsup_epochs", self.unsup_epochs.to_string());
        kv("walk_length", self.walk_length.to_string());
        kv("walks_per_node", self.walks_per_node.to_string());
        kv("negatives", self.negatives.to_string());
        kv("ablation_runs", self.ablation_runs.to_string());
        s
    }

    /// Model-identity subset of [`Self::canonical_string`]: `mask`, `level`,
    /// and `ablation_runs` select what to compute or report, not what the
    /// weights are, so they stay out of the checkpoint fingerprint.
    pub fn identity_string(&self) -> String {
        self.canonical_string()
            .lines()
            .filter(|line| {
                let key = line.split(" = ").next().unwrap_or_default();
                !matches!(key, "mask" | "level" | "ablation_runs")
            })
            .map(|line| format!("{line}\n"))
            .collect()
    }

    /// Fingerprint binding checkpoints to the config that produced them.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.identity_string().as_bytes())
    }
}
