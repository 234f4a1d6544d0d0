//! Model configuration with key=value parsing for config files, checkpoint
//! echoes, and command-line overrides.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for key `{key}`")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Single-component removal switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Skip message passing; node embeddings are the primitive embeddings.
    pub no_ragnn: bool,
    /// Drop attribute nodes from every graph.
    pub no_attrs: bool,
    /// Drop the relation-aware regularization term.
    pub no_rar: bool,
    /// Use unit edge weights instead of learned attention.
    pub no_rel_attention: bool,
    /// Skip self-attention; item sequences pass through unchanged.
    pub no_ssa: bool,
    /// Zero the short-term slots of the fusion inputs.
    pub no_short: bool,
    /// Zero the long-term slot of the fusion inputs.
    pub no_long: bool,
}

impl AblationFlags {
    pub fn any(&self) -> bool {
        self.no_ragnn
            || self.no_attrs
            || self.no_rar
            || self.no_rel_attention
            || self.no_ssa
            || self.no_short
            || self.no_long
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension d (primitive base vectors share it).
    pub dim: usize,
    /// Session history length t.
    pub session_len: usize,
    /// Future length g (items to predict).
    pub future_len: usize,
    /// Enclosing-subgraph hop count h.
    pub hops: usize,
    /// Short-term subsession length tau.
    pub subsession_len: usize,
    /// Long-term stack depth.
    pub long_layers: usize,
    /// Short-term stack depth.
    pub short_layers: usize,
    /// Relation-aware regularization weight lambda.
    pub rar_weight: f64,
    /// Global L2 weight eta.
    pub l2_weight: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub leaky_slope: f64,
    pub max_epochs: usize,
    /// Early-stopping patience over validation NDCG.
    pub patience: usize,
    /// Window stride; defaults to the future length.
    pub stride: Option<usize>,
    /// Deterministic per-hop node cap during extraction.
    pub max_nodes_per_hop: Option<usize>,
    /// Evaluate against sampled candidates instead of the full catalog.
    pub num_neg_eval: Option<usize>,
    /// Ranking cutoff k.
    pub top_k: usize,
    /// Minimum interactions per user in preprocessing.
    pub min_interactions: usize,
    /// Extension: leaky ReLU between message-passing layers.
    pub inter_layer_activation: bool,
    /// Optional fine-tuning epochs on a transfer target (zero-shot default).
    pub fine_tune_epochs: usize,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            session_len: 11,
            future_len: 3,
            hops: 2,
            subsession_len: 4,
            long_layers: 2,
            short_layers: 3,
            rar_weight: 0.6,
            l2_weight: 1e-5,
            learning_rate: 0.001,
            batch_size: 32,
            leaky_slope: 0.2,
            max_epochs: 30,
            patience: 5,
            stride: None,
            max_nodes_per_hop: None,
            num_neg_eval: None,
            top_k: 10,
            min_interactions: 4,
            inter_layer_activation: false,
            fine_tune_epochs: 0,
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    /// Number of subsessions pi = ceil(t / tau).
    pub fn subsession_count(&self) -> usize {
        self.session_len.div_ceil(self.subsession_len)
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.future_len)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("dim", self.dim),
            ("session_len", self.session_len),
            ("future_len", self.future_len),
            ("subsession_len", self.subsession_len),
            ("long_layers", self.long_layers),
            ("short_layers", self.short_layers),
            ("batch_size", self.batch_size),
            ("top_k", self.top_k),
            ("max_epochs", self.max_epochs),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.session_len < 2 {
            return Err(ConfigError::Invalid(
                "session_len must be at least 2".into(),
            ));
        }
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(ConfigError::Invalid("learning_rate must be positive".into()));
        }
        if self.rar_weight < 0.0 || self.l2_weight < 0.0 {
            return Err(ConfigError::Invalid(
                "regularization weights must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn to_key_value(&self) -> String {
        let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        let mut out = String::new();
        let mut push = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        push("dim", self.dim.to_string());
        push("session_len", self.session_len.to_string());
        push("future_len", self.future_len.to_string());
        push("hops", self.hops.to_string());
        push("subsession_len", self.subsession_len.to_string());
        push("long_layers", self.long_layers.to_string());
        push("short_layers", self.short_layers.to_string());
        push("rar_weight", format!("{:?}", self.rar_weight));
        push("l2_weight", format!("{:?}", self.l2_weight));
        push("learning_rate", format!("{:?}", self.learning_rate));
        push("batch_size", self.batch_size.to_string());
        push("leaky_slope", format!("{:?}", self.leaky_slope));
        push("max_epochs", self.max_epochs.to_string());
        push("patience", self.patience.to_string());
        push("stride", opt(self.stride));
        push("max_nodes_per_hop", opt(self.max_nodes_per_hop));
        push("num_neg_eval", opt(self.num_neg_eval));
        push("top_k", self.top_k.to_string());
        push("min_interactions", self.min_interactions.to_string());
        push(
            "inter_layer_activation",
            self.inter_layer_activation.to_string(),
        );
        push("fine_tune_epochs", self.fine_tune_epochs.to_string());
        push("no_ragnn", self.ablation.no_ragnn.to_string());
        push("no_attrs", self.ablation.no_attrs.to_string());
        push("no_rar", self.ablation.no_rar.to_string());
        push("no_rel_attention", self.ablation.no_rel_attention.to_string());
        push("no_ssa", self.ablation.no_ssa.to_string());
        push("no_short", self.ablation.no_short.to_string());
        push("no_long", self.ablation.no_long.to_string());
        out
    }

    /// Apply one key=value override; unknown keys are fatal.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        fn parse_opt(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
            if value.eq_ignore_ascii_case("none") {
                Ok(None)
            } else {
                parse::<usize>(key, value).map(Some)
            }
        }
        match key {
            "dim" => self.dim = parse(key, value)?,
            "session_len" => self.session_len = parse(key, value)?,
            "future_len" => self.future_len = parse(key, value)?,
            "hops" => self.hops = parse(key, value)?,
            "subsession_len" => self.subsession_len = parse(key, value)?,
            "long_layers" => self.long_layers = parse(key, value)?,
            "short_layers" => self.short_layers = parse(key, value)?,
            "rar_weight" => self.rar_weight = parse(key, value)?,
            "l2_weight" => self.l2_weight = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "leaky_slope" => self.leaky_slope = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "stride" => self.stride = parse_opt(key, value)?,
            "max_nodes_per_hop" => self.max_nodes_per_hop = parse_opt(key, value)?,
            "num_neg_eval" => self.num_neg_eval = parse_opt(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "min_interactions" => self.min_interactions = parse(key, value)?,
            "inter_layer_activation" => self.inter_layer_activation = parse(key, value)?,
            "fine_tune_epochs" => self.fine_tune_epochs = parse(key, value)?,
            "no_ragnn" => self.ablation.no_ragnn = parse(key, value)?,
            "no_attrs" => self.ablation.no_attrs = parse(key, value)?,
            "no_rar" => self.ablation.no_rar = parse(key, value)?,
            "no_rel_attention" => self.ablation.no_rel_attention = parse(key, value)?,
            "no_ssa" => self.ablation.no_ssa = parse(key, value)?,
            "no_short" => self.ablation.no_short = parse(key, value)?,
            "no_long" => self.ablation.no_long = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parse a full key=value block (comments with `#`, blank lines allowed).
    pub fn apply_key_values(&mut self, text: &str) -> Result<(), ConfigError> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Invalid(format!("expected key=value, got `{line}`")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_key_values(text: &str) -> Result<Self, ConfigError> {
        let mut config = ModelConfig::default();
        config.apply_key_values(text)?;
        config.validate()?;
        Ok(config)
    }
}
