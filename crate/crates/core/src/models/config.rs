use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::network::config_parameter_count;
use crate::error::{Error, Result};

/// Which network an [`EtaModel`](super::EtaModel) runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fma,
    WdrRnn,
    WdrLstm,
    WdFfn,
    WdResnet,
    MultiHead,
    RouteEta,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Fma,
        Variant::WdrRnn,
        Variant::WdrLstm,
        Variant::WdFfn,
        Variant::WdResnet,
        Variant::MultiHead,
        Variant::RouteEta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fma => "fma",
            Variant::WdrRnn => "wdr_rnn",
            Variant::WdrLstm => "wdr_lstm",
            Variant::WdFfn => "wd_ffn",
            Variant::WdResnet => "wd_resnet",
            Variant::MultiHead => "multi_head",
            Variant::RouteEta => "route_eta",
        }
    }

    /// Whether the variant has trainable parameters.
    pub fn is_learned(self) -> bool {
        self != Variant::RouteEta
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Width of each factor after its front FFN.
    pub d_factor: usize,
    /// Width of the pooled sequence summary (the `W^O` output for `fma`,
    /// the extractor width for the baselines).
    pub d_model: usize,
    /// Layers in each front FFN and in the final FFN.
    pub ffn_depth: usize,
    /// Hidden width of the final FFN.
    pub d_hidden: usize,
    pub dropout_rate: f64,
    pub n_links: usize,
    pub n_drivers: usize,
    pub link_embed: usize,
    pub driver_embed: usize,
    pub day_embed: usize,
    pub slice_embed: usize,
    /// Attention heads of the `multi_head` baseline.
    pub heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Fma,
            d_factor: 8,
            d_model: 32,
            ffn_depth: 1,
            d_hidden: 32,
            dropout_rate: 0.1,
            n_links: 2000,
            n_drivers: 200,
            link_embed: 8,
            driver_embed: 8,
            day_embed: 4,
            slice_embed: 8,
            heads: 4,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_factor", self.d_factor),
            ("d_model", self.d_model),
            ("ffn_depth", self.ffn_depth),
            ("d_hidden", self.d_hidden),
            ("n_links", self.n_links),
            ("n_drivers", self.n_drivers),
            ("link_embed", self.link_embed),
            ("driver_embed", self.driver_embed),
            ("day_embed", self.day_embed),
            ("slice_embed", self.slice_embed),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.variant == Variant::Fma && !self.d_factor.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "positional encoding needs an even d_factor, got {}",
                self.d_factor
            )));
        }
        if self.variant == Variant::MultiHead {
            if !self.d_model.is_multiple_of(self.heads) {
                return Err(Error::Config(format!(
                    "d_model {} is not divisible into {} heads",
                    self.d_model, self.heads
                )));
            }
            if !self.d_model.is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "positional encoding needs an even d_model, got {}",
                    self.d_model
                )));
            }
        }
        Ok(())
    }
}

/// `base` switched to `variant`, with `d_model` chosen so the parameter
/// count lands as close to `target` as the search allows.
pub fn matched_config(base: &ModelConfig, variant: Variant, target: usize) -> Result<ModelConfig> {
    let mut best: Option<(usize, ModelConfig)> = None;
    for d_model in 1..=512 {
        let cfg = ModelConfig {
            d_model,
            ..base.with_variant(variant)
        };
        if cfg.validate().is_err() {
            continue;
        }
        let count = config_parameter_count(&cfg)?;
        let gap = count.abs_diff(target);
        let improved = best.as_ref().is_none_or(|(g, _)| gap < *g);
        if improved {
            best = Some((gap, cfg));
        } else if count > target {
            // Counts grow with d_model, so the gap only widens from here.
            break;
        }
        if !variant.is_learned() {
            break;
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::Config(format!("no valid width for {variant}")))
}
