//! Run configuration: one optional TOML or JSON file, overridden by flags.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sgar_core::bench::BenchConfig;
use sgar_core::converge::ConvergeConfig;
use sgar_core::decoder::{AttentionDesign, AttentionVariant, DecoderConfig, ModelConfig};
use sgar_core::metrics::{EvalOptions, Protocol};
use sgar_core::query::QueryMode;
use sgar_core::synth::SynthConfig;

use crate::Invalid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single seed for weights, synthesis, benchmarks and the convergence demo.
    pub seed: u64,
    /// Rayon worker count; `None` uses every core.
    pub workers: Option<usize>,
    pub protocol: Protocol,
    pub design: String,
    pub n_groups: usize,
    pub n_members: usize,
    pub n_classes: usize,
    pub d_model: usize,
    pub heads: usize,
    pub n_layers: usize,
    pub n_points: usize,
    /// Defaults to `4 * d_model`.
    pub ffn_dim: Option<usize>,
    /// `decomposed` or `naive`.
    pub query_mode: String,
    pub post_norm: bool,
    pub eval: EvalOptions,
    pub synth: SynthConfig,
    pub bench: BenchConfig,
    pub converge: ConvergeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: None,
            protocol: Protocol::Volleyball,
            design: AttentionVariant::InterThenIntra.name().to_string(),
            n_groups: 300,
            n_members: 12,
            n_classes: 4,
            d_model: 256,
            heads: 8,
            n_layers: 6,
            n_points: 4,
            ffn_dim: None,
            query_mode: "decomposed".into(),
            post_norm: true,
            eval: EvalOptions::default(),
            synth: SynthConfig::default(),
            bench: BenchConfig::default(),
            converge: ConvergeConfig::default(),
        }
    }
}

impl RunConfig {
    /// Read a config file; `.toml` files are TOML, anything else JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let parsed = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?
        };
        Ok(parsed)
    }

    /// Copy the shared top-level settings into each section.
    pub fn propagate(&mut self) {
        self.eval.n_members = self.n_members;
        self.synth.seed = self.seed;
        self.synth.n_members = self.n_members;
        self.synth.n_classes = self.n_classes;
        self.bench.seed = self.seed;
        self.converge.seed = self.seed;
        self.converge.scene.n_members = self.n_members;
        self.converge.scene.n_classes = self.n_classes;
    }

    pub fn variant(&self) -> Result<AttentionVariant> {
        self.design.parse::<AttentionVariant>().map_err(|e| Invalid(e.to_string()).into())
    }

    pub fn model_config(&self, n_levels: usize) -> Result<ModelConfig> {
        let query_mode = match self.query_mode.as_str() {
            "decomposed" => QueryMode::Decomposed,
            "naive" => QueryMode::Naive,
            other => return Err(Invalid(format!("unknown query_mode `{other}` (decomposed|naive)")).into()),
        };
        let decoder = DecoderConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            design: AttentionDesign {
                variant: self.variant()?,
                heads: self.heads,
            },
            n_points: self.n_points,
            n_levels,
            ffn_dim: self.ffn_dim.unwrap_or(4 * self.d_model),
            post_norm: self.post_norm,
        };
        decoder.validate()?;
        Ok(ModelConfig {
            n_groups: self.n_groups,
            n_members: self.n_members,
            n_classes: self.n_classes,
            query_mode,
            decoder,
        })
    }
}
