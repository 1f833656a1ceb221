//! Self-attention cost comparison: exact score-pair counts per design and
//! wall-time medians of one self-attention block.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decoder::{attention_cost, self_attention_stage, AttentionVariant, GroupLayout, SelfAttentionWeights};
use crate::error::{Error, Result};
use crate::rng::named_init;
use crate::tensor::Matrix2D;
use crate::weights::ParamSource;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub design: String,
    pub n_groups: usize,
    pub n_members: usize,
    pub d_model: usize,
    pub score_pairs: u64,
    /// Naive score pairs divided by this design's.
    pub reduction_vs_naive: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub designs: Vec<String>,
    /// `(n_groups, n_members)` pairs.
    pub sizes: Vec<[usize; 2]>,
    pub d_model: usize,
    pub heads: usize,
    /// Timed runs per cell; 0 reports costs only.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            designs: AttentionVariant::ALL.iter().map(|v| v.name().to_string()).collect(),
            sizes: vec![[300, 12]],
            d_model: 64,
            heads: 8,
            repeats: 0,
            seed: 0,
        }
    }
}

/// Layout a design actually attends over: the previous design keeps one
/// embedding per group.
pub fn bench_layout(variant: AttentionVariant, n_groups: usize, n_members: usize) -> GroupLayout {
    GroupLayout {
        n_groups,
        n_members: if variant == AttentionVariant::Previous { 1 } else { n_members },
    }
}

/// Wall times in milliseconds of `repeats` self-attention blocks of the
/// given design on seeded inputs. Runs on the current rayon pool.
pub fn time_design(
    variant: AttentionVariant,
    n_groups: usize,
    n_members: usize,
    d_model: usize,
    heads: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let layout = bench_layout(variant, n_groups, n_members);
    let src = ParamSource::Seed(seed);
    let w = SelfAttentionWeights::<f64>::load(&src, "bench", variant, d_model, heads)?;
    let rows = layout.rows();
    let x = Matrix2D::new(rows, d_model, named_init(seed, "bench.input", rows * d_model, 1))?;
    let pos = Matrix2D::new(rows, d_model, named_init(seed, "bench.pos", rows * d_model, 1))?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut y = x.clone();
        let t = Instant::now();
        self_attention_stage(&mut y, &pos, layout, variant, &w, true)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(&y);
    }
    Ok(times)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.d_model == 0 || cfg.heads == 0 || !cfg.d_model.is_multiple_of(cfg.heads) {
        return Err(Error::invalid("d_model/heads", "d_model must be a positive multiple of heads"));
    }
    let designs = cfg
        .designs
        .iter()
        .map(|d| d.parse::<AttentionVariant>())
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &[n_groups, n_members] in &cfg.sizes {
        if n_groups == 0 || n_members == 0 {
            return Err(Error::invalid("sizes", "n_groups and n_members must be >= 1"));
        }
        let naive = attention_cost(AttentionVariant::Naive, n_groups as u64, n_members as u64);
        for &v in &designs {
            let pairs = attention_cost(v, n_groups as u64, n_members as u64);
            let times = time_design(v, n_groups, n_members, cfg.d_model, cfg.heads, cfg.repeats, cfg.seed)?;
            rows.push(BenchRow {
                design: v.name().to_string(),
                n_groups,
                n_members,
                d_model: cfg.d_model,
                score_pairs: pairs,
                reduction_vs_naive: naive as f64 / pairs as f64,
                median_ms: median(&times),
                min_ms: times.iter().copied().reduce(f64::min),
            });
        }
    }
    Ok(rows)
}
