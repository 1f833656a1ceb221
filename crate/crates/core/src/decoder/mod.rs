//! Deformable transformer decoder over group queries, with pluggable
//! self-attention designs and the activity / size / member-point heads.

mod attention;
mod deformable;
mod heads;
mod layers;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::query::{reference_points, GroupQuerySet};
use crate::scalar::Real;
use crate::tensor::{FeatureMapSet, Matrix2D};
use crate::weights::{ParamSource, WeightStore};

pub use attention::{
    block_diagonal_mask, full_attention, inter_group_attention, intra_group_attention,
    multi_head_self_attention, self_attention_stage, GroupLayout, MhaWeights, SelfAttentionWeights,
    StageWeights,
};
pub use deformable::{deformable_cross_attention, DeformableWeights};
pub use heads::{
    pool_group_features, predict_activity, predict_points, predict_size, ForwardOutput,
    HeadWeights, Model, ModelConfig,
};
pub use layers::{relu, LayerNorm, Linear, Mlp};

/// Self-attention design of the decoder layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionVariant {
    /// One embedding per group, one attention over all of them.
    Previous,
    /// One attention over all `N_gr · N_id` embeddings.
    Naive,
    /// Inter-group attention over representatives only.
    InterOnly,
    IntraThenInter,
    InterThenIntra,
}

/// One attention module within a self-attention stage sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    Full,
    Inter,
    Intra,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Full => "full",
            StageKind::Inter => "inter",
            StageKind::Intra => "intra",
        }
    }
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 5] = [
        AttentionVariant::Previous,
        AttentionVariant::Naive,
        AttentionVariant::InterOnly,
        AttentionVariant::IntraThenInter,
        AttentionVariant::InterThenIntra,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::Previous => "previous",
            AttentionVariant::Naive => "naive",
            AttentionVariant::InterOnly => "inter-only",
            AttentionVariant::IntraThenInter => "intra-inter",
            AttentionVariant::InterThenIntra => "inter-intra",
        }
    }

    pub fn stages(self) -> &'static [StageKind] {
        match self {
            AttentionVariant::Previous | AttentionVariant::Naive => &[StageKind::Full],
            AttentionVariant::InterOnly => &[StageKind::Inter],
            AttentionVariant::IntraThenInter => &[StageKind::Intra, StageKind::Inter],
            AttentionVariant::InterThenIntra => &[StageKind::Inter, StageKind::Intra],
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .or(match norm.as_str() {
                "inter-then-intra" | "divided" => Some(AttentionVariant::InterThenIntra),
                "intra-then-inter" => Some(AttentionVariant::IntraThenInter),
                _ => None,
            })
            .ok_or_else(|| Error::invalid("design", format!("unknown attention design `{s}`")))
    }
}

/// Number of query-key score pairs one self-attention pass evaluates.
///
/// The previous design holds a single embedding per group, so its count is
/// `N_gr²` whatever `n_members` says.
pub fn attention_cost(variant: AttentionVariant, n_groups: u64, n_members: u64) -> u64 {
    let inter = n_groups * n_groups;
    match variant {
        AttentionVariant::Previous => inter,
        AttentionVariant::Naive => (n_groups * n_members).pow(2),
        AttentionVariant::InterOnly => inter,
        AttentionVariant::IntraThenInter | AttentionVariant::InterThenIntra => {
            inter + n_groups * n_members * n_members
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionDesign {
    pub variant: AttentionVariant,
    pub heads: usize,
}

impl AttentionDesign {
    pub fn head_dim(&self, d_model: usize) -> usize {
        d_model / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub design: AttentionDesign,
    /// Sampling points per level per head.
    pub n_points: usize,
    pub n_levels: usize,
    pub ffn_dim: usize,
    /// Apply layer normalization after each residual add.
    pub post_norm: bool,
}

impl DecoderConfig {
    pub fn new(d_model: usize, n_levels: usize, variant: AttentionVariant) -> Self {
        Self {
            n_layers: 6,
            d_model,
            design: AttentionDesign { variant, heads: 8 },
            n_points: 4,
            n_levels,
            ffn_dim: 4 * d_model,
            post_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::invalid("n_layers", "must be >= 1"));
        }
        if self.n_levels == 0 {
            return Err(Error::invalid("n_levels", "must be >= 1"));
        }
        if self.n_points == 0 || self.ffn_dim == 0 || self.d_model == 0 {
            return Err(Error::invalid("decoder config", "n_points, ffn_dim and d_model must be >= 1"));
        }
        attention::check_heads(self.d_model, self.design.heads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerWeights<T> {
    pub self_attn: SelfAttentionWeights<T>,
    pub cross_attn: DeformableWeights<T>,
    pub cross_norm: LayerNorm<T>,
    pub ffn: [Linear<T>; 2],
    pub ffn_norm: LayerNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights<T> {
    pub layers: Vec<DecoderLayerWeights<T>>,
}

impl<T: Real> DecoderWeights<T> {
    pub fn load(src: &ParamSource<'_>, cfg: &DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let layers = (0..cfg.n_layers)
            .map(|n| {
                let p = format!("decoder.layer{n}");
                Ok(DecoderLayerWeights {
                    self_attn: SelfAttentionWeights::load(
                        src,
                        &p,
                        cfg.design.variant,
                        d,
                        cfg.design.heads,
                    )?,
                    cross_attn: DeformableWeights::load(
                        src,
                        &format!("{p}.crossattn"),
                        d,
                        cfg.design.heads,
                        cfg.n_levels,
                        cfg.n_points,
                    )?,
                    cross_norm: LayerNorm::load(src, &format!("{p}.norm.cross"), d)?,
                    ffn: [
                        Linear::load(src, &format!("{p}.ffn.linear1"), cfg.ffn_dim, d)?,
                        Linear::load(src, &format!("{p}.ffn.linear2"), d, cfg.ffn_dim)?,
                    ],
                    ffn_norm: LayerNorm::load(src, &format!("{p}.norm.ffn"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn save(&self, store: &mut WeightStore) {
        for (n, l) in self.layers.iter().enumerate() {
            let p = format!("decoder.layer{n}");
            l.self_attn.save(store, &p);
            l.cross_attn.save(store, &format!("{p}.crossattn"));
            l.cross_norm.save(store, &format!("{p}.norm.cross"));
            l.ffn[0].save(store, &format!("{p}.ffn.linear1"));
            l.ffn[1].save(store, &format!("{p}.ffn.linear2"));
            l.ffn_norm.save(store, &format!("{p}.norm.ffn"));
        }
    }
}

/// Decoder output: `h_{i,j}` at row `i * n_members + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFeatureSet<T> {
    pub n_groups: usize,
    pub n_members: usize,
    pub features: Matrix2D<T>,
}

impl<T: Real> GroupFeatureSet<T> {
    pub fn get(&self, group: usize, member: usize) -> &[T] {
        self.features.row(group * self.n_members + member)
    }

    pub fn d_model(&self) -> usize {
        self.features.cols()
    }
}

/// Split a query set into `(content, positional)` matrices of width `D_p`.
pub fn split_queries<T: Real>(qs: &GroupQuerySet<T>) -> (Matrix2D<T>, Matrix2D<T>) {
    let d = qs.d_model();
    let m = qs.n_groups() * qs.n_members();
    let q = qs.queries();
    let content = Matrix2D::from_fn(m, d, |r, c| q.get(r, d + c));
    let pos = Matrix2D::from_fn(m, d, |r, c| q.get(r, c));
    (content, pos)
}

/// Run the decoder and return the features after every layer (the last
/// entry is the final output).
pub fn decoder_forward_layers<T: Real>(
    queries: &GroupQuerySet<T>,
    references: &[[T; 2]],
    maps: &FeatureMapSet<T>,
    cfg: &DecoderConfig,
    weights: &DecoderWeights<T>,
) -> Result<Vec<GroupFeatureSet<T>>> {
    cfg.validate()?;
    if queries.d_model() != cfg.d_model {
        return Err(Error::shape("query width", 2 * cfg.d_model, queries.width()));
    }
    if weights.layers.len() != cfg.n_layers {
        return Err(Error::shape("decoder layers", cfg.n_layers, weights.layers.len()));
    }
    let layout = GroupLayout {
        n_groups: queries.n_groups(),
        n_members: queries.n_members(),
    };
    if references.len() != layout.rows() {
        return Err(Error::shape("reference points", layout.rows(), references.len()));
    }
    let d = cfg.d_model;
    let (mut tgt, pos) = split_queries(queries);
    let mut outputs = Vec::with_capacity(cfg.n_layers);
    for lw in &weights.layers {
        self_attention_stage(
            &mut tgt,
            &pos,
            layout,
            cfg.design.variant,
            &lw.self_attn,
            cfg.post_norm,
        )?;
        tgt.data_mut()
            .par_chunks_mut(d)
            .zip(pos.data().par_chunks(d))
            .zip(references.par_iter())
            .try_for_each(|((row, p), r)| -> Result<()> {
                let q: Vec<T> = row.iter().zip(p).map(|(&a, &b)| a + b).collect();
                let y = deformable_cross_attention(&q, *r, maps, &lw.cross_attn)?;
                for (a, b) in row.iter_mut().zip(y) {
                    *a += b;
                }
                if cfg.post_norm {
                    lw.cross_norm.apply(row);
                }
                let mut hidden = lw.ffn[0].apply(row);
                relu(&mut hidden);
                let y = lw.ffn[1].apply(&hidden);
                for (a, b) in row.iter_mut().zip(y) {
                    *a += b;
                }
                if cfg.post_norm {
                    lw.ffn_norm.apply(row);
                }
                Ok(())
            })?;
        outputs.push(GroupFeatureSet {
            n_groups: layout.n_groups,
            n_members: layout.n_members,
            features: tgt.clone(),
        });
    }
    Ok(outputs)
}

/// `H = f_dec(Z_e, Q)`: final-layer group features.
pub fn decoder_forward<T: Real>(
    queries: &GroupQuerySet<T>,
    ref_proj: &Matrix2D<T>,
    maps: &FeatureMapSet<T>,
    cfg: &DecoderConfig,
    weights: &DecoderWeights<T>,
) -> Result<GroupFeatureSet<T>> {
    let refs = reference_points(queries, ref_proj)?;
    let mut layers = decoder_forward_layers(queries, &refs, maps, cfg, weights)?;
    Ok(layers.pop().expect("n_layers >= 1"))
}
