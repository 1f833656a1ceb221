//! Multi-head self-attention and the self-attention stage designs:
//! one attention over every embedding (naive / previous), inter-group
//! attention over one representative per group, and intra-group attention
//! inside each group.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{softmax_in_place, Matrix2D};
use crate::weights::{ParamSource, WeightStore};

use super::layers::{LayerNorm, Linear};
use super::{AttentionVariant, StageKind};

#[derive(Debug, Clone, PartialEq)]
pub struct MhaWeights<T> {
    pub heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl<T: Real> MhaWeights<T> {
    pub fn load(src: &ParamSource<'_>, prefix: &str, d_model: usize, heads: usize) -> Result<Self> {
        check_heads(d_model, heads)?;
        Ok(Self {
            heads,
            q: Linear::load(src, &format!("{prefix}.q"), d_model, d_model)?,
            k: Linear::load(src, &format!("{prefix}.k"), d_model, d_model)?,
            v: Linear::load(src, &format!("{prefix}.v"), d_model, d_model)?,
            o: Linear::load(src, &format!("{prefix}.o"), d_model, d_model)?,
        })
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) {
        self.q.save(store, &format!("{prefix}.q"));
        self.k.save(store, &format!("{prefix}.k"));
        self.v.save(store, &format!("{prefix}.v"));
        self.o.save(store, &format!("{prefix}.o"));
    }

    pub fn d_model(&self) -> usize {
        self.q.in_dim()
    }
}

pub(crate) fn check_heads(d_model: usize, heads: usize) -> Result<()> {
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::invalid(
            "attention heads",
            format!("{heads} heads do not divide d_model {d_model}"),
        ));
    }
    Ok(())
}

/// Multi-head scaled dot-product self-attention over the rows of `x`.
///
/// Queries and keys read `x + pos` when `pos` is given; values read `x`.
/// `mask` is row-major `M × M`, `true` where query row may attend to key
/// column. The residual connection is left to the caller.
pub fn multi_head_self_attention<T: Real>(
    x: &Matrix2D<T>,
    pos: Option<&Matrix2D<T>>,
    w: &MhaWeights<T>,
    mask: Option<&[bool]>,
) -> Result<Matrix2D<T>> {
    let (m, d) = (x.rows(), x.cols());
    if d != w.d_model() {
        return Err(Error::shape("attention input width", w.d_model(), d));
    }
    if let Some(p) = pos {
        if p.rows() != m || p.cols() != d {
            return Err(Error::shape(
                "attention positional input",
                format!("{m}x{d}"),
                format!("{}x{}", p.rows(), p.cols()),
            ));
        }
    }
    if let Some(mask) = mask {
        if mask.len() != m * m {
            return Err(Error::shape("attention mask", m * m, mask.len()));
        }
        if let Some(r) = (0..m).find(|&r| !mask[r * m..(r + 1) * m].iter().any(|&b| b)) {
            return Err(Error::FullyMasked(r));
        }
    }

    let qk_in = match pos {
        Some(p) => {
            let mut s = x.clone();
            for (a, &b) in s.data_mut().iter_mut().zip(p.data()) {
                *a += b;
            }
            s
        }
        None => x.clone(),
    };
    let q = w.q.apply_rows(&qk_in);
    let k = w.k.apply_rows(&qk_in);
    let v = w.v.apply_rows(x);

    let hd = d / w.heads;
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let mut concat = Matrix2D::zeros(m, d);
    let mut scores = vec![T::zero(); m];
    for h in 0..w.heads {
        let cols = h * hd..(h + 1) * hd;
        for r in 0..m {
            let qr = &q.row(r)[cols.clone()];
            for (c, s) in scores.iter_mut().enumerate() {
                let allowed = mask.is_none_or(|mk| mk[r * m + c]);
                *s = if allowed {
                    let kc = &k.row(c)[cols.clone()];
                    let mut acc = T::zero();
                    for (&a, &b) in qr.iter().zip(kc) {
                        acc += a * b;
                    }
                    acc * scale
                } else {
                    T::neg_infinity()
                };
            }
            softmax_in_place(&mut scores);
            let out = &mut concat.row_mut(r)[cols.clone()];
            for (c, &p) in scores.iter().enumerate() {
                if p == T::zero() {
                    continue;
                }
                for (o, &vv) in out.iter_mut().zip(&v.row(c)[cols.clone()]) {
                    *o += p * vv;
                }
            }
        }
    }
    Ok(w.o.apply_rows(&concat))
}

/// Weights of one self-attention stage: attention plus its post-residual norm.
#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights<T> {
    pub attn: MhaWeights<T>,
    pub norm: LayerNorm<T>,
}

/// Self-attention weights for one decoder layer, one entry per stage in
/// execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionWeights<T> {
    pub stages: Vec<(StageKind, StageWeights<T>)>,
}

impl<T: Real> SelfAttentionWeights<T> {
    pub fn load(
        src: &ParamSource<'_>,
        layer_prefix: &str,
        variant: AttentionVariant,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        let stages = variant
            .stages()
            .iter()
            .map(|&kind| {
                Ok((
                    kind,
                    StageWeights {
                        attn: MhaWeights::load(
                            src,
                            &format!("{layer_prefix}.selfattn.{}", kind.name()),
                            d_model,
                            heads,
                        )?,
                        norm: LayerNorm::load(
                            src,
                            &format!("{layer_prefix}.norm.{}", kind.name()),
                            d_model,
                        )?,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self { stages })
    }

    pub fn save(&self, store: &mut WeightStore, layer_prefix: &str) {
        for (kind, sw) in &self.stages {
            sw.attn
                .save(store, &format!("{layer_prefix}.selfattn.{}", kind.name()));
            sw.norm
                .save(store, &format!("{layer_prefix}.norm.{}", kind.name()));
        }
    }
}

/// Embedding layout of a self-attention input: row `i * n_members + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupLayout {
    pub n_groups: usize,
    pub n_members: usize,
}

impl GroupLayout {
    pub fn rows(&self) -> usize {
        self.n_groups * self.n_members
    }
}

fn residual_norm<T: Real>(x: &mut [T], y: &[T], norm: Option<&LayerNorm<T>>) {
    for (a, &b) in x.iter_mut().zip(y) {
        *a += b;
    }
    if let Some(n) = norm {
        n.apply(x);
    }
}

fn gather_rows<T: Real>(x: &Matrix2D<T>, rows: impl Iterator<Item = usize>) -> Matrix2D<T> {
    let rows: Vec<usize> = rows.collect();
    Matrix2D::from_fn(rows.len(), x.cols(), |r, c| x.get(rows[r], c))
}

/// Attention over every embedding, then residual and norm.
pub fn full_attention<T: Real>(
    x: &mut Matrix2D<T>,
    pos: &Matrix2D<T>,
    w: &StageWeights<T>,
    post_norm: bool,
) -> Result<()> {
    let y = multi_head_self_attention(x, Some(pos), &w.attn, None)?;
    let norm = post_norm.then_some(&w.norm);
    for r in 0..x.rows() {
        residual_norm(x.row_mut(r), y.row(r), norm);
    }
    Ok(())
}

/// Attention over the index-0 representative of each group. Other rows are
/// left untouched.
pub fn inter_group_attention<T: Real>(
    x: &mut Matrix2D<T>,
    pos: &Matrix2D<T>,
    layout: GroupLayout,
    w: &StageWeights<T>,
    post_norm: bool,
) -> Result<()> {
    let reps = || (0..layout.n_groups).map(|i| i * layout.n_members);
    let xs = gather_rows(x, reps());
    let ps = gather_rows(pos, reps());
    let y = multi_head_self_attention(&xs, Some(&ps), &w.attn, None)?;
    let norm = post_norm.then_some(&w.norm);
    for (k, r) in reps().enumerate() {
        residual_norm(x.row_mut(r), y.row(k), norm);
    }
    Ok(())
}

/// Attention inside each group's `n_members` embeddings; groups run in
/// parallel and never see each other.
pub fn intra_group_attention<T: Real>(
    x: &mut Matrix2D<T>,
    pos: &Matrix2D<T>,
    layout: GroupLayout,
    w: &StageWeights<T>,
    post_norm: bool,
) -> Result<()> {
    let n = layout.n_members;
    let d = x.cols();
    let norm = post_norm.then_some(&w.norm);
    x.data_mut()
        .par_chunks_mut(n * d)
        .zip(pos.data().par_chunks(n * d))
        .try_for_each(|(xg, pg)| -> Result<()> {
            let xm = Matrix2D::new(n, d, xg.to_vec())?;
            let pm = Matrix2D::new(n, d, pg.to_vec())?;
            let y = multi_head_self_attention(&xm, Some(&pm), &w.attn, None)?;
            for (r, row) in xg.chunks_exact_mut(d).enumerate() {
                residual_norm(row, y.row(r), norm);
            }
            Ok(())
        })
}

/// Run the configured self-attention stages over `x` in place.
pub fn self_attention_stage<T: Real>(
    x: &mut Matrix2D<T>,
    pos: &Matrix2D<T>,
    layout: GroupLayout,
    variant: AttentionVariant,
    weights: &SelfAttentionWeights<T>,
    post_norm: bool,
) -> Result<()> {
    if layout.n_members < 1 || layout.n_groups < 1 {
        return Err(Error::invalid("group layout", "n_groups and n_members must be >= 1"));
    }
    if variant == AttentionVariant::Previous && layout.n_members != 1 {
        return Err(Error::invalid(
            "attention design",
            format!("the previous design uses one embedding per group, got {}", layout.n_members),
        ));
    }
    if x.rows() != layout.rows() {
        return Err(Error::shape("self-attention input rows", layout.rows(), x.rows()));
    }
    let expected = variant.stages();
    if weights.stages.len() != expected.len()
        || weights.stages.iter().zip(expected).any(|((k, _), e)| k != e)
    {
        return Err(Error::invalid(
            "self-attention weights",
            format!("stages do not match design {}", variant.name()),
        ));
    }
    for (kind, w) in &weights.stages {
        match kind {
            StageKind::Full => full_attention(x, pos, w, post_norm)?,
            StageKind::Inter => inter_group_attention(x, pos, layout, w, post_norm)?,
            StageKind::Intra => intra_group_attention(x, pos, layout, w, post_norm)?,
        }
    }
    Ok(())
}

/// Block-diagonal mask letting each embedding see only its own group.
pub fn block_diagonal_mask(layout: GroupLayout) -> Vec<bool> {
    let m = layout.rows();
    let n = layout.n_members;
    (0..m * m).map(|idx| (idx / m) / n == (idx % m) / n).collect()
}
