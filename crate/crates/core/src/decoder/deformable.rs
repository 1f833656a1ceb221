//! Multi-scale deformable cross-attention: each head samples `K` points per
//! level around a reference point and mixes them with softmaxed weights.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{softmax_in_place, FeatureMapSet};
use crate::weights::{ParamSource, WeightStore};

use super::attention::check_heads;
use super::layers::Linear;

#[derive(Debug, Clone, PartialEq)]
pub struct DeformableWeights<T> {
    pub heads: usize,
    pub levels: usize,
    pub points: usize,
    /// `D → heads·levels·points·2` sampling offsets, in pixels of each level.
    pub offsets: Linear<T>,
    /// `D → heads·levels·points` attention logits.
    pub attn: Linear<T>,
    pub out: Linear<T>,
}

impl<T: Real> DeformableWeights<T> {
    pub fn load(
        src: &ParamSource<'_>,
        prefix: &str,
        d_model: usize,
        heads: usize,
        levels: usize,
        points: usize,
    ) -> Result<Self> {
        check_heads(d_model, heads)?;
        let n = heads * levels * points;
        Ok(Self {
            heads,
            levels,
            points,
            offsets: Linear::load(src, &format!("{prefix}.offsets"), 2 * n, d_model)?,
            attn: Linear::load(src, &format!("{prefix}.attn"), n, d_model)?,
            out: Linear::load(src, &format!("{prefix}.out"), d_model, d_model)?,
        })
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) {
        self.offsets.save(store, &format!("{prefix}.offsets"));
        self.attn.save(store, &format!("{prefix}.attn"));
        self.out.save(store, &format!("{prefix}.out"));
    }

    pub fn d_model(&self) -> usize {
        self.out.in_dim()
    }

    /// Flat index of `(head, level, point)` in the attention logits.
    #[inline]
    pub fn slot(&self, head: usize, level: usize, point: usize) -> usize {
        (head * self.levels + level) * self.points + point
    }
}

/// Deformable cross-attention for one query vector (`content + positional`).
///
/// Head `h` reads channels `h·D/H .. (h+1)·D/H` of each level at
/// `ref + (dx / W_l, dy / H_l)` and sums them with weights softmaxed jointly
/// over levels × points. Concatenated head outputs go through `out`.
pub fn deformable_cross_attention<T: Real>(
    query: &[T],
    reference: [T; 2],
    maps: &FeatureMapSet<T>,
    w: &DeformableWeights<T>,
) -> Result<Vec<T>> {
    let d = w.d_model();
    if query.len() != d {
        return Err(Error::shape("cross-attention query", d, query.len()));
    }
    if maps.channels() != d {
        return Err(Error::shape("feature map channels", d, maps.channels()));
    }
    if maps.n_levels() != w.levels {
        return Err(Error::shape("feature map levels", w.levels, maps.n_levels()));
    }
    let offsets = w.offsets.apply(query);
    let mut logits = w.attn.apply(query);
    let per_head = w.levels * w.points;
    let hd = d / w.heads;
    let mut concat = vec![T::zero(); d];
    for h in 0..w.heads {
        let a = &mut logits[h * per_head..(h + 1) * per_head];
        softmax_in_place(a);
        let acc = &mut concat[h * hd..(h + 1) * hd];
        for (l, level) in maps.levels().iter().enumerate() {
            let (lw, lh) = (
                T::from_usize(level.width()).unwrap(),
                T::from_usize(level.height()).unwrap(),
            );
            for k in 0..w.points {
                let s = w.slot(h, l, k);
                let p = [
                    reference[0] + offsets[2 * s] / lw,
                    reference[1] + offsets[2 * s + 1] / lh,
                ];
                level.sample_channels_into(p, h * hd, a[l * w.points + k], acc);
            }
        }
    }
    Ok(w.out.apply(&concat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{bilinear_sample, FeatureMap};
    use approx::assert_abs_diff_eq;

    fn zeroed(d: usize, heads: usize, levels: usize, points: usize) -> DeformableWeights<f64> {
        let n = heads * levels * points;
        let mut out = Linear::load(&ParamSource::Seed(9), "o", d, d).unwrap();
        out.bias = vec![0.25; d];
        DeformableWeights {
            heads,
            levels,
            points,
            offsets: Linear::zeros(2 * n, d),
            attn: Linear::zeros(n, d),
            out,
        }
    }

    #[test]
    fn constant_field_gives_projected_constant() {
        let w = zeroed(4, 2, 2, 3);
        let c = [1.0, -2.0, 0.5, 3.0];
        let maps = FeatureMapSet::new(vec![
            FeatureMap::from_fn(4, 5, 6, |ch, _, _| c[ch]),
            FeatureMap::from_fn(4, 3, 2, |ch, _, _| c[ch]),
        ])
        .unwrap();
        let y = deformable_cross_attention(&[0.1, 0.2, 0.3, 0.4], [0.3, 0.7], &maps, &w).unwrap();
        let expect = w.out.apply(&c);
        for (a, b) in y.iter().zip(&expect) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_point_reduces_to_bilinear_sample() {
        let w = zeroed(4, 2, 1, 1);
        let map = FeatureMap::from_fn(4, 4, 4, |c, y, x| (c * 16 + y * 4 + x) as f64 * 0.1);
        let maps = FeatureMapSet::new(vec![map.clone()]).unwrap();
        let r = [0.37, 0.81];
        let y = deformable_cross_attention(&[1.0, 0.0, -1.0, 2.0], r, &maps, &w).unwrap();
        let expect = w.out.apply(&bilinear_sample(&map, r).unwrap());
        assert_eq!(y, expect);
    }

    #[test]
    fn rejects_mismatched_maps() {
        let w = zeroed(4, 2, 2, 1);
        let maps = FeatureMapSet::new(vec![FeatureMap::from_fn(4, 2, 2, |_, _, _| 0.0)]).unwrap();
        assert!(deformable_cross_attention(&[0.0; 4], [0.5, 0.5], &maps, &w).is_err());
    }
}
