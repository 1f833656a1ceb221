//! Prediction heads and the end-to-end group-recognition model.

use crate::error::{Error, Result};
use crate::query::{compose_group_queries, reference_points, GroupQuerySet, QueryMode};
use crate::scalar::{logit, sigmoid, Real};
use crate::scene::{GroupPrediction, PredictionSet};
use crate::tensor::{FeatureMapSet, Matrix2D};
use crate::weights::{ParamSource, WeightStore};

use super::layers::Mlp;
use super::{decoder_forward_layers, DecoderConfig, DecoderWeights, GroupFeatureSet};

/// Reference points are clamped to `[EPS, 1 - EPS]` before the logit.
const REF_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights<T> {
    pub activity: Mlp<T>,
    pub size: Mlp<T>,
    pub point: Mlp<T>,
}

impl<T: Real> HeadWeights<T> {
    pub fn load(src: &ParamSource<'_>, d_model: usize, n_classes: usize) -> Result<Self> {
        Ok(Self {
            activity: Mlp::load(src, "head.activity", d_model, d_model, n_classes)?,
            size: Mlp::load(src, "head.size", d_model, d_model, 1)?,
            point: Mlp::load(src, "head.point", d_model, d_model, 2)?,
        })
    }

    pub fn save(&self, store: &mut WeightStore) {
        self.activity.save(store, "head.activity");
        self.size.save(store, "head.size");
        self.point.save(store, "head.point");
    }
}

/// `h̄_i`: mean over each group's member features. Returns `N_gr × D_p`.
pub fn pool_group_features<T: Real>(h: &GroupFeatureSet<T>) -> Matrix2D<T> {
    let d = h.d_model();
    let n = T::from_usize(h.n_members).unwrap();
    let mut out = Matrix2D::zeros(h.n_groups, d);
    for i in 0..h.n_groups {
        let row = out.row_mut(i);
        for j in 0..h.n_members {
            for (o, &v) in row.iter_mut().zip(h.get(i, j)) {
                *o += v;
            }
        }
        for o in row.iter_mut() {
            *o /= n;
        }
    }
    out
}

/// Activity probabilities `v̂ = σ(f_v(h̄))`.
pub fn predict_activity<T: Real>(pooled: &[T], head: &Mlp<T>) -> Vec<T> {
    head.forward(pooled).into_iter().map(sigmoid).collect()
}

/// Normalized size `ŝ = σ(f_s(h̄))`.
pub fn predict_size<T: Real>(pooled: &[T], head: &Mlp<T>) -> T {
    sigmoid(head.forward(pooled)[0])
}

/// Member point `û = σ(f_u(h) + logit(r))`.
pub fn predict_points<T: Real>(h: &[T], reference: [T; 2], head: &Mlp<T>) -> [T; 2] {
    let o = head.forward(h);
    let eps = T::lit(REF_EPS);
    [
        sigmoid(o[0] + logit(reference[0], eps)),
        sigmoid(o[1] + logit(reference[1], eps)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_groups: usize,
    pub n_members: usize,
    pub n_classes: usize,
    pub query_mode: QueryMode,
    pub decoder: DecoderConfig,
}

/// Group queries, reference projection, decoder and heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub queries: GroupQuerySet<T>,
    /// `2 × D_p` projection of the positional query half.
    pub ref_proj: Matrix2D<T>,
    pub decoder: DecoderWeights<T>,
    pub heads: HeadWeights<T>,
}

/// Per-layer features and predictions from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub references: Vec<[T; 2]>,
    pub layer_features: Vec<GroupFeatureSet<T>>,
    /// Head outputs for every decoder layer; the last is the model output.
    pub layer_predictions: Vec<Vec<GroupPrediction>>,
}

impl<T> ForwardOutput<T> {
    pub fn predictions(&self) -> &[GroupPrediction] {
        self.layer_predictions.last().map_or(&[], Vec::as_slice)
    }

    pub fn prediction_set(&self, image_id: &str) -> PredictionSet {
        PredictionSet {
            image_id: image_id.to_string(),
            predictions: self.predictions().to_vec(),
        }
    }
}

impl<T: Real> Model<T> {
    pub fn load(cfg: ModelConfig, src: &ParamSource<'_>) -> Result<Self> {
        let d = cfg.decoder.d_model;
        if cfg.n_classes == 0 {
            return Err(Error::invalid("n_classes", "must be >= 1"));
        }
        Ok(Self {
            cfg,
            queries: compose_group_queries(cfg.query_mode, cfg.n_groups, cfg.n_members, 2 * d, *src)?,
            ref_proj: src.matrix("query.ref_proj", 2, d, d)?,
            decoder: DecoderWeights::load(src, &cfg.decoder)?,
            heads: HeadWeights::load(src, d, cfg.n_classes)?,
        })
    }

    pub fn seeded(cfg: ModelConfig, seed: u64) -> Result<Self> {
        Self::load(cfg, &ParamSource::Seed(seed))
    }

    pub fn from_store(cfg: ModelConfig, store: &WeightStore) -> Result<Self> {
        Self::load(cfg, &ParamSource::Store(store))
    }

    pub fn to_store(&self) -> WeightStore {
        let mut store = WeightStore::new();
        self.queries.to_store(&mut store);
        store.insert_matrix("query.ref_proj", &self.ref_proj);
        self.decoder.save(&mut store);
        self.heads.save(&mut store);
        store
    }

    /// Apply the heads to one set of decoder features.
    pub fn predict_from_features(
        &self,
        h: &GroupFeatureSet<T>,
        references: &[[T; 2]],
    ) -> Vec<GroupPrediction> {
        let pooled = pool_group_features(h);
        (0..h.n_groups)
            .map(|i| GroupPrediction {
                activity_probs: predict_activity(pooled.row(i), &self.heads.activity)
                    .into_iter()
                    .map(Real::as_f64)
                    .collect(),
                size: predict_size(pooled.row(i), &self.heads.size).as_f64(),
                member_points: (0..h.n_members)
                    .map(|j| {
                        let p = predict_points(
                            h.get(i, j),
                            references[i * h.n_members + j],
                            &self.heads.point,
                        );
                        [p[0].as_f64(), p[1].as_f64()]
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn forward(&self, maps: &FeatureMapSet<T>) -> Result<ForwardOutput<T>> {
        let references = reference_points(&self.queries, &self.ref_proj)?;
        let layer_features =
            decoder_forward_layers(&self.queries, &references, maps, &self.cfg.decoder, &self.decoder)?;
        let layer_predictions = layer_features
            .iter()
            .map(|h| self.predict_from_features(h, &references))
            .collect();
        Ok(ForwardOutput {
            references,
            layer_features,
            layer_predictions,
        })
    }
}
