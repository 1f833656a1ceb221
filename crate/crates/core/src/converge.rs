//! Fixed-step gradient descent on the set loss with free prediction
//! parameters, re-matching every step. Exercises the loss gradients end to
//! end without a network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{
    match_groups, set_loss, set_loss_gradients, CostWeights, FocalParams, LossBreakdown, LossWeights,
};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scalar::sigmoid;
use crate::scene::{GroupPrediction, PredictionSet, SceneGroundTruth};
use crate::synth::{generate_scene, SynthConfig};

/// Loss above which a run is declared diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Distance kept between optimized activity probabilities and 0 or 1.
pub const ACTIVITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    /// Number of free predictions.
    pub n_groups: usize,
    /// Half-width of the uniform initialization around logit 0.
    pub init_scale: f64,
    pub cost_weights: CostWeights,
    pub loss_weights: LossWeights,
    pub focal: FocalParams,
    pub scene: SynthConfig,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 500,
            lr: 0.01,
            n_groups: 4,
            init_scale: 0.5,
            cost_weights: CostWeights::default(),
            loss_weights: LossWeights::default(),
            focal: FocalParams::default(),
            scene: SynthConfig {
                groups_per_scene: [1, 1],
                group_size: [3, 3],
                center_jitter: 0.0,
                false_positive_rate: 0.0,
                ..SynthConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergeReport {
    pub image_id: String,
    pub lr: f64,
    pub steps: usize,
    /// Loss before each step, then the final loss; `steps + 1` entries.
    pub trace: Vec<f64>,
    pub final_breakdown: LossBreakdown,
    /// `1 − final / initial`.
    pub reduction: f64,
    /// L1 distance of each matched member point to its ground truth, per
    /// real group.
    pub final_point_errors: Vec<Vec<f64>>,
    pub max_point_error: f64,
}

/// Free parameters. Activity probabilities are optimized directly and
/// projected back into `[ACTIVITY_FLOOR, 1 − ACTIVITY_FLOOR]`; size and point
/// coordinates are optimized as logits.
#[derive(Debug, Clone)]
struct Params {
    activity: Vec<Vec<f64>>,
    size: Vec<f64>,
    points: Vec<Vec<[f64; 2]>>,
}

impl Params {
    fn predictions(&self, image_id: &str) -> PredictionSet {
        PredictionSet {
            image_id: image_id.to_string(),
            predictions: (0..self.size.len())
                .map(|q| GroupPrediction {
                    activity_probs: self.activity[q].clone(),
                    size: sigmoid(self.size[q]),
                    member_points: self.points[q].iter().map(|p| p.map(sigmoid)).collect(),
                })
                .collect(),
        }
    }
}

fn dsig(p: f64) -> f64 {
    p * (1.0 - p)
}

/// Run the demo on the synthetic scene given by `cfg.scene` (index 0).
pub fn converge(cfg: &ConvergeConfig) -> Result<ConvergeReport> {
    let (scene, _) = generate_scene(&SynthConfig { seed: cfg.seed, ..cfg.scene.clone() }, 0)?;
    converge_on(&scene, cfg)
}

pub fn converge_on(scene: &SceneGroundTruth, cfg: &ConvergeConfig) -> Result<ConvergeReport> {
    if !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(Error::invalid("lr", "must be finite and >= 0"));
    }
    let n_members = cfg.scene.n_members;
    let n_classes = scene
        .n_classes()
        .ok_or_else(|| Error::invalid("scene", "needs at least one ground-truth group"))?;
    if cfg.n_groups < scene.groups.len() {
        return Err(Error::invalid(
            "n_groups",
            format!("{} predictions for {} groups", cfg.n_groups, scene.groups.len()),
        ));
    }
    scene.validate(n_members)?;
    let mut rng = substream(cfg.seed, u64::MAX);
    let a = cfg.init_scale.abs();
    let mut draw = || if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
    let mut z = Params {
        activity: (0..cfg.n_groups)
            .map(|_| (0..n_classes).map(|_| sigmoid(draw())).collect())
            .collect(),
        size: (0..cfg.n_groups).map(|_| draw()).collect(),
        points: (0..cfg.n_groups)
            .map(|_| (0..n_members).map(|_| [draw(), draw()]).collect())
            .collect(),
    };

    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut step = 0;
    let (preds, m, breakdown) = loop {
        let preds = z.predictions(&scene.image_id);
        let m = match_groups(scene, &preds, &cfg.cost_weights, n_members)?;
        let l = set_loss(scene, &preds, &m, &cfg.loss_weights, &cfg.focal, n_members)?;
        if !l.total.is_finite() || l.total > DIVERGENCE_LIMIT {
            log::error!("loss {} at step {step}; last values {:?}", l.total, &trace[trace.len().saturating_sub(5)..]);
            return Err(Error::Diverged { step, loss: l.total });
        }
        trace.push(l.total);
        if step == cfg.steps {
            break (preds, m, l);
        }
        let g = set_loss_gradients(scene, &preds, &m, &cfg.loss_weights, &cfg.focal, n_members)?;
        for (q, p) in preds.predictions.iter().enumerate() {
            for (c, v) in z.activity[q].iter_mut().enumerate() {
                *v = (*v - cfg.lr * g.activity[q][c]).clamp(ACTIVITY_FLOOR, 1.0 - ACTIVITY_FLOOR);
            }
            z.size[q] -= cfg.lr * g.size[q] * dsig(p.size);
            for (k, u) in p.member_points.iter().enumerate() {
                for d in 0..2 {
                    z.points[q][k][d] -= cfg.lr * g.points[q][k][d] * dsig(u[d]);
                }
            }
        }
        step += 1;
    };

    let final_point_errors: Vec<Vec<f64>> = scene
        .groups
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let p = &preds.predictions[m.prediction_for(gi)];
            g.member_points
                .iter()
                .zip(&p.member_points)
                .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs())
                .collect()
        })
        .collect();
    let max_point_error = final_point_errors.iter().flatten().fold(0.0, |a: f64, &b| a.max(b));
    let initial = trace[0];
    Ok(ConvergeReport {
        image_id: scene.image_id.clone(),
        lr: cfg.lr,
        steps: cfg.steps,
        reduction: if initial > 0.0 { 1.0 - breakdown.total / initial } else { 0.0 },
        trace,
        final_breakdown: breakdown,
        final_point_errors,
        max_point_error,
    })
}
