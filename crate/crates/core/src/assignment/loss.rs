use serde::{Deserialize, Serialize};

use super::cost::{check_nonneg, label_vector, CostWeights};
use super::focal::{focal_grad, focal_term, FocalParams};
use super::{match_groups, MatchResult};
use crate::error::{Error, Result};
use crate::scene::{PredictionSet, SceneGroundTruth};

/// Balancing weights `λ_v, λ_s, λ_u` of the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_v: f64,
    pub lambda_s: f64,
    pub lambda_u: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_v: 2.0,
            lambda_s: 1.0,
            lambda_u: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_v: f64,
    pub l_s: f64,
    pub l_u: f64,
    pub total: f64,
}

/// Gradients of the total loss with respect to every prediction entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub activity: Vec<Vec<f64>>,
    pub size: Vec<f64>,
    pub points: Vec<Vec<[f64; 2]>>,
    /// L1 terms evaluated exactly at a kink, where subgradient 0 was used.
    pub kinks: usize,
}

fn check_match(gt: &SceneGroundTruth, preds: &PredictionSet, m: &MatchResult) -> Result<usize> {
    let n = preds.predictions.len();
    let real = gt.groups.len();
    if real == 0 {
        return Err(Error::invalid("ground truth", "loss needs at least one real group"));
    }
    if m.permutation.len() != n || m.n_real() != real {
        return Err(Error::shape(
            "match result",
            format!("{n} rows with {real} real groups"),
            format!("{} rows with {} real groups", m.permutation.len(), m.n_real()),
        ));
    }
    let mut seen = vec![false; n];
    for &j in &m.permutation {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(Error::invalid("match result", "permutation is not a bijection"));
        }
    }
    Ok(real)
}

/// Loss over a fixed matching.
///
/// The activity term covers matched real groups against their labels and
/// φ-matched predictions against the all-zero label; every term is
/// normalized by the number of real groups.
pub fn set_loss(
    gt: &SceneGroundTruth,
    preds: &PredictionSet,
    m: &MatchResult,
    w: &LossWeights,
    focal: &FocalParams,
    n_members: usize,
) -> Result<LossBreakdown> {
    check_nonneg("lambda", &[w.lambda_v, w.lambda_s, w.lambda_u])?;
    let real = check_match(gt, preds, m)?;
    let norm = real as f64;
    let (mut l_v, mut l_s, mut l_u) = (0.0, 0.0, 0.0);
    for (row, &j) in m.permutation.iter().enumerate() {
        let p = &preds.predictions[j];
        match gt.groups.get(row) {
            Some(g) => {
                let v = label_vector(g);
                if v.len() != p.activity_probs.len() {
                    return Err(Error::shape("activity vectors", v.len(), p.activity_probs.len()));
                }
                l_v += v
                    .iter()
                    .zip(&p.activity_probs)
                    .map(|(&y, &q)| focal_term(y == 1.0, q, focal))
                    .sum::<f64>();
                l_s += (g.normalized_size(n_members) - p.size).abs();
                if g.size > p.member_points.len() {
                    return Err(Error::shape("predicted member points", g.size, p.member_points.len()));
                }
                l_u += g
                    .member_points
                    .iter()
                    .zip(&p.member_points)
                    .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs())
                    .sum::<f64>();
            }
            None => {
                l_v += p
                    .activity_probs
                    .iter()
                    .map(|&q| focal_term(false, q, focal))
                    .sum::<f64>();
            }
        }
    }
    let (l_v, l_s, l_u) = (l_v / norm, l_s / norm, l_u / norm);
    Ok(LossBreakdown {
        l_v,
        l_s,
        l_u,
        total: w.lambda_v * l_v + w.lambda_s * l_s + w.lambda_u * l_u,
    })
}

fn sign(x: f64, kinks: &mut usize) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        *kinks += 1;
        0.0
    }
}

/// Analytic gradient of [`set_loss`]'s total with the matching held fixed.
pub fn set_loss_gradients(
    gt: &SceneGroundTruth,
    preds: &PredictionSet,
    m: &MatchResult,
    w: &LossWeights,
    focal: &FocalParams,
    n_members: usize,
) -> Result<LossGradients> {
    let real = check_match(gt, preds, m)?;
    let norm = real as f64;
    let mut g = LossGradients {
        activity: preds
            .predictions
            .iter()
            .map(|p| vec![0.0; p.activity_probs.len()])
            .collect(),
        size: vec![0.0; preds.predictions.len()],
        points: preds
            .predictions
            .iter()
            .map(|p| vec![[0.0; 2]; p.member_points.len()])
            .collect(),
        kinks: 0,
    };
    let cv = w.lambda_v / norm;
    let cs = w.lambda_s / norm;
    let cu = w.lambda_u / norm;
    for (row, &j) in m.permutation.iter().enumerate() {
        let p = &preds.predictions[j];
        match gt.groups.get(row) {
            Some(grp) => {
                let v = label_vector(grp);
                for (c, (&y, &q)) in v.iter().zip(&p.activity_probs).enumerate() {
                    g.activity[j][c] = cv * focal_grad(y == 1.0, q, focal);
                }
                g.size[j] = cs * sign(p.size - grp.normalized_size(n_members), &mut g.kinks);
                for (k, u) in grp.member_points.iter().enumerate() {
                    let uh = p.member_points[k];
                    g.points[j][k] = [
                        cu * sign(uh[0] - u[0], &mut g.kinks),
                        cu * sign(uh[1] - u[1], &mut g.kinks),
                    ];
                }
            }
            None => {
                for (c, &q) in p.activity_probs.iter().enumerate() {
                    g.activity[j][c] = cv * focal_grad(false, q, focal);
                }
            }
        }
    }
    Ok(g)
}

/// Sum of per-layer losses, each layer matched independently.
pub fn auxiliary_set_loss(
    gt: &SceneGroundTruth,
    layers: &[PredictionSet],
    cost: &CostWeights,
    w: &LossWeights,
    focal: &FocalParams,
    n_members: usize,
) -> Result<(f64, Vec<LossBreakdown>)> {
    let per_layer = layers
        .iter()
        .map(|preds| {
            let m = match_groups(gt, preds, cost, n_members)?;
            set_loss(gt, preds, &m, w, focal, n_members)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((per_layer.iter().map(|l| l.total).sum(), per_layer))
}
