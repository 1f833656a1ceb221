//! Matching costs between a (padded) ground-truth group and a prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scene::{GroundTruthGroup, GroupPrediction};

/// Balancing weights `η_v, η_s, η_u` of the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub eta_v: f64,
    pub eta_s: f64,
    pub eta_u: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            eta_v: 2.0,
            eta_s: 1.0,
            eta_u: 5.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        check_nonneg("eta", &[self.eta_v, self.eta_s, self.eta_u])
    }
}

pub(crate) fn check_nonneg(field: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(field, format!("weights {values:?} must be finite and >= 0")));
    }
    Ok(())
}

/// `−(vᵀv̂ + (1−v)ᵀ(1−v̂)) / N_v`, in `[−1, 0]`.
pub fn activity_cost<T: Real>(v: &[T], v_hat: &[T]) -> Result<T> {
    if v.len() != v_hat.len() || v.is_empty() {
        return Err(Error::shape("activity vectors", v.len(), v_hat.len()));
    }
    let one = T::one();
    let agree: T = v
        .iter()
        .zip(v_hat)
        .map(|(&a, &b)| a * b + (one - a) * (one - b))
        .sum();
    Ok(-agree / T::from_usize(v.len()).unwrap())
}

/// `|s − ŝ|`.
pub fn size_cost<T: Real>(s: T, s_hat: T) -> T {
    (s - s_hat).abs()
}

/// Mean L1 distance between the `S` ground-truth points and the first `S`
/// predicted points, paired by position.
pub fn point_cost<T: Real>(u: &[[T; 2]], u_hat: &[[T; 2]]) -> Result<T> {
    if u.is_empty() {
        return Err(Error::invalid("group size", "point cost needs at least one member"));
    }
    if u.len() > u_hat.len() {
        return Err(Error::shape("predicted member points", format!(">= {}", u.len()), u_hat.len()));
    }
    let sum: T = u
        .iter()
        .zip(u_hat)
        .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs())
        .sum();
    Ok(sum / T::from_usize(u.len()).unwrap())
}

pub(crate) fn label_vector(g: &GroundTruthGroup) -> Vec<f64> {
    g.activity.iter().map(|&v| f64::from(v)).collect()
}

/// Full matching cost; `None` is a padded no-activity slot and costs 0.
pub fn total_match_cost(
    gt: Option<&GroundTruthGroup>,
    pred: &GroupPrediction,
    w: &CostWeights,
    n_members: usize,
) -> Result<f64> {
    let Some(g) = gt else {
        return Ok(0.0);
    };
    let hv = activity_cost(&label_vector(g), &pred.activity_probs)?;
    let hs = size_cost(g.normalized_size(n_members), pred.size);
    let hu = point_cost(&g.member_points, &pred.member_points)?;
    Ok(w.eta_v * hv + w.eta_s * hs + w.eta_u * hu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activity_cost_examples() {
        let v = [0.0, 1.0, 0.0];
        assert_eq!(activity_cost(&v, &v).unwrap(), -1.0);
        assert_eq!(activity_cost(&v, &[1.0, 0.0, 1.0]).unwrap(), 0.0);
        let mut one_hot = [0.0; 8];
        one_hot[3] = 1.0;
        assert_eq!(activity_cost(&one_hot, &[0.5; 8]).unwrap(), -0.5);
        assert!(activity_cost(&v, &[0.5; 2]).is_err());
    }

    #[test]
    fn size_cost_examples() {
        assert_eq!(size_cost(0.25, 0.25), 0.0);
        assert_eq!(size_cost(1.0, 0.0), 1.0);
        assert!((size_cost(4.0f64 / 12.0, 0.25) - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn point_cost_examples() {
        let u = [[0.2, 0.3], [0.6, 0.3]];
        assert_eq!(point_cost(&u, &[[0.2, 0.3], [0.6, 0.3], [0.9, 0.9]]).unwrap(), 0.0);
        assert_eq!(point_cost(&[[1.0, 1.0]], &[[0.0, 0.0]]).unwrap(), 2.0);
        let c: f64 = point_cost(&u, &[[0.25, 0.3], [0.5, 0.4]]).unwrap();
        assert!((c - 0.125).abs() < 1e-15);
        assert!(point_cost::<f64>(&[], &[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn total_cost_examples() {
        let g = GroundTruthGroup {
            activity: vec![0, 1],
            size: 2,
            member_points: vec![[0.1, 0.2], [0.3, 0.4]],
            member_boxes: vec![[0.0, 0.1, 0.2, 0.3], [0.2, 0.3, 0.4, 0.5]],
        };
        let perfect = GroupPrediction {
            activity_probs: vec![0.0, 1.0],
            size: 2.0 / 12.0,
            member_points: [g.member_points.clone(), vec![[0.9, 0.9]; 10]].concat(),
        };
        let w = CostWeights::default();
        assert_eq!(total_match_cost(Some(&g), &perfect, &w, 12).unwrap(), -2.0);
        assert_eq!(total_match_cost(None, &perfect, &w, 12).unwrap(), 0.0);
        let zero = CostWeights {
            eta_v: 0.0,
            eta_s: 0.0,
            eta_u: 0.0,
        };
        let mut off = perfect.clone();
        off.size = 0.9;
        assert_eq!(total_match_cost(Some(&g), &off, &zero, 12).unwrap(), 0.0);
    }
}
