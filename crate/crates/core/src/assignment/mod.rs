//! Set matching between ground-truth groups and group predictions, the
//! training losses over a matching, and their analytic gradients.

mod cost;
mod focal;
mod hungarian;
mod loss;

use serde::Serialize;

pub use cost::{activity_cost, point_cost, size_cost, total_match_cost, CostWeights};
pub use focal::{focal_grad, focal_term, FocalParams};
pub use hungarian::{
    assignment_cost, solve_assignment, solve_assignment_slice, solve_rectangular, Assignment,
};
pub use loss::{
    auxiliary_set_loss, set_loss, set_loss_gradients, LossBreakdown, LossGradients, LossWeights,
};

use crate::error::{Error, Result};
use crate::scene::{PredictionSet, SceneGroundTruth};
use crate::tensor::Matrix2D;

/// Optimal matching of the φ-padded ground truth to predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Padded ground-truth row → prediction index. Rows `0..n_real` are the
    /// scene's groups in order; the rest are φ slots.
    pub permutation: Vec<usize>,
    /// Padded rows that are φ slots.
    pub phi_set: Vec<usize>,
    pub total_cost: f64,
}

impl MatchResult {
    pub fn n_real(&self) -> usize {
        self.permutation.len() - self.phi_set.len()
    }

    pub fn is_phi(&self, row: usize) -> bool {
        row >= self.n_real()
    }

    /// Prediction index matched to real ground-truth group `g`.
    pub fn prediction_for(&self, g: usize) -> usize {
        self.permutation[g]
    }
}

/// `N_gr × N_gr` matching costs: rows are padded ground truth, columns are
/// predictions.
pub fn cost_matrix(
    gt: &SceneGroundTruth,
    preds: &PredictionSet,
    w: &CostWeights,
    n_members: usize,
) -> Result<Matrix2D<f64>> {
    w.validate()?;
    let n = preds.predictions.len();
    if gt.groups.len() > n {
        return Err(Error::invalid(
            "ground truth",
            format!("{} groups exceed {n} predictions", gt.groups.len()),
        ));
    }
    let mut m = Matrix2D::zeros(n, n);
    for (i, g) in gt.groups.iter().enumerate() {
        for (j, p) in preds.predictions.iter().enumerate() {
            m.set(i, j, total_match_cost(Some(g), p, w, n_members)?);
        }
    }
    Ok(m)
}

/// Pad the ground truth with φ to the prediction count and solve the
/// assignment on the matching costs.
pub fn match_groups(
    gt: &SceneGroundTruth,
    preds: &PredictionSet,
    w: &CostWeights,
    n_members: usize,
) -> Result<MatchResult> {
    let m = cost_matrix(gt, preds, w, n_members)?;
    let a = solve_assignment(&m)?;
    Ok(MatchResult {
        permutation: a.row_to_col,
        phi_set: (gt.groups.len()..preds.predictions.len()).collect(),
        total_cost: a.total,
    })
}
