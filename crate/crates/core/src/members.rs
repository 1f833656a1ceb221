//! Inference-time member identification: predicted member points are matched
//! one-to-one to individual detections, weighted by detection confidence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::solve_rectangular;
use crate::error::{Error, Result};
use crate::scalar::round_half_away;
use crate::scene::{box_center, BoxXyxy, GroundTruthGroup, GroupPrediction, Individual, Point};

/// Lower bound applied to detection scores before dividing by them.
pub const SCORE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberAssignment {
    pub group_index: usize,
    /// Matched individual indices, ascending.
    pub member_indices: Vec<usize>,
    /// Number of member points used, `round(ŝ · N_id)`.
    pub used_points: usize,
    /// Points left unmatched because there were fewer individuals than points.
    pub shortfall: usize,
}

/// Distance from a member point to a box center, divided by the detection
/// score.
pub fn member_match_cost(u_hat: &Point, bbox: &BoxXyxy, score: f64) -> f64 {
    let c = box_center(bbox);
    let d = ((u_hat[0] - c[0]).powi(2) + (u_hat[1] - c[1]).powi(2)).sqrt();
    d / score.max(SCORE_FLOOR)
}

/// Number of member points a prediction asks for: `ŝ · N_id` rounded half
/// away from zero, clamped to `[0, N_id]`.
pub fn predicted_member_count(size: f64, n_members: usize) -> usize {
    if !size.is_finite() {
        return 0;
    }
    round_half_away(size * n_members as f64).clamp(0, n_members as i64) as usize
}

fn used_points(pred: &GroupPrediction, n_members: usize) -> Result<&[Point]> {
    let m = predicted_member_count(pred.size, n_members);
    if m > pred.member_points.len() {
        return Err(Error::shape("predicted member points", m, pred.member_points.len()));
    }
    Ok(&pred.member_points[..m])
}

fn cost_rows(points: &[Point], individuals: &[Individual]) -> Vec<f64> {
    points
        .iter()
        .flat_map(|u| {
            individuals
                .iter()
                .map(move |ind| member_match_cost(u, &ind.bbox, ind.score))
        })
        .collect()
}

/// One-to-one matching of `points` to `individuals` minimizing the total
/// match cost. Entry `k` is the individual for point `k`, or `None` when
/// points outnumber individuals.
pub fn hungarian_member_matches(
    points: &[Point],
    individuals: &[Individual],
) -> Result<Vec<Option<usize>>> {
    if points.is_empty() || individuals.is_empty() {
        return Ok(vec![None; points.len()]);
    }
    solve_rectangular(&cost_rows(points, individuals), points.len(), individuals.len())
}

/// Each point independently picks its nearest individual center (plain
/// Euclidean distance, earliest index on ties). Duplicates are allowed.
pub fn min_distance_matches(points: &[Point], individuals: &[Individual]) -> Vec<Option<usize>> {
    points
        .iter()
        .map(|u| {
            let mut best: Option<(usize, f64)> = None;
            for (i, ind) in individuals.iter().enumerate() {
                let c = box_center(&ind.bbox);
                let d = ((u[0] - c[0]).powi(2) + (u[1] - c[1]).powi(2)).sqrt();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            best.map(|(i, _)| i)
        })
        .collect()
}

/// Points in order each claim their cheapest unclaimed individual.
pub fn greedy_distinct_matches(points: &[Point], individuals: &[Individual]) -> Vec<Option<usize>> {
    let mut taken = vec![false; individuals.len()];
    points
        .iter()
        .map(|u| {
            let mut best: Option<(usize, f64)> = None;
            for (i, ind) in individuals.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                let c = member_match_cost(u, &ind.bbox, ind.score);
                if best.is_none_or(|(_, bc)| c < bc) {
                    best = Some((i, c));
                }
            }
            best.map(|(i, _)| {
                taken[i] = true;
                i
            })
        })
        .collect()
}

/// Total match cost of a point → individual mapping; unmatched points add 0.
pub fn matching_cost(points: &[Point], individuals: &[Individual], matches: &[Option<usize>]) -> f64 {
    points
        .iter()
        .zip(matches)
        .filter_map(|(u, m)| m.map(|i| member_match_cost(u, &individuals[i].bbox, individuals[i].score)))
        .sum()
}

pub fn identify_members(
    group_index: usize,
    pred: &GroupPrediction,
    individuals: &[Individual],
    n_members: usize,
) -> Result<MemberAssignment> {
    let points = used_points(pred, n_members)?;
    let matches = hungarian_member_matches(points, individuals)?;
    let mut member_indices: Vec<usize> = matches.iter().flatten().copied().collect();
    member_indices.sort_unstable();
    Ok(MemberAssignment {
        group_index,
        used_points: points.len(),
        shortfall: points.len() - member_indices.len(),
        member_indices,
    })
}

/// [`identify_members`] for every prediction, in prediction order.
pub fn identify_all(
    preds: &[GroupPrediction],
    individuals: &[Individual],
    n_members: usize,
) -> Result<Vec<MemberAssignment>> {
    preds
        .par_iter()
        .enumerate()
        .map(|(k, p)| identify_members(k, p, individuals, n_members))
        .collect()
}

/// Denominator of the duplicated ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicateDenominator {
    /// Individuals hit by at least one point.
    #[default]
    Matched,
    /// Every individual detection.
    All,
}

/// Percentage of individuals hit by more than one member point under
/// min-distance matching, pooled over `(prediction, individuals)` items.
/// `None` when the denominator is zero.
pub fn duplicated_ratio(
    items: &[(&GroupPrediction, &[Individual])],
    n_members: usize,
    denominator: DuplicateDenominator,
) -> Result<Option<f64>> {
    let mut dup = 0usize;
    let mut denom = 0usize;
    for (pred, individuals) in items {
        let points = used_points(pred, n_members)?;
        let mut hits = vec![0usize; individuals.len()];
        for i in min_distance_matches(points, individuals).into_iter().flatten() {
            hits[i] += 1;
        }
        dup += hits.iter().filter(|&&h| h > 1).count();
        denom += match denominator {
            DuplicateDenominator::Matched => hits.iter().filter(|&&h| h >= 1).count(),
            DuplicateDenominator::All => individuals.len(),
        };
    }
    Ok((denom > 0).then(|| 100.0 * dup as f64 / denom as f64))
}

/// Percentage of `(prediction, ground truth)` pairs whose rounded size
/// equals the true size. A missing prediction counts as wrong.
pub fn size_accuracy(
    pairs: &[(Option<&GroupPrediction>, &GroundTruthGroup)],
    n_members: usize,
) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let correct = pairs
        .iter()
        .filter(|(p, g)| p.is_some_and(|p| predicted_member_count(p.size, n_members) == g.size))
        .count();
    Some(100.0 * correct as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ind(cx: f64, cy: f64, score: f64) -> Individual {
        Individual {
            bbox: [cx - 0.05, cy - 0.05, cx + 0.05, cy + 0.05],
            score,
        }
    }

    fn pred(size: f64, pts: &[Point]) -> GroupPrediction {
        GroupPrediction {
            activity_probs: vec![0.5],
            size,
            member_points: pts.to_vec(),
        }
    }

    #[test]
    fn match_cost_examples() {
        let b = [0.4, 0.5, 0.6, 0.7];
        assert_eq!(member_match_cost(&[0.5, 0.6], &b, 1.0), 0.0);
        assert!((member_match_cost(&[0.5, 0.5], &b, 0.8) - 0.125).abs() < 1e-15);
        let full = member_match_cost(&[0.3, 0.1], &b, 0.9);
        let half = member_match_cost(&[0.3, 0.1], &b, 0.45);
        assert!((half - 2.0 * full).abs() < 1e-14);
        assert!(member_match_cost(&[0.3, 0.1], &b, 0.0).is_finite());
    }

    #[test]
    fn rounding_of_member_count() {
        assert_eq!(predicted_member_count(0.0, 12), 0);
        assert_eq!(predicted_member_count(4.0 / 12.0, 12), 4);
        assert_eq!(predicted_member_count(0.3333, 12), 4);
        assert_eq!(predicted_member_count(0.125, 12), 2);
        assert_eq!(predicted_member_count(1.0, 12), 12);
    }

    #[test]
    fn zero_size_gives_empty_set() {
        let a = identify_members(3, &pred(0.0, &[[0.5, 0.5]; 4]), &[ind(0.5, 0.5, 1.0)], 4).unwrap();
        assert_eq!(a.member_indices, Vec::<usize>::new());
        assert_eq!((a.group_index, a.used_points, a.shortfall), (3, 0, 0));
    }

    #[test]
    fn hungarian_avoids_duplicates_min_distance_does_not() {
        let inds = [ind(0.5, 0.5, 1.0), ind(0.8, 0.5, 1.0)];
        let pts = [[0.45, 0.5], [0.55, 0.5]];
        assert_eq!(min_distance_matches(&pts, &inds), vec![Some(0), Some(0)]);
        // Brute force over the two bijections.
        let c = |p: &Point, i: usize| member_match_cost(p, &inds[i].bbox, 1.0);
        let straight = c(&pts[0], 0) + c(&pts[1], 1);
        let crossed = c(&pts[0], 1) + c(&pts[1], 0);
        let expect = if straight <= crossed { vec![Some(0), Some(1)] } else { vec![Some(1), Some(0)] };
        assert_eq!(hungarian_member_matches(&pts, &inds).unwrap(), expect);
        let a = identify_members(0, &pred(0.5, &[pts[0], pts[1], [0.0, 0.0], [0.0, 0.0]]), &inds, 4)
            .unwrap();
        assert_eq!(a.member_indices, vec![0, 1]);
    }

    #[test]
    fn shortfall_when_points_outnumber_individuals() {
        let inds = [ind(0.5, 0.5, 0.9)];
        let p = pred(2.0 / 12.0, &[[0.5, 0.5]; 12]);
        let a = identify_members(0, &p, &inds, 12).unwrap();
        assert_eq!(a.member_indices, vec![0]);
        assert_eq!((a.used_points, a.shortfall), (2, 1));
        let r = duplicated_ratio(&[(&p, &inds[..])], 12, DuplicateDenominator::Matched).unwrap();
        assert_eq!(r, Some(100.0));
        let empty = identify_members(0, &p, &[], 12).unwrap();
        assert_eq!((empty.member_indices.len(), empty.shortfall), (0, 2));
    }

    #[test]
    fn duplicated_ratio_denominators() {
        let inds = [ind(0.2, 0.2, 1.0), ind(0.5, 0.5, 1.0), ind(0.8, 0.8, 1.0)];
        let p = pred(0.5, &[[0.2, 0.2], [0.5, 0.5], [0.0, 0.0], [0.0, 0.0]]);
        let items = [(&p, &inds[..])];
        assert_eq!(duplicated_ratio(&items, 4, DuplicateDenominator::Matched).unwrap(), Some(0.0));
        let q = pred(0.5, &[[0.2, 0.2], [0.21, 0.2], [0.0, 0.0], [0.0, 0.0]]);
        let items = [(&q, &inds[..])];
        assert_eq!(duplicated_ratio(&items, 4, DuplicateDenominator::Matched).unwrap(), Some(100.0));
        let all = duplicated_ratio(&items, 4, DuplicateDenominator::All).unwrap().unwrap();
        assert!((all - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(duplicated_ratio(&[], 4, DuplicateDenominator::Matched).unwrap(), None);
    }

    #[test]
    fn size_accuracy_counts() {
        let g = GroundTruthGroup {
            activity: vec![1],
            size: 4,
            member_points: vec![[0.1, 0.1]; 4],
            member_boxes: vec![[0.0, 0.0, 0.2, 0.2]; 4],
        };
        let good = pred(4.0 / 12.0, &[]);
        let bad = pred(0.5, &[]);
        let pairs = [(Some(&good), &g), (Some(&good), &g), (Some(&bad), &g), (Some(&good), &g)];
        assert_eq!(size_accuracy(&pairs, 12), Some(75.0));
        assert_eq!(size_accuracy(&[(None, &g)], 12), Some(0.0));
        assert_eq!(size_accuracy(&[], 12), None);
    }
}
