//! Evaluation: group activity accuracy, social group accuracy (one labelled
//! group per scene) and per-class average precision (multi-group scenes).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{solve_rectangular, total_match_cost, CostWeights};
use crate::error::{Error, Result};
use crate::members::{duplicated_ratio, identify_members, size_accuracy, DuplicateDenominator};
use crate::scene::{BoxXyxy, GroundTruthGroup, GroupPrediction, PredictionSet, SceneGroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One labelled group per scene; accuracy of the top prediction.
    Volleyball,
    /// Any number of groups per scene; mean average precision.
    Collective,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Volleyball => "volleyball",
            Protocol::Collective => "collective",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volleyball" => Ok(Protocol::Volleyball),
            "collective" => Ok(Protocol::Collective),
            _ => Err(Error::invalid("protocol", format!("unknown protocol {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApInterpolation {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub iou_thresh: f64,
    /// Require the identified member count to equal the true size. When
    /// false, every identified member still needs its own matching box.
    pub exact_size: bool,
    pub interpolation: ApInterpolation,
    pub duplicate_denominator: DuplicateDenominator,
    pub n_members: usize,
    pub cost_weights: CostWeights,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_thresh: 0.5,
            exact_size: true,
            interpolation: ApInterpolation::AllPoint,
            duplicate_denominator: DuplicateDenominator::Matched,
            n_members: 12,
            cost_weights: CostWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub n_scenes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_activity_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub social_group_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub per_class_accuracy: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub per_class_ap: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duplicated_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_accuracy: Option<f64>,
}

/// One row per class seen in either per-class table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: usize,
    pub accuracy: Option<f64>,
    pub ap: Option<f64>,
}

impl EvalReport {
    pub fn class_rows(&self) -> Vec<ClassRow> {
        let mut classes: Vec<usize> = self
            .per_class_accuracy
            .keys()
            .chain(self.per_class_ap.keys())
            .copied()
            .collect();
        classes.sort_unstable();
        classes.dedup();
        classes
            .into_iter()
            .map(|class| ClassRow {
                class,
                accuracy: self.per_class_accuracy.get(&class).copied(),
                ap: self.per_class_ap.get(&class).copied(),
            })
            .collect()
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoxXyxy, b: &BoxXyxy) -> Result<f64> {
    for (field, r) in [("iou box a", a), ("iou box b", b)] {
        if r.iter().any(|v| !v.is_finite()) || r[0] >= r[2] || r[1] >= r[3] {
            return Err(Error::invalid(field, format!("degenerate box {r:?}")));
        }
    }
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |r: &BoxXyxy| (r[2] - r[0]) * (r[3] - r[1]);
    Ok(inter / (area(a) + area(b) - inter))
}

/// Whether predicted member boxes pair one-to-one with ground-truth boxes,
/// every pair having IoU above `thresh`.
pub fn boxes_correspond(pred: &[BoxXyxy], gt: &[BoxXyxy], thresh: f64, exact_size: bool) -> Result<bool> {
    if pred.is_empty() || pred.len() > gt.len() || (exact_size && pred.len() != gt.len()) {
        return Ok(false);
    }
    let (rows, cols) = (pred.len(), gt.len());
    // Barred pairs cost more than any all-feasible matching can total.
    let barred = rows as f64 + 1.0;
    let mut cost = Vec::with_capacity(rows * cols);
    let mut feasible = Vec::with_capacity(rows * cols);
    for p in pred {
        for g in gt {
            let v = iou(p, g)?;
            feasible.push(v > thresh);
            cost.push(if v > thresh { 1.0 - v } else { barred });
        }
    }
    let m = solve_rectangular(&cost, rows, cols)?;
    Ok(m
        .iter()
        .enumerate()
        .all(|(r, c)| c.is_some_and(|c| feasible[r * cols + c])))
}

fn check_pairs(scenes: &[(SceneGroundTruth, PredictionSet)]) -> Result<()> {
    if scenes.is_empty() {
        return Err(Error::invalid("scenes", "no scenes to evaluate"));
    }
    let mut n_classes: Option<usize> = None;
    for (gt, preds) in scenes {
        if gt.image_id != preds.image_id {
            return Err(Error::invalid(
                "image_id",
                format!("ground truth {:?} paired with predictions {:?}", gt.image_id, preds.image_id),
            ));
        }
        let lens = gt
            .groups
            .iter()
            .map(|g| g.activity.len())
            .chain(preds.predictions.iter().map(|p| p.activity_probs.len()));
        for len in lens {
            if *n_classes.get_or_insert(len) != len {
                return Err(Error::invalid(
                    "activity",
                    format!("scene {:?}: {len} classes, expected {}", gt.image_id, n_classes.unwrap_or(0)),
                ));
            }
        }
    }
    Ok(())
}

/// Percentage of scenes whose single most probable `(query, class)` names
/// an activity present in the scene.
pub fn group_activity_accuracy(scenes: &[(SceneGroundTruth, PredictionSet)]) -> Result<f64> {
    check_pairs(scenes)?;
    let mut correct = 0usize;
    for (gt, preds) in scenes {
        if gt.groups.is_empty() {
            return Err(Error::invalid(
                "groups",
                format!("scene {:?} has no ground-truth activity", gt.image_id),
            ));
        }
        let hit = preds
            .top_prediction()
            .and_then(|i| preds.predictions[i].top_class())
            .is_some_and(|(c, _)| gt.groups.iter().any(|g| g.has_class(c)));
        correct += hit as usize;
    }
    Ok(100.0 * correct as f64 / scenes.len() as f64)
}

fn member_boxes(
    pred: &GroupPrediction,
    gt: &SceneGroundTruth,
    index: usize,
    n_members: usize,
) -> Result<Vec<BoxXyxy>> {
    let a = identify_members(index, pred, &gt.individuals, n_members)?;
    Ok(a.member_indices.iter().map(|&i| gt.individuals[i].bbox).collect())
}

fn group_hit(
    class: usize,
    boxes: &[BoxXyxy],
    g: &GroundTruthGroup,
    opts: &EvalOptions,
) -> Result<bool> {
    Ok(g.has_class(class) && boxes_correspond(boxes, &g.member_boxes, opts.iou_thresh, opts.exact_size)?)
}

/// Per-scene outcome of the top prediction: `(correct, predicted class)`.
fn social_outcomes(
    scenes: &[(SceneGroundTruth, PredictionSet)],
    opts: &EvalOptions,
) -> Result<Vec<(bool, Option<usize>)>> {
    scenes
        .par_iter()
        .map(|(gt, preds)| {
            let Some(k) = preds.top_prediction() else {
                return Ok((false, None));
            };
            let p = &preds.predictions[k];
            let Some((c, _)) = p.top_class() else {
                return Ok((false, None));
            };
            let boxes = member_boxes(p, gt, k, opts.n_members)?;
            let mut hit = false;
            for g in &gt.groups {
                hit |= group_hit(c, &boxes, g, opts)?;
            }
            Ok((hit, Some(c)))
        })
        .collect()
}

/// Percentage of scenes whose top prediction has a correct class and whose
/// identified members pair with the group's boxes.
pub fn social_group_accuracy(
    scenes: &[(SceneGroundTruth, PredictionSet)],
    opts: &EvalOptions,
) -> Result<f64> {
    check_pairs(scenes)?;
    let outcomes = social_outcomes(scenes, opts)?;
    let correct = outcomes.iter().filter(|(hit, _)| *hit).count();
    Ok(100.0 * correct as f64 / scenes.len() as f64)
}

/// Average precision of a ranked list of true/false-positive flags, in
/// `[0, 1]`. `n_gt` is the number of ground-truth instances.
pub fn average_precision(ranked_tp: &[bool], n_gt: usize, interp: ApInterpolation) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut precision = Vec::with_capacity(ranked_tp.len());
    for (k, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    match interp {
        ApInterpolation::AllPoint => {
            let mut ap = 0.0;
            let mut prev = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                ap += (r - prev) * p;
                prev = *r;
            }
            ap
        }
        ApInterpolation::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    recall
                        .iter()
                        .position(|&r| r >= t - 1e-12)
                        .map_or(0.0, |k| precision[k])
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

/// Per-class AP (percent) over classes with at least one ground-truth group,
/// and their mean.
pub fn social_group_map(
    scenes: &[(SceneGroundTruth, PredictionSet)],
    opts: &EvalOptions,
) -> Result<(f64, BTreeMap<usize, f64>)> {
    check_pairs(scenes)?;
    let n_classes = scenes
        .iter()
        .find_map(|(gt, p)| gt.n_classes().or(p.predictions.first().map(|q| q.activity_probs.len())))
        .unwrap_or(0);
    let boxes: Vec<Vec<Vec<BoxXyxy>>> = scenes
        .par_iter()
        .map(|(gt, preds)| {
            preds
                .predictions
                .iter()
                .enumerate()
                .map(|(k, p)| member_boxes(p, gt, k, opts.n_members))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let per_class: Vec<Option<f64>> = (0..n_classes)
        .into_par_iter()
        .map(|c| {
            let n_gt: usize = scenes
                .iter()
                .map(|(gt, _)| gt.groups.iter().filter(|g| g.has_class(c)).count())
                .sum();
            if n_gt == 0 {
                return Ok(None);
            }
            let mut ranked: Vec<(f64, usize, usize)> = scenes
                .iter()
                .enumerate()
                .flat_map(|(s, (_, preds))| {
                    preds
                        .predictions
                        .iter()
                        .enumerate()
                        .map(move |(k, p)| (p.activity_probs[c], s, k))
                })
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut claimed: Vec<Vec<bool>> =
                scenes.iter().map(|(gt, _)| vec![false; gt.groups.len()]).collect();
            let mut flags = Vec::with_capacity(ranked.len());
            for &(_, s, k) in &ranked {
                let mut hit = false;
                for (gi, g) in scenes[s].0.groups.iter().enumerate() {
                    if !claimed[s][gi] && group_hit(c, &boxes[s][k], g, opts)? {
                        claimed[s][gi] = true;
                        hit = true;
                        break;
                    }
                }
                flags.push(hit);
            }
            Ok(Some(100.0 * average_precision(&flags, n_gt, opts.interpolation)))
        })
        .collect::<Result<_>>()?;
    let per_class: BTreeMap<usize, f64> = per_class
        .into_iter()
        .enumerate()
        .filter_map(|(c, ap)| ap.map(|ap| (c, ap)))
        .collect();
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok((map, per_class))
}

/// Predictions paired with ground-truth groups for the size and duplicate
/// diagnostics: the top prediction per scene for the volleyball protocol,
/// the matching-cost assignment for the collective protocol.
fn diagnostic_pairs<'a>(
    scenes: &'a [(SceneGroundTruth, PredictionSet)],
    protocol: Protocol,
    opts: &EvalOptions,
) -> Result<Vec<(usize, Option<&'a GroupPrediction>, &'a GroundTruthGroup)>> {
    let mut out = Vec::new();
    for (s, (gt, preds)) in scenes.iter().enumerate() {
        match protocol {
            Protocol::Volleyball => {
                let top = preds.top_prediction().map(|k| &preds.predictions[k]);
                out.push((s, top, &gt.groups[0]));
            }
            Protocol::Collective => {
                let (rows, cols) = (gt.groups.len(), preds.predictions.len());
                let matched = if rows == 0 || cols == 0 {
                    vec![None; rows]
                } else {
                    let mut cost = Vec::with_capacity(rows * cols);
                    for g in &gt.groups {
                        for p in &preds.predictions {
                            cost.push(total_match_cost(Some(g), p, &opts.cost_weights, opts.n_members)?);
                        }
                    }
                    solve_rectangular(&cost, rows, cols)?
                };
                for (g, m) in gt.groups.iter().zip(matched) {
                    out.push((s, m.map(|k| &preds.predictions[k]), g));
                }
            }
        }
    }
    Ok(out)
}

pub fn evaluate(
    scenes: &[(SceneGroundTruth, PredictionSet)],
    protocol: Protocol,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    check_pairs(scenes)?;
    if !(0.0..1.0).contains(&opts.iou_thresh) {
        return Err(Error::invalid("iou_thresh", "must lie in [0, 1)"));
    }
    let mut report = EvalReport {
        protocol,
        n_scenes: scenes.len(),
        group_activity_accuracy: None,
        social_group_accuracy: None,
        per_class_accuracy: BTreeMap::new(),
        map: None,
        per_class_ap: BTreeMap::new(),
        duplicated_ratio: None,
        size_accuracy: None,
    };
    if scenes.iter().all(|(gt, _)| !gt.groups.is_empty()) {
        report.group_activity_accuracy = Some(group_activity_accuracy(scenes)?);
    }
    match protocol {
        Protocol::Volleyball => {
            if let Some((gt, _)) = scenes.iter().find(|(gt, _)| gt.groups.len() != 1) {
                return Err(Error::invalid(
                    "groups",
                    format!(
                        "volleyball protocol needs exactly one group per scene; {:?} has {}",
                        gt.image_id,
                        gt.groups.len()
                    ),
                ));
            }
            let outcomes = social_outcomes(scenes, opts)?;
            let correct = outcomes.iter().filter(|(hit, _)| *hit).count();
            report.social_group_accuracy = Some(100.0 * correct as f64 / scenes.len() as f64);
            let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            for ((gt, _), (hit, class)) in scenes.iter().zip(&outcomes) {
                for c in (0..gt.groups[0].activity.len()).filter(|&c| gt.groups[0].has_class(c)) {
                    let e = counts.entry(c).or_default();
                    e.1 += 1;
                    e.0 += (*hit && *class == Some(c)) as usize;
                }
            }
            report.per_class_accuracy = counts
                .into_iter()
                .map(|(c, (hit, n))| (c, 100.0 * hit as f64 / n as f64))
                .collect();
        }
        Protocol::Collective => {
            let (map, per_class) = social_group_map(scenes, opts)?;
            report.map = Some(map);
            report.per_class_ap = per_class;
        }
    }
    let pairs = diagnostic_pairs(scenes, protocol, opts)?;
    let dup_items: Vec<(&GroupPrediction, &[crate::scene::Individual])> = pairs
        .iter()
        .filter_map(|(s, p, _)| p.map(|p| (p, &scenes[*s].0.individuals[..])))
        .collect();
    report.duplicated_ratio = duplicated_ratio(&dup_items, opts.n_members, opts.duplicate_denominator)?;
    let size_pairs: Vec<_> = pairs.iter().map(|(_, p, g)| (*p, *g)).collect();
    report.size_accuracy = size_accuracy(&size_pairs, opts.n_members);
    Ok(report)
}
