//! Synthetic scenes with known ground truth: groups of people placed inside
//! a bounded spread, noisy individual detections, and multi-level feature
//! maps built from one Gaussian blob per person.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scene::{
    box_center, sort_members, BoxXyxy, GroundTruthGroup, GroupPrediction, Individual, Point, PredictionSet,
    SceneGroundTruth,
};
use crate::tensor::{FeatureMap, FeatureMapSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_scenes: usize,
    /// Inclusive range of groups per scene.
    pub groups_per_scene: [usize; 2],
    /// Inclusive range of members per group.
    pub group_size: [usize; 2],
    /// Member capacity of a group query; bounds `group_size`.
    pub n_members: usize,
    pub n_classes: usize,
    /// Largest distance between two members of a group.
    pub spread: f64,
    /// Person box width and height.
    pub box_size: [f64; 2],
    /// `[height, width]` of each feature level.
    pub map_sizes: Vec<[usize; 2]>,
    pub channels: usize,
    pub blob_amplitude: f64,
    pub blob_radius: f64,
    /// Standard deviation of detection center noise.
    pub center_jitter: f64,
    /// Detection scores are drawn uniformly from this range.
    pub score_range: [f64; 2],
    /// Expected false detections per true person.
    pub false_positive_rate: f64,
    /// Attempts at placing each group apart from earlier groups.
    pub max_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_scenes: 8,
            groups_per_scene: [1, 3],
            group_size: [2, 6],
            n_members: 12,
            n_classes: 4,
            spread: 0.25,
            box_size: [0.04, 0.1],
            map_sizes: vec![[16, 16], [8, 8]],
            channels: 8,
            blob_amplitude: 1.0,
            blob_radius: 0.05,
            center_jitter: 0.005,
            score_range: [0.5, 1.0],
            false_positive_rate: 0.1,
            max_retries: 100,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |field: &str, r: [usize; 2], min: usize| {
            if r[0] < min || r[0] > r[1] {
                return Err(Error::invalid(field, format!("{r:?} must be non-empty with minimum >= {min}")));
            }
            Ok(())
        };
        range("groups_per_scene", self.groups_per_scene, 0)?;
        range("group_size", self.group_size, 1)?;
        if self.group_size[1] > self.n_members {
            return Err(Error::invalid(
                "group_size",
                format!("maximum {} exceeds n_members {}", self.group_size[1], self.n_members),
            ));
        }
        if self.n_classes == 0 || self.channels == 0 {
            return Err(Error::invalid("n_classes/channels", "must be positive"));
        }
        if self.map_sizes.is_empty() || self.map_sizes.iter().any(|s| s[0] < 2 || s[1] < 2) {
            return Err(Error::invalid("map_sizes", "need at least one level, each at least 2x2"));
        }
        let nonneg = [
            ("spread", self.spread),
            ("blob_amplitude", self.blob_amplitude),
            ("center_jitter", self.center_jitter),
        ];
        for (field, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(field, "must be finite and >= 0"));
            }
        }
        if self.blob_radius <= 0.0 || !self.blob_radius.is_finite() {
            return Err(Error::invalid("blob_radius", "must be positive"));
        }
        if self.box_size.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
            return Err(Error::invalid("box_size", "sides must lie in (0, 1)"));
        }
        let [lo, hi] = self.score_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid("score_range", "need 0 <= lo <= hi <= 1"));
        }
        if !(0.0..=1.0).contains(&self.false_positive_rate) {
            return Err(Error::invalid("false_positive_rate", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn f32r(v: f64) -> f64 {
    v as f32 as f64
}

fn box_at(c: Point, size: [f64; 2]) -> BoxXyxy {
    [
        f32r(c[0] - size[0] / 2.0),
        f32r(c[1] - size[1] / 2.0),
        f32r(c[0] + size[0] / 2.0),
        f32r(c[1] + size[1] / 2.0),
    ]
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Largest pairwise distance between the group's member points.
pub fn max_member_distance(g: &GroundTruthGroup) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in g.member_points.iter().enumerate() {
        for b in &g.member_points[i + 1..] {
            d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
    }
    d
}

/// Scene `index` of the corpus described by `cfg`.
pub fn generate_scene(cfg: &SynthConfig, index: usize) -> Result<(SceneGroundTruth, FeatureMapSet<f64>)> {
    cfg.validate()?;
    let mut rng = substream(cfg.seed, index as u64);
    let half = [cfg.box_size[0] / 2.0, cfg.box_size[1] / 2.0];
    // Members lie within spread/2 of the anchor (minus a margin that absorbs
    // f32 rounding), so any two are at most `spread` apart.
    let radius = (cfg.spread / 2.0 - 1e-6).max(0.0);
    let lo = [half[0] + radius, half[1] + radius];
    let hi = [1.0 - half[0] - radius, 1.0 - half[1] - radius];
    if lo[0] > hi[0] || lo[1] > hi[1] {
        return Err(Error::Infeasible(format!(
            "spread {} with box {:?} does not fit in the unit square",
            cfg.spread, cfg.box_size
        )));
    }
    let n_groups = rng.random_range(cfg.groups_per_scene[0]..=cfg.groups_per_scene[1]);
    let mut anchors: Vec<Point> = Vec::with_capacity(n_groups);
    let mut groups = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let mut placed = None;
        for _ in 0..=cfg.max_retries {
            let a = [uniform(&mut rng, lo[0], hi[0]), uniform(&mut rng, lo[1], hi[1])];
            let clear = anchors
                .iter()
                .all(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() > 2.0 * radius);
            if clear {
                placed = Some(a);
                break;
            }
        }
        let Some(anchor) = placed else {
            return Err(Error::Infeasible(format!(
                "could not place group {} apart from the others after {} retries",
                anchors.len(),
                cfg.max_retries
            )));
        };
        anchors.push(anchor);
        let size = rng.random_range(cfg.group_size[0]..=cfg.group_size[1]);
        let mut boxes: Vec<BoxXyxy> = (0..size)
            .map(|_| {
                let r = radius * rng.random::<f64>().sqrt();
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                box_at([anchor[0] + r * t.cos(), anchor[1] + r * t.sin()], cfg.box_size)
            })
            .collect();
        let mut points: Vec<Point> = boxes.iter().map(|b| box_center(b).map(f32r)).collect();
        sort_members(&mut points, &mut boxes);
        let mut activity = vec![0u8; cfg.n_classes];
        activity[rng.random_range(0..cfg.n_classes)] = 1;
        groups.push(GroundTruthGroup {
            activity,
            size,
            member_points: points,
            member_boxes: boxes,
        });
    }

    let jitter = Normal::new(0.0, cfg.center_jitter).map_err(|e| Error::invalid("center_jitter", e.to_string()))?;
    let clamp_center = |c: Point| {
        [
            c[0].clamp(half[0] + 1e-6, 1.0 - half[0] - 1e-6),
            c[1].clamp(half[1] + 1e-6, 1.0 - half[1] - 1e-6),
        ]
    };
    let mut individuals = Vec::new();
    for g in &groups {
        for b in &g.member_boxes {
            let bbox = if cfg.center_jitter == 0.0 {
                *b
            } else {
                let c = box_center(b);
                let c = [c[0] + jitter.sample(&mut rng), c[1] + jitter.sample(&mut rng)];
                box_at(clamp_center(c), cfg.box_size)
            };
            let score = f32r(uniform(&mut rng, cfg.score_range[0], cfg.score_range[1]));
            individuals.push(Individual { bbox, score });
            if rng.random_bool(cfg.false_positive_rate) {
                let c = [uniform(&mut rng, half[0], 1.0 - half[0]), uniform(&mut rng, half[1], 1.0 - half[1])];
                let score = f32r(uniform(&mut rng, 0.0, cfg.score_range[0]));
                individuals.push(Individual {
                    bbox: box_at(clamp_center(c), cfg.box_size),
                    score,
                });
            }
        }
    }
    individuals.shuffle(&mut rng);

    let people: Vec<(Point, Vec<f64>)> = groups
        .iter()
        .flat_map(|g| g.member_points.iter().copied())
        .map(|p| (p, (0..cfg.channels).map(|_| rng.random_range(0.5..1.0)).collect()))
        .collect();
    let two_r2 = 2.0 * cfg.blob_radius * cfg.blob_radius;
    let levels = cfg
        .map_sizes
        .iter()
        .map(|&[h, w]| {
            let mut weights = vec![0.0; people.len() * h * w];
            for (k, (p, _)) in people.iter().enumerate() {
                for y in 0..h {
                    for x in 0..w {
                        let dx = (x as f64 + 0.5) / w as f64 - p[0];
                        let dy = (y as f64 + 0.5) / h as f64 - p[1];
                        weights[(k * h + y) * w + x] = (-(dx * dx + dy * dy) / two_r2).exp();
                    }
                }
            }
            FeatureMap::from_fn(cfg.channels, h, w, |c, y, x| {
                let v: f64 = people
                    .iter()
                    .enumerate()
                    .map(|(k, (_, sig))| sig[c] * weights[(k * h + y) * w + x])
                    .sum();
                f32r(cfg.blob_amplitude * v)
            })
        })
        .collect();
    let scene = SceneGroundTruth {
        image_id: format!("synth-{:06}", index),
        groups,
        individuals,
    };
    scene.validate(cfg.n_members)?;
    Ok((scene, FeatureMapSet::new(levels)?))
}

/// Every scene of the corpus, in index order.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<(SceneGroundTruth, FeatureMapSet<f64>)>> {
    (0..cfg.n_scenes)
        .into_par_iter()
        .map(|i| generate_scene(cfg, i))
        .collect()
}

/// Uniformly random predictions for `image_id`: probabilities, sizes and
/// points in `[margin, 1 − margin]`, rounded through `f32`.
pub fn random_predictions(
    seed: u64,
    index: usize,
    image_id: &str,
    n_groups: usize,
    n_members: usize,
    n_classes: usize,
    margin: f64,
) -> PredictionSet {
    let mut rng = substream(seed ^ 0x5052_4544, index as u64);
    let mut u = || f32r(uniform(&mut rng, margin, 1.0 - margin));
    PredictionSet {
        image_id: image_id.to_string(),
        predictions: (0..n_groups)
            .map(|_| GroupPrediction {
                activity_probs: (0..n_classes).map(|_| u()).collect(),
                size: u(),
                member_points: (0..n_members).map(|_| [u(), u()]).collect(),
            })
            .collect(),
    }
}

/// Running count and metric sum of one sweep cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SweepCell {
    pub count: usize,
    pub sum: f64,
}

impl SweepCell {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Groups binned by size and by maximum member distance. Distance bin `b`
/// covers `(edges[b-1], edges[b]]`, the first bin starts at 0 inclusive and
/// a final bin holds everything above the last edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub edges: Vec<f64>,
    pub cells: BTreeMap<(usize, usize), SweepCell>,
}

impl SweepTable {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("edges", "must be finite and strictly increasing"));
        }
        Ok(Self {
            edges,
            cells: BTreeMap::new(),
        })
    }

    pub fn distance_bin(&self, d: f64) -> usize {
        self.edges.partition_point(|&e| e < d)
    }

    pub fn add(&mut self, size: usize, distance: f64, value: f64) {
        let cell = self.cells.entry((size, self.distance_bin(distance))).or_default();
        cell.count += 1;
        cell.sum += value;
    }

    pub fn count(&self, size: usize, bin: usize) -> usize {
        self.cells.get(&(size, bin)).map_or(0, |c| c.count)
    }
}

/// Default distance edges for [`sweep_bins`].
pub const DEFAULT_DISTANCE_EDGES: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

/// Bin every ground-truth group; `metric(scene, group)` supplies the value
/// aggregated per cell.
pub fn sweep_bins_with(
    scenes: &[SceneGroundTruth],
    edges: &[f64],
    mut metric: impl FnMut(usize, usize) -> f64,
) -> Result<SweepTable> {
    if scenes.is_empty() {
        return Err(Error::invalid("scenes", "no scenes to bin"));
    }
    let mut t = SweepTable::new(edges.to_vec())?;
    for (s, scene) in scenes.iter().enumerate() {
        for (gi, g) in scene.groups.iter().enumerate() {
            t.add(g.size, max_member_distance(g), metric(s, gi));
        }
    }
    Ok(t)
}

/// Group counts per (size, distance) cell.
pub fn sweep_bins(scenes: &[SceneGroundTruth], edges: &[f64]) -> Result<SweepTable> {
    sweep_bins_with(scenes, edges, |_, _| 0.0)
}
