//! Scene ground truth, individual detections and group predictions, with
//! their JSON file forms.
//!
//! Values are held as `f64` in memory and written as `f32` on disk; JSON
//! numbers use shortest round-trip formatting so a save/load cycle is
//! bit-exact for every value that originated from a file.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized `(x, y)` image coordinate.
pub type Point = [f64; 2];
/// Normalized `(x1, y1, x2, y2)` box.
pub type BoxXyxy = [f64; 4];

pub fn box_center(b: &BoxXyxy) -> Point {
    [(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGroup {
    /// Multi-hot activity label.
    pub activity: Vec<u8>,
    /// Member count.
    pub size: usize,
    /// Member box centers, ascending by x then y.
    pub member_points: Vec<Point>,
    pub member_boxes: Vec<BoxXyxy>,
}

impl GroundTruthGroup {
    /// Size normalized by the member capacity of a group query.
    pub fn normalized_size(&self, n_members: usize) -> f64 {
        self.size as f64 / n_members as f64
    }

    pub fn has_class(&self, class: usize) -> bool {
        self.activity.get(class).is_some_and(|&v| v == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Individual {
    pub bbox: BoxXyxy,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGroundTruth {
    pub image_id: String,
    pub groups: Vec<GroundTruthGroup>,
    pub individuals: Vec<Individual>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupPrediction {
    pub activity_probs: Vec<f64>,
    pub size: f64,
    pub member_points: Vec<Point>,
}

impl GroupPrediction {
    /// `(class, probability)` of the most probable activity; lowest class wins ties.
    pub fn top_class(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (c, &p) in self.activity_probs.iter().enumerate() {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((c, p));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub image_id: String,
    pub predictions: Vec<GroupPrediction>,
}

impl PredictionSet {
    /// Index of the prediction holding the single highest activity
    /// probability in the set; earliest prediction wins ties.
    pub fn top_prediction(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.predictions.iter().enumerate() {
            if let Some((_, prob)) = p.top_class() {
                if best.is_none_or(|(_, bp)| prob > bp) {
                    best = Some((i, prob));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Total order on points: x ascending, ties by y ascending.
pub fn point_order(a: &Point, b: &Point) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Stable sort of member points by `(x, y)`.
pub fn sort_member_points(points: &[Point]) -> Vec<Point> {
    let mut out = points.to_vec();
    out.sort_by(point_order);
    out
}

/// Sort member points and apply the same permutation to the paired boxes.
pub fn sort_members(points: &mut Vec<Point>, boxes: &mut Vec<BoxXyxy>) {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| point_order(&points[a], &points[b]));
    *points = idx.iter().map(|&i| points[i]).collect();
    if boxes.len() == idx.len() {
        *boxes = idx.iter().map(|&i| boxes[i]).collect();
    }
}

fn is_sorted(points: &[Point]) -> bool {
    points
        .windows(2)
        .all(|w| point_order(&w[0], &w[1]) != Ordering::Greater)
}

fn check_unit(field: &str, v: f64) -> Result<()> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(field, format!("{v} is outside [0, 1]")));
    }
    Ok(())
}

pub(crate) fn check_box(field: &str, b: &BoxXyxy) -> Result<()> {
    for &v in b {
        check_unit(field, v)?;
    }
    if b[0] >= b[2] || b[1] >= b[3] {
        return Err(Error::invalid(
            field,
            format!("degenerate box {b:?} (need x1 < x2 and y1 < y2)"),
        ));
    }
    Ok(())
}

impl SceneGroundTruth {
    /// Check every type invariant. `n_members` bounds group sizes.
    pub fn validate(&self, n_members: usize) -> Result<()> {
        let n_classes = self.groups.first().map(|g| g.activity.len());
        for (gi, g) in self.groups.iter().enumerate() {
            let f = |name: &str| format!("groups[{gi}].{name}");
            if Some(g.activity.len()) != n_classes || g.activity.is_empty() {
                return Err(Error::invalid(f("activity"), "inconsistent or empty label length"));
            }
            if g.activity.iter().any(|&v| v > 1) {
                return Err(Error::invalid(f("activity"), "entries must be 0 or 1"));
            }
            if g.size == 0 {
                return Err(Error::invalid(f("size"), "group size must be at least 1"));
            }
            if g.size > n_members {
                return Err(Error::invalid(
                    f("size"),
                    format!("size {} exceeds member capacity {n_members}", g.size),
                ));
            }
            if g.member_points.len() != g.size {
                return Err(Error::invalid(
                    f("member_points"),
                    format!("{} points for size {}", g.member_points.len(), g.size),
                ));
            }
            if g.member_boxes.len() != g.size {
                return Err(Error::invalid(
                    f("member_boxes"),
                    format!("{} boxes for size {}", g.member_boxes.len(), g.size),
                ));
            }
            for (k, p) in g.member_points.iter().enumerate() {
                check_unit(&format!("groups[{gi}].member_points[{k}]"), p[0])?;
                check_unit(&format!("groups[{gi}].member_points[{k}]"), p[1])?;
            }
            for (k, b) in g.member_boxes.iter().enumerate() {
                check_box(&format!("groups[{gi}].member_boxes[{k}]"), b)?;
            }
            if !is_sorted(&g.member_points) {
                return Err(Error::invalid(f("member_points"), "not sorted by (x, y)"));
            }
        }
        for (i, ind) in self.individuals.iter().enumerate() {
            check_box(&format!("individuals[{i}].box"), &ind.bbox)?;
            check_unit(&format!("individuals[{i}].score"), ind.score)?;
        }
        Ok(())
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.groups.first().map(|g| g.activity.len())
    }
}

impl PredictionSet {
    pub fn validate(&self, n_members: Option<usize>) -> Result<()> {
        let n_classes = self.predictions.first().map(|p| p.activity_probs.len());
        let n_members = n_members.or(self.predictions.first().map(|p| p.member_points.len()));
        for (i, p) in self.predictions.iter().enumerate() {
            if Some(p.activity_probs.len()) != n_classes {
                return Err(Error::invalid(
                    format!("predictions[{i}].activity_probs"),
                    "inconsistent length",
                ));
            }
            for &v in &p.activity_probs {
                check_unit(&format!("predictions[{i}].activity_probs"), v)?;
            }
            check_unit(&format!("predictions[{i}].size"), p.size)?;
            if Some(p.member_points.len()) != n_members {
                return Err(Error::invalid(
                    format!("predictions[{i}].member_points"),
                    format!(
                        "expected {} points, got {}",
                        n_members.unwrap_or(0),
                        p.member_points.len()
                    ),
                ));
            }
            for pt in &p.member_points {
                check_unit(&format!("predictions[{i}].member_points"), pt[0])?;
                check_unit(&format!("predictions[{i}].member_points"), pt[1])?;
            }
        }
        Ok(())
    }

    pub fn n_members(&self) -> Option<usize> {
        self.predictions.first().map(|p| p.member_points.len())
    }
}

// On-disk forms.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupFile {
    activity: Vec<u8>,
    size: usize,
    member_points: Vec<[f32; 2]>,
    member_boxes: Vec<[f32; 4]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndividualFile {
    #[serde(rename = "box")]
    bbox: [f32; 4],
    score: f32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    image_id: String,
    groups: Vec<GroupFile>,
    #[serde(default)]
    individuals: Vec<IndividualFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionFile {
    activity_probs: Vec<f32>,
    size: f32,
    member_points: Vec<[f32; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionSetFile {
    image_id: String,
    predictions: Vec<PredictionFile>,
}

fn widen<const N: usize>(a: [f32; N]) -> [f64; N] {
    a.map(f64::from)
}

fn narrow<const N: usize>(a: [f64; N]) -> [f32; N] {
    a.map(|v| v as f32)
}

impl From<SceneFile> for SceneGroundTruth {
    fn from(f: SceneFile) -> Self {
        SceneGroundTruth {
            image_id: f.image_id,
            groups: f
                .groups
                .into_iter()
                .map(|g| GroundTruthGroup {
                    activity: g.activity,
                    size: g.size,
                    member_points: g.member_points.into_iter().map(widen).collect(),
                    member_boxes: g.member_boxes.into_iter().map(widen).collect(),
                })
                .collect(),
            individuals: f
                .individuals
                .into_iter()
                .map(|i| Individual {
                    bbox: widen(i.bbox),
                    score: f64::from(i.score),
                })
                .collect(),
        }
    }
}

impl From<&SceneGroundTruth> for SceneFile {
    fn from(s: &SceneGroundTruth) -> Self {
        SceneFile {
            image_id: s.image_id.clone(),
            groups: s
                .groups
                .iter()
                .map(|g| GroupFile {
                    activity: g.activity.clone(),
                    size: g.size,
                    member_points: g.member_points.iter().copied().map(narrow).collect(),
                    member_boxes: g.member_boxes.iter().copied().map(narrow).collect(),
                })
                .collect(),
            individuals: s
                .individuals
                .iter()
                .map(|i| IndividualFile {
                    bbox: narrow(i.bbox),
                    score: i.score as f32,
                })
                .collect(),
        }
    }
}

impl From<PredictionSetFile> for PredictionSet {
    fn from(f: PredictionSetFile) -> Self {
        PredictionSet {
            image_id: f.image_id,
            predictions: f
                .predictions
                .into_iter()
                .map(|p| GroupPrediction {
                    activity_probs: p.activity_probs.into_iter().map(f64::from).collect(),
                    size: f64::from(p.size),
                    member_points: p.member_points.into_iter().map(widen).collect(),
                })
                .collect(),
        }
    }
}

impl From<&PredictionSet> for PredictionSetFile {
    fn from(s: &PredictionSet) -> Self {
        PredictionSetFile {
            image_id: s.image_id.clone(),
            predictions: s
                .predictions
                .iter()
                .map(|p| PredictionFile {
                    activity_probs: p.activity_probs.iter().map(|&v| v as f32).collect(),
                    size: p.size as f32,
                    member_points: p.member_points.iter().copied().map(narrow).collect(),
                })
                .collect(),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse a scene from JSON text. Unsorted member points are sorted (boxes
/// follow) with a warning; all other invariant violations are errors.
pub fn parse_scene(text: &str, n_members: usize) -> Result<SceneGroundTruth> {
    let file: SceneFile = serde_json::from_str(text).map_err(|source| Error::Json {
        path: "<scene>".into(),
        source,
    })?;
    finish_scene(file.into(), n_members)
}

fn finish_scene(mut scene: SceneGroundTruth, n_members: usize) -> Result<SceneGroundTruth> {
    for (gi, g) in scene.groups.iter_mut().enumerate() {
        if !is_sorted(&g.member_points) {
            log::warn!(
                "scene {}: groups[{gi}].member_points not sorted by x; sorting",
                scene.image_id
            );
            sort_members(&mut g.member_points, &mut g.member_boxes);
        }
    }
    scene.validate(n_members)?;
    Ok(scene)
}

pub fn load_scene(path: impl AsRef<Path>, n_members: usize) -> Result<SceneGroundTruth> {
    let path = path.as_ref();
    let file: SceneFile = read_json(path)?;
    finish_scene(file.into(), n_members).map_err(|e| match e {
        Error::Invalid { field, reason } => Error::Invalid {
            field: format!("{}: {field}", path.display()),
            reason,
        },
        e => e,
    })
}

pub fn save_scene(scene: &SceneGroundTruth, path: impl AsRef<Path>) -> Result<()> {
    write_json(&SceneFile::from(scene), path.as_ref())
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let file: PredictionSetFile = read_json(path)?;
    let set = PredictionSet::from(file);
    set.validate(None).map_err(|e| match e {
        Error::Invalid { field, reason } => Error::Invalid {
            field: format!("{}: {field}", path.display()),
            reason,
        },
        e => e,
    })?;
    Ok(set)
}

pub fn save_predictions(set: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    write_json(&PredictionSetFile::from(set), path.as_ref())
}

pub fn predictions_to_json(set: &PredictionSet) -> String {
    serde_json::to_string_pretty(&PredictionSetFile::from(set)).expect("serializable")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_group_scene() -> SceneGroundTruth {
        SceneGroundTruth {
            image_id: "frame_0001".into(),
            groups: vec![
                GroundTruthGroup {
                    activity: vec![0, 1, 0],
                    size: 2,
                    member_points: vec![[0.2, 0.5], [0.4, 0.5]],
                    member_boxes: vec![[0.15, 0.4, 0.25, 0.6], [0.35, 0.4, 0.45, 0.6]],
                },
                GroundTruthGroup {
                    activity: vec![1, 0, 0],
                    size: 1,
                    member_points: vec![[0.8, 0.25]],
                    member_boxes: vec![[0.75, 0.125, 0.85, 0.375]],
                },
            ],
            individuals: vec![
                Individual {
                    bbox: [0.15, 0.4, 0.25, 0.6],
                    score: 0.875,
                },
                Individual {
                    bbox: [0.75, 0.125, 0.85, 0.375],
                    score: 0.5,
                },
            ],
        }
    }

    #[test]
    fn scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        let scene = two_group_scene();
        save_scene(&scene, &path).unwrap();
        let back = load_scene(&path, 12).unwrap();
        // Every value above is exactly representable in f32.
        let narrowed = SceneGroundTruth::from(SceneFile::from(&scene));
        assert_eq!(back, narrowed);
        assert_eq!(back.groups.len(), 2);
    }

    #[test]
    fn unsorted_points_are_sorted_with_boxes() {
        let text = r#"{"image_id":"a","groups":[{"activity":[1],"size":2,
            "member_points":[[0.6,0.1],[0.2,0.9]],
            "member_boxes":[[0.5,0.0,0.7,0.2],[0.1,0.8,0.3,1.0]]}],"individuals":[]}"#;
        let s = parse_scene(text, 12).unwrap();
        let g = &s.groups[0];
        assert_eq!(g.member_points[0], [0.2f32 as f64, 0.9f32 as f64]);
        assert_eq!(g.member_boxes[0][0], 0.1f32 as f64);
    }

    #[test]
    fn degenerate_box_names_field() {
        let text = r#"{"image_id":"a","groups":[],"individuals":[{"box":[0.3,0.1,0.3,0.2],"score":0.5}]}"#;
        let err = parse_scene(text, 12).unwrap_err().to_string();
        assert!(err.contains("individuals[0].box"), "{err}");
    }

    #[test]
    fn oversize_group_is_rejected() {
        let mut s = two_group_scene();
        s.groups[0].size = 13;
        s.groups[0].member_points = vec![[0.5, 0.5]; 13];
        s.groups[0].member_boxes = vec![[0.4, 0.4, 0.6, 0.6]; 13];
        assert!(s.validate(12).unwrap_err().to_string().contains("capacity"));
    }

    #[test]
    fn out_of_range_and_schema_errors() {
        let text = r#"{"image_id":"a","groups":[{"activity":[1],"size":1,
            "member_points":[[1.5,0.1]],"member_boxes":[[0.1,0.1,0.2,0.2]]}]}"#;
        let err = parse_scene(text, 12).unwrap_err().to_string();
        assert!(err.contains("member_points[0]"), "{err}");
        let text = r#"{"image_id":"a","groups":[{"activity":[1],"member_points":[],"member_boxes":[]}]}"#;
        assert!(parse_scene(text, 12).unwrap_err().to_string().contains("size"));
    }

    #[test]
    fn sort_examples() {
        assert_eq!(
            sort_member_points(&[[0.6, 0.1], [0.2, 0.9]]),
            vec![[0.2, 0.9], [0.6, 0.1]]
        );
        assert_eq!(
            sort_member_points(&[[0.5, 0.8], [0.5, 0.2]]),
            vec![[0.5, 0.2], [0.5, 0.8]]
        );
        let sorted = vec![[0.1, 0.1], [0.2, 0.0], [0.3, 0.5]];
        assert_eq!(sort_member_points(&sorted), sorted);
    }

    #[test]
    fn prediction_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.json");
        let set = PredictionSet {
            image_id: "x".into(),
            predictions: vec![GroupPrediction {
                activity_probs: vec![0.1f32 as f64, 0.7f32 as f64],
                size: (1.0f32 / 3.0) as f64,
                member_points: vec![[0.25, 0.5], [0.125, 0.75]],
            }],
        };
        save_predictions(&set, &path).unwrap();
        assert_eq!(load_predictions(&path).unwrap(), set);

        let mut bad = set.clone();
        bad.predictions[0].size = 1.5;
        assert!(bad.validate(None).is_err());
    }

    #[test]
    fn top_prediction_picks_global_max() {
        let p = |probs: Vec<f64>| GroupPrediction {
            activity_probs: probs,
            size: 0.0,
            member_points: vec![],
        };
        let set = PredictionSet {
            image_id: "x".into(),
            predictions: vec![p(vec![0.2, 0.6]), p(vec![0.9, 0.1]), p(vec![0.9, 0.0])],
        };
        assert_eq!(set.top_prediction(), Some(1));
        assert_eq!(set.predictions[1].top_class(), Some((0, 0.9)));
    }
}
