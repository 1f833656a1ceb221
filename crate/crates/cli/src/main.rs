//! `sgar`: evaluate, benchmark and exercise the group-recognition pipeline.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid input.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sgar_core::bench::run_benchmark;
use sgar_core::converge::converge;
use sgar_core::decoder::Model;
use sgar_core::members::{identify_all, MemberAssignment};
use sgar_core::metrics::{evaluate, Protocol};
use sgar_core::scene::{
    load_predictions, load_scene, save_predictions, save_scene, PredictionSet,
    SceneGroundTruth,
};
use sgar_core::synth::generate_corpus;
use sgar_core::weights::{feature_maps_from_store, feature_maps_to_store, WeightStore};

use config::RunConfig;

/// Bad user input; maps to exit code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser, Debug)]
#[command(name = "sgar", version, about = "Social group activity recognition toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML or JSON run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scene-level parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file or directory; stdout when omitted and the command allows it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// volleyball | collective
    #[arg(long, global = true)]
    protocol: Option<Protocol>,
    /// previous | naive | inter-only | intra-inter | inter-intra (repeatable for benchmark)
    #[arg(long, global = true)]
    design: Vec<String>,
    #[arg(long, global = true)]
    n_groups: Option<usize>,
    #[arg(long, global = true)]
    n_members: Option<usize>,
    #[arg(long, global = true)]
    iou_thresh: Option<f64>,
    /// Embedding width; forward needs it to match the feature-map channels.
    #[arg(long, global = true)]
    d_model: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score prediction files against ground-truth scene files.
    Evaluate {
        /// Ground-truth scene file or directory.
        #[arg(long)]
        gt: PathBuf,
        /// Prediction file or directory.
        #[arg(long)]
        pred: PathBuf,
        /// Also write per-class rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Count a group correct on member IoU alone, ignoring size.
        #[arg(long)]
        relaxed_size: bool,
    },
    /// Self-attention score-pair counts and wall times per design.
    Benchmark {
        /// `N_grxN_id` pairs, e.g. `300x12`.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<String>,
        /// Timed runs per cell; 0 reports counts only.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Gradient descent on free predictions of a synthetic scene.
    Converge {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        lr: Option<f64>,
    },
    /// Run the decoder on feature-map manifests and write predictions.
    Forward {
        /// Feature-map manifest or a directory of them.
        #[arg(long)]
        maps: PathBuf,
        /// Weight manifest; when absent, seeded weights are saved under `<out>/weights/`.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Write a synthetic corpus of scenes and feature maps.
    Generate {
        #[arg(long)]
        n_scenes: Option<usize>,
    },
    /// Assign detected individuals to predicted groups.
    Identify {
        /// Scene file or directory holding the detections.
        #[arg(long)]
        scenes: PathBuf,
        /// Prediction file or directory.
        #[arg(long)]
        pred: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<sgar_core::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    let c = cli.common;
    let mut rc = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        rc.seed = s;
    }
    if let Some(w) = c.workers {
        rc.workers = Some(w);
    }
    if let Some(p) = c.protocol {
        rc.protocol = p;
    }
    if let Some(n) = c.n_groups {
        rc.n_groups = n;
        rc.converge.n_groups = n;
    }
    if let Some(n) = c.n_members {
        rc.n_members = n;
    }
    if let Some(t) = c.iou_thresh {
        rc.eval.iou_thresh = t;
    }
    if let Some(d) = c.d_model {
        rc.d_model = d;
    }
    match c.design.as_slice() {
        [] => {}
        [one] => rc.design = one.clone(),
        _ if matches!(cli.command, Command::Benchmark { .. }) => {}
        _ => return Err(Invalid("--design may be given once for this command".into()).into()),
    }
    if !c.design.is_empty() {
        rc.bench.designs = c.design.clone();
    }
    rc.propagate();
    if let Some(w) = rc.workers {
        if w == 0 {
            return Err(Invalid("--workers must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .context("building worker pool")?;
    }
    let out = c.out.as_deref();
    match cli.command {
        Command::Evaluate { gt, pred, csv, relaxed_size } => {
            if relaxed_size {
                rc.eval.exact_size = false;
            }
            cmd_evaluate(&rc, &gt, &pred, out, csv.as_deref())
        }
        Command::Benchmark { sizes, repeats } => {
            if !sizes.is_empty() {
                rc.bench.sizes = sizes.iter().map(|s| parse_size(s)).collect::<Result<_>>()?;
            } else if c.n_groups.is_some() || c.n_members.is_some() {
                rc.bench.sizes = vec![[rc.n_groups, rc.n_members]];
            }
            if let Some(r) = repeats {
                rc.bench.repeats = r;
            }
            if let Some(d) = c.d_model {
                rc.bench.d_model = d;
            }
            cmd_benchmark(&rc, out)
        }
        Command::Converge { steps, lr } => {
            if let Some(s) = steps {
                rc.converge.steps = s;
            }
            if let Some(l) = lr {
                rc.converge.lr = l;
            }
            let report = converge(&rc.converge)?;
            write_text(out, &to_json(&report)?)
        }
        Command::Forward { maps, weights } => cmd_forward(&rc, &maps, weights.as_deref(), out),
        Command::Generate { n_scenes } => {
            if let Some(n) = n_scenes {
                rc.synth.n_scenes = n;
            }
            cmd_generate(&rc, required_out(out)?)
        }
        Command::Identify { scenes, pred } => cmd_identify(&rc, &scenes, &pred, out),
    }
}

fn parse_size(s: &str) -> Result<[usize; 2]> {
    let bad = || Invalid(format!("size `{s}` must look like 300x12"));
    let (g, m) = s.split_once('x').ok_or_else(bad)?;
    Ok([g.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?])
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn required_out(out: Option<&Path>) -> Result<&Path> {
    out.ok_or_else(|| Invalid("--out <DIR> is required for this command".into()).into())
}

/// The file itself, or the sorted `.json` files of a directory.
fn json_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Invalid(format!("{} does not exist", path.display())).into());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"));
    files.sort();
    Ok(files)
}

fn load_scenes(path: &Path, n_members: usize) -> Result<BTreeMap<String, SceneGroundTruth>> {
    let loaded: Vec<SceneGroundTruth> = json_files(path)?
        .par_iter()
        .map(|p| load_scene(p, n_members))
        .collect::<sgar_core::Result<_>>()?;
    keyed(loaded.into_iter().map(|s| (s.image_id.clone(), s)), "ground truth")
}

fn load_prediction_sets(path: &Path) -> Result<BTreeMap<String, PredictionSet>> {
    let loaded: Vec<PredictionSet> = json_files(path)?
        .par_iter()
        .map(load_predictions)
        .collect::<sgar_core::Result<_>>()?;
    keyed(loaded.into_iter().map(|s| (s.image_id.clone(), s)), "predictions")
}

fn keyed<T>(items: impl Iterator<Item = (String, T)>, what: &str) -> Result<BTreeMap<String, T>> {
    let mut map = BTreeMap::new();
    for (id, v) in items {
        if map.insert(id.clone(), v).is_some() {
            return Err(Invalid(format!("duplicate image_id `{id}` in {what}")).into());
        }
    }
    Ok(map)
}

/// Pair scenes with predictions by image id; any unpaired id is an error.
fn pair_up(
    mut gt: BTreeMap<String, SceneGroundTruth>,
    mut pred: BTreeMap<String, PredictionSet>,
    require_all_gt: bool,
) -> Result<Vec<(SceneGroundTruth, PredictionSet)>> {
    let missing_pred: Vec<&String> = gt.keys().filter(|k| !pred.contains_key(*k)).collect();
    let missing_gt: Vec<&String> = pred.keys().filter(|k| !gt.contains_key(*k)).collect();
    let mut problems = Vec::new();
    if require_all_gt && !missing_pred.is_empty() {
        problems.push(format!("no predictions for image_id(s): {}", join(&missing_pred)));
    }
    if !missing_gt.is_empty() {
        problems.push(format!("no ground truth for image_id(s): {}", join(&missing_gt)));
    }
    if !problems.is_empty() {
        return Err(Invalid(problems.join("; ")).into());
    }
    let ids: Vec<String> = pred.keys().cloned().collect();
    if ids.is_empty() {
        return Err(Invalid("no scene/prediction pairs found".into()).into());
    }
    Ok(ids
        .into_iter()
        .map(|id| (gt.remove(&id).expect("paired"), pred.remove(&id).expect("paired")))
        .collect())
}

fn join(ids: &[&String]) -> String {
    ids.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
}

fn cmd_evaluate(rc: &RunConfig, gt: &Path, pred: &Path, out: Option<&Path>, csv_path: Option<&Path>) -> Result<()> {
    let pairs = pair_up(load_scenes(gt, rc.n_members)?, load_prediction_sets(pred)?, true)?;
    let report = evaluate(&pairs, rc.protocol, &rc.eval)?;
    if let Some(p) = csv_path {
        let mut w = csv::Writer::from_path(p).with_context(|| format!("writing {}", p.display()))?;
        for row in report.class_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    write_text(out, &to_json(&report)?)
}

fn cmd_benchmark(rc: &RunConfig, out: Option<&Path>) -> Result<()> {
    let rows = run_benchmark(&rc.bench)?;
    let json = to_json(&rows)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let mut w = csv::Writer::from_path(dir.join("benchmark.csv"))?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
            write_text(Some(&dir.join("benchmark.json")), &json)
        }
        None => write_text(None, &json),
    }
}

fn cmd_generate(rc: &RunConfig, out: &Path) -> Result<()> {
    let corpus = generate_corpus(&rc.synth)?;
    let scenes = out.join("scenes");
    let maps = out.join("maps");
    for d in [&scenes, &maps] {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    for (scene, fm) in &corpus {
        save_scene(scene, scenes.join(format!("{}.json", scene.image_id)))?;
        feature_maps_to_store(fm).save(maps.join(format!("{}.json", scene.image_id)))?;
    }
    write_text(Some(&out.join("synth.json")), &to_json(&rc.synth)?)
}

fn cmd_forward(rc: &RunConfig, maps: &Path, weights: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let out = required_out(out)?;
    let files = json_files(maps)?;
    if files.is_empty() {
        return Err(Invalid(format!("no feature-map manifests under {}", maps.display())).into());
    }
    let inputs: Vec<(String, sgar_core::tensor::FeatureMapSet<f32>)> = files
        .par_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((id, feature_maps_from_store(&WeightStore::load(p)?)?))
        })
        .collect::<sgar_core::Result<_>>()?;
    let n_levels = inputs[0].1.n_levels();
    if let Some((id, _)) = inputs.iter().find(|(_, m)| m.n_levels() != n_levels) {
        return Err(Invalid(format!("{id}: feature level count differs from {n_levels}")).into());
    }
    if let Some((id, m)) = inputs.iter().find(|(_, m)| m.channels() != rc.d_model) {
        return Err(Invalid(format!(
            "{id}: feature maps have {} channels but d_model is {}; pass --d-model {}",
            m.channels(),
            rc.d_model,
            m.channels()
        ))
        .into());
    }
    let cfg = rc.model_config(n_levels)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let model = match weights {
        Some(p) => Model::<f32>::from_store(cfg, &WeightStore::load(p)?)?,
        None => {
            let m = Model::<f32>::seeded(cfg, rc.seed)?;
            let dir = out.join("weights");
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            m.to_store().save(dir.join("model.json"))?;
            m
        }
    };
    let results: Vec<PredictionSet> = inputs
        .par_iter()
        .map(|(id, m)| Ok(model.forward(m)?.prediction_set(id)))
        .collect::<sgar_core::Result<_>>()?;
    for set in &results {
        save_predictions(set, out.join(format!("{}.json", set.image_id)))?;
    }
    log::info!("wrote {} prediction files to {}", results.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SceneAssignments {
    image_id: String,
    assignments: Vec<MemberAssignment>,
}

fn cmd_identify(rc: &RunConfig, scenes: &Path, pred: &Path, out: Option<&Path>) -> Result<()> {
    let pairs = pair_up(load_scenes(scenes, rc.n_members)?, load_prediction_sets(pred)?, false)?;
    let result: Vec<SceneAssignments> = pairs
        .par_iter()
        .map(|(s, p)| {
            Ok(SceneAssignments {
                image_id: s.image_id.clone(),
                assignments: identify_all(&p.predictions, &s.individuals, rc.n_members)?,
            })
        })
        .collect::<sgar_core::Result<_>>()?;
    write_text(out, &to_json(&result)?)
}
