//! Command implementations behind the `tgt` binary.
//!
//! Every artifact-producing command writes a `manifest.json` next to its
//! outputs. Artifacts are pure functions of the manifest inputs; only the
//! `timings` block of the manifest itself varies between reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use tgt::condition::{ConditionMode, ConditionSequence};
use tgt::config::ConditionConfig;
use tgt::dataset::{load_split, read_example, read_splits, Example, SPLITS_FILE};
use tgt::decoder::DecodeOptions;
use tgt::metrics::{evaluate, random_baseline_report, render_table, MetricsReport, Prediction};
use tgt::numerics::GradCheckConfig;
use tgt::shotcore::{read_sequence, SequenceRole};
use tgt::synthdata::write_dataset;
use tgt::training::{Checkpoint, RunConfig, StepLog, Trainer};
use tgt::verify::gradcheck_suite;
use tgt::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.tgt";
pub const LOSS_LOG_FILE: &str = "losses.csv";
pub const CONFIG_ENV: &str = "TGT_CONFIG";

/// Exit status for a failed command: 3 for numerical failures, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Hex digest over the inputs, see [`content_hash`].
    pub input_hash: String,
    /// Outputs, relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub timings: Vec<Timing>,
}

impl RunManifest {
    fn new(command: &str, config: &impl Serialize, seed: u64, input_hash: String) -> Result<Self> {
        Ok(RunManifest {
            command: command.into(),
            config: serde_json::to_value(config)?,
            seed,
            input_hash,
            outputs: vec![],
            timings: vec![],
        })
    }

    fn time(&mut self, phase: &str, since: Instant) {
        self.timings.push(Timing { phase: phase.into(), seconds: since.elapsed().as_secs_f64() });
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn blob_digest(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().into()
}

fn collect_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root) {
        let entry = entry.map_err(|e| Error::Io { path: root.display().to_string(), source: e.into() })?;
        if entry.file_type().is_file() && entry.file_name() != MANIFEST_FILE {
            out.push(entry.path().strip_prefix(root).unwrap_or(entry.path()).to_path_buf());
        }
    }
    Ok(out)
}

/// Git-style tree hash: each file is hashed as a blob and the sorted
/// `(relative path, blob hash)` list is hashed again. Directories are walked
/// recursively, skipping manifests; a `None` entry stands for "no input".
pub fn content_hash(inputs: &[Option<&Path>]) -> Result<String> {
    let mut tree = Sha256::new();
    for input in inputs {
        let Some(path) = input else {
            tree.update(b"none\0");
            continue;
        };
        let mut files = if path.is_dir() { collect_files(path)? } else { vec![PathBuf::new()] };
        files.sort();
        for rel in files {
            let full = if rel.as_os_str().is_empty() { path.to_path_buf() } else { path.join(&rel) };
            let bytes = fs::read(&full).map_err(|e| io_error(&full, e))?;
            tree.update(rel.to_string_lossy().as_bytes());
            tree.update([0]);
            tree.update(blob_digest(&bytes));
        }
    }
    Ok(hex::encode(tree.finalize()))
}

/// Config file given explicitly, else the `TGT_CONFIG` path, else defaults.
pub fn load_config(path: Option<&Path>) -> Result<(RunConfig, Option<PathBuf>)> {
    let path = path.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    match path {
        Some(p) => Ok((RunConfig::load(&p)?, Some(p))),
        None => Ok((RunConfig::default(), None)),
    }
}

pub struct GenDataArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub count: usize,
    pub seed: Option<u64>,
    pub condition: bool,
}

pub fn gen_data(args: &GenDataArgs) -> Result<RunManifest> {
    let start = Instant::now();
    let (mut cfg, cfg_path) = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.data.seed = s;
    }
    cfg.data.condition |= args.condition;
    cfg.data.validate()?;
    let hash = content_hash(&[cfg_path.as_deref()])?;
    let mut manifest = RunManifest::new("gen-data", &serde_json::json!({ "data": cfg.data, "count": args.count }), cfg.data.seed, hash)?;
    if args.out.join(SPLITS_FILE).exists() {
        return Err(Error::Argument(format!("{} already holds a dataset", args.out.display())));
    }
    let splits = write_dataset(&args.out, &cfg.data, args.count)?;
    manifest.outputs = vec![SPLITS_FILE.into(), "generator.json".into(), "pairs/".into()];
    manifest.time("generate", start);
    eprintln!("{} pairs: {} train, {} val, {} test", args.count, splits.train.len(), splits.val.len(), splits.test.len());
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub no_trailerness_encoder: bool,
    pub no_context_encoder: bool,
    pub condition_mode: Option<ConditionMode>,
    /// Stop after this many optimizer steps (the schedule still spans the full budget).
    pub until: Option<u64>,
}

/// An unconditioned model ignores any condition vectors shipped with the data.
fn prepare_examples(mut examples: Vec<Example>, conditioned: bool) -> Vec<Example> {
    if !conditioned {
        for ex in &mut examples {
            ex.condition = None;
        }
    }
    examples
}

fn condition_dim(examples: &[Example]) -> Result<usize> {
    let dims: Vec<usize> = examples.iter().filter_map(|e| e.condition.as_ref().map(|c| c.dim)).collect();
    match dims.first() {
        Some(&d) if dims.iter().all(|&x| x == d) => Ok(d),
        Some(_) => Err(Error::Format("condition widths differ between pairs".into())),
        None => Err(Error::Argument("conditioning requested but the data carries no condition vectors".into())),
    }
}

fn loss_row(l: &StepLog) -> String {
    format!("{},{},{},{},{},{}\n", l.step, l.lr, l.loss.l_t, l.loss.l_rec, l.loss.l_kl, l.loss.total)
}

const LOSS_HEADER: &str = "step,lr,l_t,l_rec,l_kl,total\n";

/// Rows of an existing loss log up to and including `step`.
fn loss_log_prefix(path: &Path, step: u64) -> Result<String> {
    let mut out = String::from(LOSS_HEADER);
    if step == 0 || !path.exists() {
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    for line in text.lines().skip(1) {
        let s: u64 = line.split(',').next().and_then(|v| v.parse().ok()).ok_or_else(|| Error::Format(format!("bad loss log line {line:?}")))?;
        if s <= step {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn train(args: &TrainArgs) -> Result<RunManifest> {
    let start = Instant::now();
    let (splits, examples) = load_split(&args.data, "train")?;
    if examples.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let (mut trainer, cfg_path) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.split_fingerprint != splits.fingerprint() {
                return Err(Error::Argument("checkpoint was trained on a different split".into()));
            }
            (Trainer::from_checkpoint(&ck)?, None)
        }
        None => {
            let (mut cfg, cfg_path) = load_config(args.config.as_deref())?;
            let t = &mut cfg.train;
            t.lr_peak = args.lr.unwrap_or(t.lr_peak);
            t.epochs = args.epochs.unwrap_or(t.epochs);
            t.total_steps = args.steps.or(t.total_steps);
            t.batch_size = args.batch_size.unwrap_or(t.batch_size);
            t.seed = args.seed.unwrap_or(t.seed);
            let m = &mut cfg.model;
            m.trailerness_encoder &= !args.no_trailerness_encoder;
            m.context_encoder &= !args.no_context_encoder;
            if let Some(mode) = args.condition_mode {
                m.condition = Some(ConditionConfig { mode, dim: condition_dim(&examples)? });
            }
            let mut t = Trainer::new(cfg.model, cfg.train)?;
            t.split_fingerprint = splits.fingerprint();
            (t, cfg_path)
        }
    };
    let examples = prepare_examples(examples, trainer.model.config.condition.is_some());
    let hash = content_hash(&[cfg_path.as_deref(), Some(&args.data), args.resume.as_deref()])?;
    let config = serde_json::json!({ "model": trainer.model.config, "train": trainer.config });
    let mut manifest = RunManifest::new("train", &config, trainer.config.seed, hash)?;

    let log_path = args.out.join(LOSS_LOG_FILE);
    let mut log = loss_log_prefix(&log_path, trainer.step)?;
    let total = trainer.total_steps(examples.len());
    let outcome = trainer.run(&examples, args.until, |l| {
        log.push_str(&loss_row(l));
        if l.step % 50 == 0 || l.step as usize == total {
            eprintln!("step {}/{total} lr {:.3e} loss {:.5}", l.step, l.lr, l.loss.total);
        }
    });
    // the parameters are untouched by a failed step, so this is the last good state
    trainer.checkpoint().save(&args.out.join(CHECKPOINT_FILE))?;
    write_file(&log_path, log.as_bytes())?;
    manifest.outputs = vec![CHECKPOINT_FILE.into(), LOSS_LOG_FILE.into()];
    manifest.time("train", start);
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    outcome.map(|_| manifest)
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: String,
    pub ks: Vec<usize>,
    pub out: PathBuf,
    pub baseline_trials: usize,
    pub baseline_seed: u64,
    /// Test hook: score the ground truth itself instead of decoding.
    pub oracle: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub checkpoint_step: u64,
    pub model: MetricsReport,
    pub random: MetricsReport,
}

fn oracle_prediction(ex: &Example) -> Result<Prediction> {
    let (gt, _) = tgt::metrics::align_gt(&ex.trailer, &ex.movie)?;
    let indices: Vec<usize> = gt.iter().flatten().copied().collect();
    let candidates = indices.iter().map(|&i| vec![i]).collect();
    Ok(Prediction { indices, candidates: Some(candidates) })
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let start = Instant::now();
    if args.ks.is_empty() || args.ks.contains(&0) {
        return Err(Error::Argument("--k needs positive values".into()));
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    let splits = read_splits(&args.data)?;
    let ids = splits.get(&args.split)?;
    if ids.is_empty() {
        return Err(Error::Argument(format!("split {:?} is empty", args.split)));
    }
    let examples = ids.iter().map(|id| read_example(&args.data, id)).collect::<Result<Vec<_>>>()?;
    let conditioned = ck.model.condition.is_some();
    let examples = prepare_examples(examples, conditioned);
    let (model, mut store) = tgt::model::TgtModel::new::<f32>(ck.model.clone())?;
    ck.restore_into(&mut store)?;

    let kmax = *args.ks.iter().max().expect("non-empty");
    let mut preds = Vec::with_capacity(examples.len());
    for ex in &examples {
        if args.oracle {
            preds.push(oracle_prediction(ex)?);
            continue;
        }
        let opts = DecodeOptions { topk: kmax.min(ex.movie.len()), ..DecodeOptions::new(ck.decode_max_len.max(1)) };
        let decoded = model.decode_autoregressive(&store, &ex.movie, ex.condition.as_ref(), &opts)?;
        preds.push(Prediction::from(&decoded));
    }
    let label = if args.oracle { "oracle" } else { "tgt" };
    let report = EvalReport {
        split: args.split.clone(),
        checkpoint_step: ck.step,
        model: evaluate(label, &examples, &preds, &args.ks)?,
        random: random_baseline_report(&examples, &args.ks, args.baseline_trials, args.baseline_seed)?,
    };

    let hash = content_hash(&[Some(&args.checkpoint), Some(&args.data)])?;
    let config = serde_json::json!({
        "split": args.split, "k": args.ks, "baseline_trials": args.baseline_trials,
        "baseline_seed": args.baseline_seed, "oracle": args.oracle,
    });
    let mut manifest = RunManifest::new("eval", &config, args.baseline_seed, hash)?;
    let json_name = format!("metrics_{}.json", args.split);
    let text_name = format!("metrics_{}.txt", args.split);
    write_json(&args.out.join(&json_name), &report)?;
    write_file(&args.out.join(&text_name), render_table(&[&report.model, &report.random]).as_bytes())?;
    manifest.outputs = vec![json_name, text_name];
    manifest.time("eval", start);
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    Ok(report)
}

pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub movie: PathBuf,
    pub condition: Option<PathBuf>,
    pub topk: usize,
    pub max_len: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InferOutput {
    pub movie: String,
    pub decoded: tgt::decoder::DecodedTrailer,
}

pub fn infer(args: &InferArgs) -> Result<InferOutput> {
    let start = Instant::now();
    let ck = Checkpoint::load(&args.checkpoint)?;
    let file = read_sequence(&args.movie)?;
    if file.manifest.role != SequenceRole::Movie {
        return Err(Error::Format(format!("{} is not a movie file", args.movie.display())));
    }
    let movie = file.to_movie()?;
    if movie.dim() != ck.model.d_model {
        return Err(Error::Argument(format!("movie width {} but checkpoint width {}", movie.dim(), ck.model.d_model)));
    }
    let condition = match &args.condition {
        Some(p) => Some(ConditionSequence::from_file(&read_sequence(p)?)?),
        None => None,
    };
    let (model, mut store) = tgt::model::TgtModel::new::<f32>(ck.model.clone())?;
    ck.restore_into(&mut store)?;
    let opts = DecodeOptions { topk: args.topk, ..DecodeOptions::new(args.max_len.unwrap_or(ck.decode_max_len.max(1))) };
    let decoded = model.decode_autoregressive(&store, &movie, condition.as_ref(), &opts)?;
    let output = InferOutput { movie: movie.id.clone(), decoded };
    if let Some(out) = &args.out {
        write_json(out, &output)?;
        let hash = content_hash(&[Some(&args.checkpoint), Some(&args.movie), args.condition.as_deref()])?;
        let mut manifest = RunManifest::new("infer", &opts, 0, hash)?;
        manifest.outputs = vec![out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()];
        manifest.time("infer", start);
        let name = format!("{}.manifest.json", out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        manifest.write(&out.with_file_name(name))?;
    }
    Ok(output)
}

pub struct GradcheckArgs {
    pub seeds: u64,
    pub tol: f64,
    pub h: f64,
    pub sign_flip: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckSummary {
    pub seeds: u64,
    pub tol: f64,
    pub passed: bool,
    pub reports: Vec<tgt::numerics::GradCheckReport>,
}

/// Runs the suite; the caller turns `passed == false` into exit code 3.
pub fn gradcheck(args: &GradcheckArgs) -> Result<GradcheckSummary> {
    let start = Instant::now();
    let cfg = GradCheckConfig { h: args.h, tol: args.tol, sign_flip: args.sign_flip.clone() };
    let reports = gradcheck_suite(args.seeds, &cfg)?;
    let summary = GradcheckSummary { seeds: args.seeds, tol: args.tol, passed: reports.iter().all(|r| r.passed()), reports };
    if let Some(out) = &args.out {
        write_json(&out.join("gradcheck.json"), &summary)?;
        let config = serde_json::json!({ "seeds": args.seeds, "tol": args.tol, "h": args.h, "sign_flip": args.sign_flip });
        let mut manifest = RunManifest::new("gradcheck", &config, args.seeds, content_hash(&[])?)?;
        manifest.outputs = vec!["gradcheck.json".into()];
        manifest.time("gradcheck", start);
        manifest.write(&out.join(MANIFEST_FILE))?;
    }
    Ok(summary)
}

pub fn render_gradcheck(summary: &GradcheckSummary) -> String {
    let width = summary.reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<width$}  {:>8}  {:>12}  status\n", "op", "checked", "max_rel_err");
    for r in &summary.reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        s.push_str(&format!("{:<width$}  {:>8}  {:>12.3e}  {status}\n", r.name, r.checked, r.max_rel_error));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::NonFinite { op: "loss" }), 3);
        assert_eq!(exit_code(&Error::Argument("x".into())), 2);
        assert_eq!(exit_code(&Error::Io { path: "p".into(), source: std::io::Error::other("x") }), 2);
    }

    #[test]
    fn content_hash_tracks_bytes_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        fs::create_dir_all(a.join("sub")).unwrap();
        fs::write(a.join("sub/x"), b"1").unwrap();
        let h1 = content_hash(&[Some(&a)]).unwrap();
        assert_eq!(h1, content_hash(&[Some(&a)]).unwrap());
        fs::write(a.join(MANIFEST_FILE), b"ignored").unwrap();
        assert_eq!(h1, content_hash(&[Some(&a)]).unwrap());
        fs::write(a.join("sub/x"), b"2").unwrap();
        assert_ne!(h1, content_hash(&[Some(&a)]).unwrap());
        assert_ne!(content_hash(&[None]).unwrap(), content_hash(&[]).unwrap());
    }

    #[test]
    fn loss_log_prefix_keeps_earlier_steps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        fs::write(&p, format!("{LOSS_HEADER}1,0.1,1,1,1,3\n2,0.2,1,1,1,3\n3,0.3,1,1,1,3\n")).unwrap();
        assert_eq!(loss_log_prefix(&p, 2).unwrap(), format!("{LOSS_HEADER}1,0.1,1,1,1,3\n2,0.2,1,1,1,3\n"));
        assert_eq!(loss_log_prefix(&p, 0).unwrap(), LOSS_HEADER);
    }
}
