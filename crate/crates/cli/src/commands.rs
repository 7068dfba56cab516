use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use episodic_core::datagen::{
    generate_synthetic, load_dataset, load_episodes, sample_episode, save_dataset, save_episodes,
    split_classes, BaseDataset, Episode,
};
use episodic_core::learners::{load_checkpoint, save_checkpoint, LearnerParams};
use episodic_core::rng::Stream;
use episodic_core::sampler::{ProposalMode, SchemeKind};
use episodic_core::stats::{
    dispersion_csv, export_density_and_qq, extremes_csv, histogram_csv, normality_rejection_rate,
    qq_csv, spearman, track_extremes, QqReference,
};
use episodic_core::trainer::{
    self, episodes_csv, evaluate, history_csv, read_episode_batches, score_episodes, streams,
    Proposal, TrainError,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const SPLIT_DIRS: [&str; 3] = ["train", "val", "test"];

pub struct Splits {
    pub train: BaseDataset,
    pub val: BaseDataset,
    pub test: BaseDataset,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn generate_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let params = cfg
        .dataset
        .generator
        .as_ref()
        .context("dataset.generator is required to generate data")?;
    let full = generate_synthetic(params)?;
    let (train, val, test) = split_classes(&full, cfg.dataset.split)?;
    Ok(Splits { train, val, test })
}

/// Writes `train/`, `val/` and `test/` under `dataset.path`.
pub fn gen_data(cfg: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    let dir = cfg
        .dataset
        .path
        .clone()
        .context("dataset.path is required for gen-data")?;
    let occupied = dir.exists()
        && fs::read_dir(&dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
    if occupied && !force {
        bail!("{} already exists; pass --force to overwrite", dir.display());
    }
    let splits = generate_splits(cfg)?;
    if occupied {
        for name in SPLIT_DIRS {
            let sub = dir.join(name);
            if sub.exists() {
                fs::remove_dir_all(&sub).with_context(|| format!("removing {}", sub.display()))?;
            }
        }
    }
    for (name, ds) in SPLIT_DIRS.iter().zip([&splits.train, &splits.val, &splits.test]) {
        save_dataset(ds, &dir.join(name))?;
    }
    Ok(dir)
}

/// Loads the splits from `dataset.path`, or generates them in memory.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    match &cfg.dataset.path {
        Some(dir) if dir.join("train").exists() => Ok(Splits {
            train: load_dataset(&dir.join("train"))?,
            val: load_dataset(&dir.join("val"))?,
            test: load_dataset(&dir.join("test"))?,
        }),
        Some(dir) if cfg.dataset.generator.is_none() => {
            bail!("dataset {} not found; run gen-data first", dir.display())
        }
        _ => generate_splits(cfg),
    }
}

fn load_params(dir: &Path) -> Result<LearnerParams> {
    Ok(load_checkpoint(dir)
        .with_context(|| format!("loading checkpoint {}", dir.display()))?
        .0)
}

fn check_compatible(params: &LearnerParams, ds: &BaseDataset, what: &Path) -> Result<()> {
    if params.input_dim() != ds.feature_dim {
        bail!(
            "checkpoint {} expects {} features but the dataset has {}",
            what.display(),
            params.input_dim(),
            ds.feature_dim
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunResult {
    pub algorithm: String,
    pub scheme: String,
    pub mode: String,
    pub seed: u64,
    pub best_iteration: usize,
    pub test_accuracy_mean: f64,
    pub test_accuracy_ci95: f64,
}

pub fn checkpoint_dir(run: &Path, iteration: usize) -> PathBuf {
    run.join("checkpoints").join(format!("iter_{iteration:06}"))
}

/// Trains, keeps the best validation checkpoint, evaluates it on the test
/// split and writes every artifact under `out`.
pub fn train_run(cfg: &ExperimentConfig, splits: &Splits, out: &Path) -> Result<RunResult> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), cfg)?;
    let tc = cfg.train_config();
    let root = Stream::new(cfg.seed);
    let init = LearnerParams::init(
        &cfg.learner_config(splits.train.feature_dim),
        &mut root.split(streams::INIT),
    )?;
    let proposal = match cfg.scheme.mode {
        ProposalMode::Online => Proposal::online(&tc)?,
        ProposalMode::Offline => {
            let path = cfg.scheme.proposal_checkpoint.as_ref().expect("validated");
            let scorer = load_params(path)?;
            check_compatible(&scorer, &splits.train, path)?;
            Proposal::offline(&tc, scorer, &splits.train)?
        }
    };
    let outcome = match trainer::train(&tc, init, &splits.train, &splits.val, proposal) {
        Ok(o) => o,
        Err(TrainError::Diverged {
            iteration,
            last_good,
            history,
        }) => {
            save_checkpoint(&last_good, &out.join("last_good"), Some(iteration - 1))?;
            write(&out.join("history.csv"), history_csv(&history))?;
            write(&out.join("episodes.csv"), episodes_csv(&history))?;
            bail!(
                "non-finite loss at iteration {iteration}; last good parameters saved to {}",
                out.join("last_good").display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    for (it, params) in &outcome.checkpoints {
        save_checkpoint(params, &checkpoint_dir(out, *it), Some(*it))?;
    }
    save_checkpoint(&outcome.best, &out.join("best"), Some(outcome.best_iteration))?;
    write(&out.join("history.csv"), history_csv(&outcome.history))?;
    write(&out.join("episodes.csv"), episodes_csv(&outcome.history))?;

    let eval = evaluate(
        &outcome.best,
        &splits.test,
        tc.way,
        tc.shot,
        tc.query,
        tc.test_episodes,
        &mut root.split(streams::TEST),
    )?;
    let result = RunResult {
        algorithm: cfg.learner.algorithm.to_string(),
        scheme: cfg.scheme.kind.to_string(),
        mode: cfg.scheme.mode.to_string(),
        seed: cfg.seed,
        best_iteration: outcome.best_iteration,
        test_accuracy_mean: eval.mean,
        test_accuracy_ci95: eval.ci95,
    };
    write_json(&out.join("result.json"), &result)?;
    Ok(result)
}

pub fn train(cfg: &ExperimentConfig) -> Result<RunResult> {
    let splits = load_splits(cfg)?;
    train_run(cfg, &splits, &cfg.output_dir())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub checkpoint: PathBuf,
    pub episodes: usize,
    pub accuracy_mean: f64,
    pub accuracy_ci95: f64,
}

pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    episodes: Option<usize>,
) -> Result<EvaluationReport> {
    let splits = load_splits(cfg)?;
    let params = load_params(checkpoint)?;
    check_compatible(&params, &splits.test, checkpoint)?;
    let n = episodes.unwrap_or(cfg.train.test_episodes);
    let t = &cfg.train;
    let eval = evaluate(
        &params,
        &splits.test,
        t.way,
        t.shot,
        t.query,
        n,
        &mut Stream::new(cfg.seed).split(streams::TEST),
    )?;
    let report = EvaluationReport {
        checkpoint: checkpoint.to_path_buf(),
        episodes: n,
        accuracy_mean: eval.mean,
        accuracy_ci95: eval.ci95,
    };
    write_json(&cfg.output_dir().join("evaluation.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scheme: SchemeKind,
    pub test_mean: f64,
    pub ci95: f64,
    pub best_iteration: usize,
}

fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("scheme,test_mean,ci95,best_iteration\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.scheme, r.test_mean, r.ci95, r.best_iteration));
    }
    s
}

/// One run per scheme with everything else held fixed. The CSV is rewritten
/// after every run so a failure keeps the finished rows.
pub fn compare_schemes(cfg: &ExperimentConfig, schemes: &[SchemeKind]) -> Result<Vec<ComparisonRow>> {
    if schemes.len() < 2 {
        bail!("compare-schemes needs at least 2 schemes, got {}", schemes.len());
    }
    let splits = load_splits(cfg)?;
    let out = cfg.output_dir();
    let csv = out.join("comparison.csv");
    let mut rows = Vec::new();
    for (i, &kind) in schemes.iter().enumerate() {
        let mut run_cfg = cfg.clone();
        run_cfg.scheme.kind = kind;
        let run_dir = out.join(format!("{i}_{kind}"));
        let result = train_run(&run_cfg, &splits, &run_dir)
            .with_context(|| format!("scheme {kind} (run {i}); finished rows kept in {}", csv.display()))?;
        rows.push(ComparisonRow {
            scheme: kind,
            test_mean: result.test_accuracy_mean,
            ci95: result.test_accuracy_ci95,
            best_iteration: result.best_iteration,
        });
        write(&csv, comparison_csv(&rows))?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeArgs {
    pub checkpoint: Option<PathBuf>,
    pub episodes: usize,
    pub episode_file: Option<PathBuf>,
    pub qq: bool,
    pub bins: usize,
    pub normality: bool,
    pub spearman: Option<(PathBuf, PathBuf)>,
    pub extremes: Option<PathBuf>,
    pub extremes_m: usize,
    pub dispersion: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisReport {
    pub files: Vec<PathBuf>,
    pub rejection_rate: Option<f64>,
    pub spearman: Option<f64>,
}

fn episode_pool(cfg: &ExperimentConfig, args: &AnalyzeArgs, test: &BaseDataset, out: &Path) -> Result<Vec<Episode>> {
    if let Some(path) = &args.episode_file {
        return Ok(load_episodes(path)?);
    }
    let t = &cfg.train;
    let mut rng = Stream::new(cfg.seed).split(streams::ANALYSIS);
    let episodes = (0..args.episodes)
        .map(|_| sample_episode(test, t.way, t.shot, t.query, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    save_episodes(&episodes, &out.join("episodes.csv"))?;
    Ok(episodes)
}

fn scored(path: &Path, test: &BaseDataset, episodes: &[Episode]) -> Result<Vec<f64>> {
    let params = load_params(path)?;
    check_compatible(&params, test, path)?;
    Ok(score_episodes(&params, test, episodes)?)
}

fn difficulties_csv(values: &[f64]) -> String {
    let mut s = String::from("episode,omega\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{i},{v}\n"));
    }
    s
}

fn sorted_checkpoints(run: &Path) -> Result<Vec<PathBuf>> {
    let dir = run.join("checkpoints");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no checkpoints under {}", dir.display());
    }
    Ok(dirs)
}

pub fn analyze(cfg: &ExperimentConfig, args: &AnalyzeArgs) -> Result<AnalysisReport> {
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir().join("analysis"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut report = AnalysisReport::default();
    let needs_pool = args.qq || args.normality || args.spearman.is_some() || args.extremes.is_some();
    let mut record = |name: &str, contents: String| -> Result<()> {
        let path = out.join(name);
        write(&path, contents)?;
        report.files.push(path);
        Ok(())
    };

    if needs_pool {
        let splits = load_splits(cfg)?;
        let test = &splits.test;
        let episodes = episode_pool(cfg, args, test, &out)?;

        if args.qq || args.normality {
            let ckpt = args
                .checkpoint
                .as_ref()
                .context("--qq and --normality need --checkpoint")?;
            let omegas = scored(ckpt, test, &episodes)?;
            record("difficulties.csv", difficulties_csv(&omegas))?;
            if args.qq {
                let (hist, qq) = export_density_and_qq(&omegas, args.bins, QqReference::Fitted)?;
                record("histogram.csv", histogram_csv(&hist))?;
                record("qq.csv", qq_csv(&qq))?;
            }
            if args.normality {
                let mut rng = Stream::new(cfg.seed).split(streams::ANALYSIS).split(1);
                let r = normality_rejection_rate(&omegas, 50, 100, 0.05, &mut rng)?;
                if r.degenerate > 0 {
                    eprintln!("normality: {} degenerate subsamples counted as not rejected", r.degenerate);
                }
                record(
                    "normality.csv",
                    format!(
                        "rejection_rate,subsample_size,repetitions,alpha,degenerate\n{},50,100,0.05,{}\n",
                        r.rate, r.degenerate
                    ),
                )?;
                report.rejection_rate = Some(r.rate);
            }
        }
        if let Some((a, b)) = &args.spearman {
            let xa = scored(a, test, &episodes)?;
            let xb = scored(b, test, &episodes)?;
            let rho = spearman(&xa, &xb)?;
            record("spearman.csv", format!("rho\n{rho}\n"))?;
            report.spearman = Some(rho);
        }
        if let Some(run) = &args.extremes {
            let selection = scored(&run.join("best"), test, &episodes)?;
            let per_checkpoint = sorted_checkpoints(run)?
                .iter()
                .map(|c| scored(c, test, &episodes))
                .collect::<Result<Vec<_>>>()?;
            let rows = track_extremes(&selection, &per_checkpoint, args.extremes_m)?;
            record("extremes.csv", extremes_csv(&rows))?;
        }
    }

    if !args.dispersion.is_empty() {
        let mut rows = Vec::new();
        for run in &args.dispersion {
            let batches = read_episode_batches(&run.join("episodes.csv")).map_err(anyhow::Error::msg)?;
            let id = run
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| run.display().to_string());
            rows.push((id, episodic_core::stats::weighted_loss_std(&batches)?));
        }
        record("dispersion.csv", dispersion_csv(&rows))?;
    }
    if report.files.is_empty() {
        bail!("nothing to do: pass at least one of --qq, --normality, --spearman, --extremes, --dispersion");
    }
    Ok(report)
}
