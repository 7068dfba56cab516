//! Episodic training with importance-weighted, ESS-normalized batches.
//!
//! Each iteration draws `batch_size` episodes uniformly, scores each with
//! its difficulty Ω, weights it by `w = p(Ω)/q(Ω)` under the difficulty
//! model frozen at the start of the batch, and takes one Adam step on
//! `(1/ESS) Σ w·Ω`. In online mode the model then absorbs the batch's Ω
//! values in order.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{sample_episode, BaseDataset, DataError, Episode};
use crate::learners::{
    difficulty_and_gradient, evaluate_episode, LearnerError, LearnerParams,
};
use crate::rng::Stream;
use crate::sampler::{
    effective_sample_size, importance_weight, DifficultyModel, ProposalMode, SamplerError,
    SamplingScheme, SchemeKind, DEFAULT_LAMBDA,
};

/// Child-stream ids of the run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const VALIDATION: u64 = 2;
    pub const TEST: u64 = 3;
    pub const OFFLINE: u64 = 4;
    pub const ANALYSIS: u64 = 5;
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("non-finite gradient at coordinate {0}")]
    NonFiniteGradient(usize),
    #[error("Adam state has {state} entries but there are {params} parameters")]
    StateSize { state: usize, params: usize },
    #[error("need at least 2 evaluation episodes, got {0}")]
    TooFewEpisodes(usize),
    #[error("non-finite loss at iteration {iteration}; training aborted")]
    Diverged {
        iteration: usize,
        last_good: Box<LearnerParams>,
        history: Vec<TrainRecord>,
    },
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_interval: usize,
    pub validation_episodes: usize,
    pub test_episodes: usize,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub scheme: SchemeKind,
    pub mode: ProposalMode,
    pub lambda: f64,
    /// Online warm-up length in iterations; `warmup_iterations · batch_size`
    /// difficulties are buffered before weighting starts.
    pub warmup_iterations: usize,
    /// Episodes scored by the proposal network for the offline estimate.
    pub offline_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 16,
            learning_rate: 1e-3,
            validation_interval: 1000,
            validation_episodes: 1000,
            test_episodes: 1000,
            way: 5,
            shot: 1,
            query: 15,
            scheme: SchemeKind::Baseline,
            mode: ProposalMode::Online,
            lambda: DEFAULT_LAMBDA,
            warmup_iterations: 100,
            offline_episodes: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("validation_interval", self.validation_interval),
            ("validation_episodes", self.validation_episodes),
            ("test_episodes", self.test_episodes),
            ("way", self.way),
            ("shot", self.shot),
            ("query", self.query),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("{name} must be positive")));
        }
        if !self.iterations.is_multiple_of(self.validation_interval) {
            return Err(TrainError::Config(format!(
                "validation_interval {} does not divide iterations {}",
                self.validation_interval, self.iterations
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config("lambda must lie in [0, 1]".into()));
        }
        if self.mode == ProposalMode::Online && self.warmup_iterations * self.batch_size < 2 {
            return Err(TrainError::Config(
                "online warm-up must cover at least 2 episodes".into(),
            ));
        }
        if self.mode == ProposalMode::Offline && self.offline_episodes < 2 {
            return Err(TrainError::Config("offline_episodes must be at least 2".into()));
        }
        Ok(())
    }

    pub fn scheme_at(&self, iteration: usize) -> SamplingScheme {
        let s = SamplingScheme::new(self.scheme, self.mode);
        if self.scheme == SchemeKind::Curriculum && self.iterations > 0 {
            s.at_progress(iteration as f64 / self.iterations as f64)
                .expect("iteration within 1..=iterations")
        } else {
            s
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() || grads.len() != params.len() {
        return Err(TrainError::StateSize {
            state: state.m.len(),
            params: params.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient(i));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    /// Ω under the model being trained (the episode's loss).
    pub omega: f64,
    /// Ω used for the weight: equal to `omega` online, the frozen proposal
    /// network's score offline.
    pub proposal_omega: f64,
    pub weight: f64,
    pub proposal_clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub mean_omega: f64,
    pub episodes: Vec<EpisodeRecord>,
    pub ess: f64,
    pub loss: f64,
    /// Difficulty model used for this batch's weights; `None` during warm-up.
    pub mu: Option<f64>,
    pub sigma2: Option<f64>,
    pub fallback: bool,
    pub val_accuracy: Option<f64>,
}

/// Where the proposal's difficulty model comes from.
#[derive(Debug, Clone)]
pub enum Proposal {
    Online(DifficultyModel),
    /// Fixed estimate plus the frozen network that scores Ω for the weights.
    Offline {
        model: DifficultyModel,
        scorer: LearnerParams,
    },
}

impl Proposal {
    pub fn online(config: &TrainConfig) -> Result<Self> {
        Ok(Proposal::Online(DifficultyModel::online(
            config.lambda,
            config.warmup_iterations * config.batch_size,
        )?))
    }

    /// Scores `config.offline_episodes` training episodes with `scorer` and
    /// fits μ, σ² to them.
    pub fn offline(config: &TrainConfig, scorer: LearnerParams, train: &BaseDataset) -> Result<Self> {
        let mut rng = Stream::new(config.seed).split(streams::OFFLINE);
        let mut omegas = Vec::with_capacity(config.offline_episodes);
        for _ in 0..config.offline_episodes {
            let ep = sample_episode(train, config.way, config.shot, config.query, &mut rng)?;
            omegas.push(evaluate_episode(&scorer, &ep.materialize(train)?)?.difficulty);
        }
        Ok(Proposal::Offline {
            model: DifficultyModel::estimate_offline(&omegas)?,
            scorer,
        })
    }

    pub fn model(&self) -> &DifficultyModel {
        match self {
            Proposal::Online(m) => m,
            Proposal::Offline { model, .. } => model,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: LearnerParams,
    /// 0 when no validation ran.
    pub best_iteration: usize,
    pub history: Vec<TrainRecord>,
    /// Parameters at every validation step, in order.
    pub checkpoints: Vec<(usize, LearnerParams)>,
    pub final_params: LearnerParams,
    pub final_model: DifficultyModel,
}

/// `(1/ESS) Σ w·x`.
pub fn normalized_loss(weights: &[f64], losses: &[f64]) -> std::result::Result<f64, SamplerError> {
    let ess = effective_sample_size(weights)?;
    let total = weights.iter().zip(losses).fold(0.0, |acc, (w, l)| acc + w * l);
    Ok(total / ess)
}

fn validation_accuracy(
    params: &LearnerParams,
    val: &BaseDataset,
    config: &TrainConfig,
    iteration: usize,
) -> Result<f64> {
    let mut rng = Stream::new(config.seed)
        .split(streams::VALIDATION)
        .split(iteration as u64);
    let mut total = 0.0;
    for _ in 0..config.validation_episodes {
        let ep = sample_episode(val, config.way, config.shot, config.query, &mut rng)?;
        total += evaluate_episode(params, &ep.materialize(val)?)?.accuracy;
    }
    Ok(total / config.validation_episodes as f64)
}

/// Runs exactly `config.iterations` steps and returns the parameters with
/// the best validation accuracy.
pub fn train(
    config: &TrainConfig,
    init: LearnerParams,
    train_set: &BaseDataset,
    val_set: &BaseDataset,
    mut proposal: Proposal,
) -> Result<TrainOutcome> {
    config.validate()?;
    if init.algorithm.has_head() {
        let width = init.head.as_ref().map(|h| h.fan_out()).unwrap_or(0);
        if width != config.way {
            return Err(TrainError::Config(format!(
                "learner head has {width} outputs but episodes are {}-way",
                config.way
            )));
        }
    }
    let mut params = init;
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());
    let mut history = Vec::with_capacity(config.iterations);
    let mut checkpoints = Vec::new();
    let mut best: Option<(f64, usize, LearnerParams)> = None;
    let train_rng = Stream::new(config.seed).split(streams::TRAIN);

    for iteration in 1..=config.iterations {
        let scheme = config.scheme_at(iteration);
        let snapshot = proposal.model().clone();
        let mut rng = train_rng.split(iteration as u64);

        let mut episodes = Vec::with_capacity(config.batch_size);
        let mut grads = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let ep: Episode = sample_episode(train_set, config.way, config.shot, config.query, &mut rng)?;
            let data = ep.materialize(train_set)?;
            let (omega, grad) = difficulty_and_gradient(&params, &data)?;
            let proposal_omega = match &proposal {
                Proposal::Online(_) => omega,
                Proposal::Offline { scorer, .. } => evaluate_episode(scorer, &data)?.difficulty,
            };
            let w = if omega.is_finite() && proposal_omega.is_finite() {
                importance_weight(proposal_omega, &scheme, &snapshot)?
            } else {
                return Err(TrainError::Diverged {
                    iteration,
                    last_good: Box::new(params),
                    history,
                });
            };
            episodes.push(EpisodeRecord {
                omega,
                proposal_omega,
                weight: w.weight,
                proposal_clamped: w.proposal_clamped,
            });
            grads.push(grad);
        }

        let mut weights: Vec<f64> = episodes.iter().map(|e| e.weight).collect();
        let fallback = weights.iter().all(|&w| w == 0.0);
        if fallback {
            weights.iter_mut().for_each(|w| *w = 1.0);
            for e in &mut episodes {
                e.weight = 1.0;
            }
        }
        let ess = effective_sample_size(&weights)?;
        let omegas: Vec<f64> = episodes.iter().map(|e| e.omega).collect();
        let loss = normalized_loss(&weights, &omegas)?;
        let mut total_grad = vec![0.0; flat.len()];
        for (w, g) in weights.iter().zip(&grads) {
            if *w == 0.0 {
                continue;
            }
            for (acc, gi) in total_grad.iter_mut().zip(g) {
                *acc += w * gi;
            }
        }
        total_grad.iter_mut().for_each(|g| *g /= ess);

        if !loss.is_finite() || total_grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::Diverged {
                iteration,
                last_good: Box::new(params),
                history,
            });
        }
        adam_step(&mut flat, &total_grad, &mut adam, config.learning_rate)?;
        params = params.with_flat(&flat)?;

        if let Proposal::Online(model) = &mut proposal {
            for e in &episodes {
                model.update_online(e.proposal_omega)?;
            }
        }

        let val_accuracy = if iteration % config.validation_interval == 0 {
            let acc = validation_accuracy(&params, val_set, config, iteration)?;
            checkpoints.push((iteration, params.clone()));
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, iteration, params.clone()));
            }
            Some(acc)
        } else {
            None
        };

        let ready = snapshot.is_ready();
        history.push(TrainRecord {
            iteration,
            mean_omega: omegas.iter().sum::<f64>() / omegas.len() as f64,
            episodes,
            ess,
            loss,
            mu: ready.then_some(snapshot.mu),
            sigma2: ready.then_some(snapshot.var),
            fallback,
            val_accuracy,
        });
    }

    let (best_params, best_iteration) = match best {
        Some((_, it, p)) => (p, it),
        None => (params.clone(), 0),
    };
    Ok(TrainOutcome {
        best: best_params,
        best_iteration,
        history,
        checkpoints,
        final_params: params,
        final_model: proposal.model().clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    /// 1.96 · sample std / √N.
    pub ci95: f64,
    pub accuracies: Vec<f64>,
}

/// Mean and 95% confidence half-width of per-episode accuracies.
pub fn summarize_accuracies(accuracies: Vec<f64>) -> Result<Evaluation> {
    let n = accuracies.len();
    if n < 2 {
        return Err(TrainError::TooFewEpisodes(n));
    }
    let mean = accuracies.iter().sum::<f64>() / n as f64;
    let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok(Evaluation {
        mean,
        ci95: 1.96 * var.sqrt() / (n as f64).sqrt(),
        accuracies,
    })
}

pub fn evaluate(
    params: &LearnerParams,
    dataset: &BaseDataset,
    way: usize,
    shot: usize,
    query: usize,
    num_episodes: usize,
    rng: &mut Stream,
) -> Result<Evaluation> {
    if num_episodes < 2 {
        return Err(TrainError::TooFewEpisodes(num_episodes));
    }
    let mut accs = Vec::with_capacity(num_episodes);
    for _ in 0..num_episodes {
        let ep = sample_episode(dataset, way, shot, query, rng)?;
        accs.push(evaluate_episode(params, &ep.materialize(dataset)?)?.accuracy);
    }
    summarize_accuracies(accs)
}

/// Ω of every episode under `params`.
pub fn score_episodes(
    params: &LearnerParams,
    dataset: &BaseDataset,
    episodes: &[Episode],
) -> Result<Vec<f64>> {
    episodes
        .iter()
        .map(|ep| Ok(evaluate_episode(params, &ep.materialize(dataset)?)?.difficulty))
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn history_csv(history: &[TrainRecord]) -> String {
    let mut s = String::from("iteration,loss,ess,mu,sigma2,fallback,val_accuracy\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.loss,
            r.ess,
            opt(r.mu),
            opt(r.sigma2),
            u8::from(r.fallback),
            opt(r.val_accuracy)
        );
    }
    s
}

pub fn episodes_csv(history: &[TrainRecord]) -> String {
    let mut s = String::from("iteration,episode,omega,proposal_omega,weight,proposal_clamped\n");
    for r in history {
        for (i, e) in r.episodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.iteration,
                i,
                e.omega,
                e.proposal_omega,
                e.weight,
                u8::from(e.proposal_clamped)
            );
        }
    }
    s
}

/// Per-iteration `(weight, omega)` batches from an `episodes.csv` file.
pub fn read_episode_batches(path: &Path) -> std::result::Result<Vec<Vec<(f64, f64)>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| format!("{}: missing column `{name}`", path.display()))
    };
    let (it_col, om_col, w_col) = (find("iteration")?, find("omega")?, find("weight")?);
    let mut batches: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut current = None;
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |col: usize| format!("{}: line {}, field {}", path.display(), n + 2, col + 1);
        let get = |col: usize| f.get(col).copied().ok_or_else(|| bad(col));
        let it: usize = get(it_col)?.parse().map_err(|_| bad(it_col))?;
        let omega: f64 = get(om_col)?.parse().map_err(|_| bad(om_col))?;
        let w: f64 = get(w_col)?.parse().map_err(|_| bad(w_col))?;
        if current != Some(it) {
            batches.push(Vec::new());
            current = Some(it);
        }
        batches.last_mut().expect("pushed").push((w, omega));
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_synthetic, split_classes, GeneratorParams};
    use crate::learners::{Algorithm, LearnerConfig};

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_on_identity() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8, "{}", p[0]);
    }

    #[test]
    fn adam_constant_gradient_steps_approach_lr() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        let mut prev = p.clone();
        for _ in 0..5000 {
            adam_step(&mut p, &[3.0, -0.02], &mut s, 1e-3).unwrap();
            let step: Vec<f64> = p.iter().zip(&prev).map(|(a, b)| a - b).collect();
            prev = p.clone();
            if s.t == 5000 {
                assert!((step[0] + 1e-3).abs() < 1e-9);
                assert!((step[1] - 1e-3).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adam_rejects_bad_input() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        assert!(matches!(adam_step(&mut p, &[f64::NAN], &mut s, 0.1), Err(TrainError::NonFiniteGradient(0))));
        assert!(adam_step(&mut p, &[1.0, 2.0], &mut s, 0.1).is_err());
    }

    #[test]
    fn ci_examples() {
        let e = summarize_accuracies(vec![1.0; 10]).unwrap();
        assert_eq!((e.mean, e.ci95), (1.0, 0.0));
        let alt: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
        let e = summarize_accuracies(alt).unwrap();
        assert_eq!(e.mean, 0.5);
        let expected = 1.96 * (250.0f64 / 999.0).sqrt() / 1000f64.sqrt();
        assert!((e.ci95 - expected).abs() < 1e-15);
        assert!((e.ci95 - 0.0310).abs() < 1e-4);
        assert!(summarize_accuracies(vec![1.0]).is_err());
    }

    #[test]
    fn normalized_loss_scales_linearly() {
        let w = [0.5, 2.0, 1.5, 0.1];
        let l = [1.0, 0.3, 2.2, 0.9];
        let base = normalized_loss(&w, &l).unwrap();
        let c = 3.7;
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        assert!((normalized_loss(&scaled, &l).unwrap() - c * base).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { validation_interval: 300, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    fn tiny_setup() -> (BaseDataset, BaseDataset, LearnerParams) {
        let ds = generate_synthetic(&GeneratorParams {
            num_classes: 12,
            samples_per_class: 10,
            feature_dim: 4,
            class_separation: 3.0,
            noise_scale: 1.0,
            seed: 3,
        })
        .unwrap();
        let (tr, va, _) = split_classes(&ds, [8.0, 2.0, 2.0]).unwrap();
        let mut cfg = LearnerConfig::new(Algorithm::ProtoEuclidean, 4);
        cfg.hidden = vec![8];
        cfg.embed_dim = 8;
        let p = LearnerParams::init(&cfg, &mut Stream::new(0)).unwrap();
        (tr, va, p)
    }

    fn tiny_config(scheme: SchemeKind) -> TrainConfig {
        TrainConfig {
            iterations: 6,
            batch_size: 4,
            validation_interval: 3,
            validation_episodes: 5,
            test_episodes: 5,
            way: 2,
            shot: 1,
            query: 3,
            scheme,
            warmup_iterations: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_returns_init() {
        let (tr, va, p) = tiny_setup();
        let cfg = TrainConfig { iterations: 0, ..tiny_config(SchemeKind::Baseline) };
        let out = train(&cfg, p.clone(), &tr, &va, Proposal::online(&cfg).unwrap()).unwrap();
        assert_eq!(out.best, p);
        assert!(out.history.is_empty());
    }

    #[test]
    fn baseline_loss_is_plain_mean() {
        let (tr, va, p) = tiny_setup();
        let cfg = tiny_config(SchemeKind::Baseline);
        let out = train(&cfg, p, &tr, &va, Proposal::online(&cfg).unwrap()).unwrap();
        assert_eq!(out.history.len(), 6);
        for r in &out.history {
            assert!(r.episodes.iter().all(|e| e.weight == 1.0));
            assert_eq!(r.ess, 4.0);
            assert!((r.loss - r.mean_omega).abs() < 1e-12);
        }
        let val: Vec<usize> = out
            .history
            .iter()
            .filter(|r| r.val_accuracy.is_some())
            .map(|r| r.iteration)
            .collect();
        assert_eq!(val, vec![3, 6]);
    }

    #[test]
    fn weights_start_after_warmup() {
        let (tr, va, p) = tiny_setup();
        let cfg = tiny_config(SchemeKind::Uniform);
        let out = train(&cfg, p, &tr, &va, Proposal::online(&cfg).unwrap()).unwrap();
        assert!(out.history[0].mu.is_none());
        assert!(out.history[0].episodes.iter().all(|e| e.weight == 1.0));
        assert!(out.history[1].mu.is_some());
        assert!(out.history[1..].iter().any(|r| r.episodes.iter().any(|e| e.weight != 1.0)));
    }

    #[test]
    fn training_is_deterministic() {
        let (tr, va, p) = tiny_setup();
        let cfg = tiny_config(SchemeKind::Hard);
        let a = train(&cfg, p.clone(), &tr, &va, Proposal::online(&cfg).unwrap()).unwrap();
        let b = train(&cfg, p, &tr, &va, Proposal::online(&cfg).unwrap()).unwrap();
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert_eq!(episodes_csv(&a.history), episodes_csv(&b.history));
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn episodes_csv_round_trip() {
        let (tr, va, p) = tiny_setup();
        let cfg = tiny_config(SchemeKind::Easy);
        let out = train(&cfg, p, &tr, &va, Proposal::online(&cfg).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.csv");
        std::fs::write(&path, episodes_csv(&out.history)).unwrap();
        let batches = read_episode_batches(&path).unwrap();
        assert_eq!(batches.len(), 6);
        assert_eq!(batches[2][1], (out.history[2].episodes[1].weight, out.history[2].episodes[1].omega));
    }
}
