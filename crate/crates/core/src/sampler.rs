//! Importance weights over episode difficulty.
//!
//! The proposal q is the normal `N(Ω | μ, σ²)` induced by uniform episode
//! sampling. Targets live on `[μ − 2.58σ, μ + 2.58σ]` and are normalized on
//! that interval; the proposal is not truncated.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRUNCATION: f64 = 2.58;
pub const VARIANCE_FLOOR: f64 = 1e-8;
pub const WEIGHT_CAP: f64 = 1e6;
pub const DENSITY_FLOOR: f64 = 1e-300;
pub const DEFAULT_LAMBDA: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("need at least 2 difficulties, got {0}")]
    TooFewValues(usize),
    #[error("difficulty must be finite, got {0}")]
    NonFinite(f64),
    #[error("weight vector is empty")]
    EmptyWeights,
    #[error("weight {index} is {value}; weights must be finite and >= 0")]
    InvalidWeight { index: usize, value: f64 },
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("online warm-up needs at least 2 values, got {0}")]
    WarmupTooShort(usize),
    #[error("curriculum progress must lie in [0, 1], got {0}")]
    Progress(f64),
    #[error("difficulty model is still warming up")]
    WarmingUp,
}

type Result<T> = std::result::Result<T, SamplerError>;

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Density of `N(μ, σ²)` at `x`.
pub fn normal_pdf(x: f64, mu: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(SamplerError::NonPositiveVariance(var));
    }
    let d = x - mu;
    Ok((-d * d / (2.0 * var)).exp() / (2.0 * PI * var).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Baseline,
    Easy,
    Hard,
    Curriculum,
    Uniform,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::Baseline,
        SchemeKind::Easy,
        SchemeKind::Hard,
        SchemeKind::Curriculum,
        SchemeKind::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Baseline => "baseline",
            SchemeKind::Easy => "easy",
            SchemeKind::Hard => "hard",
            SchemeKind::Curriculum => "curriculum",
            SchemeKind::Uniform => "uniform",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalMode {
    Offline,
    Online,
}

impl ProposalMode {
    pub fn name(self) -> &'static str {
        match self {
            ProposalMode::Offline => "offline",
            ProposalMode::Online => "online",
        }
    }
}

impl fmt::Display for ProposalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProposalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "offline" => Ok(ProposalMode::Offline),
            "online" => Ok(ProposalMode::Online),
            other => Err(format!("unknown proposal mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingScheme {
    pub kind: SchemeKind,
    pub mode: ProposalMode,
    /// Training progress in `[0, 1]`; `Some` exactly for the curriculum.
    pub progress: Option<f64>,
}

impl SamplingScheme {
    pub fn new(kind: SchemeKind, mode: ProposalMode) -> Self {
        Self {
            kind,
            mode,
            progress: (kind == SchemeKind::Curriculum).then_some(0.0),
        }
    }

    pub fn baseline() -> Self {
        Self::new(SchemeKind::Baseline, ProposalMode::Online)
    }

    /// Sets the curriculum clock; a no-op for the other kinds.
    pub fn at_progress(mut self, progress: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&progress) {
            return Err(SamplerError::Progress(progress));
        }
        if self.kind == SchemeKind::Curriculum {
            self.progress = Some(progress);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyModel {
    pub mu: f64,
    pub var: f64,
    pub lambda: f64,
    pub warmup_remaining: usize,
    pub warmup_buffer: Vec<f64>,
}

fn mean_and_unbiased_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).max(VARIANCE_FLOOR))
}

impl DifficultyModel {
    /// Online model that buffers the first `warmup` difficulties, then
    /// switches to the EMA.
    pub fn online(lambda: f64, warmup: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(SamplerError::InvalidLambda(lambda));
        }
        if warmup < 2 {
            return Err(SamplerError::WarmupTooShort(warmup));
        }
        Ok(Self {
            mu: 0.0,
            var: 1.0,
            lambda,
            warmup_remaining: warmup,
            warmup_buffer: Vec::with_capacity(warmup),
        })
    }

    /// Sample mean and unbiased variance of difficulties scored up front.
    pub fn estimate_offline(difficulties: &[f64]) -> Result<Self> {
        if difficulties.len() < 2 {
            return Err(SamplerError::TooFewValues(difficulties.len()));
        }
        if let Some(&x) = difficulties.iter().find(|x| !x.is_finite()) {
            return Err(SamplerError::NonFinite(x));
        }
        let (mu, var) = mean_and_unbiased_var(difficulties);
        Ok(Self {
            mu,
            var,
            lambda: DEFAULT_LAMBDA,
            warmup_remaining: 0,
            warmup_buffer: Vec::new(),
        })
    }

    pub fn is_ready(&self) -> bool {
        self.warmup_remaining == 0
    }

    pub fn sigma(&self) -> f64 {
        self.var.sqrt()
    }

    /// Truncated support `[μ − 2.58σ, μ + 2.58σ]`.
    pub fn support(&self) -> (f64, f64) {
        let half = TRUNCATION * self.sigma();
        (self.mu - half, self.mu + half)
    }

    pub fn update_online(&mut self, omega: f64) -> Result<()> {
        if !omega.is_finite() {
            return Err(SamplerError::NonFinite(omega));
        }
        if self.warmup_remaining > 0 {
            self.warmup_buffer.push(omega);
            self.warmup_remaining -= 1;
            if self.warmup_remaining == 0 {
                let (mu, var) = mean_and_unbiased_var(&self.warmup_buffer);
                self.mu = mu;
                self.var = var;
            }
            return Ok(());
        }
        let l = self.lambda;
        self.mu = l * self.mu + (1.0 - l) * omega;
        let d = omega - self.mu;
        self.var = (l * self.var + (1.0 - l) * d * d).max(VARIANCE_FLOOR);
        Ok(())
    }

    pub fn proposal_density(&self, omega: f64) -> f64 {
        normal_pdf(omega, self.mu, self.var).expect("variance is floored")
    }
}

/// Density of the scheme's target at `omega`. Baseline returns the proposal
/// density itself.
pub fn target_density(omega: f64, scheme: &SamplingScheme, model: &DifficultyModel) -> Result<f64> {
    if !model.is_ready() {
        return Err(SamplerError::WarmingUp);
    }
    let (lo, hi) = model.support();
    let width = hi - lo;
    let inside = |a: f64, b: f64| omega >= a && omega <= b;
    Ok(match scheme.kind {
        SchemeKind::Baseline => model.proposal_density(omega),
        SchemeKind::Easy => {
            if inside(lo, model.mu) {
                2.0 / width
            } else {
                0.0
            }
        }
        SchemeKind::Hard => {
            if inside(model.mu, hi) {
                2.0 / width
            } else {
                0.0
            }
        }
        SchemeKind::Uniform => {
            if inside(lo, hi) {
                1.0 / width
            } else {
                0.0
            }
        }
        SchemeKind::Curriculum => {
            if !inside(lo, hi) {
                return Ok(0.0);
            }
            let progress = scheme.progress.unwrap_or(0.0);
            let mu_t = lo + progress * width;
            let s = model.sigma();
            let mass = std_normal_cdf((hi - mu_t) / s) - std_normal_cdf((lo - mu_t) / s);
            normal_pdf(omega, mu_t, model.var)? / mass
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRecord {
    pub weight: f64,
    /// The proposal density fell below 1e-300 and was clamped.
    pub proposal_clamped: bool,
    /// The ratio exceeded 1e6 and was capped.
    pub capped: bool,
}

impl WeightRecord {
    fn unit() -> Self {
        Self {
            weight: 1.0,
            proposal_clamped: false,
            capped: false,
        }
    }
}

/// `w = p(Ω)/q(Ω)`; exactly 1 for the baseline and while the model warms up.
pub fn importance_weight(
    omega: f64,
    scheme: &SamplingScheme,
    model: &DifficultyModel,
) -> Result<WeightRecord> {
    if !omega.is_finite() {
        return Err(SamplerError::NonFinite(omega));
    }
    if scheme.kind == SchemeKind::Baseline || !model.is_ready() {
        return Ok(WeightRecord::unit());
    }
    let p = target_density(omega, scheme, model)?;
    let q = model.proposal_density(omega);
    let proposal_clamped = q < DENSITY_FLOOR;
    let ratio = p / q.max(DENSITY_FLOOR);
    let capped = ratio > WEIGHT_CAP;
    Ok(WeightRecord {
        weight: ratio.min(WEIGHT_CAP),
        proposal_clamped,
        capped,
    })
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(SamplerError::EmptyWeights);
    }
    if let Some((index, &value)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
    {
        return Err(SamplerError::InvalidWeight { index, value });
    }
    let sum: f64 = weights.iter().sum();
    if sum == 0.0 {
        return Err(SamplerError::AllZeroWeights);
    }
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    Ok((sum * sum / sq).clamp(1.0, weights.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ready(mu: f64, var: f64) -> DifficultyModel {
        DifficultyModel {
            mu,
            var,
            lambda: 0.9,
            warmup_remaining: 0,
            warmup_buffer: Vec::new(),
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn pdf_values() {
        assert!((normal_pdf(0.0, 0.0, 1.0).unwrap() - 0.398942280401).abs() < 1e-12);
        assert_eq!(normal_pdf(1.0 + 1.25, 1.0, 2.0).unwrap(), normal_pdf(1.0 - 1.25, 1.0, 2.0).unwrap());
        let mass = simpson(|x| normal_pdf(x, 1.5, 4.0).unwrap(), 1.5 - 10.0, 1.5 + 10.0, 2000);
        assert!((mass - 0.999_999_426_697).abs() < 1e-6, "{mass}");
        assert!(normal_pdf(0.0, 0.0, 0.0).is_err());
        assert!(normal_pdf(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn target_closed_forms() {
        let m = ready(2.0, 0.25);
        let uni = SamplingScheme::new(SchemeKind::Uniform, ProposalMode::Online);
        assert!((target_density(2.0, &uni, &m).unwrap() - 1.0 / (5.16 * 0.5)).abs() < 1e-12);
        let easy = SamplingScheme::new(SchemeKind::Easy, ProposalMode::Online);
        assert_eq!(target_density(2.1, &easy, &m).unwrap(), 0.0);
        assert!(target_density(1.9, &easy, &m).unwrap() > 0.0);
        let cur = SamplingScheme::new(SchemeKind::Curriculum, ProposalMode::Online)
            .at_progress(0.5)
            .unwrap();
        let z = 0.990_119_968_484_458_6;
        let expected = normal_pdf(2.3, 2.0, 0.25).unwrap() / z;
        assert!((target_density(2.3, &cur, &m).unwrap() / expected - 1.0).abs() < 1e-6);
        let base = SamplingScheme::baseline();
        assert_eq!(target_density(2.7, &base, &m).unwrap(), m.proposal_density(2.7));
    }

    #[test]
    fn targets_integrate_to_one() {
        let m = ready(1.2, 0.09);
        let (lo, hi) = m.support();
        for kind in [SchemeKind::Easy, SchemeKind::Hard, SchemeKind::Uniform, SchemeKind::Curriculum] {
            for progress in [0.0, 0.3, 1.0] {
                let s = SamplingScheme::new(kind, ProposalMode::Online).at_progress(progress).unwrap();
                let f = |x| target_density(x, &s, &m).unwrap();
                let mass = match kind {
                    SchemeKind::Easy => simpson(f, lo, m.mu, 1000),
                    SchemeKind::Hard => simpson(f, m.mu, hi, 1000),
                    _ => simpson(f, lo, hi, 1000),
                };
                assert!((mass - 1.0).abs() < 1e-6, "{kind} {progress}: {mass}");
            }
        }
    }

    #[test]
    fn weight_closed_forms() {
        let m = ready(0.7, 1.3);
        let uni = SamplingScheme::new(SchemeKind::Uniform, ProposalMode::Offline);
        let w = importance_weight(0.7, &uni, &m).unwrap().weight;
        assert!((w - (2.0 * PI).sqrt() / 5.16).abs() < 1e-12);
        assert!((w - 0.48578).abs() < 1e-5);
        let hard = SamplingScheme::new(SchemeKind::Hard, ProposalMode::Offline);
        assert_eq!(importance_weight(0.7 - 1.3f64.sqrt(), &hard, &m).unwrap().weight, 0.0);
        for x in [-40.0, 0.0, 3.0, 1e5] {
            assert_eq!(importance_weight(x, &SamplingScheme::baseline(), &m).unwrap().weight, 1.0);
        }
    }

    #[test]
    fn warmup_weights_are_unit() {
        let m = DifficultyModel::online(0.9, 10).unwrap();
        let uni = SamplingScheme::new(SchemeKind::Uniform, ProposalMode::Online);
        assert_eq!(importance_weight(5.0, &uni, &m).unwrap(), WeightRecord::unit());
        assert_eq!(target_density(5.0, &uni, &m), Err(SamplerError::WarmingUp));
    }

    #[test]
    fn far_tail_is_clamped() {
        let m = ready(0.0, VARIANCE_FLOOR);
        let uni = SamplingScheme::new(SchemeKind::Uniform, ProposalMode::Online);
        let r = importance_weight(1.0, &uni, &m).unwrap();
        assert!(r.proposal_clamped);
        assert_eq!(r.weight, 0.0);
        // inside the support the ratio is bounded by the edge value
        let (_, hi) = m.support();
        let edge = importance_weight(hi, &uni, &m).unwrap();
        let expected = (2.0 * PI).sqrt() / 5.16 * (TRUNCATION * TRUNCATION / 2.0).exp();
        assert!((edge.weight / expected - 1.0).abs() < 1e-9);
        assert!(!edge.proposal_clamped && !edge.capped);
    }

    #[test]
    fn ess_examples() {
        assert_eq!(effective_sample_size(&[1.0; 4]).unwrap(), 4.0);
        assert_eq!(effective_sample_size(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(effective_sample_size(&[2.0, 1.0]).unwrap(), 1.8);
        assert_eq!(effective_sample_size(&[0.0, 0.0]), Err(SamplerError::AllZeroWeights));
        assert_eq!(effective_sample_size(&[]), Err(SamplerError::EmptyWeights));
        assert!(matches!(
            effective_sample_size(&[1.0, f64::NAN]),
            Err(SamplerError::InvalidWeight { index: 1, .. })
        ));
        assert!(effective_sample_size(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn ema_recurrence() {
        let mut m = ready(1.0, 1.0);
        m.update_online(2.0).unwrap();
        assert!((m.mu - 1.1).abs() < 1e-15);
        assert!((m.var - 0.981).abs() < 1e-15);
    }

    #[test]
    fn ema_constant_stream_hits_floor() {
        let mut m = DifficultyModel::online(0.9, 5).unwrap();
        for _ in 0..5 {
            m.update_online(1.5).unwrap();
        }
        assert!(m.is_ready());
        assert_eq!((m.mu, m.var), (1.5, VARIANCE_FLOOR));
        for _ in 0..500 {
            m.update_online(1.5).unwrap();
        }
        assert_eq!((m.mu, m.var), (1.5, VARIANCE_FLOOR));
    }

    #[test]
    fn warmup_sets_sample_moments() {
        let mut m = DifficultyModel::online(0.5, 3).unwrap();
        for x in [1.0, 2.0, 6.0] {
            assert!(!m.is_ready());
            m.update_online(x).unwrap();
        }
        assert_eq!(m.mu, 3.0);
        assert_eq!(m.var, 7.0);
        assert_eq!(m.warmup_buffer, vec![1.0, 2.0, 6.0]);
    }

    #[test]
    fn lambda_one_freezes() {
        let mut m = ready(1.0, 2.0);
        m.lambda = 1.0;
        for x in [0.0, 9.0, -3.0] {
            m.update_online(x).unwrap();
        }
        assert_eq!((m.mu, m.var), (1.0, 2.0));
    }

    #[test]
    fn offline_estimates() {
        let m = DifficultyModel::estimate_offline(&[0.0, 2.0]).unwrap();
        assert_eq!((m.mu, m.var, m.warmup_remaining), (1.0, 2.0, 0));
        assert_eq!(DifficultyModel::estimate_offline(&[3.0; 10]).unwrap().var, VARIANCE_FLOOR);
        assert_eq!(DifficultyModel::estimate_offline(&[1.0]), Err(SamplerError::TooFewValues(1)));
        let mut rng = crate::rng::Stream::new(11);
        let xs: Vec<f64> = (0..1000).map(|_| rng.normal(3.0, 2.0)).collect();
        let m = DifficultyModel::estimate_offline(&xs).unwrap();
        assert!((m.mu - 3.0).abs() < 0.2 && (m.var - 4.0).abs() < 0.6, "{m:?}");
    }

    #[test]
    fn scheme_parsing() {
        for k in SchemeKind::ALL {
            assert_eq!(k.name().parse::<SchemeKind>().unwrap(), k);
        }
        assert!("medium".parse::<SchemeKind>().is_err());
        assert_eq!(SamplingScheme::new(SchemeKind::Hard, ProposalMode::Online).progress, None);
        assert!(SamplingScheme::baseline().at_progress(1.5).is_err());
    }
}
