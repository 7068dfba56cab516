//! Difficulty analysis: Shapiro-Wilk, Spearman, histogram and Q-Q tables,
//! extreme-episode tracking and weighted-loss dispersion.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use thiserror::Error;

use crate::rng::Stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("Shapiro-Wilk supports at most 5000 values, got {0}")]
    TooMany(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("ranks have zero variance; correlation undefined")]
    ZeroRankVariance,
    #[error("sample is constant")]
    Degenerate,
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, StatsError>;

fn check_finite(xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StatsError::NonFinite(i)),
        None => Ok(()),
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Inverse of the standard normal CDF (Wichura's AS 241, about 1e-16
/// relative accuracy).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::Probability(p));
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < 0.0 { -x } else { x })
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: xs.len(),
        });
    }
    check_finite(xs)?;
    check_finite(ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys)).ok_or(StatsError::ZeroRankVariance)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p: f64,
}

/// Shapiro-Wilk W and its p-value (Royston's AS R94 approximation).
pub fn shapiro_wilk(sample: &[f64]) -> Result<ShapiroWilk> {
    let n = sample.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    if n > 5000 {
        return Err(StatsError::TooMany(n));
    }
    check_finite(sample)?;
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    if x[n - 1] == x[0] {
        return Err(StatsError::Degenerate);
    }
    let median = x[n / 2];
    for v in &mut x {
        *v -= median;
    }

    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let nn2 = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; nn2];
    if n == 3 {
        a[0] = SQRT_2 / 2.0;
    } else {
        let m: Vec<f64> = (0..nn2)
            .map(|i| normal_quantile((i as f64 + 1.0 - 0.375) / (an + 0.25)))
            .collect::<Result<_>>()?;
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first..nn2 {
            a[i] = -m[i] / fac;
        }
    }

    // antisymmetric coefficient for each order statistic
    let coef = |i: usize| -> f64 {
        if i < nn2 {
            -a[i]
        } else if n - 1 - i < nn2 {
            a[n - 1 - i]
        } else {
            0.0
        }
    };
    let range = x[n - 1] - x[0];
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let sx = xs.iter().sum::<f64>() / an;
    let sa = (0..n).map(coef).sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, xi) in xs.iter().enumerate() {
        let da = coef(i) - sa;
        let dx = xi - sx;
        ssa += da * da;
        ssx += dx * dx;
        sax += da * dx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = ((ssassx - sax) * (ssassx + sax) / (ssa * ssx)).max(0.0);
    let w = 1.0 - w1;

    if n == 3 {
        let p = (1.0 - 6.0 / PI * w.sqrt().min(1.0).acos()).max(0.0);
        return Ok(ShapiroWilk { w: w.max(0.75), p });
    }
    let y = w1.ln();
    let p = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            1e-19
        } else {
            let y = -(gamma - y).ln();
            let m = poly(&C3, an);
            let s = poly(&C4, an).exp();
            normal_sf((y - m) / s)
        }
    } else {
        let xx = an.ln();
        let m = poly(&C5, xx);
        let s = poly(&C6, xx).exp();
        normal_sf((y - m) / s)
    };
    Ok(ShapiroWilk { w, p })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionRate {
    pub rate: f64,
    /// Subsamples with zero range; counted as not rejected.
    pub degenerate: usize,
}

/// Fraction of `repetitions` subsamples (drawn without replacement) whose
/// Shapiro-Wilk p-value falls below `alpha`.
pub fn normality_rejection_rate(
    values: &[f64],
    subsample_size: usize,
    repetitions: usize,
    alpha: f64,
    rng: &mut Stream,
) -> Result<RejectionRate> {
    if repetitions == 0 {
        return Err(StatsError::Invalid("repetitions must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    if subsample_size < 3 {
        return Err(StatsError::TooFew {
            needed: 3,
            got: subsample_size,
        });
    }
    if values.len() < subsample_size {
        return Err(StatsError::TooFew {
            needed: subsample_size,
            got: values.len(),
        });
    }
    check_finite(values)?;
    let mut rejected = 0;
    let mut degenerate = 0;
    for _ in 0..repetitions {
        let sub: Vec<f64> = rng
            .sample_indices(values.len(), subsample_size)
            .into_iter()
            .map(|i| values[i])
            .collect();
        match shapiro_wilk(&sub) {
            Ok(r) if r.p < alpha => rejected += 1,
            Ok(_) => {}
            Err(StatsError::Degenerate) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(RejectionRate {
        rate: rejected as f64 / repetitions as f64,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub width: f64,
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QqPoint {
    pub theoretical: f64,
    pub sample: f64,
}

/// Normal reference for the Q-Q table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QqReference {
    /// Same mean and standard deviation as the sample.
    Fitted,
    Fixed { mean: f64, sd: f64 },
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Equal-width histogram over `[min, max]` normalized to unit area, and the
/// Q-Q table at plotting positions `(i − 0.5)/N`.
pub fn export_density_and_qq(
    values: &[f64],
    bins: usize,
    reference: QqReference,
) -> Result<(Vec<HistogramBin>, Vec<QqPoint>)> {
    if values.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: values.len(),
        });
    }
    if bins == 0 {
        return Err(StatsError::Invalid("bins must be positive".into()));
    }
    check_finite(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let (lo, span) = if hi > lo { (lo, hi - lo) } else { (lo - 0.5, 1.0) };
    let width = span / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in &sorted {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let hist = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| HistogramBin {
            left: lo + i as f64 * width,
            width,
            density: c as f64 / (n as f64 * width),
        })
        .collect();

    let (mean, sd) = match reference {
        QqReference::Fitted => mean_sd(&sorted),
        QqReference::Fixed { mean, sd } => (mean, sd),
    };
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let z = normal_quantile((i as f64 + 0.5) / n as f64)?;
            Ok(QqPoint {
                theoretical: mean + sd * z,
                sample: s,
            })
        })
        .collect::<Result<_>>()?;
    Ok((hist, qq))
}

/// Local maxima of the histogram after a centered moving average of
/// `window` bins.
pub fn count_modes(hist: &[HistogramBin], window: usize) -> usize {
    let d: Vec<f64> = hist.iter().map(|b| b.density).collect();
    let half = window / 2;
    let smooth: Vec<f64> = (0..d.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half).min(d.len() - 1);
            d[a..=b].iter().sum::<f64>() / (b - a + 1) as f64
        })
        .collect();
    // plateaus count once
    let mut modes = 0;
    let mut i = 0;
    while i < smooth.len() {
        let mut j = i;
        while j + 1 < smooth.len() && smooth[j + 1] == smooth[i] {
            j += 1;
        }
        let left_lower = i == 0 || smooth[i - 1] < smooth[i];
        let right_lower = j + 1 == smooth.len() || smooth[j + 1] < smooth[i];
        if left_lower && right_lower {
            modes += 1;
        }
        i = j + 1;
    }
    modes
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremesRow {
    pub checkpoint: usize,
    pub easy_mean: f64,
    pub hard_mean: f64,
}

/// Selects the `m` easiest and `m` hardest episodes by `selection` and
/// reports each group's mean difficulty at every checkpoint. Every row of
/// `checkpoints` scores the same episodes as `selection`.
pub fn track_extremes(
    selection: &[f64],
    checkpoints: &[Vec<f64>],
    m: usize,
) -> Result<Vec<ExtremesRow>> {
    if m == 0 {
        return Err(StatsError::Invalid("m must be positive".into()));
    }
    if selection.len() < 2 * m {
        return Err(StatsError::TooFew {
            needed: 2 * m,
            got: selection.len(),
        });
    }
    check_finite(selection)?;
    let mut order: Vec<usize> = (0..selection.len()).collect();
    order.sort_by(|&a, &b| selection[a].total_cmp(&selection[b]).then(a.cmp(&b)));
    let easy = &order[..m];
    let hard = &order[order.len() - m..];
    checkpoints
        .iter()
        .enumerate()
        .map(|(c, scores)| {
            if scores.len() != selection.len() {
                return Err(StatsError::LengthMismatch(selection.len(), scores.len()));
            }
            check_finite(scores)?;
            let mean = |idx: &[usize]| idx.iter().map(|&i| scores[i]).sum::<f64>() / m as f64;
            Ok(ExtremesRow {
                checkpoint: c,
                easy_mean: mean(easy),
                hard_mean: mean(hard),
            })
        })
        .collect()
}

/// Sample standard deviation.
pub fn sample_std(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: xs.len(),
        });
    }
    Ok(mean_sd(xs).1)
}

/// Mean over batches of the sample std of `w·NLL` within each batch. Each
/// batch is a list of `(weight, nll)` pairs.
pub fn weighted_loss_std(batches: &[Vec<(f64, f64)>]) -> Result<f64> {
    if batches.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for batch in batches {
        let products: Vec<f64> = batch.iter().map(|(w, l)| w * l).collect();
        check_finite(&products)?;
        total += sample_std(&products)?;
    }
    Ok(total / batches.len() as f64)
}

pub fn histogram_csv(hist: &[HistogramBin]) -> String {
    let mut s = String::from("bin_left,density\n");
    for b in hist {
        let _ = writeln!(s, "{},{}", b.left, b.density);
    }
    s
}

pub fn qq_csv(qq: &[QqPoint]) -> String {
    let mut s = String::from("theoretical_q,sample_q\n");
    for p in qq {
        let _ = writeln!(s, "{},{}", p.theoretical, p.sample);
    }
    s
}

pub fn extremes_csv(rows: &[ExtremesRow]) -> String {
    let mut s = String::from("checkpoint,easy_mean,hard_mean\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.checkpoint, r.easy_mean, r.hard_mean);
    }
    s
}

pub fn dispersion_csv(rows: &[(String, f64)]) -> String {
    let mut s = String::from("run_id,mean_batch_std\n");
    for (id, v) in rows {
        let _ = writeln!(s, "{id},{v}");
    }
    s
}
