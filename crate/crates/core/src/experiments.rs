//! Desk-scale studies: estimator convergence rates, quadratic-form
//! concentration, Mercer assumption sweeps and Monte Carlo approximation of
//! the population ridge solution g_λ.
//!
//! Every study is a pure function of its config. Cells run in parallel and
//! results are sorted before they are returned, so output does not depend on
//! the thread count.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concentration::{self, gaussian_truncation, QuadFormSample, RateParams, TailRow};
use crate::dynamics::{lag_embed, simulate_var, stationary_sample, RegressionFunctionSpec, VarModel, DEFAULT_BURN_IN};
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{cross_kernel_vector, gram_matrix, KernelFamily, MultivariateKernelSpec};
use crate::krr::{self, FittedModel};
use crate::mercer::{self, MercerExpansion};
use crate::table;

/// Lattice resolution floor per coordinate.
pub const MIN_GRID_POINTS: usize = 17;
/// Hard cap on the number of lattice points.
pub const MAX_GRID_SIZE: usize = 1_000_000;
/// Smallest π-sample accepted by [`GLambdaApprox`].
pub const MIN_PI_SAMPLE: usize = 100;

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

/// SplitMix64 finalizer; maps (seed, a, b) to a well-mixed child seed.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Regularization as a function of the series length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaRule {
    Fixed { value: f64 },
    /// λ(T) = scale · T^exponent.
    Power { scale: f64, exponent: f64 },
}

impl LambdaRule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            LambdaRule::Fixed { value } => value,
            LambdaRule::Power { scale, exponent } => scale * (t as f64).powf(exponent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LambdaRule::Fixed { value } => value > 0.0 && value.is_finite(),
            LambdaRule::Power { scale, exponent } => scale > 0.0 && scale.is_finite() && exponent.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("invalid lambda rule {self:?}"))
        }
    }
}

/// Finite set of points on which sup-norms are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalGrid {
    /// Uniform tensor lattice over the box [lo, hi].
    Lattice { lo: Vec<f64>, hi: Vec<f64>, points_per_axis: usize },
    Points { points: Vec<Vec<f64>> },
    /// Lattice over the box of per-coordinate sample quantiles
    /// [q_level, q_{1−level}] of a reference sample.
    Quantiles { level: f64, points_per_axis: usize },
}

impl EvalGrid {
    /// Cube [−half_width, half_width]^dim.
    pub fn cube(dim: usize, half_width: f64, points_per_axis: usize) -> Self {
        EvalGrid::Lattice { lo: vec![-half_width; dim], hi: vec![half_width; dim], points_per_axis }
    }

    /// Resolves a [`EvalGrid::Quantiles`] grid against `sample`; other kinds
    /// are returned unchanged.
    pub fn resolve(&self, sample: &[Vec<f64>]) -> Result<EvalGrid> {
        let EvalGrid::Quantiles { level, points_per_axis } = *self else {
            return Ok(self.clone());
        };
        if !(level > 0.0 && level < 0.5) {
            return invalid(format!("quantile box level must lie in (0, 1/2), got {level}"));
        }
        let Some(first) = sample.first() else {
            return invalid("quantile box needs a nonempty sample");
        };
        let dim = first.len();
        let (mut lo, mut hi) = (Vec::with_capacity(dim), Vec::with_capacity(dim));
        for j in 0..dim {
            let mut col = sample.iter().map(|z| z.get(j).copied()).collect::<Option<Vec<f64>>>().ok_or(
                Error::DimensionMismatch { expected: dim, got: sample.iter().map(Vec::len).min().unwrap_or(0) },
            )?;
            col.sort_by(f64::total_cmp);
            lo.push(quantile(&col, level)?);
            hi.push(quantile(&col, 1.0 - level)?);
        }
        Ok(EvalGrid::Lattice { lo, hi, points_per_axis })
    }

    pub fn points(&self, dim: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            EvalGrid::Quantiles { .. } => invalid("quantile box grid must be resolved against a sample first"),
            EvalGrid::Points { points } => {
                if points.is_empty() {
                    return invalid("evaluation grid is empty");
                }
                for z in points {
                    check_dim(dim, z.len())?;
                    if z.iter().any(|v| !v.is_finite()) {
                        return invalid("evaluation grid point is not finite");
                    }
                }
                Ok(points.clone())
            }
            EvalGrid::Lattice { lo, hi, points_per_axis } => {
                check_dim(dim, lo.len())?;
                check_dim(dim, hi.len())?;
                let n = *points_per_axis;
                if n < MIN_GRID_POINTS {
                    return invalid(format!("lattice needs at least {MIN_GRID_POINTS} points per axis, got {n}"));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
                    return invalid("lattice bounds must be finite with lo < hi");
                }
                let total = (n as f64).powi(dim as i32);
                if total > MAX_GRID_SIZE as f64 {
                    return Err(Error::Resource(format!("lattice of {total} points exceeds {MAX_GRID_SIZE}")));
                }
                let total = total as usize;
                let mut out = Vec::with_capacity(total);
                let mut idx = vec![0usize; dim];
                for _ in 0..total {
                    out.push(
                        (0..dim).map(|j| lo[j] + (hi[j] - lo[j]) * idx[j] as f64 / (n - 1) as f64).collect(),
                    );
                    for j in (0..dim).rev() {
                        idx[j] += 1;
                        if idx[j] < n {
                            break;
                        }
                        idx[j] = 0;
                    }
                }
                Ok(out)
            }
        }
    }

    /// max_j max(|lo_j|, |hi_j|) over the lattice, or over the points.
    pub fn sup_radius(&self) -> f64 {
        match self {
            EvalGrid::Lattice { lo, hi, .. } => lo.iter().chain(hi).fold(0.0, |m, v| m.max(v.abs())),
            EvalGrid::Points { points } => points.iter().flatten().fold(0.0, |m, v| m.max(v.abs())),
            EvalGrid::Quantiles { .. } => f64::NAN,
        }
    }
}

/// max over grid of ‖ĝ(z) − g(z)‖∞.
pub fn sup_grid_error(model: &FittedModel, g: &RegressionFunctionSpec, grid: &[Vec<f64>]) -> Result<f64> {
    let d = model.d();
    let preds = model.predict_many(grid)?;
    Ok(grid
        .iter()
        .zip(&preds)
        .map(|(z, ghat)| g.eval(z, d).iter().zip(ghat).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        .fold(0.0, f64::max))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (type 7). `sorted` must be ascending.
pub fn quantile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&q) {
        return invalid(format!("quantile {q} of {} values", sorted.len()));
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Ordinary least squares fit y = intercept + slope·x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Two standard errors of the slope; absent with fewer than three points.
    pub half_width: Option<f64>,
}

pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<SlopeFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !slope.is_finite() {
        return None;
    }
    let half_width = (n > 2).then(|| {
        let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        2.0 * (rss / (n - 2) as f64 / sxx).sqrt()
    });
    Some(SlopeFit { slope, intercept, half_width })
}

fn check_t_grid(t_grid: &[usize], p: usize) -> Result<()> {
    if t_grid.is_empty() {
        return invalid("T-grid is empty");
    }
    if t_grid[0] <= p {
        return invalid(format!("every T must exceed p = {p}"));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return invalid("T-grid must be strictly increasing");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Rate study

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateStudyConfig {
    pub model: VarModel,
    pub kernel: MultivariateKernelSpec,
    pub lambda: LambdaRule,
    pub t_grid: Vec<usize>,
    pub replicates: usize,
    pub grid: EvalGrid,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub seed: u64,
}

impl RateStudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.lambda.validate()?;
        check_dim(self.model.d, self.kernel.output_dim())?;
        check_dim(self.model.d * self.model.p, self.kernel.input_dim())?;
        check_t_grid(&self.t_grid, self.model.p)?;
        if self.replicates < 3 {
            return invalid(format!("rate study needs at least 3 replicates, got {}", self.replicates));
        }
        if matches!(self.grid, EvalGrid::Quantiles { .. }) {
            return invalid("rate study grid must be a lattice or explicit points");
        }
        self.grid.points(self.model.d * self.model.p)?;
        if let Some(mg) = self.model.g.sup_bound() {
            let limit = mg + 4.0 * self.model.noise.sigma_max();
            let r = self.grid.sup_radius();
            if r > limit * (1.0 + 1e-12) {
                return invalid(format!("evaluation grid reaches {r}, outside the support box of radius {limit}"));
            }
        }
        Ok(())
    }

    /// Seed of the trajectory for grid cell (T index, replicate).
    pub fn cell_seed(&self, t_index: usize, replicate: usize) -> u64 {
        derive_seed(self.seed, t_index as u64, replicate as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub t: usize,
    pub replicate: usize,
    pub seed: u64,
    pub lambda: f64,
    pub sup_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateStudyResult {
    /// Sorted by (T, replicate).
    pub rows: Vec<RateRow>,
    /// (T, median sup error) per grid value.
    pub medians: Vec<(usize, f64)>,
    /// Slope of log median error against log T; absent for a single T.
    pub slope: Option<SlopeFit>,
    pub grid_size: usize,
}

impl RateStudyResult {
    pub fn medians_strictly_decreasing(&self) -> bool {
        self.medians.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        table::write_csv(
            w,
            &["T", "replicate", "sup_error"],
            self.rows.iter().map(|r| vec![r.t.to_string(), r.replicate.to_string(), table::fmt_f64(r.sup_error)]),
        )
    }
}

/// Simulates, fits and scores one rate-study cell.
pub fn rate_cell(cfg: &RateStudyConfig, grid: &[Vec<f64>], t_index: usize, replicate: usize) -> Result<RateRow> {
    let t = cfg.t_grid[t_index];
    let seed = cfg.cell_seed(t_index, replicate);
    let lambda = cfg.lambda.at(t);
    let traj = simulate_var(&cfg.model, t, cfg.burn_in, seed)?;
    let set = lag_embed(&traj, cfg.model.p)?;
    let fitted = krr::fit(&cfg.kernel, &set, lambda)?;
    let sup_error = sup_grid_error(&fitted, &cfg.model.g, grid)?;
    Ok(RateRow { t, replicate, seed, lambda, sup_error })
}

pub fn rate_study(cfg: &RateStudyConfig) -> Result<RateStudyResult> {
    cfg.validate()?;
    let grid = cfg.grid.points(cfg.model.d * cfg.model.p)?;
    let cells: Vec<(usize, usize)> =
        (0..cfg.t_grid.len()).flat_map(|i| (0..cfg.replicates).map(move |r| (i, r))).collect();
    let mut rows = cells.par_iter().map(|&(i, r)| rate_cell(cfg, &grid, i, r)).collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| (r.t, r.replicate));
    let medians: Vec<(usize, f64)> = cfg
        .t_grid
        .iter()
        .map(|&t| {
            let mut errs: Vec<f64> = rows.iter().filter(|r| r.t == t).map(|r| r.sup_error).collect();
            (t, median(&mut errs))
        })
        .collect();
    let xs: Vec<f64> = medians.iter().map(|(t, _)| (*t as f64).ln()).collect();
    let ys: Vec<f64> = medians.iter().map(|(_, m)| m.ln()).collect();
    let slope = if medians.iter().all(|(_, m)| *m > 0.0) { fit_slope(&xs, &ys) } else { None };
    Ok(RateStudyResult { rows, medians, slope, grid_size: grid.len() })
}

// ---------------------------------------------------------------------------
// Concentration study

/// Growth constants (b₁, b₂) and truncation M(T) for the reference curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthOverride {
    pub b1: f64,
    pub b2: f64,
    /// Fixed truncation level; ⌈log T⌉ when absent.
    #[serde(default)]
    pub m: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationStudyConfig {
    pub model: VarModel,
    pub kernel: MultivariateKernelSpec,
    pub t_grid: Vec<usize>,
    pub replicates: usize,
    /// Thresholds δ at which P((1/T²)η'Kη > δ²) is estimated.
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub growth: Option<GrowthOverride>,
}

impl ConcentrationStudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        check_dim(self.model.d, self.kernel.output_dim())?;
        check_dim(self.model.d * self.model.p, self.kernel.input_dim())?;
        check_t_grid(&self.t_grid, self.model.p)?;
        if self.replicates == 0 {
            return invalid("concentration study needs at least one replicate");
        }
        if self.deltas.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return invalid("deltas must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn cell_seed(&self, t_index: usize, replicate: usize) -> u64 {
        derive_seed(self.seed, t_index as u64, replicate as u64)
    }

    /// (b₁, b₂, M(T)) used by the reference curve.
    pub fn growth_at(&self, t: usize) -> (f64, f64, u32) {
        if let Some(g) = self.growth {
            return (g.b1, g.b2, g.m.unwrap_or_else(|| gaussian_truncation(t)));
        }
        let spec = &self.kernel.components()[0];
        let dp = spec.input_dim();
        match *spec.family() {
            KernelFamily::Gaussian { .. } => {
                let (b1, b2) = mercer::gaussian_growth_constants(dp);
                (b1, b2, gaussian_truncation(t))
            }
            KernelFamily::PeriodicSobolev { sigma2, s } => {
                let b1: f64 = (1..=100_000u32).map(|k| 2.0 * sigma2 * (2.0 * std::f64::consts::PI * k as f64).powi(-2 * s as i32)).sum();
                (b1, 0.0, t as u32)
            }
            KernelFamily::Polynomial { m, .. } => (1.0, 0.0, m),
            KernelFamily::MercerSigmoid { .. } => (1.0, 0.0, 1),
        }
    }

    /// (log T/T)·L^{b₂}·γ² with L = M(T) and γ the Gaussian truncation threshold.
    pub fn reference(&self, t: usize) -> Result<f64> {
        let (b1, b2, m) = self.growth_at(t);
        let sigma = self.model.noise.sigma_max();
        let params = RateParams::new(t, self.model.d, sigma, b1, b2, m.max(1))?;
        let gamma = concentration::gamma_threshold(&params)?;
        let tf = t as f64;
        Ok(tf.ln() / tf * (m.max(1) as f64).powf(b2) * gamma * gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileRow {
    pub t: usize,
    pub q90: f64,
    pub q99: f64,
    pub reference: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationStudyResult {
    /// Per T, samples ordered by replicate.
    pub samples: Vec<(usize, Vec<QuadFormSample>)>,
    pub quantiles: Vec<QuantileRow>,
    pub tails: Vec<TailRow>,
}

impl ConcentrationStudyResult {
    /// max/min over the T-grid of q₀.₉·T/log T.
    pub fn rescaled_q90_drift(&self) -> f64 {
        let v: Vec<f64> = self.quantiles.iter().map(|q| q.q90 * q.t as f64 / (q.t as f64).ln()).collect();
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        hi / lo
    }

    pub fn samples_at(&self, t: usize) -> Option<&[QuadFormSample]> {
        self.samples.iter().find(|(tt, _)| *tt == t).map(|(_, s)| s.as_slice())
    }

    pub fn write_quantiles_csv<W: Write>(&self, w: W) -> Result<()> {
        table::write_csv(
            w,
            &["T", "q90", "q99", "reference", "n_samples"],
            self.quantiles.iter().map(|q| {
                vec![
                    q.t.to_string(),
                    table::fmt_f64(q.q90),
                    table::fmt_f64(q.q99),
                    table::fmt_f64(q.reference),
                    q.n_samples.to_string(),
                ]
            }),
        )
    }

    pub fn write_tails_csv<W: Write>(&self, w: W) -> Result<()> {
        concentration::write_tail_csv(w, &self.tails)
    }

    pub fn write_samples_csv<W: Write>(&self, w: W) -> Result<()> {
        table::write_csv(
            w,
            &["T", "replicate", "value"],
            self.samples.iter().flat_map(|(t, s)| {
                s.iter().enumerate().map(move |(r, q)| vec![t.to_string(), r.to_string(), table::fmt_f64(q.value)])
            }),
        )
    }
}

pub fn concentration_study(cfg: &ConcentrationStudyConfig) -> Result<ConcentrationStudyResult> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> =
        (0..cfg.t_grid.len()).flat_map(|i| (0..cfg.replicates).map(move |r| (i, r))).collect();
    let flat = cells
        .par_iter()
        .map(|&(i, r)| {
            concentration::simulate_quadratic_form(&cfg.model, &cfg.kernel, cfg.t_grid[i], cfg.burn_in, cfg.cell_seed(i, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(cfg.t_grid.len());
    let mut quantiles = Vec::with_capacity(cfg.t_grid.len());
    let mut tails = Vec::new();
    for (i, &t) in cfg.t_grid.iter().enumerate() {
        let s: Vec<QuadFormSample> = flat[i * cfg.replicates..(i + 1) * cfg.replicates].to_vec();
        let mut sorted: Vec<f64> = s.iter().map(|q| q.value).collect();
        sorted.sort_by(f64::total_cmp);
        quantiles.push(QuantileRow {
            t,
            q90: quantile(&sorted, 0.9)?,
            q99: quantile(&sorted, 0.99)?,
            reference: cfg.reference(t)?,
            n_samples: s.len(),
        });
        for &delta in &cfg.deltas {
            tails.push(TailRow { t, delta, empirical_tail: concentration::empirical_tail(&s, delta)?, n_samples: s.len() });
        }
        samples.push((t, s));
    }
    Ok(ConcentrationStudyResult { samples, quantiles, tails })
}

/// Two-sample check that Q(2σ) is distributed as 4·Q(σ).
///
/// c is the pooled `level` quantile of {4·Q(σ)} ∪ {Q(2σ)}; the exceedance
/// fractions above c must differ by at most `width` pooled binomial standard
/// errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomogeneityCheck {
    pub threshold: f64,
    pub exceed_scaled: f64,
    pub exceed_doubled: f64,
    pub band: f64,
    /// q_level(Q(2σ)) / q_level(Q(σ)); 4 under exact homogeneity.
    pub quantile_ratio: f64,
    pub holds: bool,
}

pub fn homogeneity_check(base: &[f64], doubled: &[f64], level: f64, width: f64) -> Result<HomogeneityCheck> {
    if base.is_empty() || doubled.is_empty() {
        return invalid("homogeneity check needs samples at both noise levels");
    }
    let mut pooled: Vec<f64> = base.iter().map(|v| 4.0 * v).chain(doubled.iter().cloned()).collect();
    pooled.sort_by(f64::total_cmp);
    let threshold = quantile(&pooled, level)?;
    let frac = |v: &mut dyn Iterator<Item = f64>, n: usize| v.filter(|x| *x > threshold).count() as f64 / n as f64;
    let exceed_scaled = frac(&mut base.iter().map(|v| 4.0 * v), base.len());
    let exceed_doubled = frac(&mut doubled.iter().cloned(), doubled.len());
    let p = (exceed_scaled * base.len() as f64 + exceed_doubled * doubled.len() as f64)
        / (base.len() + doubled.len()) as f64;
    let band = width * (p * (1.0 - p) * (1.0 / base.len() as f64 + 1.0 / doubled.len() as f64)).sqrt();
    let mut b: Vec<f64> = base.to_vec();
    let mut d: Vec<f64> = doubled.to_vec();
    b.sort_by(f64::total_cmp);
    d.sort_by(f64::total_cmp);
    let quantile_ratio = quantile(&d, level)? / quantile(&b, level)?;
    Ok(HomogeneityCheck {
        threshold,
        exceed_scaled,
        exceed_doubled,
        band,
        quantile_ratio,
        holds: (exceed_scaled - exceed_doubled).abs() <= band,
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo approximation of g_λ

/// z ↦ K_z(K_ππ + λn·I)⁻¹g(π), one factorization per distinct kernel
/// component.
#[derive(Debug, Clone)]
pub struct GLambdaApprox {
    kernel: MultivariateKernelSpec,
    sample: Vec<Vec<f64>>,
    /// alpha[i] are the weights of output dimension i.
    alpha: Vec<Vec<f64>>,
    lambda: f64,
}

impl GLambdaApprox {
    pub fn new(
        g: &RegressionFunctionSpec,
        kernel: &MultivariateKernelSpec,
        lambda: f64,
        pi_sample: &[Vec<f64>],
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return invalid(format!("lambda must be positive, got {lambda}"));
        }
        let n = pi_sample.len();
        if n < MIN_PI_SAMPLE {
            return invalid(format!("π-sample needs at least {MIN_PI_SAMPLE} points, got {n}"));
        }
        let d = kernel.output_dim();
        let dp = kernel.input_dim();
        g.validate(d, dp / d)?;
        let targets: Vec<Vec<f64>> = pi_sample.iter().map(|z| g.eval(z, d)).collect();
        let specs = kernel.components();
        let mut alpha = vec![Vec::new(); d];
        for i in 0..d {
            if !alpha[i].is_empty() {
                continue;
            }
            let gram = gram_matrix(&specs[i], pi_sample)?.into_entries();
            let fac = krr::factorize(&gram, lambda * n as f64)?;
            for j in i..d {
                if specs[j] == specs[i] {
                    let y = DVector::from_iterator(n, targets.iter().map(|t| t[j]));
                    alpha[j] = fac.chol.solve(&y).iter().cloned().collect();
                }
            }
        }
        Ok(GLambdaApprox { kernel: kernel.clone(), sample: pi_sample.to_vec(), alpha, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.kernel.input_dim(), z.len())?;
        let specs = self.kernel.components();
        let mut out = vec![0.0; specs.len()];
        let mut cache: Option<(usize, Vec<f64>)> = None;
        for (i, spec) in specs.iter().enumerate() {
            let kz = match &cache {
                Some((j, v)) if specs[*j] == *spec => v.clone(),
                _ => {
                    let v = cross_kernel_vector(spec, z, &self.sample)?;
                    cache = Some((i, v.clone()));
                    v
                }
            };
            out[i] = kz.iter().zip(&self.alpha[i]).map(|(k, a)| k * a).sum();
        }
        Ok(out)
    }

    /// max over grid of ‖approx(z) − g(z)‖∞.
    pub fn sup_gap(&self, g: &RegressionFunctionSpec, grid: &[Vec<f64>]) -> Result<f64> {
        let d = self.kernel.output_dim();
        let gaps = grid
            .par_iter()
            .map(|z| {
                let a = self.eval(z)?;
                Ok(g.eval(z, d).iter().zip(&a).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(gaps.into_iter().fold(0.0, f64::max))
    }
}

/// Monte Carlo approximation of g_λ(z) from a sample of the stationary law.
pub fn approx_g_lambda(
    g: &RegressionFunctionSpec,
    kernel: &MultivariateKernelSpec,
    lambda: f64,
    pi_sample: &[Vec<f64>],
    z: &[f64],
) -> Result<Vec<f64>> {
    GLambdaApprox::new(g, kernel, lambda, pi_sample)?.eval(z)
}

/// Where the π-sample comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PiSampleSpec {
    /// Lag windows of a simulated chain, thinned by `gap`.
    Stationary {
        n: usize,
        gap: usize,
        #[serde(default = "default_burn_in")]
        burn_in: usize,
    },
    Points { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapStudyConfig {
    pub model: VarModel,
    pub kernel: MultivariateKernelSpec,
    pub lambdas: Vec<f64>,
    pub pi_sample: PiSampleSpec,
    pub grid: EvalGrid,
    pub seed: u64,
}

impl GapStudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        check_dim(self.model.d, self.kernel.output_dim())?;
        check_dim(self.model.d * self.model.p, self.kernel.input_dim())?;
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return invalid("lambda grid must be nonempty and positive");
        }
        if !matches!(self.grid, EvalGrid::Quantiles { .. }) {
            self.grid.points(self.model.d * self.model.p)?;
        }
        Ok(())
    }

    pub fn draw_pi_sample(&self) -> Result<Vec<Vec<f64>>> {
        match &self.pi_sample {
            PiSampleSpec::Stationary { n, gap, burn_in } => {
                stationary_sample(&self.model, *n, *gap, *burn_in, self.seed)
            }
            PiSampleSpec::Points { points } => Ok(points.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GapStudyResult {
    /// (λ, gap) in grid order.
    pub rows: Vec<(f64, f64)>,
    /// Slope of log gap against log λ; absent for a single λ.
    pub slope: Option<SlopeFit>,
}

impl GapStudyResult {
    pub fn gaps_strictly_decreasing_in_lambda(&self) -> bool {
        let mut r = self.rows.clone();
        r.sort_by(|a, b| b.0.total_cmp(&a.0));
        r.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        table::write_csv(
            w,
            &["lambda", "gap"],
            self.rows.iter().map(|(l, g)| vec![table::fmt_f64(*l), table::fmt_f64(*g)]),
        )
    }
}

pub fn g_lambda_gap_study(
    g: &RegressionFunctionSpec,
    kernel: &MultivariateKernelSpec,
    lambdas: &[f64],
    pi_sample: &[Vec<f64>],
    grid: &[Vec<f64>],
) -> Result<GapStudyResult> {
    if lambdas.is_empty() || grid.is_empty() {
        return invalid("gap study needs a nonempty lambda grid and evaluation grid");
    }
    let rows = lambdas
        .par_iter()
        .map(|&l| Ok((l, GLambdaApprox::new(g, kernel, l, pi_sample)?.sup_gap(g, grid)?)))
        .collect::<Result<Vec<_>>>()?;
    let slope = if rows.iter().all(|(_, g)| *g > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|(l, _)| l.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|(_, g)| g.ln()).collect();
        fit_slope(&xs, &ys)
    } else {
        None
    };
    Ok(GapStudyResult { rows, slope })
}

pub fn run_gap_study(cfg: &GapStudyConfig) -> Result<GapStudyResult> {
    cfg.validate()?;
    let pi = cfg.draw_pi_sample()?;
    let grid = cfg.grid.resolve(&pi)?.points(cfg.model.d * cfg.model.p)?;
    g_lambda_gap_study(&cfg.model.g, &cfg.kernel, &cfg.lambdas, &pi, &grid)
}

// ---------------------------------------------------------------------------
// Mercer assumption sweep

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MercerStudyConfig {
    pub kernel: crate::kernels::KernelSpec,
    /// Largest level for the β-growth check and the truncation sweep.
    pub max_level: u32,
    /// Pairs ‖x‖∞, ‖y‖∞ ≤ radius used by the truncation-error sweep.
    pub radius: f64,
    pub pairs: usize,
    /// Chain whose stationary law feeds the tail-moment check.
    #[serde(default)]
    pub model: Option<VarModel>,
    #[serde(default = "default_mercer_sample")]
    pub sample_size: usize,
    #[serde(default = "default_gap")]
    pub gap: usize,
    /// Series length T at which the tail bound β₁T^{−β₂} is evaluated.
    #[serde(default = "default_tail_t")]
    pub t: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    pub seed: u64,
}

fn default_mercer_sample() -> usize {
    2000
}
fn default_gap() -> usize {
    5
}
fn default_tail_t() -> usize {
    1000
}
fn default_beta1() -> f64 {
    1.0
}
fn default_beta2() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationRow {
    pub m: u32,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MercerStudyResult {
    pub truncation: Vec<TruncationRow>,
    pub beta_growth: Option<mercer::BetaGrowthCheck>,
    pub tail_moment: Option<mercer::TailMomentReport>,
}

impl MercerStudyResult {
    pub fn write_truncation_csv<W: Write>(&self, w: W) -> Result<()> {
        table::write_csv(
            w,
            &["M", "max_abs_error"],
            self.truncation.iter().map(|r| vec![r.m.to_string(), table::fmt_f64(r.max_abs_error)]),
        )
    }
}

pub fn mercer_study(cfg: &MercerStudyConfig) -> Result<MercerStudyResult> {
    use rand::{Rng, SeedableRng};
    if !(cfg.radius > 0.0 && cfg.radius.is_finite()) || cfg.pairs == 0 {
        return invalid("mercer study needs radius > 0 and at least one pair");
    }
    let exp = MercerExpansion::new(cfg.kernel);
    let dp = cfg.kernel.input_dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.pairs)
        .map(|_| {
            let mut draw = || (0..dp).map(|_| rng.random_range(-cfg.radius..=cfg.radius)).collect::<Vec<f64>>();
            (draw(), draw())
        })
        .collect();
    let top = exp.max_level().map_or(cfg.max_level, |m| m.min(cfg.max_level));
    let truncation = (0..=top)
        .into_par_iter()
        .map(|m| {
            let mut worst = 0.0f64;
            for (x, y) in &pairs {
                worst = worst.max((exp.truncated_eval(x, y, m)? - cfg.kernel.eval(x, y)?).abs());
            }
            Ok(TruncationRow { m, max_abs_error: worst })
        })
        .collect::<Result<Vec<_>>>()?;
    let beta_growth = match *cfg.kernel.family() {
        KernelFamily::Gaussian { .. } => {
            let (b1, b2) = mercer::gaussian_growth_constants(dp);
            Some(mercer::check_beta_growth(&exp, cfg.max_level, b1, b2)?)
        }
        _ => None,
    };
    let tail_moment = match &cfg.model {
        Some(model) => {
            check_dim(dp, model.d * model.p)?;
            let sample = stationary_sample(model, cfg.sample_size, cfg.gap, DEFAULT_BURN_IN, cfg.seed)?;
            let m_t = gaussian_truncation(cfg.t);
            Some(mercer::check_tail_moment(&exp, &sample, m_t, cfg.beta1, cfg.beta2, cfg.t)?)
        }
        None => None,
    };
    Ok(MercerStudyResult { truncation, beta_growth, tail_moment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::NoiseSpec;
    use crate::kernels::KernelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tanh_model(scale: f64, sigma: f64) -> VarModel {
        VarModel::new(
            RegressionFunctionSpec::TanhLinear { a: vec![vec![0.8, -0.3], vec![0.3, 0.6]], scale },
            NoiseSpec::gaussian(vec![sigma * sigma; 2]),
            2,
            1,
        )
        .unwrap()
    }

    fn gauss2() -> MultivariateKernelSpec {
        MultivariateKernelSpec::uniform(KernelSpec::gaussian(2.0, 2).unwrap(), 2).unwrap()
    }

    fn small_rate_cfg(model: VarModel, t_grid: Vec<usize>) -> RateStudyConfig {
        RateStudyConfig {
            model,
            kernel: gauss2(),
            lambda: LambdaRule::Fixed { value: 0.05 },
            t_grid,
            replicates: 3,
            grid: EvalGrid::cube(2, 0.5, 17),
            burn_in: 100,
            seed: 11,
        }
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for a in 0..20 {
            for b in 0..50 {
                assert!(seen.insert(derive_seed(5, a, b)));
            }
        }
        assert_ne!(derive_seed(1, 0, 0), derive_seed(2, 0, 0));
    }

    #[test]
    fn lattice_layout() {
        let pts = EvalGrid::Lattice { lo: vec![-1.0, 0.0], hi: vec![1.0, 2.0], points_per_axis: 17 }.points(2).unwrap();
        assert_eq!(pts.len(), 289);
        assert_eq!(pts[0], vec![-1.0, 0.0]);
        assert_eq!(pts[288], vec![1.0, 2.0]);
        assert_eq!(pts[1], vec![-1.0, 0.125]);
        assert!(EvalGrid::cube(2, 1.0, 16).points(2).is_err());
        assert!(matches!(EvalGrid::cube(6, 1.0, 17).points(6), Err(Error::Resource(_))));
        assert!(EvalGrid::Points { points: vec![] }.points(2).is_err());
    }

    #[test]
    fn quantile_box_resolves_to_sample_quantiles() {
        let sample: Vec<Vec<f64>> = (0..101).map(|i| vec![i as f64, -(i as f64)]).collect();
        let g = EvalGrid::Quantiles { level: 0.1, points_per_axis: 17 }.resolve(&sample).unwrap();
        assert_eq!(g, EvalGrid::Lattice { lo: vec![10.0, -90.0], hi: vec![90.0, -10.0], points_per_axis: 17 });
        assert!(EvalGrid::Quantiles { level: 0.1, points_per_axis: 17 }.points(2).is_err());
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 5.0);
        assert_eq!(quantile(&v, 0.9).unwrap(), 4.6);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn slope_of_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let f = fit_slope(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-14);
        assert!(f.half_width.unwrap() < 1e-12);
        assert!(fit_slope(&[1.0], &[1.0]).is_none());
        assert!(fit_slope(&[1.0, 2.0], &[1.0, 3.0]).unwrap().half_width.is_none());
    }

    #[test]
    fn rate_config_validation() {
        let base = small_rate_cfg(tanh_model(0.5, 0.3), vec![40, 80]);
        assert!(base.validate().is_ok());
        assert!(RateStudyConfig { replicates: 2, ..base.clone() }.validate().is_err());
        assert!(RateStudyConfig { t_grid: vec![80, 40], ..base.clone() }.validate().is_err());
        assert!(RateStudyConfig { t_grid: vec![], ..base.clone() }.validate().is_err());
        // M_g + 4σ = 0.5·√2 + 1.2 ≈ 1.907
        assert!(RateStudyConfig { grid: EvalGrid::cube(2, 1.9, 17), ..base.clone() }.validate().is_ok());
        assert!(RateStudyConfig { grid: EvalGrid::cube(2, 2.0, 17), ..base.clone() }.validate().is_err());
        assert!(RateStudyConfig { lambda: LambdaRule::Fixed { value: 0.0 }, ..base }.validate().is_err());
    }

    #[test]
    fn pure_noise_errors_equal_sup_of_fit() {
        let cfg = small_rate_cfg(tanh_model(0.5, 0.3), vec![40, 80]);
        let cfg = RateStudyConfig {
            model: VarModel { g: RegressionFunctionSpec::zero(2, 1), ..cfg.model.clone() },
            ..cfg
        };
        let res = rate_study(&cfg).unwrap();
        assert_eq!(res.rows.len(), 6);
        assert_eq!(res.grid_size, 289);
        let grid = cfg.grid.points(2).unwrap();
        for row in &res.rows {
            let traj = simulate_var(&cfg.model, row.t, cfg.burn_in, row.seed).unwrap();
            let fitted = krr::fit(&cfg.kernel, &lag_embed(&traj, 1).unwrap(), 0.05).unwrap();
            let sup = fitted.predict_many(&grid).unwrap().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            assert_eq!(sup, row.sup_error);
            assert!(row.sup_error > 0.0);
        }
        assert!(res.slope.unwrap().slope.is_finite());
    }

    #[test]
    fn rate_errors_survive_model_round_trip() {
        let cfg = small_rate_cfg(tanh_model(0.5, 0.3), vec![50]);
        let res = rate_study(&cfg).unwrap();
        let grid = cfg.grid.points(2).unwrap();
        for row in &res.rows {
            let traj = simulate_var(&cfg.model, row.t, cfg.burn_in, row.seed).unwrap();
            let mut csv = Vec::new();
            traj.write_csv(&mut csv).unwrap();
            let traj = crate::dynamics::Trajectory::read_csv(csv.as_slice()).unwrap();
            let fitted = krr::fit(&cfg.kernel, &lag_embed(&traj, 1).unwrap(), row.lambda).unwrap();
            let restored = FittedModel::from_json(&fitted.to_json().unwrap()).unwrap();
            assert_eq!(sup_grid_error(&restored, &cfg.model.g, &grid).unwrap(), row.sup_error);
        }
    }

    #[test]
    fn single_t_grid_has_no_slope() {
        let res = rate_study(&small_rate_cfg(tanh_model(0.5, 0.3), vec![40])).unwrap();
        assert!(res.slope.is_none());
        assert_eq!(res.rows.len(), 3);
        assert!(res.rows.iter().all(|r| r.sup_error >= 0.0));
    }

    #[test]
    fn rate_study_independent_of_thread_count() {
        let cfg = small_rate_cfg(tanh_model(0.5, 0.3), vec![30, 60]);
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = serial.install(|| rate_study(&cfg)).unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = wide.install(|| rate_study(&cfg)).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert!(String::from_utf8(ca).unwrap().starts_with("T,replicate,sup_error\n30,0,"));
    }

    #[test]
    fn noiseless_in_sample_error_is_ridge_residual() {
        let model = tanh_model(0.8, 0.3);
        let traj = simulate_var(&model, 40, 10, 3).unwrap();
        let windows = lag_embed(&traj, 1).unwrap().windows().to_vec();
        let targets: Vec<Vec<f64>> = windows.iter().map(|w| model.g.eval(w, 2)).collect();
        let set = crate::dynamics::TrainingSet::new(windows, targets, 1).unwrap();
        let mut prev = f64::INFINITY;
        for lambda in [1e-2, 1e-4, 1e-6] {
            let fitted = krr::fit(&gauss2(), &set, lambda).unwrap();
            let err = sup_grid_error(&fitted, &model.g, set.windows()).unwrap();
            let ridge = lambda * 40.0;
            let alpha_max = fitted.alpha().iter().flatten().fold(0.0f64, |m, a| m.max(a.abs()));
            assert!(err <= ridge * alpha_max * (1.0 + 1e-8) + 1e-12, "{err} vs {}", ridge * alpha_max);
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-3);
    }

    fn conc_cfg(sigma: f64, t_grid: Vec<usize>, replicates: usize) -> ConcentrationStudyConfig {
        ConcentrationStudyConfig {
            model: tanh_model(0.5, sigma),
            kernel: gauss2(),
            t_grid,
            replicates,
            deltas: vec![0.01, 0.05],
            burn_in: 50,
            seed: 4,
            growth: None,
        }
    }

    #[test]
    fn zero_noise_concentration_is_zero() {
        let res = concentration_study(&conc_cfg(0.0, vec![20, 40], 5)).unwrap();
        assert!(res.samples.iter().all(|(_, s)| s.iter().all(|q| q.value == 0.0)));
        assert!(res.tails.iter().all(|r| r.empirical_tail == 0.0));
        assert_eq!(res.tails.len(), 4);
    }

    #[test]
    fn concentration_tables() {
        let cfg = conc_cfg(0.3, vec![30, 60], 20);
        let res = concentration_study(&cfg).unwrap();
        assert_eq!(res.quantiles.len(), 2);
        for q in &res.quantiles {
            assert!(q.q90 <= q.q99 && q.q90 > 0.0);
            let tf = q.t as f64;
            let gamma = (4.0 * 0.09 * (2.0 * tf).ln()).sqrt();
            let reference = tf.ln() / tf * gamma * gamma; // b₂ = dp/2 − 1 = 0
            assert!((q.reference - reference).abs() <= 1e-12 * reference);
        }
        let again = concentration_study(&cfg).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        res.write_samples_csv(&mut a).unwrap();
        again.write_samples_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let mut t = Vec::new();
        res.write_tails_csv(&mut t).unwrap();
        assert!(String::from_utf8(t).unwrap().starts_with("T,delta,empirical_tail,n_samples\n"));
        let mut q = Vec::new();
        res.write_quantiles_csv(&mut q).unwrap();
        assert!(String::from_utf8(q).unwrap().starts_with("T,q90,q99,reference,n_samples\n"));
    }

    #[test]
    fn homogeneity_of_exactly_scaled_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base: Vec<f64> = (0..400).map(|_| rng.random::<f64>().powi(2)).collect();
        let doubled: Vec<f64> = base.iter().map(|v| 4.0 * v).collect();
        let h = homogeneity_check(&base, &doubled, 0.9, 3.0).unwrap();
        assert!(h.holds);
        assert_eq!(h.exceed_scaled, h.exceed_doubled);
        assert!((h.quantile_ratio - 4.0).abs() < 1e-12);
        let tripled: Vec<f64> = base.iter().map(|v| 9.0 * v).collect();
        assert!(!homogeneity_check(&base, &tripled, 0.9, 3.0).unwrap().holds);
    }

    fn sections_g() -> RegressionFunctionSpec {
        RegressionFunctionSpec::KernelSections {
            kernel: KernelSpec::gaussian(2.0, 2).unwrap(),
            centers: vec![vec![0.0, 0.0], vec![0.3, 0.3], vec![-0.3, 0.3], vec![0.3, -0.3], vec![-0.3, -0.3]],
            coefs: vec![vec![0.12, 0.08], vec![0.1, 0.1], vec![0.08, 0.12], vec![0.1, 0.09], vec![0.11, 0.1]],
        }
    }

    fn normal_sample(n: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..2).map(|_| 0.4 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect())
            .collect()
    }

    #[test]
    fn approx_g_lambda_basics() {
        let pi = normal_sample(200, 1);
        let z = [0.1, -0.2];
        let zero = approx_g_lambda(&RegressionFunctionSpec::zero(2, 1), &gauss2(), 0.1, &pi, &z).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        assert!(approx_g_lambda(&sections_g(), &gauss2(), 0.1, &pi[..99], &z).is_err());
        assert!(approx_g_lambda(&sections_g(), &gauss2(), 0.0, &pi, &z).is_err());
        // λn = 10⁸: ‖approx‖ ≤ n·κ²·‖g‖∞/(λn) with κ = 1.
        let n = pi.len() as f64;
        let g_sup = pi.iter().flat_map(|w| sections_g().eval(w, 2)).fold(0.0f64, |m, v| m.max(v.abs()));
        let shrunk = approx_g_lambda(&sections_g(), &gauss2(), 1e8 / n, &pi, &z).unwrap();
        for v in shrunk {
            assert!(v.abs() <= n * g_sup / 1e8 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn approx_g_lambda_replicates_agree() {
        let g = sections_g();
        let lambda = 0.05;
        let z = [0.2, 0.1];
        let n = 2000;
        let a = normal_sample(n, 10);
        let b = normal_sample(n, 20);
        let va = approx_g_lambda(&g, &gauss2(), lambda, &a, &z).unwrap();
        let vb = approx_g_lambda(&g, &gauss2(), lambda, &b, &z).unwrap();
        let boot_sd = |sample: &[Vec<f64>], seed: u64| -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reps: Vec<Vec<f64>> = (0..8)
                .map(|_| {
                    let s: Vec<Vec<f64>> = (0..n).map(|_| sample[rng.random_range(0..n)].clone()).collect();
                    approx_g_lambda(&g, &gauss2(), lambda, &s, &z).unwrap()
                })
                .collect();
            (0..2)
                .map(|i| {
                    let m = reps.iter().map(|r| r[i]).sum::<f64>() / reps.len() as f64;
                    (reps.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / (reps.len() - 1) as f64).sqrt()
                })
                .collect()
        };
        let (sa, sb) = (boot_sd(&a, 1), boot_sd(&b, 2));
        for i in 0..2 {
            let paired = (sa[i].powi(2) + sb[i].powi(2)).sqrt();
            assert!((va[i] - vb[i]).abs() <= 5.0 * paired, "dim {i}: {} vs 5×{paired}", (va[i] - vb[i]).abs());
        }
    }

    #[test]
    fn gap_study_tables() {
        let pi = normal_sample(300, 3);
        let grid = EvalGrid::Quantiles { level: 0.1, points_per_axis: 17 }.resolve(&pi).unwrap().points(2).unwrap();
        let single = g_lambda_gap_study(&sections_g(), &gauss2(), &[0.1], &pi, &grid).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert!(single.slope.is_none());
        let res = g_lambda_gap_study(&sections_g(), &gauss2(), &[0.2, 0.05, 0.0125], &pi, &grid).unwrap();
        assert!(res.gaps_strictly_decreasing_in_lambda());
        assert!(res.slope.unwrap().slope > 0.0);
        let mut out = Vec::new();
        res.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("lambda,gap\n2.0000000000000001e-1,"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn mercer_sweep() {
        let cfg = MercerStudyConfig {
            kernel: KernelSpec::gaussian(2.0, 2).unwrap(),
            max_level: 12,
            radius: 1.0,
            pairs: 20,
            model: Some(tanh_model(0.5, 0.3)),
            sample_size: 1000,
            gap: 2,
            t: 500,
            beta1: 1.0,
            beta2: 0.5,
            seed: 9,
        };
        let res = mercer_study(&cfg).unwrap();
        assert_eq!(res.truncation.len(), 13);
        assert!(res.truncation.windows(2).all(|w| w[1].max_abs_error <= w[0].max_abs_error + 1e-15));
        assert!(res.truncation[12].max_abs_error < 1e-4);
        assert!(res.beta_growth.is_some());
        assert!(res.tail_moment.is_some());
    }

    #[test]
    fn configs_reject_unknown_keys() {
        let text = r#"
            t_grid = [50, 100]
            replicates = 3
            seed = 1
            [model]
            d = 1
            p = 1
            g = { kind = "tanh_linear", a = [[0.5]], scale = 1.0 }
            noise = { kind = "gaussian_diag", sigma2 = [0.09] }
            [[kernel]]
            family = "gaussian"
            tau2 = 2.0
            input_dim = 1
            [lambda]
            rule = "fixed"
            value = 0.05
            [grid]
            kind = "lattice"
            lo = [-1.0]
            hi = [1.0]
            points_per_axis = 17
        "#;
        let cfg: RateStudyConfig = toml::from_str(text).unwrap();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.burn_in, DEFAULT_BURN_IN);
        let typo = text.replace("replicates", "replicate");
        assert!(toml::from_str::<RateStudyConfig>(&typo).is_err());
        let extra = text.replace("seed = 1", "seed = 1\nsede = 2");
        assert!(toml::from_str::<RateStudyConfig>(&extra).is_err());
    }
}
