//! Rate functions, thresholds and kernel quadratic forms.
//!
//! Every quadratic-form statistic here is on the normalized scale
//! `(1/T²) η'𝒦(X,X)η`, and δ thresholds compare against that scale.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{lag_embed, simulate_var_with_noise, VarModel};
use crate::error::{check_dim, invalid, Result};
use crate::kernels::{KernelSpec, MultivariateKernelSpec};
use crate::mercer::MercerExpansion;
use crate::table;

/// Constants entering the rate functions. `c0`, `c` and `c_mc` are free
/// positive constants, 1 by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateParams {
    pub t: usize,
    pub d: usize,
    pub sigma: f64,
    pub b1: f64,
    pub b2: f64,
    pub m: u32,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default)]
    pub beta2: f64,
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "one")]
    pub c_mc: f64,
}

fn one() -> f64 {
    1.0
}

impl RateParams {
    pub fn new(t: usize, d: usize, sigma: f64, b1: f64, b2: f64, m: u32) -> Result<Self> {
        let p = RateParams { t, d, sigma, b1, b2, m, beta1: 0.0, beta2: 0.0, c0: 1.0, c: 1.0, c_mc: 1.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 2 || self.d == 0 || self.m == 0 {
            return invalid("rate parameters need T >= 2, d >= 1 and M >= 1");
        }
        // σ = 0 is admitted as the noiseless limit of the formulas.
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !(self.b1 > 0.0 && self.b1.is_finite()) {
            return invalid(format!("need sigma >= 0 and b1 > 0, got sigma={}, b1={}", self.sigma, self.b1));
        }
        if [self.c0, self.c, self.c_mc].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return invalid("c0, c and C_mc must be positive");
        }
        if !(self.b2.is_finite() && self.beta1 >= 0.0 && self.beta1.is_finite() && self.beta2.is_finite()) {
            return invalid("b2, beta1 and beta2 must be finite with beta1 >= 0");
        }
        Ok(())
    }

    pub fn with_tail(mut self, beta1: f64, beta2: f64) -> Result<Self> {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.validate()?;
        Ok(self)
    }

    pub fn with_constants(mut self, c0: f64, c: f64, c_mc: f64) -> Result<Self> {
        self.c0 = c0;
        self.c = c;
        self.c_mc = c_mc;
        self.validate()?;
        Ok(self)
    }

    fn log_dt(&self) -> f64 {
        (self.d as f64 * self.t as f64).ln()
    }
}

/// A bound value; `vacuous` marks a failed precondition, in which case
/// `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bound {
    pub value: f64,
    pub vacuous: bool,
}

/// c_{1,T}(δ, γ, M) = (T/γ²)(δ(d b₁ M^{b₂})^{−1/2} − σ/√T)².
pub fn c1t(params: &RateParams, delta: f64, gamma: f64) -> Result<Bound> {
    params.validate()?;
    if !(delta > 0.0) || !(gamma > 0.0) {
        return invalid("delta and gamma must be positive");
    }
    let t = params.t as f64;
    let scale = params.d as f64 * params.b1 * (params.m as f64).powf(params.b2);
    let inner = delta / scale.sqrt() - params.sigma / t.sqrt();
    if inner < 0.0 {
        return Ok(Bound { value: 0.0, vacuous: true });
    }
    Ok(Bound { value: t / (gamma * gamma) * inner * inner, vacuous: false })
}

/// c_{2,T}(γ) = (γ − (2σ² log(dT))^{1/2})² / (2σ²).
pub fn c2t(params: &RateParams, gamma: f64) -> Result<Bound> {
    params.validate()?;
    if !(params.sigma > 0.0) {
        return invalid("c2T needs sigma > 0");
    }
    let s2 = params.sigma * params.sigma;
    let inner = gamma - (2.0 * s2 * params.log_dt()).sqrt();
    if inner < 0.0 {
        return Ok(Bound { value: 0.0, vacuous: true });
    }
    Ok(Bound { value: inner * inner / (2.0 * s2), vacuous: false })
}

/// (4σ² log(dT))^{1/2}.
pub fn gamma_threshold(params: &RateParams) -> Result<f64> {
    params.validate()?;
    Ok((4.0 * params.sigma * params.sigma * params.log_dt()).sqrt())
}

/// (1/λ)(log T / T)^{1/2} L^{b₂/2} γ c₀ max{κ² ‖g‖∞, 1} + ‖g_λ − g‖∞ with L = M.
pub fn delta_threshold(
    params: &RateParams,
    lambda: f64,
    gamma: f64,
    kappa: f64,
    g_sup: f64,
    g_lambda_gap: f64,
) -> Result<f64> {
    params.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be positive, got {lambda}"));
    }
    let t = params.t as f64;
    let c0g = params.c0 * (kappa * kappa * g_sup).max(1.0);
    Ok((t.ln() / t).sqrt() / lambda * (params.m as f64).powf(params.b2 / 2.0) * gamma * c0g + g_lambda_gap)
}

/// c₀ (log T / T)^{1/2} L^{b₂/2} γ, the δ scale of the quadratic-form
/// concentration statements.
pub fn quadratic_form_delta(params: &RateParams, gamma: f64) -> Result<f64> {
    params.validate()?;
    let t = params.t as f64;
    Ok(params.c0 * (t.ln() / t).sqrt() * (params.m as f64).powf(params.b2 / 2.0) * gamma)
}

/// d exp(−c c_{1,T}) + d exp(−c_{2,T}) for finite expansions; for infinite
/// ones pass `include_tail` to add 2d²σ²/(δ²T) β₁ T^{−β₂}.
pub fn quadratic_form_tail_bound(params: &RateParams, delta: f64, gamma: f64, include_tail: bool) -> Result<Bound> {
    let b1 = c1t(params, delta, gamma)?;
    let b2 = c2t(params, gamma)?;
    let d = params.d as f64;
    let t = params.t as f64;
    let mut value = d * (-params.c * b1.value).exp() + d * (-b2.value).exp();
    if include_tail {
        value += 2.0 * d * d * params.sigma * params.sigma / (delta * delta * t) * params.beta1 * t.powf(-params.beta2);
    }
    Ok(Bound { value, vacuous: b1.vacuous || b2.vacuous })
}

/// ⌈log T⌉, the default truncation level M(T) for Gaussian kernels.
pub fn gaussian_truncation(t: usize) -> u32 {
    ((t as f64).ln().ceil() as u32).max(1)
}

/// One realization of the normalized quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadFormSample {
    pub value: f64,
    pub t: usize,
    pub seed: Option<u64>,
}

/// Σ_{s,t} u_s u_t K(w_s, w_t) for several vectors u sharing one kernel,
/// without forming the Gram matrix. Row sums are reduced in index order.
fn kernel_quadratic_sums(spec: &KernelSpec, windows: &[Vec<f64>], us: &[&[f64]]) -> Vec<f64> {
    let n = windows.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut acc = vec![0.0; us.len()];
            for t in s..n {
                let k = spec.eval_unchecked(&windows[s], &windows[t]);
                let w = if t == s { 1.0 } else { 2.0 };
                for (a, u) in acc.iter_mut().zip(us) {
                    *a += w * k * u[s] * u[t];
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; us.len()];
    for row in rows {
        for (t, r) in total.iter_mut().zip(row) {
            *t += r;
        }
    }
    total
}

/// (1/T²) Σ_i ε_i'K_i(X,X)ε_i with `eps[i]` the noise of output dimension i
/// over the T−p training pairs and T = pairs + p.
pub fn quadratic_form(kernel: &MultivariateKernelSpec, windows: &[Vec<f64>], eps: &[Vec<f64>]) -> Result<QuadFormSample> {
    let d = kernel.output_dim();
    check_dim(d, eps.len())?;
    if windows.is_empty() {
        return invalid("quadratic form needs at least one window");
    }
    for w in windows {
        check_dim(kernel.input_dim(), w.len())?;
    }
    for e in eps {
        check_dim(windows.len(), e.len())?;
    }
    let p = kernel.input_dim() / d;
    let t = windows.len() + p;
    let specs = kernel.components();
    let mut total = 0.0;
    let mut done = vec![false; d];
    for i in 0..d {
        if done[i] {
            continue;
        }
        let group: Vec<usize> = (i..d).filter(|&j| !done[j] && specs[j] == specs[i]).collect();
        let us: Vec<&[f64]> = group.iter().map(|&j| eps[j].as_slice()).collect();
        total += kernel_quadratic_sums(&specs[i], windows, &us).iter().sum::<f64>();
        for j in group {
            done[j] = true;
        }
    }
    Ok(QuadFormSample { value: total / (t * t) as f64, t, seed: None })
}

/// Σ_{k=0}^{M} λ_k Σ_j ((1/T) Σ_t ε_t φ_{j,k}(w_t))², the spectral form of
/// (1/T²) ε'Kε truncated at level M.
pub fn mercer_quadratic_form(
    expansion: &MercerExpansion,
    windows: &[Vec<f64>],
    eps: &[f64],
    m: u32,
    t_len: usize,
) -> Result<f64> {
    check_dim(windows.len(), eps.len())?;
    if t_len == 0 {
        return invalid("T must be positive");
    }
    let top = expansion.max_level().map_or(m, |ml| ml.min(m));
    let t = t_len as f64;
    let mut total = 0.0;
    let mut buf = Vec::new();
    for k in 0..=top {
        let level = expansion.level(k)?;
        let mut proj = vec![0.0; level.len()];
        for (w, e) in windows.iter().zip(eps) {
            level.values_into(w, &mut buf)?;
            for (p, v) in proj.iter_mut().zip(&buf) {
                *p += e * v;
            }
        }
        total += level.eigenvalue() * proj.iter().map(|p| (p / t).powi(2)).sum::<f64>();
    }
    Ok(total)
}

/// Fraction of samples with value > δ².
pub fn empirical_tail(samples: &[QuadFormSample], delta: f64) -> Result<f64> {
    if samples.is_empty() {
        return invalid("empirical tail needs at least one sample");
    }
    let thr = delta * delta;
    Ok(samples.iter().filter(|s| s.value > thr).count() as f64 / samples.len() as f64)
}

/// Simulates a chain of length T with `seed` and returns its normalized
/// quadratic form in the realized noise.
pub fn simulate_quadratic_form(
    model: &VarModel,
    kernel: &MultivariateKernelSpec,
    t_len: usize,
    burn_in: usize,
    seed: u64,
) -> Result<QuadFormSample> {
    let (traj, noise) = simulate_var_with_noise(model, t_len, burn_in, seed)?;
    let set = lag_embed(&traj, model.p)?;
    let eps: Vec<Vec<f64>> = (0..model.d).map(|i| noise[model.p..].iter().map(|e| e[i]).collect()).collect();
    let mut sample = quadratic_form(kernel, set.windows(), &eps)?;
    sample.seed = Some(seed);
    Ok(sample)
}

/// One row of a tail table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub t: usize,
    pub delta: f64,
    pub empirical_tail: f64,
    pub n_samples: usize,
}

pub fn write_tail_csv<W: Write>(w: W, rows: &[TailRow]) -> Result<()> {
    table::write_csv(
        w,
        &["T", "delta", "empirical_tail", "n_samples"],
        rows.iter().map(|r| {
            vec![r.t.to_string(), table::fmt_f64(r.delta), table::fmt_f64(r.empirical_tail), r.n_samples.to_string()]
        }),
    )
}
