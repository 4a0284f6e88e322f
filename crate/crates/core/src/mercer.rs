//! Mercer eigen-systems and multi-index combinatorics.
//!
//! Levels are indexed from `k = 0`. For the Gaussian kernel level `k` holds
//! the `N(k) = C(k + dp − 1, dp − 1)` eigenfunctions indexed by the
//! compositions of `k` into `dp` parts, and "truncation at M" keeps degrees
//! `0..=M`. Compositions are listed in graded reverse-lexicographic order,
//! e.g. `(2,0), (1,1), (0,2)`; that order fixes the index `j`.
//!
//! The periodic Sobolev kernel uses unit eigenvalues with the decay folded
//! into the eigenfunctions: level 0 is the constant σ, level `k ≥ 1` holds
//! the cosine (`+k`) and sine (`−k`) pair. The two finite-rank kernels are
//! exposed through the same interface: polynomial levels are the monomial
//! degrees `0..=m`, and the Mercer sigmoid has a single level `k = 1`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::quadrature;

/// Largest number of multi-indices any single enumeration may produce.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;

/// Extra levels past `M_T` that [`check_tail_moment`] estimates directly
/// before extrapolating geometrically.
pub const TAIL_EXTRA_LEVELS: u32 = 12;

/// Minimum Monte Carlo sample accepted by [`check_tail_moment`].
pub const MIN_TAIL_SAMPLE: usize = 1000;

/// A composition of `degree` into `dim` non-negative parts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    entries: Vec<u32>,
}

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex { entries }
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// ln of the multinomial coefficient k! / ∏ nᵢ!.
    fn ln_multinomial(&self) -> f64 {
        ln_factorial(self.degree()) - self.entries.iter().map(|&n| ln_factorial(n)).sum::<f64>()
    }

    /// k! / ∏ nᵢ!, exact through k = 20 and log-space beyond.
    pub fn multinomial(&self) -> f64 {
        let k = self.degree();
        if k <= 20 {
            let num = factorial_u64(k);
            let den: u64 = self.entries.iter().map(|&n| factorial_u64(n)).product();
            (num / den) as f64
        } else {
            self.ln_multinomial().exp()
        }
    }
}

fn factorial_u64(n: u32) -> u64 {
    (1..=n as u64).product()
}

/// ln n!.
pub(crate) fn ln_factorial(n: u32) -> f64 {
    static TABLE: std::sync::OnceLock<Vec<f64>> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(1025);
        let mut acc = 0.0;
        t.push(0.0);
        for i in 1..=1024u32 {
            acc += (i as f64).ln();
            t.push(acc);
        }
        t
    });
    if let Some(v) = table.get(n as usize) {
        return *v;
    }
    // Stirling series; the truncation error is below 1e-16 relative here.
    let x = n as f64 + 1.0;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
}

/// N(k) = C(k + dp − 1, dp − 1).
pub fn count_multi_indices(k: u32, dp: usize) -> Result<u64> {
    if dp == 0 {
        return invalid("multi-index dimension must be at least 1");
    }
    let n = k as u128 + dp as u128 - 1;
    let r = (dp as u128 - 1).min(k as u128);
    let mut acc: u128 = 1;
    for i in 0..r {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc
            .checked_mul(n - i)
            .ok_or_else(|| Error::Resource(format!("N({k}) overflows for dp={dp}")))?
            / (i + 1);
    }
    u64::try_from(acc).map_err(|_| Error::Resource(format!("N({k}) overflows 64 bits for dp={dp}")))
}

/// All compositions of `k` into `dp` parts, graded reverse-lexicographic.
pub fn enumerate_multi_indices(k: u32, dp: usize) -> Result<Vec<MultiIndex>> {
    let count = count_multi_indices(k, dp)?;
    if count > ENUMERATION_BUDGET {
        return Err(Error::Resource(format!(
            "N({k}) = {count} multi-indices for dp={dp} exceeds the budget of {ENUMERATION_BUDGET}"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current = vec![0u32; dp];
    fill_compositions(k, 0, &mut current, &mut out);
    Ok(out)
}

fn fill_compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(MultiIndex::new(current.clone()));
        return;
    }
    for first in (0..=remaining).rev() {
        current[pos] = first;
        fill_compositions(remaining - first, pos + 1, current, out);
    }
}

/// λ_k = (2/τ²)^k / k!.
pub fn gaussian_eigenvalue(k: u32, tau2: f64) -> Result<f64> {
    if !(tau2 > 0.0 && tau2.is_finite()) {
        return invalid(format!("tau2 must be positive, got {tau2}"));
    }
    Ok(gaussian_eigenvalue_unchecked(k, tau2))
}

fn gaussian_eigenvalue_unchecked(k: u32, tau2: f64) -> f64 {
    let ratio = 2.0 / tau2;
    if k <= 20 {
        ratio.powi(k as i32) / factorial_u64(k) as f64
    } else {
        (k as f64 * ratio.ln() - ln_factorial(k)).exp()
    }
}

/// φ_n(x) = exp(−‖x‖²/τ²) · (k!/∏nᵢ!)^{1/2} · ∏ xᵢ^{nᵢ}.
pub fn gaussian_eigenfunction(n: &MultiIndex, x: &[f64], tau2: f64) -> Result<f64> {
    check_dim(n.dim(), x.len())?;
    if !(tau2 > 0.0 && tau2.is_finite()) {
        return invalid(format!("tau2 must be positive, got {tau2}"));
    }
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    Ok((-norm2 / tau2).exp() * n.multinomial().sqrt() * monomial(n.entries(), x))
}

fn monomial(exponents: &[u32], x: &[f64]) -> f64 {
    exponents.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product()
}

/// Periodic Sobolev eigenfunction: `k > 0` cosine, `k < 0` sine, `k = 0`
/// the constant σ.
pub fn periodic_eigenfunction(k: i64, x: f64, sigma2: f64, s: u32) -> f64 {
    let sigma = sigma2.sqrt();
    if k == 0 {
        return sigma;
    }
    let freq = 2.0 * PI * k.unsigned_abs() as f64;
    let amp = sigma * 2f64.sqrt() * freq.powi(-(s as i32));
    if k > 0 {
        amp * (freq * x).cos()
    } else {
        amp * (freq * x).sin()
    }
}

/// Mercer eigen-system of a kernel.
#[derive(Debug, Clone)]
pub struct MercerExpansion {
    kernel: KernelSpec,
}

/// One level of an expansion, with its index set materialised so that many
/// points can be evaluated cheaply.
#[derive(Debug, Clone)]
pub struct ExpansionLevel {
    k: u32,
    eigenvalue: f64,
    kernel: KernelSpec,
    indices: Vec<MultiIndex>,
    // Per-index scale (sqrt of the multinomial weight, times the constant
    // factor for the polynomial kernel).
    scales: Vec<f64>,
}

impl ExpansionLevel {
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn eigenvalue(&self) -> f64 {
        self.eigenvalue
    }

    /// Multi-indices of the level (empty for the periodic kernel, whose
    /// level holds the cosine/sine pair).
    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        match self.kernel.family() {
            KernelFamily::PeriodicSobolev { .. } => {
                if self.k == 0 {
                    1
                } else {
                    2
                }
            }
            _ => self.indices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes φ_{j,k}(x) for every j into `out` (cleared first).
    pub fn values_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        check_dim(self.kernel.input_dim(), x.len())?;
        out.clear();
        match *self.kernel.family() {
            KernelFamily::Gaussian { tau2 } => {
                let norm2: f64 = x.iter().map(|v| v * v).sum();
                let damp = (-norm2 / tau2).exp();
                for (n, scale) in self.indices.iter().zip(&self.scales) {
                    out.push(damp * scale * monomial(n.entries(), x));
                }
            }
            KernelFamily::Polynomial { .. } => {
                for (n, scale) in self.indices.iter().zip(&self.scales) {
                    out.push(scale * monomial(n.entries(), x));
                }
            }
            KernelFamily::MercerSigmoid { b, c } => {
                let norm = (self.kernel.input_dim() as f64).sqrt();
                for n in &self.indices {
                    let i = n.entries().iter().position(|&e| e == 1).unwrap_or(0);
                    out.push(((x[i] - c) / b).tanh() / norm);
                }
            }
            KernelFamily::PeriodicSobolev { sigma2, s } => {
                if self.k == 0 {
                    out.push(periodic_eigenfunction(0, x[0], sigma2, s));
                } else {
                    let k = self.k as i64;
                    out.push(periodic_eigenfunction(k, x[0], sigma2, s));
                    out.push(periodic_eigenfunction(-k, x[0], sigma2, s));
                }
            }
        }
        Ok(())
    }

    pub fn values(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        self.values_into(x, &mut out)?;
        Ok(out)
    }
}

impl MercerExpansion {
    pub fn new(kernel: KernelSpec) -> Self {
        MercerExpansion { kernel }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// Highest non-empty level for finite-rank kernels; `None` when the
    /// expansion is infinite.
    pub fn max_level(&self) -> Option<u32> {
        match *self.kernel.family() {
            KernelFamily::Gaussian { .. } | KernelFamily::PeriodicSobolev { .. } => None,
            KernelFamily::Polynomial { m, .. } => Some(m),
            KernelFamily::MercerSigmoid { .. } => Some(1),
        }
    }

    pub fn eigenvalue(&self, k: u32) -> f64 {
        match *self.kernel.family() {
            KernelFamily::Gaussian { tau2 } => gaussian_eigenvalue_unchecked(k, tau2),
            _ => {
                if self.max_level().is_some_and(|m| k > m) {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Number of eigenfunctions at level `k`.
    pub fn level_size(&self, k: u32) -> Result<u64> {
        let dp = self.kernel.input_dim();
        match *self.kernel.family() {
            KernelFamily::Gaussian { .. } => count_multi_indices(k, dp),
            KernelFamily::Polynomial { m, .. } => {
                if k > m {
                    Ok(0)
                } else {
                    count_multi_indices(k, dp)
                }
            }
            KernelFamily::MercerSigmoid { .. } => Ok(if k == 1 { dp as u64 } else { 0 }),
            KernelFamily::PeriodicSobolev { .. } => Ok(if k == 0 { 1 } else { 2 }),
        }
    }

    pub fn level(&self, k: u32) -> Result<ExpansionLevel> {
        let dp = self.kernel.input_dim();
        let (indices, scales) = match *self.kernel.family() {
            KernelFamily::Gaussian { .. } => {
                let idx = enumerate_multi_indices(k, dp)?;
                let scales = idx.iter().map(|n| n.multinomial().sqrt()).collect();
                (idx, scales)
            }
            KernelFamily::Polynomial { c, m } => {
                if k > m {
                    (Vec::new(), Vec::new())
                } else {
                    // (x'y + c)^m = Σ_{|n| + r = m} m!/(n! r!) c^r x^n y^n
                    let idx = enumerate_multi_indices(k, dp)?;
                    let r = m - k;
                    let ln_const = ln_factorial(m) - ln_factorial(k) - ln_factorial(r);
                    let c_part = if r == 0 { 1.0 } else { c.powf(r as f64 / 2.0) };
                    let scales = idx
                        .iter()
                        .map(|n| (0.5 * (ln_const + n.ln_multinomial())).exp() * c_part)
                        .collect();
                    (idx, scales)
                }
            }
            KernelFamily::MercerSigmoid { .. } => {
                if k == 1 {
                    let idx: Vec<MultiIndex> = (0..dp)
                        .map(|i| {
                            let mut e = vec![0u32; dp];
                            e[i] = 1;
                            MultiIndex::new(e)
                        })
                        .collect();
                    let scales = vec![1.0; dp];
                    (idx, scales)
                } else {
                    (Vec::new(), Vec::new())
                }
            }
            KernelFamily::PeriodicSobolev { .. } => (Vec::new(), Vec::new()),
        };
        Ok(ExpansionLevel { k, eigenvalue: self.eigenvalue(k), kernel: self.kernel, indices, scales })
    }

    fn levels_upto(&self, m: u32) -> Result<Vec<ExpansionLevel>> {
        let top = self.max_level().map_or(m, |ml| ml.min(m));
        let mut total = 0u64;
        for k in 0..=top {
            total = total.saturating_add(self.level_size(k)?);
        }
        if total > ENUMERATION_BUDGET {
            return Err(Error::Resource(format!(
                "{total} eigenfunctions up to level {top} exceed the budget of {ENUMERATION_BUDGET}"
            )));
        }
        (0..=top).map(|k| self.level(k)).collect()
    }

    /// Σ_{k=0}^{M} λ_k Σ_j φ_{j,k}(x) φ_{j,k}(y).
    pub fn truncated_eval(&self, x: &[f64], y: &[f64], m: u32) -> Result<f64> {
        check_dim(self.kernel.input_dim(), x.len())?;
        check_dim(self.kernel.input_dim(), y.len())?;
        let mut total = 0.0;
        let (mut vx, mut vy) = (Vec::new(), Vec::new());
        for level in self.levels_upto(m)? {
            level.values_into(x, &mut vx)?;
            level.values_into(y, &mut vy)?;
            let inner: f64 = vx.iter().zip(&vy).map(|(a, b)| a * b).sum();
            total += level.eigenvalue() * inner;
        }
        Ok(total)
    }

    /// Explicit feature vector (√λ_k φ_{j,k}(x))_{k,j} of a finite-rank
    /// kernel, so that K(x, y) = φ(x)'φ(y).
    pub fn feature_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        let Some(top) = self.max_level() else {
            return Err(Error::Unsupported(format!(
                "{} kernel has no finite feature map",
                self.kernel.family().name()
            )));
        };
        let mut out = Vec::new();
        let mut buf = Vec::new();
        for level in self.levels_upto(top)? {
            level.values_into(x, &mut buf)?;
            let s = level.eigenvalue().sqrt();
            out.extend(buf.iter().map(|v| s * v));
        }
        Ok(out)
    }

    /// Σ_{k=1}^{M} Σ_j β²_{j,k} with β_{j,k} = λ_k^{1/2} ‖φ_{j,k}‖∞.
    ///
    /// Gaussian: the supremum of λ_k φ²_{j,k} sits at x̃ᵢ = (τ² nᵢ / 2)^{1/2},
    /// where it equals e^{−k} ∏_{nᵢ>0} nᵢ^{nᵢ}/nᵢ!. Periodic: the cosine
    /// eigenfunctions, Σ_k 2σ²(2πk)^{−2s}.
    pub fn beta_sum(&self, m: u32) -> Result<f64> {
        Ok(self.beta_level_sums(m)?.iter().sum())
    }

    /// Per-level contributions Σ_j β²_{j,k} for k = 1..=M.
    pub fn beta_level_sums(&self, m: u32) -> Result<Vec<f64>> {
        match *self.kernel.family() {
            KernelFamily::Gaussian { .. } => {
                let dp = self.kernel.input_dim();
                (1..=m)
                    .map(|k| {
                        let idx = enumerate_multi_indices(k, dp)?;
                        Ok(idx.iter().map(gaussian_sup_weight).sum())
                    })
                    .collect()
            }
            KernelFamily::PeriodicSobolev { sigma2, s } => Ok((1..=m)
                .map(|k| 2.0 * sigma2 * (2.0 * PI * k as f64).powi(-2 * s as i32))
                .collect()),
            _ => Err(Error::Unsupported(format!(
                "beta sums are defined for gaussian and periodic expansions, not {}",
                self.kernel.family().name()
            ))),
        }
    }
}

/// sup_x λ_k φ²_n(x) for the Gaussian expansion, independent of τ².
fn gaussian_sup_weight(n: &MultiIndex) -> f64 {
    let k = n.degree() as f64;
    let log: f64 = n
        .entries()
        .iter()
        .filter(|&&e| e > 0)
        .map(|&e| e as f64 * (e as f64).ln() - ln_factorial(e))
        .sum();
    (log - k).exp()
}

/// Default eigenfunction-growth constants for the Gaussian kernel:
/// b₁ = π^{dp/2}, b₂ = dp/2 − 1.
pub fn gaussian_growth_constants(dp: usize) -> (f64, f64) {
    let half = dp as f64 / 2.0;
    (PI.powf(half), half - 1.0)
}

/// Cumulative β-sums S(M) compared against b₁ M^{b₂}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaGrowth {
    pub b1: f64,
    pub b2: f64,
    /// `sums[M - 1]` = S(M).
    pub sums: Vec<f64>,
}

impl BetaGrowth {
    pub fn compute(expansion: &MercerExpansion, m_max: u32, b1: f64, b2: f64) -> Result<Self> {
        if !(b1 > 0.0 && b1.is_finite()) {
            return invalid(format!("b1 must be positive, got {b1}"));
        }
        let mut acc = 0.0;
        let sums = expansion
            .beta_level_sums(m_max)?
            .into_iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        Ok(BetaGrowth { b1, b2, sums })
    }

    pub fn bound(&self, m: u32) -> f64 {
        self.b1 * (m as f64).powf(self.b2)
    }

    /// First M with S(M) > b₁ M^{b₂}.
    pub fn first_violation(&self) -> Option<u32> {
        self.sums
            .iter()
            .enumerate()
            .map(|(i, &s)| (i as u32 + 1, s))
            .find(|&(m, s)| s > self.bound(m))
            .map(|(m, _)| m)
    }
}

/// Result of [`check_beta_growth`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaGrowthCheck {
    pub holds: bool,
    pub first_violation: Option<u32>,
    pub growth: BetaGrowth,
}

/// Whether S(M) ≤ b₁ M^{b₂} for every 1 ≤ M ≤ M_max.
pub fn check_beta_growth(expansion: &MercerExpansion, m_max: u32, b1: f64, b2: f64) -> Result<BetaGrowthCheck> {
    let growth = BetaGrowth::compute(expansion, m_max, b1, b2)?;
    let first_violation = growth.first_violation();
    Ok(BetaGrowthCheck { holds: first_violation.is_none(), first_violation, growth })
}

/// Σ_j ∏_{nᵢ>0} nᵢ^{−1/2} over all compositions of k into dp parts, by
/// exhaustive enumeration.
pub fn multinomial_bound_lhs(k: u32, dp: usize) -> Result<f64> {
    let idx = enumerate_multi_indices(k, dp)?;
    Ok(idx
        .iter()
        .map(|n| {
            n.entries()
                .iter()
                .filter(|&&e| e > 0)
                .map(|&e| (e as f64).powf(-0.5))
                .product::<f64>()
        })
        .sum())
}

/// π^{dp/2} k^{dp/2 − 1}.
pub fn multinomial_bound_rhs(k: u32, dp: usize) -> f64 {
    let half = dp as f64 / 2.0;
    PI.powf(half) * (k as f64).powf(half - 1.0)
}

/// Largest moment order accepted by [`weighted_normal_moment`].
pub const MAX_MOMENT_ORDER: u32 = 60;

/// E[X^{2k} exp(−2X²/τ²)] for X ~ N(α, σ²), by adaptive quadrature.
///
/// The integration window is centred at α with half-width
/// 12σ + (2k)^{1/2}σ, which covers the peak of x^{2k}·density for every k.
pub fn weighted_normal_moment(alpha: f64, sigma2: f64, tau2: f64, k: u32) -> Result<f64> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) || !(tau2 > 0.0 && tau2.is_finite()) {
        return invalid(format!("sigma2 and tau2 must be positive, got {sigma2}, {tau2}"));
    }
    if k > MAX_MOMENT_ORDER {
        return invalid(format!("moment order {k} exceeds {MAX_MOMENT_ORDER}"));
    }
    let sigma = sigma2.sqrt();
    let half_width = 12.0 * sigma + (2.0 * k as f64).sqrt() * sigma;
    let norm = 1.0 / (2.0 * PI * sigma2).sqrt();
    let power = 2 * k as i32;
    quadrature::integrate(
        |x| {
            let z = x - alpha;
            x.powi(power) * (-2.0 * x * x / tau2 - z * z / (2.0 * sigma2)).exp() * norm
        },
        alpha - half_width,
        alpha + half_width,
        1e-10,
        1e-300,
    )
}

/// The constant C_L of the weighted-moment bound, for |α| ≤ L:
///
/// C_L = 2 (2πτ²/(4σ²+τ²))^{1/2} · sup_{|α|≤L} exp(α²(τ⁴/(4σ²+τ²) − 1/(2σ²)))
///       · max{sup_{|α|≤L} (μ_α/σ_Y)², 1}
///
/// with μ_α = τ²α/(4σ²+τ²) and σ_Y² = σ²τ²/(4σ²+τ²).
pub fn moment_bound_constant(l: f64, sigma2: f64, tau2: f64) -> Result<f64> {
    if !(l >= 0.0) || !(sigma2 > 0.0) || !(tau2 > 0.0) {
        return invalid("moment bound constant needs L >= 0 and positive variances");
    }
    let denom = 4.0 * sigma2 + tau2;
    let exp_coef = tau2 * tau2 / denom - 1.0 / (2.0 * sigma2);
    let exp_sup = if exp_coef > 0.0 { (l * l * exp_coef).exp() } else { 1.0 };
    let sigma_y2 = sigma2 * tau2 / denom;
    let mu_l = tau2 * l / denom;
    let ratio_sup = mu_l * mu_l / sigma_y2;
    Ok(2.0 * (2.0 * PI * tau2 / denom).sqrt() * exp_sup * ratio_sup.max(1.0))
}

/// C_L (σ²τ²/(4σ²+τ²))^k 2^k (k+1)!.
pub fn weighted_moment_bound(l: f64, sigma2: f64, tau2: f64, k: u32) -> Result<f64> {
    let c = moment_bound_constant(l, sigma2, tau2)?;
    let sigma_y2 = sigma2 * tau2 / (4.0 * sigma2 + tau2);
    Ok(c * (k as f64 * (2.0 * sigma_y2).ln() + ln_factorial(k + 1)).exp())
}

/// Outcome of the Monte Carlo kernel-moment predicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailMomentReport {
    /// α̂_k = λ_k Σ_j mean φ²_{j,k} over the sample, for k = 0..=k_max.
    pub alpha_hat: Vec<f64>,
    /// Standard error of each α̂_k.
    pub alpha_se: Vec<f64>,
    /// Fitted geometric ratio of α̂_k over k ≥ 1, when enough levels are positive.
    pub rho_hat: Option<f64>,
    /// Σ_{k ≥ M_T} α̂_k including the geometric extrapolation past k_max.
    pub tail: f64,
    pub tail_se: f64,
    /// β₁ T^{−β₂}.
    pub bound: f64,
    pub holds: bool,
    /// True when the bound lies outside tail ± 3·tail_se, i.e. the verdict
    /// is not within Monte Carlo noise.
    pub decisive: bool,
}

impl TailMomentReport {
    /// 3-sigma band of the tail estimate.
    pub fn band(&self) -> (f64, f64) {
        (self.tail - 3.0 * self.tail_se, self.tail + 3.0 * self.tail_se)
    }
}

/// Monte Carlo check of Σ_{k ≥ M_T} α_k ≤ β₁ T^{−β₂}, with α_k estimated
/// from a sample of the stationary law.
///
/// Levels `0..=M_T + TAIL_EXTRA_LEVELS` are estimated directly; the level-0
/// term is reported but never counted in the tail. Beyond the last level
/// the tail is extended geometrically with the fitted ratio ρ̂ when ρ̂ < 1.
pub fn check_tail_moment(
    expansion: &MercerExpansion,
    pi_sample: &[Vec<f64>],
    m_t: u32,
    beta1: f64,
    beta2: f64,
    t_len: usize,
) -> Result<TailMomentReport> {
    if pi_sample.len() < MIN_TAIL_SAMPLE {
        return invalid(format!(
            "tail-moment check needs at least {MIN_TAIL_SAMPLE} sample points, got {}",
            pi_sample.len()
        ));
    }
    if !(beta1 >= 0.0) || t_len == 0 {
        return invalid("beta1 must be >= 0 and T >= 1");
    }
    let k_top = match expansion.max_level() {
        Some(m) => m.min(m_t + TAIL_EXTRA_LEVELS),
        None => m_t + TAIL_EXTRA_LEVELS,
    };
    let levels = expansion.levels_upto(k_top)?;
    let n = pi_sample.len() as f64;
    let mut alpha_hat = Vec::with_capacity(levels.len());
    let mut alpha_se = Vec::with_capacity(levels.len());
    // Per-point tail contributions, for the standard error of the tail.
    let mut tail_per_point = vec![0.0; pi_sample.len()];
    let mut buf = Vec::new();
    for level in &levels {
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for (i, x) in pi_sample.iter().enumerate() {
            level.values_into(x, &mut buf)?;
            let v = level.eigenvalue() * buf.iter().map(|p| p * p).sum::<f64>();
            sum += v;
            sum_sq += v * v;
            if level.k() >= m_t.max(1) {
                tail_per_point[i] += v;
            }
        }
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        alpha_hat.push(mean);
        alpha_se.push((var / n).sqrt());
    }

    let rho_hat = fit_geometric_ratio(&alpha_hat);
    let direct: f64 = tail_per_point.iter().sum::<f64>() / n;
    let mean_tp = direct;
    let var_tp = tail_per_point.iter().map(|v| (v - mean_tp) * (v - mean_tp)).sum::<f64>() / n;
    let extrapolated = match (expansion.max_level(), rho_hat) {
        (None, Some(rho)) if rho < 1.0 => alpha_hat.last().copied().unwrap_or(0.0) * rho / (1.0 - rho),
        _ => 0.0,
    };
    let tail = direct + extrapolated;
    let tail_se = (var_tp / n).sqrt();
    let bound = beta1 * (t_len as f64).powf(-beta2);
    let holds = tail <= bound;
    let decisive = bound < tail - 3.0 * tail_se || bound > tail + 3.0 * tail_se;
    Ok(TailMomentReport { alpha_hat, alpha_se, rho_hat, tail, tail_se, bound, holds, decisive })
}

/// Least-squares slope of ln α̂_k on k (k ≥ 1, positive entries), as a ratio.
fn fit_geometric_ratio(alpha_hat: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = alpha_hat
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &a)| a > 0.0 && a.is_finite())
        .map(|(k, &a)| (k as f64, a.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some((sxy / sxx).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn binom_brute(n: u64, r: u64) -> u64 {
        // Pascal's triangle.
        let mut row = vec![1u64];
        for _ in 0..n {
            let mut next = vec![1u64; row.len() + 1];
            for i in 1..row.len() {
                next[i] = row[i - 1] + row[i];
            }
            row = next;
        }
        row[r as usize]
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_multi_indices(1, 2).unwrap(), 2);
        assert_eq!(count_multi_indices(3, 2).unwrap(), 4);
        assert_eq!(count_multi_indices(2, 3).unwrap(), 6);
        assert_eq!(count_multi_indices(0, 5).unwrap(), 1);
        assert!(count_multi_indices(2, 0).is_err());
        assert!(matches!(count_multi_indices(u32::MAX, 40), Err(Error::Resource(_))));
    }

    #[test]
    fn count_matches_pascal() {
        for k in 0..30u32 {
            for dp in 1..8usize {
                assert_eq!(count_multi_indices(k, dp).unwrap(), binom_brute(k as u64 + dp as u64 - 1, dp as u64 - 1));
            }
        }
    }

    #[test]
    fn enumeration_examples() {
        let e = |k, dp| -> Vec<Vec<u32>> {
            enumerate_multi_indices(k, dp).unwrap().into_iter().map(|m| m.entries().to_vec()).collect()
        };
        assert_eq!(e(2, 2), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(e(0, 3), vec![vec![0, 0, 0]]);
        assert_eq!(e(3, 1), vec![vec![3]]);
        assert!(matches!(enumerate_multi_indices(200, 6), Err(Error::Resource(_))));
    }

    #[test]
    fn enumeration_length_and_uniqueness() {
        for k in 0..=30u32 {
            for dp in 1..=6usize {
                let count = count_multi_indices(k, dp).unwrap();
                if count > 200_000 {
                    continue;
                }
                let idx = enumerate_multi_indices(k, dp).unwrap();
                assert_eq!(idx.len() as u64, count);
                assert!(idx.iter().all(|n| n.degree() == k && n.dim() == dp));
                // Strictly decreasing lexicographically implies no duplicates.
                assert!(idx.windows(2).all(|w| w[0].entries() > w[1].entries()));
            }
        }
    }

    #[test]
    fn eigenvalue_examples() {
        assert!(close(gaussian_eigenvalue(3, 2.0).unwrap(), 1.0 / 6.0, 1e-16));
        assert_eq!(gaussian_eigenvalue(0, 5.0).unwrap(), 1.0);
        let exact = 1024.0 / 3_628_800.0;
        assert!(close(gaussian_eigenvalue(10, 1.0).unwrap(), exact, 1e-18));
        // Log-space branch agrees with the direct product at the seam.
        let direct = 2f64.powi(21) / (1..=21).map(|i| i as f64).product::<f64>();
        assert!((gaussian_eigenvalue(21, 1.0).unwrap() / direct - 1.0).abs() < 1e-12);
        assert!(gaussian_eigenvalue(400, 1.0).unwrap().is_finite());
        assert!(gaussian_eigenvalue(1, 0.0).is_err());
    }

    #[test]
    fn eigenfunction_examples() {
        let v = gaussian_eigenfunction(&MultiIndex::new(vec![2]), &[1.0], 2.0).unwrap();
        assert!(close(v, (-0.5f64).exp(), 1e-15));
        let v = gaussian_eigenfunction(&MultiIndex::new(vec![1, 1]), &[1.0, 1.0], 2.0).unwrap();
        assert!(close(v, (-1.0f64).exp() * 2f64.sqrt(), 1e-15));
        assert!(close(v, 0.5202601, 1e-7));
        let v = gaussian_eigenfunction(&MultiIndex::new(vec![0, 0]), &[3.0, 4.0], 1.0).unwrap();
        assert!(close(v, (-25.0f64).exp(), 1e-25));
        assert!(gaussian_eigenfunction(&MultiIndex::new(vec![1]), &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn multinomial_log_branch_matches_exact() {
        let n = MultiIndex::new(vec![10, 7, 4]);
        let exact = (1..=21u64).map(|i| i as f64).product::<f64>()
            / ((1..=10u64).product::<u64>() * (1..=7u64).product::<u64>() * 24) as f64;
        assert!((n.multinomial() / exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_eigenfunction_examples() {
        assert_eq!(periodic_eigenfunction(0, 0.7, 4.0, 1), 2.0);
        let expected = 2f64.sqrt() / (2.0 * PI);
        assert!(close(periodic_eigenfunction(1, 0.0, 1.0, 1), expected, 1e-15));
        assert!(close(periodic_eigenfunction(-1, 0.25, 1.0, 1), expected, 1e-15));
        assert!(close(expected, 0.2250791, 1e-7));
    }

    #[test]
    fn truncated_gaussian_examples() {
        for tau2 in [1.0, 2.5] {
            let exp = MercerExpansion::new(KernelSpec::gaussian(tau2, 1).unwrap());
            for m in [0, 3, 10] {
                assert_eq!(exp.truncated_eval(&[0.0], &[0.0], m).unwrap(), 1.0);
            }
        }
        let exp = MercerExpansion::new(KernelSpec::gaussian(2.0, 1).unwrap());
        assert!(close(exp.truncated_eval(&[1.0], &[1.0], 50).unwrap(), 1.0, 1e-10));
    }

    #[test]
    fn truncated_periodic_matches_closed_form() {
        let spec = KernelSpec::periodic_sobolev(1.0, 1).unwrap();
        let exp = MercerExpansion::new(spec);
        let exact = spec.eval(&[0.2], &[0.5]).unwrap();
        assert!(close(exp.truncated_eval(&[0.2], &[0.5], 10_000).unwrap(), exact, 1e-6));
    }

    #[test]
    fn truncated_diagonal_is_monotone() {
        let exp = MercerExpansion::new(KernelSpec::gaussian(1.5, 2).unwrap());
        let x = [0.8, -1.1];
        let mut prev = 0.0;
        for m in 0..25 {
            let v = exp.truncated_eval(&x, &x, m).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn gaussian_reconstruction_within_taylor_remainder() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for tau2 in [1.0, 2.0, 8.0] {
            for dp in [1usize, 2] {
                let spec = KernelSpec::gaussian(tau2, dp).unwrap();
                let exp = MercerExpansion::new(spec);
                for _ in 0..20 {
                    let x = random_in_ball(&mut rng, dp, 2.0);
                    let y = random_in_ball(&mut rng, dp, 2.0);
                    let r2 = norm2(&x).max(norm2(&y));
                    let m = taylor_truncation(r2, tau2, 1e-8);
                    let err = (exp.truncated_eval(&x, &y, m).unwrap() - spec.eval(&x, &y).unwrap()).abs();
                    assert!(err <= taylor_remainder(r2, tau2, m).max(1e-14), "err {err}");
                }
            }
        }
    }

    fn norm2(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn random_in_ball(rng: &mut ChaCha8Rng, dp: usize, r: f64) -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..dp).map(|_| rng.random_range(-r..r)).collect();
            if norm2(&x) <= r * r {
                return x;
            }
        }
    }

    // e·u^{M+1}/(M+1)! with u = 2 max(‖x‖², ‖y‖²)/τ².
    fn taylor_remainder(r2: f64, tau2: f64, m: u32) -> f64 {
        let u = 2.0 * r2 / tau2;
        std::f64::consts::E * ((m + 1) as f64 * u.ln() - ln_factorial(m + 1)).exp()
    }

    fn taylor_truncation(r2: f64, tau2: f64, tol: f64) -> u32 {
        (0..400).find(|&m| taylor_remainder(r2, tau2, m) <= tol).unwrap()
    }

    #[test]
    fn polynomial_feature_map_reproduces_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (c, m, dp) in [(1.0, 2, 2), (0.5, 3, 3), (0.0, 2, 2), (2.0, 4, 1)] {
            let spec = KernelSpec::polynomial(c, m, dp).unwrap();
            let exp = MercerExpansion::new(spec);
            let expected_len = binom_brute(dp as u64 + m as u64, m as u64);
            for _ in 0..20 {
                let x: Vec<f64> = (0..dp).map(|_| rng.random_range(-1.5..1.5)).collect();
                let y: Vec<f64> = (0..dp).map(|_| rng.random_range(-1.5..1.5)).collect();
                let fx = exp.feature_map(&x).unwrap();
                let fy = exp.feature_map(&y).unwrap();
                assert_eq!(fx.len() as u64, expected_len);
                let dot: f64 = fx.iter().zip(&fy).map(|(a, b)| a * b).sum();
                let k = spec.eval(&x, &y).unwrap();
                assert!((dot - k).abs() <= 1e-12 * (1.0 + k.abs()));
            }
        }
    }

    #[test]
    fn sigmoid_feature_map_reproduces_kernel() {
        let spec = KernelSpec::mercer_sigmoid(0.7, 0.1, 3).unwrap();
        let exp = MercerExpansion::new(spec);
        let x = [0.3, -0.2, 1.0];
        let y = [-0.5, 0.9, 0.0];
        let dot: f64 = exp.feature_map(&x).unwrap().iter().zip(exp.feature_map(&y).unwrap()).map(|(a, b)| a * b).sum();
        assert!(close(dot, spec.eval(&x, &y).unwrap(), 1e-15));
        let gauss = MercerExpansion::new(KernelSpec::gaussian(1.0, 1).unwrap());
        assert!(matches!(gauss.feature_map(&[0.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn beta_sum_examples() {
        for tau2 in [0.5, 1.0, 7.0] {
            let exp = MercerExpansion::new(KernelSpec::gaussian(tau2, 1).unwrap());
            assert!(close(exp.beta_sum(1).unwrap(), (-1.0f64).exp(), 1e-15));
            // Grid maximisation of λ₁φ₁² as an independent check of the
            // analytic supremum.
            let lam = gaussian_eigenvalue(1, tau2).unwrap();
            let n = MultiIndex::new(vec![1]);
            let grid_max = (0..=200_000)
                .map(|i| {
                    let x = i as f64 * 1e-4 * tau2;
                    lam * gaussian_eigenfunction(&n, &[x], tau2).unwrap().powi(2)
                })
                .fold(0.0, f64::max);
            assert!(grid_max <= (-1.0f64).exp() * (1.0 + 1e-12));
            assert!(close(grid_max, (-1.0f64).exp(), 1e-6));
        }
        let per = MercerExpansion::new(KernelSpec::periodic_sobolev(1.0, 1).unwrap());
        let expected = 2.0 / (2.0 * PI).powi(2) + 2.0 / (4.0 * PI).powi(2);
        assert!(close(per.beta_sum(2).unwrap(), expected, 1e-15));
        assert!(close(expected, 0.0633257, 1e-7));
        assert_eq!(per.beta_sum(0).unwrap(), 0.0);
        let poly = MercerExpansion::new(KernelSpec::polynomial(1.0, 2, 1).unwrap());
        assert!(poly.beta_sum(2).is_err());
    }

    #[test]
    fn gaussian_sup_matches_grid_search_in_two_dims() {
        let tau2 = 1.7;
        let exp = MercerExpansion::new(KernelSpec::gaussian(tau2, 2).unwrap());
        let level = exp.level(3).unwrap();
        for n in level.indices() {
            let analytic = gaussian_sup_weight(n);
            let mut best = 0.0f64;
            for i in 0..=400 {
                for j in 0..=400 {
                    let x = [i as f64 * 0.01, j as f64 * 0.01];
                    let v = level.eigenvalue() * gaussian_eigenfunction(n, &x, tau2).unwrap().powi(2);
                    best = best.max(v);
                }
            }
            assert!(best <= analytic * (1.0 + 1e-12));
            assert!(best >= analytic * (1.0 - 1e-3));
        }
    }

    #[test]
    fn beta_growth_examples() {
        let (b1, b2) = gaussian_growth_constants(2);
        assert!(close(b1, PI, 1e-15));
        assert_eq!(b2, 0.0);
        let exp = MercerExpansion::new(KernelSpec::gaussian(1.0, 2).unwrap());
        // Each level obeys π^{dp/2} k^{dp/2−1}, so the running sum grows
        // like M^{dp/2}: exponent dp/2 − 1 is exceeded, dp/2 is not.
        let levels = exp.beta_level_sums(30).unwrap();
        for (i, v) in levels.iter().enumerate() {
            assert!(*v <= multinomial_bound_rhs(i as u32 + 1, 2));
        }
        let check = check_beta_growth(&exp, 30, b1, b2).unwrap();
        assert!(!check.holds);
        let witness = check.first_violation.unwrap();
        let brute: f64 = levels[..witness as usize].iter().sum();
        assert!(brute > PI);
        assert!(levels[..witness as usize - 1].iter().sum::<f64>() <= PI);
        assert!(check_beta_growth(&exp, 30, b1, b2 + 1.0).unwrap().holds);
        for dp in 1..=3usize {
            let exp = MercerExpansion::new(KernelSpec::gaussian(2.0, dp).unwrap());
            let (b1, b2) = gaussian_growth_constants(dp);
            assert!(check_beta_growth(&exp, 25, b1, b2 + 1.0).unwrap().holds, "dp={dp}");
        }

        let sigma2 = 1.0;
        let per = MercerExpansion::new(KernelSpec::periodic_sobolev(sigma2, 1).unwrap());
        let full: f64 = (1..=100_000).map(|k| 4.0 * sigma2 * (2.0 * PI * k as f64).powi(-2)).sum();
        assert!(check_beta_growth(&per, 100, full + 1e-6, 0.0).unwrap().holds);
        assert!(check_beta_growth(&per, 100, 0.0, 0.0).is_err());
        let tight = check_beta_growth(&per, 100, 0.06, 0.0).unwrap();
        assert!(!tight.holds);
        assert_eq!(tight.first_violation, Some(2));
    }

    #[test]
    fn multinomial_lhs_examples() {
        let expected = 0.5 + 3f64.powf(-0.5) + 0.5 + 3f64.powf(-0.5) + 0.5;
        assert!(close(multinomial_bound_lhs(4, 2).unwrap(), expected, 1e-14));
        assert!(close(expected, 2.6547, 1e-4));
        assert_eq!(multinomial_bound_lhs(1, 1).unwrap(), 1.0);
        let expected = 3.0 * 2f64.powf(-0.5) + 3.0;
        assert!(close(multinomial_bound_lhs(2, 3).unwrap(), expected, 1e-14));
        assert!(close(expected, 5.1213, 1e-4));
    }

    #[test]
    fn weighted_moment_examples() {
        let v = weighted_normal_moment(0.0, 1.0, 1e12, 1).unwrap();
        assert!(close(v, 1.0, 1e-6));
        // E[e^{−cX²}] = (1 + 2c)^{−1/2}, c = 1/2.
        let v = weighted_normal_moment(0.0, 1.0, 4.0, 0).unwrap();
        assert!(close(v, 0.5f64.sqrt(), 1e-10));
        // E[X² e^{−X²}] = 3^{−3/2}.
        let v = weighted_normal_moment(0.0, 1.0, 2.0, 1).unwrap();
        assert!(close(v, 3f64.powf(-1.5), 1e-10));
        assert!(weighted_normal_moment(0.0, 1.0, 2.0, 61).is_err());
        assert!(weighted_normal_moment(0.0, 0.0, 2.0, 1).is_err());
    }

    #[test]
    fn weighted_moment_matches_closed_form_with_offset() {
        // X ~ N(α, σ²): E[X^{2k} e^{−2X²/τ²}] = (τ²/(4σ²+τ²))^{1/2}
        //   · exp(−2α²/(4σ²+τ²)) · E[Y^{2k}], Y ~ N(μ, σ_Y²).
        let (alpha, sigma2, tau2): (f64, f64, f64) = (0.7, 0.5, 2.0);
        let denom = 4.0 * sigma2 + tau2;
        let mu = tau2 * alpha / denom;
        let sy2 = sigma2 * tau2 / denom;
        for k in 0..8u32 {
            // Raw moments of N(μ, σ_Y²) by the binomial expansion.
            let mut ey = 0.0;
            for j in (0..=2 * k).step_by(2) {
                let binom = binom_brute(2 * k as u64, j as u64) as f64;
                let double_fact: f64 = (1..j).step_by(2).map(|i| i as f64).product();
                ey += binom * mu.powi((2 * k - j) as i32) * sy2.powi(j as i32 / 2) * double_fact;
            }
            let expected = (tau2 / denom).sqrt() * (-2.0 * alpha * alpha / denom).exp() * ey;
            let v = weighted_normal_moment(alpha, sigma2, tau2, k).unwrap();
            assert!((v / expected - 1.0).abs() < 1e-9, "k={k}: {v} vs {expected}");
        }
    }

    #[test]
    fn tail_moment_rejects_small_samples() {
        let exp = MercerExpansion::new(KernelSpec::gaussian(1.0, 1).unwrap());
        let sample = vec![vec![0.0]; 999];
        assert!(check_tail_moment(&exp, &sample, 3, 1.0, 1.0, 100).is_err());
    }

    #[test]
    fn tail_moment_zero_sample() {
        let exp = MercerExpansion::new(KernelSpec::gaussian(1.0, 2).unwrap());
        let sample = vec![vec![0.0, 0.0]; 1000];
        let r = check_tail_moment(&exp, &sample, 3, 0.0, 1.0, 100).unwrap();
        assert_eq!(r.alpha_hat[0], 1.0);
        assert!(r.alpha_hat[1..].iter().all(|&a| a == 0.0));
        assert_eq!(r.tail, 0.0);
        assert!(r.holds);
        assert!(r.rho_hat.is_none());
    }

    #[test]
    fn tail_moment_zero_beta1_fails_on_spread_sample() {
        let exp = MercerExpansion::new(KernelSpec::gaussian(1.0, 1).unwrap());
        let sample: Vec<Vec<f64>> = (0..1000).map(|i| vec![(i as f64 / 999.0) - 0.5]).collect();
        let r = check_tail_moment(&exp, &sample, 2, 0.0, 1.0, 100).unwrap();
        assert!(r.tail > 0.0);
        assert!(!r.holds);
    }
}
