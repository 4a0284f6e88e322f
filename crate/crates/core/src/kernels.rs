//! Kernel families on ℝ^{dp}, Gram assembly and kernel-level constants.
//!
//! Four separable families are supported:
//!
//! | family             | K(x, y)                                                     |
//! |--------------------|-------------------------------------------------------------|
//! | `gaussian`         | exp(-‖x − y‖² / τ²)                                         |
//! | `polynomial`       | (x'y + c)^m                                                 |
//! | `mercer_sigmoid`   | (1/dp) Σᵢ tanh((xᵢ − c)/b) tanh((yᵢ − c)/b)                  |
//! | `periodic_sobolev` | σ²(1 + (−1)^{s+1}/(2s)! · B₂ₛ(frac(|x − y|)))   (dp = 1)    |

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

/// Highest Bernoulli polynomial degree with a precomputed coefficient table.
pub const MAX_BERNOULLI_DEGREE: usize = 20;

/// Kernel family together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelFamily {
    Gaussian { tau2: f64 },
    Polynomial { c: f64, m: u32 },
    MercerSigmoid { b: f64, c: f64 },
    PeriodicSobolev { sigma2: f64, s: u32 },
}

impl KernelFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelFamily::Gaussian { tau2 } if !(tau2 > 0.0 && tau2.is_finite()) => {
                invalid(format!("gaussian tau2 must be positive, got {tau2}"))
            }
            KernelFamily::Polynomial { c, m } if !(c >= 0.0 && c.is_finite()) || m == 0 => {
                invalid(format!("polynomial kernel needs c >= 0 and m >= 1, got c={c}, m={m}"))
            }
            KernelFamily::MercerSigmoid { b, c } if !(b > 0.0 && b.is_finite() && c.is_finite()) => {
                invalid(format!("mercer sigmoid needs b > 0, got b={b}"))
            }
            KernelFamily::PeriodicSobolev { sigma2, s }
                if !(sigma2 > 0.0 && sigma2.is_finite()) || s == 0 =>
            {
                invalid(format!("periodic sobolev needs sigma2 > 0 and s >= 1, got sigma2={sigma2}, s={s}"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian { .. } => "gaussian",
            KernelFamily::Polynomial { .. } => "polynomial",
            KernelFamily::MercerSigmoid { .. } => "mercer_sigmoid",
            KernelFamily::PeriodicSobolev { .. } => "periodic_sobolev",
        }
    }
}

/// A validated kernel on ℝ^{input_dim}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec", into = "RawKernelSpec")]
pub struct KernelSpec {
    family: KernelFamily,
    input_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum RawKernelSpec {
    Gaussian { tau2: f64, input_dim: usize },
    Polynomial { c: f64, m: u32, input_dim: usize },
    MercerSigmoid { b: f64, c: f64, input_dim: usize },
    PeriodicSobolev { sigma2: f64, s: u32, input_dim: usize },
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        let (family, input_dim) = match raw {
            RawKernelSpec::Gaussian { tau2, input_dim } => (KernelFamily::Gaussian { tau2 }, input_dim),
            RawKernelSpec::Polynomial { c, m, input_dim } => (KernelFamily::Polynomial { c, m }, input_dim),
            RawKernelSpec::MercerSigmoid { b, c, input_dim } => (KernelFamily::MercerSigmoid { b, c }, input_dim),
            RawKernelSpec::PeriodicSobolev { sigma2, s, input_dim } => {
                (KernelFamily::PeriodicSobolev { sigma2, s }, input_dim)
            }
        };
        KernelSpec::new(family, input_dim)
    }
}

impl From<KernelSpec> for RawKernelSpec {
    fn from(spec: KernelSpec) -> Self {
        let input_dim = spec.input_dim;
        match spec.family {
            KernelFamily::Gaussian { tau2 } => RawKernelSpec::Gaussian { tau2, input_dim },
            KernelFamily::Polynomial { c, m } => RawKernelSpec::Polynomial { c, m, input_dim },
            KernelFamily::MercerSigmoid { b, c } => RawKernelSpec::MercerSigmoid { b, c, input_dim },
            KernelFamily::PeriodicSobolev { sigma2, s } => RawKernelSpec::PeriodicSobolev { sigma2, s, input_dim },
        }
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, input_dim: usize) -> Result<Self> {
        family.validate()?;
        if input_dim == 0 {
            return invalid("kernel input dimension must be at least 1");
        }
        if matches!(family, KernelFamily::PeriodicSobolev { .. }) && input_dim != 1 {
            return Err(Error::Unsupported(format!(
                "periodic sobolev kernel is scalar-input only, got input_dim={input_dim}"
            )));
        }
        Ok(KernelSpec { family, input_dim })
    }

    pub fn gaussian(tau2: f64, input_dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian { tau2 }, input_dim)
    }

    pub fn polynomial(c: f64, m: u32, input_dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Polynomial { c, m }, input_dim)
    }

    pub fn mercer_sigmoid(b: f64, c: f64, input_dim: usize) -> Result<Self> {
        Self::new(KernelFamily::MercerSigmoid { b, c }, input_dim)
    }

    pub fn periodic_sobolev(sigma2: f64, s: u32) -> Result<Self> {
        Self::new(KernelFamily::PeriodicSobolev { sigma2, s }, 1)
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Whether the kernel has a finite Mercer (feature-map) representation.
    pub fn is_finite_mercer(&self) -> bool {
        matches!(self.family, KernelFamily::Polynomial { .. } | KernelFamily::MercerSigmoid { .. })
    }

    /// Evaluates K(x, y).
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.input_dim, x.len())?;
        check_dim(self.input_dim, y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian { tau2 } => {
                let dist2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-dist2 / tau2).exp()
            }
            KernelFamily::Polynomial { c, m } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (dot + c).powi(m as i32)
            }
            KernelFamily::MercerSigmoid { b, c } => {
                let sum: f64 = x
                    .iter()
                    .zip(y)
                    .map(|(a, e)| ((a - c) / b).tanh() * ((e - c) / b).tanh())
                    .sum();
                sum / self.input_dim as f64
            }
            KernelFamily::PeriodicSobolev { sigma2, s } => {
                let r = (x[0] - y[0]).abs();
                periodic_closed_form(sigma2, s, r.fract())
            }
        }
    }

    /// κ with sup_x K(x, x) ≤ κ². `domain_radius` bounds ‖x‖∞ and is only
    /// used by the polynomial kernel.
    pub fn kappa_bound(&self, domain_radius: f64) -> Result<f64> {
        match self.family {
            KernelFamily::Gaussian { .. } | KernelFamily::MercerSigmoid { .. } => Ok(1.0),
            KernelFamily::PeriodicSobolev { sigma2, s } => {
                Ok(periodic_closed_form(sigma2, s, 0.0).sqrt())
            }
            KernelFamily::Polynomial { c, m } => {
                if !(domain_radius >= 0.0 && domain_radius.is_finite()) {
                    return invalid(format!("domain radius must be finite and >= 0, got {domain_radius}"));
                }
                if domain_radius == 0.0 && c == 0.0 {
                    return Err(Error::DegenerateKernel(
                        "polynomial kernel with c = 0 on a zero-radius domain vanishes".into(),
                    ));
                }
                let base = self.input_dim as f64 * domain_radius * domain_radius + c;
                Ok(base.powf(m as f64 / 2.0))
            }
        }
    }
}

/// σ²(1 + (−1)^{s+1}/(2s)! · B₂ₛ(t)) for t ∈ [0, 1].
fn periodic_closed_form(sigma2: f64, s: u32, t: f64) -> f64 {
    let degree = 2 * s as usize;
    let sign = if s % 2 == 1 { 1.0 } else { -1.0 };
    let b = bernoulli_table().eval(degree, t);
    sigma2 * (1.0 + sign * b / factorial_f64(degree))
}

fn factorial_f64(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Bernoulli numbers B₀..B₂₀ as exact fractions (B₁ = −1/2 convention).
const BERNOULLI_NUMBERS: [(i64, i64); MAX_BERNOULLI_DEGREE + 1] = [
    (1, 1),
    (-1, 2),
    (1, 6),
    (0, 1),
    (-1, 30),
    (0, 1),
    (1, 42),
    (0, 1),
    (-1, 30),
    (0, 1),
    (5, 66),
    (0, 1),
    (-691, 2730),
    (0, 1),
    (7, 6),
    (0, 1),
    (-3617, 510),
    (0, 1),
    (43867, 798),
    (0, 1),
    (-174611, 330),
];

struct BernoulliTable {
    // coeffs[n][j] is the coefficient of t^j in B_n(t).
    coeffs: Vec<Vec<f64>>,
}

impl BernoulliTable {
    fn build() -> Self {
        let mut coeffs = Vec::with_capacity(MAX_BERNOULLI_DEGREE + 1);
        for n in 0..=MAX_BERNOULLI_DEGREE {
            // B_n(t) = Σ_k C(n, k) B_k t^{n-k}
            let mut row = vec![0.0; n + 1];
            let mut binom = 1.0f64;
            for k in 0..=n {
                let (num, den) = BERNOULLI_NUMBERS[k];
                row[n - k] = binom * num as f64 / den as f64;
                binom = binom * (n - k) as f64 / (k + 1) as f64;
            }
            coeffs.push(row);
        }
        BernoulliTable { coeffs }
    }

    fn eval(&self, degree: usize, t: f64) -> f64 {
        self.coeffs[degree].iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

fn bernoulli_table() -> &'static BernoulliTable {
    static TABLE: std::sync::OnceLock<BernoulliTable> = std::sync::OnceLock::new();
    TABLE.get_or_init(BernoulliTable::build)
}

/// Evaluates the Bernoulli polynomial B_degree(t) for t ∈ [0, 1].
pub fn bernoulli_polynomial(degree: usize, t: f64) -> Result<f64> {
    if degree > MAX_BERNOULLI_DEGREE {
        return invalid(format!(
            "bernoulli degree {degree} exceeds supported maximum {MAX_BERNOULLI_DEGREE}"
        ));
    }
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("bernoulli argument must lie in [0, 1], got {t}"));
    }
    Ok(bernoulli_table().eval(degree, t))
}

/// Diagonal multivariate kernel diag(K₁, …, K_d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<KernelSpec>", into = "Vec<KernelSpec>")]
pub struct MultivariateKernelSpec {
    components: Vec<KernelSpec>,
}

impl TryFrom<Vec<KernelSpec>> for MultivariateKernelSpec {
    type Error = Error;

    fn try_from(components: Vec<KernelSpec>) -> Result<Self> {
        MultivariateKernelSpec::new(components)
    }
}

impl From<MultivariateKernelSpec> for Vec<KernelSpec> {
    fn from(spec: MultivariateKernelSpec) -> Self {
        spec.components
    }
}

impl MultivariateKernelSpec {
    pub fn new(components: Vec<KernelSpec>) -> Result<Self> {
        let Some(first) = components.first() else {
            return invalid("multivariate kernel needs at least one component");
        };
        let dim = first.input_dim();
        for c in &components {
            check_dim(dim, c.input_dim())?;
        }
        Ok(MultivariateKernelSpec { components })
    }

    /// The same kernel for every one of the `d` output dimensions.
    pub fn uniform(spec: KernelSpec, d: usize) -> Result<Self> {
        Self::new(vec![spec; d])
    }

    pub fn components(&self) -> &[KernelSpec] {
        &self.components
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.components[0].input_dim()
    }

    /// κ = (Σ_j κ_j²)^{1/2}.
    pub fn kappa(&self, domain_radius: f64) -> Result<f64> {
        let mut sum = 0.0;
        for c in &self.components {
            let k = c.kappa_bound(domain_radius)?;
            sum += k * k;
        }
        Ok(sum.sqrt())
    }
}

/// Empirical kernel matrix over a set of windows.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    kernel: KernelSpec,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().sum()
    }

    /// u'Kv.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_dim(self.size(), u.len())?;
        check_dim(self.size(), v.len())?;
        let mut total = 0.0;
        for (s, us) in u.iter().enumerate() {
            let row: f64 = self.entries.row(s).iter().zip(v).map(|(k, vt)| k * vt).sum();
            total += us * row;
        }
        Ok(total)
    }
}

/// Builds the Gram matrix K[s][t] = K(w_s, w_t). Only the upper triangle is
/// evaluated; the lower triangle is a mirror, so the result is exactly
/// symmetric.
pub fn gram_matrix(spec: &KernelSpec, windows: &[Vec<f64>]) -> Result<GramMatrix> {
    if windows.is_empty() {
        return invalid("gram matrix needs at least one window");
    }
    for w in windows {
        check_dim(spec.input_dim(), w.len())?;
    }
    let n = windows.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| (s..n).map(|t| spec.eval_unchecked(&windows[s], &windows[t])).collect())
        .collect();
    let mut entries = DMatrix::zeros(n, n);
    for (s, row) in rows.iter().enumerate() {
        for (offset, &v) in row.iter().enumerate() {
            let t = s + offset;
            entries[(s, t)] = v;
            entries[(t, s)] = v;
        }
    }
    Ok(GramMatrix { entries, kernel: *spec })
}

/// (K(z, w₁), …, K(z, w_n)).
pub fn cross_kernel_vector(spec: &KernelSpec, z: &[f64], windows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if windows.is_empty() {
        return invalid("cross kernel vector needs at least one window");
    }
    check_dim(spec.input_dim(), z.len())?;
    windows
        .iter()
        .map(|w| {
            check_dim(spec.input_dim(), w.len())?;
            Ok(spec.eval_unchecked(z, w))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Partial Fourier series of the periodic kernel; independent of the
    // Bernoulli closed form.
    fn periodic_series(sigma2: f64, s: u32, x: f64, y: f64, terms: usize) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut sum = 0.0;
        for k in (1..=terms).rev() {
            let kf = k as f64;
            sum += (two_pi * kf).powi(-2 * s as i32) * (two_pi * kf * (x - y)).cos();
        }
        sigma2 * (1.0 + 2.0 * sum)
    }

    #[test]
    fn gaussian_eval_example() {
        let k = KernelSpec::gaussian(1.0, 1).unwrap();
        assert!(close(k.eval(&[0.0], &[1.0]).unwrap(), (-1.0f64).exp(), 1e-15));
    }

    #[test]
    fn polynomial_eval_example() {
        let k = KernelSpec::polynomial(1.0, 2, 2).unwrap();
        assert_eq!(k.eval(&[1.0, 2.0], &[3.0, 0.0]).unwrap(), 16.0);
    }

    #[test]
    fn periodic_diagonal_is_13_over_12() {
        let k = KernelSpec::periodic_sobolev(1.0, 1).unwrap();
        let v = k.eval(&[0.3], &[0.3]).unwrap();
        assert!(close(v, 13.0 / 12.0, 1e-15));
        // Oracle: partial cosine series with 10⁶ terms.
        let series = periodic_series(1.0, 1, 0.0, 0.0, 1_000_000);
        assert!(close(series, 13.0 / 12.0, 1e-6));
    }

    #[test]
    fn mercer_sigmoid_origin_is_zero() {
        let k = KernelSpec::mercer_sigmoid(1.0, 0.0, 1).unwrap();
        assert_eq!(k.eval(&[0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_and_configuration_errors() {
        let k = KernelSpec::gaussian(1.0, 2).unwrap();
        assert_eq!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        );
        assert!(matches!(
            KernelSpec::new(KernelFamily::PeriodicSobolev { sigma2: 1.0, s: 1 }, 2),
            Err(Error::Unsupported(_))
        ));
        assert!(KernelSpec::gaussian(0.0, 1).is_err());
        assert!(KernelSpec::polynomial(-1.0, 2, 1).is_err());
        assert!(KernelSpec::polynomial(1.0, 0, 1).is_err());
        assert!(KernelSpec::mercer_sigmoid(0.0, 0.0, 1).is_err());
        assert!(KernelSpec::periodic_sobolev(1.0, 0).is_err());
    }

    #[test]
    fn bernoulli_examples() {
        assert!(close(bernoulli_polynomial(2, 0.0).unwrap(), 1.0 / 6.0, 1e-15));
        assert!(close(bernoulli_polynomial(2, 0.5).unwrap(), -1.0 / 12.0, 1e-15));
        assert_eq!(bernoulli_polynomial(0, 0.3).unwrap(), 1.0);
        assert!(bernoulli_polynomial(21, 0.5).is_err());
        assert!(bernoulli_polynomial(2, 1.5).is_err());
    }

    #[test]
    fn bernoulli_matches_symbolic_low_degrees() {
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let b1 = t - 0.5;
            let b3 = t * t * t - 1.5 * t * t + 0.5 * t;
            let b4 = t.powi(4) - 2.0 * t.powi(3) + t * t - 1.0 / 30.0;
            assert!(close(bernoulli_polynomial(1, t).unwrap(), b1, 1e-15));
            assert!(close(bernoulli_polynomial(3, t).unwrap(), b3, 1e-15));
            assert!(close(bernoulli_polynomial(4, t).unwrap(), b4, 1e-15));
        }
    }

    #[test]
    fn bernoulli_endpoint_and_mean_zero() {
        for n in 2..=MAX_BERNOULLI_DEGREE {
            let b0 = bernoulli_polynomial(n, 0.0).unwrap();
            let b1 = bernoulli_polynomial(n, 1.0).unwrap();
            assert!(close(b0, b1, 1e-9 * (1.0 + b0.abs())), "n={n}: {b0} vs {b1}");
        }
        // Midpoint rule; its error h²/24·max|B_n''| stays below 1e-10 for n ≤ 6.
        let cells = 200_000;
        let h = 1.0 / cells as f64;
        for n in 1..=6 {
            let integral: f64 =
                (0..cells).map(|i| bernoulli_polynomial(n, (i as f64 + 0.5) * h).unwrap()).sum::<f64>() * h;
            assert!(integral.abs() <= 1e-10, "n={n}: {integral}");
        }
        // Higher degrees through the derivative identity B_{n+1}' = (n+1)B_n:
        // ∫₀¹ B_n = (B_{n+1}(1) − B_{n+1}(0))/(n+1) which must vanish.
        for n in 7..MAX_BERNOULLI_DEGREE {
            let d = bernoulli_polynomial(n + 1, 1.0).unwrap() - bernoulli_polynomial(n + 1, 0.0).unwrap();
            assert!((d / (n + 1) as f64).abs() <= 1e-9, "n={n}");
        }
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(KernelSpec::gaussian(3.0, 4).unwrap().kappa_bound(0.0).unwrap(), 1.0);
        let per = KernelSpec::periodic_sobolev(1.0, 1).unwrap().kappa_bound(0.0).unwrap();
        assert!(close(per, (13.0f64 / 12.0).sqrt(), 1e-15));
        assert!(close(per, 1.0408, 1e-4));
        let poly = KernelSpec::polynomial(1.0, 2, 2).unwrap().kappa_bound(1.0).unwrap();
        assert!(close(poly, 3.0, 1e-14));
        assert!(matches!(
            KernelSpec::polynomial(0.0, 2, 2).unwrap().kappa_bound(0.0),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn diagonal_never_exceeds_kappa_squared() {
        let r = 1.5;
        let specs = [
            KernelSpec::gaussian(0.7, 2).unwrap(),
            KernelSpec::polynomial(0.5, 3, 2).unwrap(),
            KernelSpec::mercer_sigmoid(0.8, 0.2, 2).unwrap(),
        ];
        let steps = 31;
        for spec in &specs {
            let kappa = spec.kappa_bound(r).unwrap();
            for i in 0..steps {
                for j in 0..steps {
                    let x = [-r + 2.0 * r * i as f64 / (steps - 1) as f64, -r + 2.0 * r * j as f64 / (steps - 1) as f64];
                    assert!(spec.eval(&x, &x).unwrap() <= kappa * kappa * (1.0 + 1e-12));
                }
            }
        }
        let per = KernelSpec::periodic_sobolev(2.0, 2).unwrap();
        let kappa = per.kappa_bound(0.0).unwrap();
        for i in 0..101 {
            let x = [-3.0 + 0.06 * i as f64];
            assert!(per.eval(&x, &x).unwrap() <= kappa * kappa * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gram_examples() {
        let g = KernelSpec::gaussian(1.0, 1).unwrap();
        let m = gram_matrix(&g, &[vec![0.0], vec![0.0]]).unwrap();
        assert!(m.entries().iter().all(|&v| v == 1.0));
        let m = gram_matrix(&g, &[vec![0.0], vec![1.0]]).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(m.entries()[(0, 1)], e);
        assert_eq!(m.entries()[(1, 0)], e);
        assert_eq!(m.entries()[(1, 1)], 1.0);
        let lin = KernelSpec::polynomial(0.0, 1, 2).unwrap();
        let m = gram_matrix(&lin, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(m.entries(), &DMatrix::identity(2, 2));
        assert!(gram_matrix(&g, &[]).is_err());
        assert!(gram_matrix(&g, &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn cross_kernel_examples() {
        let g = KernelSpec::gaussian(1.0, 1).unwrap();
        let v = cross_kernel_vector(&g, &[0.0], &[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(v, vec![1.0, (-1.0f64).exp()]);
        let v = cross_kernel_vector(&g, &[2.0], &[vec![0.0]]).unwrap();
        assert!(close(v[0], 0.0183156, 1e-7));
        assert!(cross_kernel_vector(&g, &[2.0], &[]).is_err());
    }

    fn all_families(dim: usize) -> Vec<KernelSpec> {
        let mut v = vec![
            KernelSpec::gaussian(1.3, dim).unwrap(),
            KernelSpec::polynomial(0.7, 3, dim).unwrap(),
            KernelSpec::mercer_sigmoid(0.9, -0.1, dim).unwrap(),
        ];
        if dim == 1 {
            v.push(KernelSpec::periodic_sobolev(1.5, 2).unwrap());
        }
        v
    }

    #[test]
    fn symmetry_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [1usize, 3] {
            for spec in all_families(dim) {
                for _ in 0..1000 {
                    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let y: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let a = spec.eval(&x, &y).unwrap();
                    let b = spec.eval(&y, &x).unwrap();
                    assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
                }
            }
        }
    }

    #[test]
    fn gram_matrices_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [1usize, 2] {
            for spec in all_families(dim) {
                let pts: Vec<Vec<f64>> =
                    (0..50).map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
                let gram = gram_matrix(&spec, &pts).unwrap();
                let trace = gram.trace();
                let eig = gram.entries().clone().symmetric_eigenvalues();
                let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(min >= -1e-8 * trace, "{:?}: min eigenvalue {min}", spec.family());
            }
        }
    }

    #[test]
    fn periodic_closed_form_matches_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in [1u32, 2] {
            let spec = KernelSpec::periodic_sobolev(1.0, s).unwrap();
            for _ in 0..100 {
                let x = rng.random_range(-3.0..3.0);
                let y = rng.random_range(-3.0..3.0);
                let exact = spec.eval(&[x], &[y]).unwrap();
                let series = periodic_series(1.0, s, x, y, 100_000);
                assert!((exact - series).abs() <= 1e-6, "s={s} x={x} y={y}");
            }
        }
    }

    #[test]
    fn spec_serde_is_strict() {
        let spec: KernelSpec =
            serde_json::from_str(r#"{"family":"gaussian","tau2":2.0,"input_dim":3}"#).unwrap();
        assert_eq!(spec, KernelSpec::gaussian(2.0, 3).unwrap());
        assert!(serde_json::from_str::<KernelSpec>(r#"{"family":"gaussian","tau2":2.0,"input_dim":3,"tau":1}"#)
            .is_err());
        assert!(serde_json::from_str::<KernelSpec>(r#"{"family":"gaussian","tau2":-2.0,"input_dim":3}"#).is_err());
        let fam: KernelFamily = toml::from_str("family = \"polynomial\"\nc = 1.0\nm = 2\n").unwrap();
        assert_eq!(fam, KernelFamily::Polynomial { c: 1.0, m: 2 });
        assert!(toml::from_str::<KernelFamily>("family = \"polynomial\"\nc = 1.0\nm = 2\nq = 1\n").is_err());
    }

    proptest! {
        #[test]
        fn spec_serde_round_trip(tau2 in 0.01f64..100.0, dim in 1usize..6) {
            let spec = KernelSpec::gaussian(tau2, dim).unwrap();
            let text = serde_json::to_string(&spec).unwrap();
            let back: KernelSpec = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(spec, back);
        }

        #[test]
        fn gram_is_exactly_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
            for spec in all_families(2) {
                let g = gram_matrix(&spec, &pts).unwrap();
                for i in 0..12 {
                    prop_assert_eq!(g.entries()[(i, i)], spec.eval(&pts[i], &pts[i]).unwrap());
                    for j in 0..12 {
                        prop_assert_eq!(g.entries()[(i, j)], g.entries()[(j, i)]);
                    }
                }
            }
        }
    }
}
