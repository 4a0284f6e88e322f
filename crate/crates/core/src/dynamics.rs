//! Nonlinear VAR(p) simulation and lag embedding.
//!
//! Random numbers come from ChaCha8 seeded with `seed`; the noise of time
//! step `t` (1-based, counting burn-in) is drawn from stream `t` of that
//! generator, so every step's draws are independent of how many draws earlier
//! steps consumed. Normals use `rand_distr::StandardNormal`.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::KernelSpec;
use crate::table;

pub const DEFAULT_BURN_IN: usize = 1000;

/// Rejection attempts allowed per truncated-Gaussian draw.
pub const MAX_REJECTIONS: usize = 1_000_000;

type Evaluator = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A caller-supplied regression function `g: ℝ^{dp} → ℝ^d`.
#[derive(Clone)]
pub struct CustomFunction {
    pub name: String,
    /// Known bound on ‖g‖∞, if any.
    pub sup_bound: Option<f64>,
    eval: Arc<Evaluator>,
}

impl CustomFunction {
    pub fn new<F>(name: impl Into<String>, sup_bound: Option<f64>, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        CustomFunction { name: name.into(), sup_bound, eval: Arc::new(f) }
    }
}

impl fmt::Debug for CustomFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFunction").field("name", &self.name).field("sup_bound", &self.sup_bound).finish()
    }
}

/// One additive lag term `h_j(x) = scale · tanh(A x)` with `A` of size d×d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagTerm {
    pub a: Vec<Vec<f64>>,
    pub scale: f64,
}

/// The regression function `g` of `X_t = g(X_{t−1}, …, X_{t−p}) + ε_t`.
///
/// Inputs are lag windows in most-recent-first order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressionFunctionSpec {
    /// `g(y) = scale · tanh(A y)` componentwise, `A` of size d×dp.
    TanhLinear { a: Vec<Vec<f64>>, scale: f64 },
    /// `g = Σ_j h_j(X_{t−j})`, one term per lag.
    AdditiveLags { lags: Vec<LagTerm> },
    /// `g_i(y) = Σ_c coefs[c][i] K(y, centers[c])`, an element of the RKHS.
    KernelSections { kernel: KernelSpec, centers: Vec<Vec<f64>>, coefs: Vec<Vec<f64>> },
    #[serde(skip)]
    Custom(CustomFunction),
}

impl RegressionFunctionSpec {
    /// `g ≡ 0` on ℝ^{dp} → ℝ^d.
    pub fn zero(d: usize, p: usize) -> Self {
        RegressionFunctionSpec::TanhLinear { a: vec![vec![0.0; d * p]; d], scale: 1.0 }
    }

    /// Checks that g maps ℝ^{dp} to ℝ^d.
    pub fn validate(&self, d: usize, p: usize) -> Result<()> {
        if d == 0 || p == 0 {
            return invalid("d and p must be at least 1");
        }
        let check_matrix = |a: &[Vec<f64>], rows: usize, cols: usize, what: &str| -> Result<()> {
            check_dim(rows, a.len())?;
            for row in a {
                check_dim(cols, row.len())?;
                if row.iter().any(|v| !v.is_finite()) {
                    return invalid(format!("{what} has non-finite entries"));
                }
            }
            Ok(())
        };
        match self {
            RegressionFunctionSpec::TanhLinear { a, scale } => {
                check_matrix(a, d, d * p, "A")?;
                if !(*scale > 0.0 && scale.is_finite()) {
                    return invalid(format!("scale must be positive, got {scale}"));
                }
            }
            RegressionFunctionSpec::AdditiveLags { lags } => {
                check_dim(p, lags.len())?;
                for lag in lags {
                    check_matrix(&lag.a, d, d, "lag matrix")?;
                    if !(lag.scale > 0.0 && lag.scale.is_finite()) {
                        return invalid(format!("lag scale must be positive, got {}", lag.scale));
                    }
                }
            }
            RegressionFunctionSpec::KernelSections { kernel, centers, coefs } => {
                check_dim(d * p, kernel.input_dim())?;
                if centers.is_empty() {
                    return invalid("kernel sections need at least one center");
                }
                check_matrix(centers, centers.len(), d * p, "centers")?;
                check_matrix(coefs, centers.len(), d, "coefficients")?;
            }
            RegressionFunctionSpec::Custom(_) => {}
        }
        Ok(())
    }

    /// M_g with ‖g(y)‖∞ ≤ M_g for all y, when one is known.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            RegressionFunctionSpec::TanhLinear { a, scale } => Some(scale * (a.len() as f64).sqrt()),
            RegressionFunctionSpec::AdditiveLags { lags } => {
                let d = lags.first().map_or(0, |l| l.a.len()) as f64;
                Some(lags.iter().map(|l| l.scale).sum::<f64>() * d.sqrt())
            }
            RegressionFunctionSpec::KernelSections { kernel, coefs, .. } => {
                let kappa = kernel.kappa_bound(f64::INFINITY).ok().filter(|k| k.is_finite())?;
                let d = coefs.first().map_or(0, Vec::len);
                (0..d).map(|i| coefs.iter().map(|c| c[i].abs()).sum::<f64>() * kappa * kappa).reduce(f64::max)
            }
            RegressionFunctionSpec::Custom(c) => c.sup_bound,
        }
    }

    /// Evaluates g at a window `y` (length dp) into `out` (length d).
    /// Dimensions are assumed validated.
    pub fn eval_into(&self, y: &[f64], out: &mut [f64]) {
        match self {
            RegressionFunctionSpec::TanhLinear { a, scale } => {
                for (o, row) in out.iter_mut().zip(a) {
                    let z: f64 = row.iter().zip(y).map(|(r, v)| r * v).sum();
                    *o = scale * z.tanh();
                }
            }
            RegressionFunctionSpec::AdditiveLags { lags } => {
                let d = out.len();
                out.iter_mut().for_each(|o| *o = 0.0);
                for (j, lag) in lags.iter().enumerate() {
                    let x = &y[j * d..(j + 1) * d];
                    for (o, row) in out.iter_mut().zip(&lag.a) {
                        let z: f64 = row.iter().zip(x).map(|(r, v)| r * v).sum();
                        *o += lag.scale * z.tanh();
                    }
                }
            }
            RegressionFunctionSpec::KernelSections { kernel, centers, coefs } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (c, w) in centers.iter().zip(coefs) {
                    let k = kernel.eval_unchecked(y, c);
                    for (o, wi) in out.iter_mut().zip(w) {
                        *o += wi * k;
                    }
                }
            }
            RegressionFunctionSpec::Custom(c) => (c.eval)(y, out),
        }
    }

    pub fn eval(&self, y: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        self.eval_into(y, &mut out);
        out
    }
}

/// Diagonal noise law of ε_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    GaussianDiag { sigma2: Vec<f64> },
    /// N(0, σᵢ²) conditioned on |εᵢ| ≤ L_ε.
    TruncatedGaussian { sigma2: Vec<f64>, l_eps: f64 },
}

impl NoiseSpec {
    pub fn gaussian(sigma2: Vec<f64>) -> Self {
        NoiseSpec::GaussianDiag { sigma2 }
    }

    pub fn sigma2(&self) -> &[f64] {
        match self {
            NoiseSpec::GaussianDiag { sigma2 } | NoiseSpec::TruncatedGaussian { sigma2, .. } => sigma2,
        }
    }

    /// max σᵢ.
    pub fn sigma_max(&self) -> f64 {
        self.sigma2().iter().copied().fold(0.0, f64::max).sqrt()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        check_dim(d, self.sigma2().len())?;
        // Zero variance is accepted as the degenerate noiseless law.
        if let Some(bad) = self.sigma2().iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return invalid(format!("noise variances must be non-negative, got {bad}"));
        }
        if let NoiseSpec::TruncatedGaussian { l_eps, .. } = self {
            if !(*l_eps >= 0.0 && l_eps.is_finite()) {
                return invalid(format!("truncation level must be non-negative, got {l_eps}"));
            }
        }
        Ok(())
    }

    /// The same law with every standard deviation multiplied by `factor`
    /// (and the truncation level, for the truncated law).
    pub fn scaled(&self, factor: f64) -> Self {
        let f2 = factor * factor;
        match self {
            NoiseSpec::GaussianDiag { sigma2 } => {
                NoiseSpec::GaussianDiag { sigma2: sigma2.iter().map(|s| s * f2).collect() }
            }
            NoiseSpec::TruncatedGaussian { sigma2, l_eps } => NoiseSpec::TruncatedGaussian {
                sigma2: sigma2.iter().map(|s| s * f2).collect(),
                l_eps: l_eps * factor,
            },
        }
    }

    /// Draws one ε into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match self {
            NoiseSpec::GaussianDiag { sigma2 } => {
                for (o, s2) in out.iter_mut().zip(sigma2) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = s2.sqrt() * z;
                }
            }
            NoiseSpec::TruncatedGaussian { sigma2, l_eps } => {
                for (o, s2) in out.iter_mut().zip(sigma2) {
                    let sigma = s2.sqrt();
                    let mut attempts = 0;
                    *o = loop {
                        let z: f64 = rng.sample(StandardNormal);
                        let v = sigma * z;
                        if v.abs() <= *l_eps {
                            break v;
                        }
                        attempts += 1;
                        if attempts >= MAX_REJECTIONS {
                            return Err(Error::Resource(format!(
                                "truncated gaussian rejection exceeded {MAX_REJECTIONS} attempts"
                            )));
                        }
                    };
                }
            }
        }
        Ok(())
    }
}

/// Generator for time step `t` of a run seeded with `seed`.
pub fn step_rng(seed: u64, t: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t);
    rng
}

/// A simulated or loaded series X_1..X_T, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    values: Vec<Vec<f64>>,
    d: usize,
    seed: Option<u64>,
}

impl Trajectory {
    pub fn new(values: Vec<Vec<f64>>, seed: Option<u64>) -> Result<Self> {
        let Some(first) = values.first() else {
            return invalid("trajectory must have at least one time step");
        };
        let d = first.len();
        if d == 0 {
            return invalid("trajectory dimension must be at least 1");
        }
        for row in &values {
            check_dim(d, row.len())?;
            if row.iter().any(|v| !v.is_finite()) {
                return invalid("trajectory contains non-finite values");
            }
        }
        Ok(Trajectory { values, d, seed })
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// CSV with header `t,x1,...,xd`, t starting at 1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.d).map(|i| format!("x{i}")));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = self.values.iter().enumerate().map(|(t, row)| {
            std::iter::once((t + 1).to_string()).chain(row.iter().map(|v| table::fmt_f64(*v)))
        });
        table::write_csv(w, &header_refs, rows)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let (header, rows) = table::read_numeric_csv(r)?;
        let d = header.len().saturating_sub(1);
        let expected: Vec<String> =
            std::iter::once("t".to_string()).chain((1..=d).map(|i| format!("x{i}"))).collect();
        if header != expected || d == 0 {
            return Err(Error::Io(format!("trajectory header must be t,x1,...,xd; got {}", header.join(","))));
        }
        let values = rows.into_iter().map(|mut row| row.split_off(1)).collect();
        Trajectory::new(values, None)
    }
}

/// Pairs (Y_{t−1}, X_t) for t = p+1..T, with windows most-recent-first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    windows: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    d: usize,
    p: usize,
}

impl TrainingSet {
    /// Builds a training set from explicit windows (length dp) and targets
    /// (length d).
    pub fn new(windows: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, p: usize) -> Result<Self> {
        if windows.is_empty() {
            return invalid("training set must be nonempty");
        }
        check_dim(windows.len(), targets.len())?;
        let d = targets[0].len();
        if d == 0 || p == 0 {
            return invalid("d and p must be at least 1");
        }
        for (w, y) in windows.iter().zip(&targets) {
            check_dim(d * p, w.len())?;
            check_dim(d, y.len())?;
        }
        Ok(TrainingSet { windows, targets, d, p })
    }

    pub fn windows(&self) -> &[Vec<f64>] {
        &self.windows
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    /// Target column of output dimension `i`.
    pub fn target_column(&self, i: usize) -> Vec<f64> {
        self.targets.iter().map(|y| y[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Full series length T = pairs + p.
    pub fn series_len(&self) -> usize {
        self.len() + self.p
    }
}

fn window_at(values: &[Vec<f64>], end: usize, p: usize, out: &mut Vec<f64>) {
    // Window of the p values strictly before index `end`, newest first.
    out.clear();
    for lag in 1..=p {
        out.extend_from_slice(&values[end - lag]);
    }
}

pub fn lag_embed(traj: &Trajectory, p: usize) -> Result<TrainingSet> {
    if p == 0 {
        return invalid("lag order p must be at least 1");
    }
    if traj.len() <= p {
        return invalid(format!("trajectory length {} must exceed p = {p}", traj.len()));
    }
    let n = traj.len() - p;
    let mut windows = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for end in p..traj.len() {
        let mut w = Vec::with_capacity(traj.d * p);
        window_at(&traj.values, end, p, &mut w);
        windows.push(w);
        targets.push(traj.values[end].clone());
    }
    Ok(TrainingSet { windows, targets, d: traj.d, p })
}

/// Simulation settings shared by [`simulate_var`] and [`stationary_sample`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarModel {
    pub g: RegressionFunctionSpec,
    pub noise: NoiseSpec,
    pub d: usize,
    pub p: usize,
}

impl VarModel {
    pub fn new(g: RegressionFunctionSpec, noise: NoiseSpec, d: usize, p: usize) -> Result<Self> {
        let model = VarModel { g, noise, d, p };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.g.validate(self.d, self.p)?;
        self.noise.validate(self.d)
    }

    /// The same model with every noise standard deviation multiplied by `factor`.
    pub fn with_noise_scaled(&self, factor: f64) -> Self {
        VarModel { noise: self.noise.scaled(factor), ..self.clone() }
    }
}

/// Simulates X_1..X_{p+burn_in+T} from X_1 = … = X_p = 0 and returns the last
/// T values.
pub fn simulate_var(model: &VarModel, t_len: usize, burn_in: usize, seed: u64) -> Result<Trajectory> {
    simulate_var_with_noise(model, t_len, burn_in, seed).map(|(traj, _)| traj)
}

/// As [`simulate_var`], also returning the noise ε of each returned step.
pub fn simulate_var_with_noise(
    model: &VarModel,
    t_len: usize,
    burn_in: usize,
    seed: u64,
) -> Result<(Trajectory, Vec<Vec<f64>>)> {
    model.validate()?;
    if t_len == 0 {
        return invalid("T must be at least 1");
    }
    let (d, p) = (model.d, model.p);
    let total = p + burn_in + t_len;
    let first_kept = total - t_len;
    let mut values = vec![vec![0.0; d]; p];
    values.reserve(total - p);
    let mut noise = Vec::with_capacity(t_len);
    let mut window = Vec::with_capacity(d * p);
    let mut eps = vec![0.0; d];
    for idx in p..total {
        window_at(&values, idx, p, &mut window);
        let mut x = vec![0.0; d];
        model.g.eval_into(&window, &mut x);
        // Time steps are 1-based.
        let step = idx as u64 + 1;
        model.noise.sample_into(&mut step_rng(seed, step), &mut eps)?;
        for (xi, e) in x.iter_mut().zip(&eps) {
            *xi += e;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: step as usize });
        }
        values.push(x);
        if idx >= first_kept {
            noise.push(eps.clone());
        }
    }
    let values = values.split_off(first_kept);
    Ok((Trajectory { values, d, seed: Some(seed) }, noise))
}

/// n lag windows taken every `gap` steps from one chain after burn-in.
pub fn stationary_sample(model: &VarModel, n: usize, gap: usize, burn_in: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 || gap == 0 {
        return invalid("sample size and gap must be at least 1");
    }
    let len = model.p + (n - 1) * gap + 1;
    let traj = simulate_var(model, len, burn_in, seed)?;
    let set = lag_embed(&traj, model.p)?;
    Ok(set.windows.into_iter().step_by(gap).collect())
}
