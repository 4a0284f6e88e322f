//! Kernel ridge estimator in representer form.
//!
//! For output dimension i the dual coefficients solve
//! `(K_i + λT·I) α_i = y_i`, where K_i is the (T−p)×(T−p) Gram matrix of the
//! training windows and T is the full series length. The predictor is
//! `ĝ_i(z) = Σ_t α_{i,t} K_i(z, w_t)`.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::TrainingSet;
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{cross_kernel_vector, gram_matrix, KernelSpec, MultivariateKernelSpec};
use crate::mercer::MercerExpansion;

/// Diagonal jitter multipliers (of trace/n) tried in order.
const JITTER_LADDER: [f64; 3] = [0.0, 1e-12, 1e-10];

/// Factorization metadata for one output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverInfo {
    /// Diagonal jitter added on top of λT.
    pub jitter: f64,
    /// (max L_jj / min L_jj)², a cheap lower estimate of the 2-norm
    /// condition number of K + λT·I.
    pub condition_estimate: Option<f64>,
    /// ‖(K + λT·I)α − y‖₂ / max(‖y‖₂, tiny).
    pub relative_residual: Option<f64>,
    /// Index of the first output dimension with the same kernel, whose
    /// factorization was reused.
    pub shared_with: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    kernel: MultivariateKernelSpec,
    lambda: f64,
    t_len: usize,
    p: usize,
    windows: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    solver: Vec<SolverInfo>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    kernel: MultivariateKernelSpec,
    lambda: f64,
    t: usize,
    p: usize,
    d: usize,
    windows: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    solver: Vec<SolverInfo>,
}

const MODEL_FORMAT: &str = "kervar-model-v1";

/// Objective and optimality diagnostics of a fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    /// (1/T) Σ_t ‖y_t − ŷ_t‖² + λ Σ_i α_i'K_iα_i.
    pub objective: f64,
    pub rkhs_norm_sq: f64,
    pub in_sample_rmse: f64,
    /// max_i ‖(K_i + λT·I)α_i − y_i‖₂ / ‖y_i‖₂.
    pub max_relative_residual: f64,
    pub solver: Vec<SolverInfo>,
}

pub(crate) struct Factorized {
    pub(crate) chol: Cholesky<f64, Dyn>,
    pub(crate) jitter: f64,
    pub(crate) condition_estimate: f64,
}

pub(crate) fn factorize(gram: &DMatrix<f64>, ridge: f64) -> Result<Factorized> {
    let n = gram.nrows();
    let scale = (gram.trace() + ridge * n as f64) / n as f64;
    for mult in JITTER_LADDER {
        let jitter = mult * scale;
        let mut a = gram.clone();
        for i in 0..n {
            a[(i, i)] += ridge + jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
            return Ok(Factorized { chol, jitter, condition_estimate: (hi / lo).powi(2) });
        }
    }
    Err(Error::Numerical(format!(
        "Cholesky factorization of K + λT·I failed after jitter up to {:e}·trace/n",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

fn relative_residual(gram: &DMatrix<f64>, ridge: f64, alpha: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let r = gram * alpha + alpha * ridge - y;
    r.norm() / y.norm().max(f64::MIN_POSITIVE)
}

/// Indices of the first component with an identical spec, per component.
fn share_map(specs: &[KernelSpec]) -> Vec<usize> {
    (0..specs.len()).map(|i| (0..=i).find(|&j| specs[j] == specs[i]).unwrap()).collect()
}

/// Fits one representer-form predictor per output dimension.
///
/// Components with identical kernel specs share one Gram matrix and one
/// factorization.
pub fn fit(kernel: &MultivariateKernelSpec, training: &TrainingSet, lambda: f64) -> Result<FittedModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be positive, got {lambda}"));
    }
    check_dim(training.d(), kernel.output_dim())?;
    check_dim(training.d() * training.p(), kernel.input_dim())?;
    let t_len = training.series_len();
    let ridge = lambda * t_len as f64;
    let specs = kernel.components();
    let owner = share_map(specs);
    let leaders: Vec<usize> = (0..specs.len()).filter(|&i| owner[i] == i).collect();

    type Solved = (usize, Vec<(usize, Vec<f64>, SolverInfo)>);
    let solved: Vec<Solved> = leaders
        .par_iter()
        .map(|&lead| -> Result<Solved> {
            let gram = gram_matrix(&specs[lead], training.windows())?.into_entries();
            let fac = factorize(&gram, ridge)?;
            let mut out = Vec::new();
            for i in (0..specs.len()).filter(|&i| owner[i] == lead) {
                let y = DVector::from_vec(training.target_column(i));
                let alpha = fac.chol.solve(&y);
                let info = SolverInfo {
                    jitter: fac.jitter,
                    condition_estimate: Some(fac.condition_estimate),
                    relative_residual: Some(relative_residual(&gram, ridge, &alpha, &y)),
                    shared_with: (i != lead).then_some(lead),
                };
                out.push((i, alpha.as_slice().to_vec(), info));
            }
            Ok((lead, out))
        })
        .collect::<Result<_>>()?;

    let d = specs.len();
    let mut alpha = vec![Vec::new(); d];
    let mut solver = vec![None; d];
    for (_, group) in solved {
        for (i, a, info) in group {
            alpha[i] = a;
            solver[i] = Some(info);
        }
    }
    Ok(FittedModel {
        kernel: kernel.clone(),
        lambda,
        t_len,
        p: training.p(),
        windows: training.windows().to_vec(),
        alpha,
        solver: solver.into_iter().map(Option::unwrap).collect(),
    })
}

impl FittedModel {
    /// Builds a model from explicit dual coefficients.
    pub fn from_parts(
        kernel: MultivariateKernelSpec,
        lambda: f64,
        t_len: usize,
        p: usize,
        windows: Vec<Vec<f64>>,
        alpha: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let d = kernel.output_dim();
        let solver = vec![
            SolverInfo { jitter: 0.0, condition_estimate: None, relative_residual: None, shared_with: None };
            d
        ];
        let model = FittedModel { kernel, lambda, t_len, p, windows, alpha, solver };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return invalid(format!("lambda must be positive, got {}", self.lambda));
        }
        let d = self.kernel.output_dim();
        if self.p == 0 || self.windows.is_empty() {
            return invalid("model needs p >= 1 and at least one training window");
        }
        check_dim(self.windows.len() + self.p, self.t_len)?;
        check_dim(d * self.p, self.kernel.input_dim())?;
        check_dim(d, self.alpha.len())?;
        check_dim(d, self.solver.len())?;
        for w in &self.windows {
            check_dim(self.kernel.input_dim(), w.len())?;
        }
        for a in &self.alpha {
            check_dim(self.windows.len(), a.len())?;
            if a.iter().any(|v| !v.is_finite()) {
                return invalid("dual coefficients must be finite");
            }
        }
        Ok(())
    }

    pub fn kernel(&self) -> &MultivariateKernelSpec {
        &self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// λT, the ridge actually added to the Gram diagonal.
    pub fn effective_ridge(&self) -> f64 {
        self.lambda * self.t_len as f64
    }

    pub fn series_len(&self) -> usize {
        self.t_len
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.alpha.len()
    }

    pub fn windows(&self) -> &[Vec<f64>] {
        &self.windows
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn solver(&self) -> &[SolverInfo] {
        &self.solver
    }

    /// ĝ(z) ∈ ℝ^d.
    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.kernel.input_dim(), z.len())?;
        let specs = self.kernel.components();
        let owner = share_map(specs);
        let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut out = Vec::with_capacity(specs.len());
        for (i, a) in self.alpha.iter().enumerate() {
            if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(owner[i]) {
                e.insert(cross_kernel_vector(&specs[i], z, &self.windows)?);
            }
            let k = &cache[&owner[i]];
            out.push(k.iter().zip(a).map(|(x, y)| x * y).sum());
        }
        Ok(out)
    }

    /// Predictions at many points, in parallel.
    pub fn predict_many(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points.par_iter().map(|z| self.predict(z)).collect()
    }

    /// K_i α_i for each output dimension, as rows per training window.
    pub fn in_sample_predictions(&self) -> Result<Vec<Vec<f64>>> {
        let grams = self.grams()?;
        let n = self.windows.len();
        let mut rows = vec![vec![0.0; self.d()]; n];
        for (i, a) in self.alpha.iter().enumerate() {
            let fitted = &grams[i] * DVector::from_column_slice(a);
            for (t, row) in rows.iter_mut().enumerate() {
                row[i] = fitted[t];
            }
        }
        Ok(rows)
    }

    fn grams(&self) -> Result<Vec<DMatrix<f64>>> {
        let specs = self.kernel.components();
        let owner = share_map(specs);
        let mut built: HashMap<usize, DMatrix<f64>> = HashMap::new();
        for (i, &o) in owner.iter().enumerate() {
            if o == i {
                built.insert(i, gram_matrix(&specs[i], &self.windows)?.into_entries());
            }
        }
        Ok(owner.iter().map(|o| built[o].clone()).collect())
    }

    /// Σ_i α_i'K_iα_i.
    pub fn rkhs_norm_sq(&self) -> Result<f64> {
        let grams = self.grams()?;
        Ok(self
            .alpha
            .iter()
            .zip(&grams)
            .map(|(a, k)| {
                let v = DVector::from_column_slice(a);
                v.dot(&(k * &v))
            })
            .sum())
    }

    /// Objective value and first-order optimality for the given training set.
    pub fn objective_value(&self, training: &TrainingSet) -> Result<FitDiagnostics> {
        if training.windows() != self.windows.as_slice() {
            return invalid("training windows do not match the model");
        }
        let grams = self.grams()?;
        let ridge = self.effective_ridge();
        let mut sse = 0.0;
        let mut rkhs = 0.0;
        let mut max_res = 0.0f64;
        for (i, (a, k)) in self.alpha.iter().zip(&grams).enumerate() {
            let a = DVector::from_column_slice(a);
            let y = DVector::from_vec(training.target_column(i));
            let fitted = k * &a;
            sse += (&y - &fitted).norm_squared();
            rkhs += a.dot(&fitted);
            max_res = max_res.max(relative_residual(k, ridge, &a, &y));
        }
        let n = self.windows.len() as f64;
        Ok(FitDiagnostics {
            objective: sse / self.t_len as f64 + self.lambda * rkhs,
            rkhs_norm_sq: rkhs,
            in_sample_rmse: (sse / (n * self.d() as f64)).sqrt(),
            max_relative_residual: max_res,
            solver: self.solver.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format: MODEL_FORMAT.into(),
            kernel: self.kernel.clone(),
            lambda: self.lambda,
            t: self.t_len,
            p: self.p,
            d: self.d(),
            windows: self.windows.clone(),
            alpha: self.alpha.clone(),
            solver: self.solver.clone(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::Io(e.to_string()))?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Io(format!("unknown model format {:?}", doc.format)));
        }
        check_dim(doc.d, doc.kernel.output_dim())?;
        let model = FittedModel {
            kernel: doc.kernel,
            lambda: doc.lambda,
            t_len: doc.t,
            p: doc.p,
            windows: doc.windows,
            alpha: doc.alpha,
            solver: doc.solver,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn read_json<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::from_json(&text)
    }
}

/// Primal ridge regression in the explicit feature space of a finite-rank
/// kernel: w_i = (Φ'Φ + λT·I)⁻¹Φ'y_i.
#[derive(Debug, Clone)]
pub struct FeatureSpaceRidge {
    expansion: MercerExpansion,
    weights: Vec<DVector<f64>>,
}

impl FeatureSpaceRidge {
    pub fn fit(kernel: &KernelSpec, training: &TrainingSet, lambda: f64) -> Result<Self> {
        if !kernel.is_finite_mercer() {
            return Err(Error::Unsupported(format!(
                "{} kernel has no finite feature map",
                kernel.family().name()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return invalid(format!("lambda must be positive, got {lambda}"));
        }
        check_dim(training.d() * training.p(), kernel.input_dim())?;
        let expansion = MercerExpansion::new(*kernel);
        let rows: Vec<Vec<f64>> =
            training.windows().iter().map(|w| expansion.feature_map(w)).collect::<Result<_>>()?;
        let dim = rows[0].len();
        let phi = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c]);
        let ridge = lambda * training.series_len() as f64;
        let mut gram = phi.transpose() * &phi;
        for i in 0..dim {
            gram[(i, i)] += ridge;
        }
        let chol = Cholesky::new(gram).ok_or_else(|| Error::Numerical("primal ridge system is not PD".into()))?;
        let weights = (0..training.d())
            .map(|i| chol.solve(&(phi.transpose() * DVector::from_vec(training.target_column(i)))))
            .collect();
        Ok(FeatureSpaceRidge { expansion, weights })
    }

    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        let f = DVector::from_vec(self.expansion.feature_map(z)?);
        Ok(self.weights.iter().map(|w| w.dot(&f)).collect())
    }

    /// Σ_i ‖w_i‖², the RKHS norm of the primal predictor.
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w.norm_squared()).sum()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }
}
