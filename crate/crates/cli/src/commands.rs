use std::fs;
use std::path::Path;

use kervar_core::dynamics::{lag_embed, simulate_var, Trajectory};
use kervar_core::experiments::{
    self, ConcentrationStudyConfig, GapStudyConfig, MercerStudyConfig, RateStudyConfig,
};
use kervar_core::krr::{self, FittedModel};
use kervar_core::table::{self, fmt_f64};
use serde_json::json;

use crate::config::{self, FitConfig, Override, SimulateConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{sidecar, Recorder};
use crate::StudyKind;

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> kervar_core::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn simulate(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    t: Option<usize>,
    manifest: Option<&Path>,
) -> CliResult<()> {
    config::require_parent(out)?;
    let mut overrides = Vec::new();
    if let Some(s) = seed {
        overrides.push(Override::new("seed", toml::Value::Integer(s as i64)));
    }
    if let Some(t) = t {
        overrides.push(Override::new("t", toml::Value::Integer(t as i64)));
    }
    let cfg: SimulateConfig = config::load(config_path, overrides)?;
    cfg.model.validate()?;
    let mut rec = Recorder::new("simulate");
    rec.input(config_path);
    let traj = simulate_var(&cfg.model, cfg.t, cfg.burn_in, cfg.seed).map_err(CliError::simulation)?;
    rec.output(out, &csv_bytes(|b| traj.write_csv(b))?)?;
    rec.finish(&manifest.map_or_else(|| sidecar(out), Path::to_path_buf), config::to_json(&cfg)?, Some(cfg.seed), None)
}

pub fn fit(
    config_path: &Path,
    out: &Path,
    data: Option<&Path>,
    lambda: Option<f64>,
    manifest: Option<&Path>,
) -> CliResult<()> {
    config::require_parent(out)?;
    let mut overrides = Vec::new();
    if let Some(l) = lambda {
        overrides.push(Override::new("lambda", l));
    }
    let mut cfg: FitConfig = config::load(config_path, overrides)?;
    cfg.data = match data {
        Some(d) => d.to_path_buf(),
        None => config::relative_to(config_path, &cfg.data),
    };
    config::require_file(&cfg.data)?;
    let mut rec = Recorder::new("fit");
    rec.input(config_path);
    rec.input(&cfg.data);
    let file = fs::File::open(&cfg.data).map_err(|e| CliError::config(format!("{}: {e}", cfg.data.display())))?;
    let traj = Trajectory::read_csv(file)?;
    let set = lag_embed(&traj, cfg.p)?;
    let model = krr::fit(&cfg.kernel, &set, cfg.lambda)?;
    let diag = model.objective_value(&set)?;
    println!("objective = {}", fmt_f64(diag.objective));
    println!("rkhs_norm_sq = {}", fmt_f64(diag.rkhs_norm_sq));
    println!("in_sample_rmse = {}", fmt_f64(diag.in_sample_rmse));
    println!("max_relative_residual = {}", fmt_f64(diag.max_relative_residual));
    rec.output(out, model.to_json()?.as_bytes())?;
    let summary = json!({
        "objective": diag.objective,
        "rkhs_norm_sq": diag.rkhs_norm_sq,
        "in_sample_rmse": diag.in_sample_rmse,
        "max_relative_residual": diag.max_relative_residual,
    });
    rec.finish(&manifest.map_or_else(|| sidecar(out), Path::to_path_buf), config::to_json(&cfg)?, None, Some(summary))
}

pub fn predict(model_path: &Path, inputs: &Path, out: &Path, manifest: Option<&Path>) -> CliResult<()> {
    config::require_file(model_path)?;
    config::require_file(inputs)?;
    config::require_parent(out)?;
    let mut rec = Recorder::new("predict");
    rec.input(model_path);
    rec.input(inputs);
    let model = FittedModel::read_json(
        fs::File::open(model_path).map_err(|e| CliError::config(format!("{}: {e}", model_path.display())))?,
    )?;
    let (_, rows) = table::read_numeric_csv(
        fs::File::open(inputs).map_err(|e| CliError::config(format!("{}: {e}", inputs.display())))?,
    )?;
    let preds = model.predict_many(&rows)?;
    let header: Vec<String> = (1..=model.d()).map(|i| format!("g{i}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let bytes = csv_bytes(|b| {
        table::write_csv(b, &header, preds.iter().map(|p| p.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>()))
    })?;
    rec.output(out, &bytes)?;
    let cfg = json!({ "model": model_path.display().to_string(), "inputs": inputs.display().to_string() });
    rec.finish(&manifest.map_or_else(|| sidecar(out), Path::to_path_buf), cfg, None, None)
}

fn seed_override(seed: Option<u64>) -> Vec<Override> {
    seed.map(|s| Override::new("seed", toml::Value::Integer(s as i64))).into_iter().collect()
}

fn pretty(value: &serde_json::Value) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

pub fn study(kind: StudyKind, config_path: &Path, out_dir: &Path, seed: Option<u64>) -> CliResult<()> {
    config::require_file(config_path)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::config(format!("{}: {e}", out_dir.display())))?;
    let name = match kind {
        StudyKind::Rate => "rate",
        StudyKind::Concentration => "concentration",
        StudyKind::Mercer => "mercer",
        StudyKind::Glambda => "glambda",
    };
    let mut rec = Recorder::new(&format!("study {name}"));
    rec.input(config_path);
    let (echo, seed, summary) = match kind {
        StudyKind::Rate => {
            let cfg: RateStudyConfig = config::load(config_path, seed_override(seed))?;
            let res = experiments::rate_study(&cfg)?;
            rec.output(&out_dir.join("rate.csv"), &csv_bytes(|b| res.write_csv(b))?)?;
            for (t, m) in &res.medians {
                println!("T = {t}: median sup error = {}", fmt_f64(*m));
            }
            match res.slope {
                Some(s) => println!("log-log slope = {} ± {}", fmt_f64(s.slope), s.half_width.map_or("n/a".into(), fmt_f64)),
                None => println!("log-log slope: undefined (single T)"),
            }
            let summary = json!({
                "medians": res.medians,
                "medians_strictly_decreasing": res.medians_strictly_decreasing(),
                "slope": res.slope,
                "grid_size": res.grid_size,
            });
            (config::to_json(&cfg)?, cfg.seed, summary)
        }
        StudyKind::Concentration => {
            let cfg: ConcentrationStudyConfig = config::load(config_path, seed_override(seed))?;
            let res = experiments::concentration_study(&cfg)?;
            rec.output(&out_dir.join("quantiles.csv"), &csv_bytes(|b| res.write_quantiles_csv(b))?)?;
            rec.output(&out_dir.join("tails.csv"), &csv_bytes(|b| res.write_tails_csv(b))?)?;
            rec.output(&out_dir.join("samples.csv"), &csv_bytes(|b| res.write_samples_csv(b))?)?;
            for q in &res.quantiles {
                println!("T = {}: q90 = {}, q99 = {}, reference = {}", q.t, fmt_f64(q.q90), fmt_f64(q.q99), fmt_f64(q.reference));
            }
            let summary = json!({ "quantiles": res.quantiles, "rescaled_q90_drift": res.rescaled_q90_drift() });
            (config::to_json(&cfg)?, cfg.seed, summary)
        }
        StudyKind::Glambda => {
            let cfg: GapStudyConfig = config::load(config_path, seed_override(seed))?;
            let res = experiments::run_gap_study(&cfg)?;
            rec.output(&out_dir.join("gap.csv"), &csv_bytes(|b| res.write_csv(b))?)?;
            for (l, g) in &res.rows {
                println!("lambda = {}: gap = {}", fmt_f64(*l), fmt_f64(*g));
            }
            let summary = json!({
                "rows": res.rows,
                "slope": res.slope,
                "strictly_decreasing": res.gaps_strictly_decreasing_in_lambda(),
            });
            (config::to_json(&cfg)?, cfg.seed, summary)
        }
        StudyKind::Mercer => {
            let cfg: MercerStudyConfig = config::load(config_path, seed_override(seed))?;
            let res = experiments::mercer_study(&cfg)?;
            rec.output(&out_dir.join("truncation.csv"), &csv_bytes(|b| res.write_truncation_csv(b))?)?;
            let monotone = res.truncation.windows(2).all(|w| w[1].max_abs_error <= w[0].max_abs_error);
            println!("truncation error nonincreasing in M: {}", pass(monotone));
            if let Some(b) = &res.beta_growth {
                println!("assumption beta_growth: {}", pass(b.holds));
            }
            if let Some(t) = &res.tail_moment {
                println!("assumption tail_moment: {}{}", pass(t.holds), if t.decisive { "" } else { " (not decisive)" });
            }
            let summary = json!({
                "truncation_nonincreasing": monotone,
                "beta_growth": res.beta_growth.as_ref().map(|b| json!({"holds": b.holds, "first_violation": b.first_violation})),
                "tail_moment": res.tail_moment.as_ref().map(|t| json!({"holds": t.holds, "decisive": t.decisive, "tail": t.tail, "bound": t.bound})),
            });
            (config::to_json(&cfg)?, cfg.seed, summary)
        }
    };
    rec.output(&out_dir.join("summary.json"), &pretty(&summary)?)?;
    rec.finish(&out_dir.join("manifest.json"), echo, Some(seed), Some(summary))
}
