//! Monte Carlo experiment runner over (N, dt) grids.
//!
//! Replicates are the data-parallel unit. Every subject stream is keyed by
//! (seed, replicate, subject) in shared-path mode, so all dt columns thin
//! the same fine path, smaller-N cells are subject-prefixes of larger ones,
//! and outputs are byte-identical for any worker count. Independent mode
//! keys streams by cell as well.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_mle_general_with, MleOptions};
use crate::exec;
use crate::inference::{sample_covariance, wald_test, WaldResult};
use crate::io::{format_float, ThetaJson};
use crate::model::Theta;
use crate::models::{BundledModel, Registry, ReportedParam};
use crate::rng;
use crate::simulate::{draw_random_effect, euler_maruyama_multi_thin};
use crate::suffstats::{suffstats_general, GeneralSuffStats};

const MC_TAG: u64 = 0x4d43; // "MC"
const POWER_TAG: u64 = 0x5057; // "PW"

/// Monte Carlo experiment plan.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub model: String,
    /// Simulation truth; None uses the registry's study configuration.
    pub theta_true: Option<Theta>,
    pub n_grid: Vec<usize>,
    pub dt_grid: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    /// Euler step; None uses the model default.
    pub fine_step: Option<f64>,
    /// Shared mode: one fine path per (replicate, subject), thinned per dt
    /// column and prefix-shared across N cells.
    pub shared_paths: bool,
}

impl ExperimentPlan {
    pub fn new(model: &str) -> ExperimentPlan {
        ExperimentPlan {
            model: model.to_string(),
            theta_true: None,
            n_grid: vec![50],
            dt_grid: vec![0.001],
            replicates: 100,
            seed: 0,
            fine_step: None,
            shared_paths: true,
        }
    }
}

/// One replicate's fit record in a cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub converged: bool,
    /// Reported parameter values; NaN when the fit failed outright.
    pub values: Vec<f64>,
}

/// Relative bias and RMSE per reported parameter in one (N, dt) cell.
#[derive(Debug, Clone)]
pub struct McCell {
    pub n: usize,
    pub dt: f64,
    pub labels: Vec<ReportedParam>,
    pub rel_bias: Vec<f64>,
    pub rmse: Vec<f64>,
    pub n_converged: usize,
    pub n_failed: usize,
    /// Set when more than 20% of replicates failed to converge.
    pub warning: Option<String>,
    pub replicates: Vec<ReplicateRecord>,
}

/// Full grid result.
#[derive(Debug, Clone)]
pub struct McResults {
    pub model: String,
    pub cells: Vec<McCell>,
}

fn thin_factor(dt: f64, delta: f64) -> Result<usize> {
    let ratio = dt / delta;
    let b = ratio.round();
    if b < 1.0 || (ratio - b).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "dt {dt} is not an integer multiple of the fine step {delta}"
        )));
    }
    Ok(b as usize)
}

fn resolve(plan: &ExperimentPlan, registry: &Registry) -> Result<(BundledModel, Theta, f64)> {
    let model = registry.get(&plan.model)?;
    let theta = plan.theta_true.clone().unwrap_or_else(|| model.theta_true.clone());
    crate::model::validate_theta_general(&theta, model.spec.fixed_dim, model.spec.effect_dim)?;
    let delta = plan.fine_step.unwrap_or(model.fine_step);
    if plan.n_grid.is_empty() || plan.dt_grid.is_empty() || plan.replicates == 0 {
        return Err(Error::InvalidInput(
            "plan needs nonempty n_grid, dt_grid and replicates >= 1".into(),
        ));
    }
    for &dt in &plan.dt_grid {
        thin_factor(dt, delta)?;
    }
    Ok((model, theta, delta))
}

/// Statistics for subjects 0..n of one replicate, one entry per dt column.
fn replicate_stats(
    model: &BundledModel,
    theta: &Theta,
    delta: f64,
    dts: &[f64],
    n_subjects: usize,
    stream_parts: impl Fn(usize) -> Vec<u64>,
    seed: u64,
) -> Result<Vec<Vec<GeneralSuffStats>>> {
    let factors: Vec<usize> = dts
        .iter()
        .map(|&dt| thin_factor(dt, delta))
        .collect::<Result<_>>()?;
    let mut per_dt: Vec<Vec<GeneralSuffStats>> = vec![Vec::with_capacity(n_subjects); dts.len()];
    for i in 0..n_subjects {
        let mut stream = rng::stream(seed, &stream_parts(i));
        let phi = draw_random_effect(&theta.omega, &mut stream)?;
        let track = (model.covariate_for_subject)(i);
        let trajs = euler_maruyama_multi_thin(
            &model.spec,
            &model.x0,
            model.horizon,
            &track,
            &theta.mu,
            &phi,
            delta,
            &factors,
            &format!("{i}"),
            &mut stream,
        )?;
        for (j, traj) in trajs.into_iter().enumerate() {
            per_dt[j].push(suffstats_general(&model.spec, &traj)?);
        }
    }
    Ok(per_dt)
}

/// Fit options used inside Monte Carlo loops: the observed information is
/// not needed for bias/RMSE summaries.
fn mc_fit_options() -> MleOptions {
    MleOptions {
        compute_observed_information: false,
        ..MleOptions::default()
    }
}

/// Run the full (N, dt) grid. Cells are listed n-major, dt-minor.
pub fn run_mc(plan: &ExperimentPlan, registry: &Registry) -> Result<McResults> {
    let (model, theta, delta) = resolve(plan, registry)?;
    let truth = model.reported_values(&theta);
    let labels = model.report_labels.clone();
    let max_n = *plan.n_grid.iter().max().unwrap();
    let m_total = plan.replicates;
    let model = Arc::new(model);

    // outcome[m][cell] = (converged, values)
    let outcomes: Vec<Vec<(bool, Vec<f64>)>> = if plan.shared_paths {
        exec::map_indexed(m_total, |m| {
            let stats = replicate_stats(
                &model,
                &theta,
                delta,
                &plan.dt_grid,
                max_n,
                |i| vec![MC_TAG, m as u64, i as u64],
                plan.seed,
            );
            replicate_outcomes(&model, stats, &plan.n_grid, plan.dt_grid.len())
        })
    } else {
        exec::map_indexed(m_total, |m| {
            let mut out = Vec::new();
            for (n_idx, &n) in plan.n_grid.iter().enumerate() {
                for (dt_idx, &dt) in plan.dt_grid.iter().enumerate() {
                    let cell = (n_idx * plan.dt_grid.len() + dt_idx) as u64;
                    let stats = replicate_stats(
                        &model,
                        &theta,
                        delta,
                        std::slice::from_ref(&dt),
                        n,
                        |i| vec![MC_TAG, cell, m as u64, i as u64],
                        plan.seed,
                    );
                    out.push(fit_outcome(&model, stats.map(|mut s| s.remove(0))));
                }
            }
            out
        })
    };

    let mut cells = Vec::new();
    for (n_idx, &n) in plan.n_grid.iter().enumerate() {
        for (dt_idx, &dt) in plan.dt_grid.iter().enumerate() {
            let cell_idx = n_idx * plan.dt_grid.len() + dt_idx;
            let records: Vec<ReplicateRecord> = outcomes
                .iter()
                .enumerate()
                .map(|(m, per_cell)| {
                    let (converged, values) = per_cell[cell_idx].clone();
                    ReplicateRecord {
                        replicate: m,
                        converged,
                        values,
                    }
                })
                .collect();
            cells.push(summarize_cell(n, dt, &labels, &truth, records));
        }
    }
    Ok(McResults {
        model: plan.model.clone(),
        cells,
    })
}

/// Fits of one replicate for every (N, dt) cell from shared statistics.
fn replicate_outcomes(
    model: &BundledModel,
    stats: Result<Vec<Vec<GeneralSuffStats>>>,
    n_grid: &[usize],
    n_dts: usize,
) -> Vec<(bool, Vec<f64>)> {
    let n_values = model.report_labels.len();
    let stats = match stats {
        Ok(s) => s,
        Err(_) => return vec![(false, vec![f64::NAN; n_values]); n_grid.len() * n_dts],
    };
    let mut out = Vec::with_capacity(n_grid.len() * n_dts);
    for &n in n_grid {
        for per_dt in stats.iter().take(n_dts) {
            out.push(fit_one(model, &per_dt[..n]));
        }
    }
    out
}

fn fit_outcome(
    model: &BundledModel,
    stats: Result<Vec<GeneralSuffStats>>,
) -> (bool, Vec<f64>) {
    match stats {
        Ok(s) => fit_one(model, &s),
        Err(_) => (false, vec![f64::NAN; model.report_labels.len()]),
    }
}

fn fit_one(model: &BundledModel, stats: &[GeneralSuffStats]) -> (bool, Vec<f64>) {
    match fit_mle_general_with(stats, None, &mc_fit_options()) {
        Ok(fit) => {
            let values = model.reported_values(&fit.theta_hat);
            (fit.converged, values)
        }
        Err(_) => (false, vec![f64::NAN; model.report_labels.len()]),
    }
}

fn summarize_cell(
    n: usize,
    dt: f64,
    labels: &[ReportedParam],
    truth: &[f64],
    replicates: Vec<ReplicateRecord>,
) -> McCell {
    let n_params = labels.len();
    let converged: Vec<&ReplicateRecord> = replicates.iter().filter(|r| r.converged).collect();
    let n_converged = converged.len();
    let n_failed = replicates.len() - n_converged;
    let mut rel_bias = vec![f64::NAN; n_params];
    let mut rmse = vec![f64::NAN; n_params];
    if n_converged > 0 {
        for j in 0..n_params {
            let mut bias_sum = 0.0;
            let mut sq_sum = 0.0;
            for r in &converged {
                let err = r.values[j] - truth[j];
                bias_sum += err / truth[j];
                sq_sum += err * err;
            }
            rel_bias[j] = bias_sum / n_converged as f64;
            rmse[j] = (sq_sum / n_converged as f64).sqrt();
        }
    }
    let warning = if n_failed * 5 > replicates.len() {
        Some(format!(
            "{n_failed}/{} replicates failed to converge",
            replicates.len()
        ))
    } else {
        None
    };
    // Labels carry the plan truth so downstream tables are self-contained.
    let labels = labels
        .iter()
        .zip(truth)
        .map(|(l, &t)| ReportedParam {
            label: l.label.clone(),
            true_value: t,
        })
        .collect();
    McCell {
        n,
        dt,
        labels,
        rel_bias,
        rmse,
        n_converged,
        n_failed,
        warning,
        replicates,
    }
}

// ---------------------------------------------------------------------------
// Power study
// ---------------------------------------------------------------------------

/// Rejection rate of H0: beta = 0 for one simulated treatment effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerRow {
    pub beta: Vec<f64>,
    pub replicates: usize,
    pub n_converged: usize,
    pub rejection_rate: f64,
    /// Binomial standard error of the rejection rate.
    pub standard_error: f64,
}

/// Estimate rejection rates of the Wald test of H0: beta = 0 under each
/// alternative. Data are simulated at the alternative, one MLE per
/// replicate; the covariance of beta-hat is the sample covariance of the
/// replicate estimates (matching simulation).
pub fn run_power_study(
    plan: &ExperimentPlan,
    registry: &Registry,
    beta_alternatives: &[DVector<f64>],
    level: f64,
) -> Result<Vec<PowerRow>> {
    let (model, base_theta, delta) = resolve(plan, registry)?;
    if model.beta_selector.is_empty() {
        return Err(Error::InvalidInput(format!(
            "model `{}` has no treatment-effect block",
            plan.model
        )));
    }
    let n = plan.n_grid[0];
    let dt = plan.dt_grid[0];
    let m_total = plan.replicates;
    let model = Arc::new(model);

    let mut rows = Vec::new();
    for (alt_idx, beta) in beta_alternatives.iter().enumerate() {
        if beta.len() != model.beta_selector.len() {
            return Err(Error::DimensionMismatch(format!(
                "beta alternative has {} entries, expected {}",
                beta.len(),
                model.beta_selector.len()
            )));
        }
        let mut theta = base_theta.clone();
        for (j, &idx) in model.beta_selector.iter().enumerate() {
            theta.mu[idx] = beta[j];
        }

        let fits: Vec<Option<DVector<f64>>> = exec::map_indexed(m_total, |m| {
            let stats = replicate_stats(
                &model,
                &theta,
                delta,
                std::slice::from_ref(&dt),
                n,
                |i| vec![POWER_TAG, alt_idx as u64, m as u64, i as u64],
                plan.seed,
            );
            let stats = match stats {
                Ok(mut s) => s.remove(0),
                Err(_) => return None,
            };
            match fit_mle_general_with(&stats, None, &mc_fit_options()) {
                Ok(fit) if fit.converged => {
                    Some(crate::inference::extract_beta(&fit.theta_hat.mu, &model.beta_selector).ok()?)
                }
                _ => None,
            }
        });

        let betas: Vec<DVector<f64>> = fits.into_iter().flatten().collect();
        if betas.len() < 2 {
            return Err(Error::TooFewReplicates(betas.len()));
        }
        let cov = sample_covariance(&betas);
        let s = betas[0].len();
        let l = nalgebra::DMatrix::identity(s, s);
        let eta0 = DVector::zeros(s);
        let mut rejections = 0usize;
        for b in &betas {
            let res: WaldResult = wald_test(b, &cov, &l, &eta0)?;
            if res.p_value < level {
                rejections += 1;
            }
        }
        let m_eff = betas.len();
        let rate = rejections as f64 / m_eff as f64;
        rows.push(PowerRow {
            beta: beta.iter().copied().collect(),
            replicates: m_total,
            n_converged: m_eff,
            rejection_rate: rate,
            standard_error: (rate * (1.0 - rate) / m_eff as f64).sqrt(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Output formatting
// ---------------------------------------------------------------------------

/// Long-format summary CSV: one row per (cell, parameter).
pub fn summary_csv(results: &McResults) -> String {
    let mut out = String::from("n,dt,param,true_value,rel_bias,rmse,n_converged,n_failed\n");
    for cell in &results.cells {
        for (j, label) in cell.labels.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                cell.n,
                format_float(cell.dt),
                label.label,
                format_float(label.true_value),
                format_float(cell.rel_bias[j]),
                format_float(cell.rmse[j]),
                cell.n_converged,
                cell.n_failed
            ));
        }
    }
    out
}

/// One row per (cell, replicate) with every reported parameter estimate.
pub fn replicates_csv(results: &McResults) -> String {
    let mut out = String::from("n,dt,replicate,converged");
    if let Some(cell) = results.cells.first() {
        for label in &cell.labels {
            out.push(',');
            out.push_str(&label.label);
        }
    }
    out.push('\n');
    for cell in &results.cells {
        for rec in &cell.replicates {
            out.push_str(&format!(
                "{},{},{},{}",
                cell.n,
                format_float(cell.dt),
                rec.replicate,
                rec.converged
            ));
            for v in &rec.values {
                out.push(',');
                out.push_str(&format_float(*v));
            }
            out.push('\n');
        }
    }
    out
}

/// Aligned text table in the reference layout: parameter rows against
/// (rel bias, RMSE) column pairs, one block per fixed N (columns over dt)
/// or per fixed dt (columns over N).
pub fn emit_table(results: &McResults) -> String {
    let mut out = String::new();
    if results.cells.is_empty() {
        out.push_str("param  true  (no cells)\n");
        return out;
    }
    let mut ns: Vec<usize> = results.cells.iter().map(|c| c.n).collect();
    ns.dedup();
    ns.sort_unstable();
    ns.dedup();

    for &n in &ns {
        let block: Vec<&McCell> = results.cells.iter().filter(|c| c.n == n).collect();
        if block.is_empty() {
            continue;
        }
        out.push_str(&format!("model {}  N={}\n", results.model, n));
        let mut header = format!("{:<12} {:>10}", "param", "true");
        for cell in &block {
            header.push_str(&format!(
                " | {:>10} {:>10}",
                format!("bias@{}", format_float(cell.dt)),
                format!("rmse@{}", format_float(cell.dt))
            ));
        }
        out.push_str(&header);
        out.push('\n');
        let labels = &block[0].labels;
        for (j, label) in labels.iter().enumerate() {
            let mut line = format!("{:<12} {:>10.4}", label.label, label.true_value);
            for cell in &block {
                line.push_str(&format!(
                    " | {:>10.4} {:>10.4}",
                    cell.rel_bias[j], cell.rmse[j]
                ));
            }
            out.push_str(&line);
            out.push('\n');
        }
        for cell in &block {
            if let Some(w) = &cell.warning {
                out.push_str(&format!("warning (dt={}): {w}\n", format_float(cell.dt)));
            }
        }
        out.push('\n');
    }
    out
}

/// Parsed row of the summary CSV; used to verify the round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub dt: f64,
    pub param: String,
    pub true_value: f64,
    pub rel_bias: f64,
    pub rmse: f64,
    pub n_converged: usize,
    pub n_failed: usize,
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::InvalidInput(format!(
                "summary row has {} fields",
                parts.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::InvalidInput(format!("bad float {s}: {e}")))
        };
        rows.push(SummaryRow {
            n: parts[0]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad n: {e}")))?,
            dt: parse_f(parts[1])?,
            param: parts[2].to_string(),
            true_value: parse_f(parts[3])?,
            rel_bias: parse_f(parts[4])?,
            rmse: parse_f(parts[5])?,
            n_converged: parts[6]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad count: {e}")))?,
            n_failed: parts[7]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad count: {e}")))?,
        });
    }
    Ok(rows)
}

/// Manifest describing a persisted run.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub model: String,
    pub seed: u64,
    pub fine_step: f64,
    pub n_grid: Vec<usize>,
    pub dt_grid: Vec<f64>,
    pub replicates: usize,
    pub shared_paths: bool,
    pub theta_true: ThetaJson,
}

/// Persist summary.csv, replicates.csv, table.txt and manifest.json.
pub fn write_mc_outputs(
    plan: &ExperimentPlan,
    registry: &Registry,
    results: &McResults,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let (model, theta, delta) = resolve(plan, registry)?;
    std::fs::write(out_dir.join("summary.csv"), summary_csv(results))?;
    std::fs::write(out_dir.join("replicates.csv"), replicates_csv(results))?;
    std::fs::write(out_dir.join("table.txt"), emit_table(results))?;
    let manifest = Manifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        model: model.spec.name.clone(),
        seed: plan.seed,
        fine_step: delta,
        n_grid: plan.n_grid.clone(),
        dt_grid: plan.dt_grid.clone(),
        replicates: plan.replicates,
        shared_paths: plan.shared_paths,
        theta_true: ThetaJson::from(&theta),
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}
