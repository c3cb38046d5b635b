//! Five-compartment linear transfer model with a binary group covariate.
//!
//! The drift is -G(alpha + phi) x + D beta with the cascade rate matrix
//! G(alpha); the state is the substance concentration per compartment. The
//! fixed effect is mu = (alpha, beta) with 11 components, while the random
//! effect attaches to the six alpha rates only, so the fixed-effect design
//! B (5 x 11) strictly contains the random-effect design C (its first six
//! columns). Estimation runs through the general quintet statistics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{BundledModel, ReportedParam};
use crate::model::{CovariateTrack, Diffusion, ModelSpec, Theta};

/// Study configuration from the reference simulation: true rates, treatment
/// effect, random-effect variances, horizon, and binary covariate.
#[derive(Debug, Clone)]
pub struct TransferConfig {
    pub alpha_true: [f64; 6],
    pub beta_true: [f64; 5],
    pub omega_diag: [f64; 6],
    pub horizon: f64,
    pub fine_step: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            alpha_true: [2.0, 4.0, 3.0, 2.0, 1.0, 1.0],
            beta_true: [1.0, 2.0, 3.0, 1.0, -2.0],
            omega_diag: [0.25, 1.0, 1.0, 0.25, 0.09, 0.09],
            horizon: 15.0,
            fine_step: 1e-4,
        }
    }
}

/// The cascade rate matrix G(alpha).
pub fn rate_matrix(alpha: &DVector<f64>) -> DMatrix<f64> {
    let (a1, a2, a3, a4, a5, a6) = (alpha[0], alpha[1], alpha[2], alpha[3], alpha[4], alpha[5]);
    DMatrix::from_row_slice(
        5,
        5,
        &[
            a1, 0.0, 0.0, 0.0, -a5, //
            -a1, a2, 0.0, 0.0, 0.0, //
            0.0, -a2, a3 + a6, 0.0, 0.0, //
            0.0, 0.0, -a3, a4, 0.0, //
            0.0, 0.0, 0.0, -a4, a5,
        ],
    )
}

/// Write the alpha-design into columns 0..6: column j is -(dG/d alpha_j) x,
/// exploiting that each rate enters G linearly.
fn fill_alpha_design(out: &mut DMatrix<f64>, x: &DVector<f64>) {
    out[(0, 0)] = -x[0];
    out[(1, 0)] = x[0];
    out[(1, 1)] = -x[1];
    out[(2, 1)] = x[1];
    out[(2, 2)] = -x[2];
    out[(3, 2)] = x[2];
    out[(3, 3)] = -x[3];
    out[(4, 3)] = x[3];
    out[(0, 4)] = x[4];
    out[(4, 4)] = -x[4];
    out[(2, 5)] = -x[2];
}

/// Random-effect design C: the six alpha columns.
fn alpha_design(x: &DVector<f64>) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(5, 6);
    fill_alpha_design(&mut c, x);
    c
}

/// Fixed-effect design B: alpha columns followed by the covariate block
/// D * I5 acting on beta.
fn full_design(x: &DVector<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(5, 11);
    fill_alpha_design(&mut b, x);
    let dval = if d.is_empty() { 0.0 } else { d[0] };
    for j in 0..5 {
        b[(j, 6 + j)] = dval;
    }
    b
}

/// Build the transfer model with its study truth.
pub fn transfer5_model(cfg: &TransferConfig) -> BundledModel {
    let alpha = DVector::from_row_slice(&cfg.alpha_true);
    let beta = DVector::from_row_slice(&cfg.beta_true);
    let mut mu = DVector::zeros(11);
    mu.rows_mut(0, 6).copy_from(&alpha);
    mu.rows_mut(6, 5).copy_from(&beta);
    let omega = DMatrix::from_diagonal(&DVector::from_row_slice(&cfg.omega_diag));
    let theta_true = Theta::new(mu, omega);

    let prepare = Arc::new(
        move |mu: &DVector<f64>, phi: &DVector<f64>, track: &CovariateTrack| {
            // Per-subject constants: G(alpha + phi) and the beta response.
            let alpha_eff = mu.rows(0, 6) + phi;
            let g = rate_matrix(&alpha_eff.into_owned());
            let beta = mu.rows(6, 5).into_owned();
            match track {
                CovariateTrack::Constant(v) => {
                    let response = beta.scale(v[0]);
                    let f: crate::model::PreparedDrift =
                        Box::new(move |_t, x: &DVector<f64>, out: &mut DVector<f64>| {
                            out.copy_from(&response);
                            out.gemv(-1.0, &g, x, 1.0);
                        });
                    f
                }
                other => {
                    let other = other.clone();
                    let f: crate::model::PreparedDrift =
                        Box::new(move |t, x: &DVector<f64>, out: &mut DVector<f64>| {
                            let d = other.at(t);
                            let dval = if d.is_empty() { 0.0 } else { d[0] };
                            out.copy_from(&beta.scale(dval));
                            out.gemv(-1.0, &g, x, 1.0);
                        });
                    f
                }
            }
        },
    );

    let spec = ModelSpec {
        name: "transfer5".into(),
        state_dim: 5,
        effect_dim: 6,
        fixed_dim: 11,
        covariate_dim: 1,
        drift_offset: Arc::new(|_, _, _| DVector::zeros(5)),
        drift_design: Arc::new(|_, x, _| alpha_design(x)),
        fixed_design: Some(Arc::new(|_, x, d| full_design(x, d))),
        diffusion: Diffusion::identity(5),
        prepare_drift: Some(prepare),
        ito_antiderivative: None,
    };

    let mut report_labels: Vec<ReportedParam> = Vec::new();
    for j in 0..6 {
        report_labels.push(ReportedParam {
            label: format!("alpha_{}", j + 1),
            true_value: cfg.alpha_true[j],
        });
    }
    for j in 0..5 {
        report_labels.push(ReportedParam {
            label: format!("beta_{}", j + 1),
            true_value: cfg.beta_true[j],
        });
    }
    for j in 0..6 {
        report_labels.push(ReportedParam {
            label: format!("omega_{}", j + 1),
            true_value: cfg.omega_diag[j],
        });
    }
    let report_map = Arc::new(|theta: &Theta| {
        let mut out: Vec<f64> = theta.mu.iter().copied().collect();
        out.extend(theta.omega.diagonal().iter().copied());
        out
    });

    BundledModel {
        spec,
        theta_true,
        horizon: cfg.horizon,
        x0: DVector::zeros(5),
        fine_step: cfg.fine_step,
        // Balanced groups: subjects alternate between control and treatment.
        covariate_for_subject: Arc::new(|i| {
            CovariateTrack::Constant(DVector::from_element(1, (i % 2) as f64))
        }),
        beta_selector: (6..11).collect(),
        report_labels,
        report_map,
    }
}
