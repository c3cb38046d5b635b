//! Scalar Ornstein-Uhlenbeck-type family dX = (mu + phi) X dt + sigma dW.
//!
//! Used by the moment-property and discretization-order studies. The
//! integrand row of C' Gamma^-1 is x / sigma^2, which is the gradient of
//! H(x) = x^2 / (2 sigma^2), so the Ito scheme is available.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{default_report, BundledModel};
use crate::model::{CovariateTrack, Diffusion, ItoAntiderivative, ModelSpec, Theta};

/// Scalar linear model with known diffusion level `sigma`. The bundled truth
/// is mean-reverting: mu = -1 with effect variance 0.25.
pub fn scalar_ou(sigma: f64) -> BundledModel {
    assert!(sigma > 0.0);
    let sig2 = sigma * sigma;
    let prepare = Arc::new(
        |mu: &DVector<f64>, phi: &DVector<f64>, _track: &CovariateTrack| {
            let rate = mu[0] + phi[0];
            let f: crate::model::PreparedDrift =
                Box::new(move |_t, x: &DVector<f64>, out: &mut DVector<f64>| {
                    out[0] = rate * x[0];
                });
            f
        },
    );
    let spec = ModelSpec {
        name: "ou".into(),
        state_dim: 1,
        effect_dim: 1,
        fixed_dim: 1,
        covariate_dim: 0,
        drift_offset: Arc::new(|_, _, _| DVector::zeros(1)),
        drift_design: Arc::new(|_, x: &DVector<f64>, _| DMatrix::from_element(1, 1, x[0])),
        fixed_design: None,
        diffusion: Diffusion::ConstantDiagonal(DVector::from_element(1, sigma)),
        prepare_drift: Some(prepare),
        ito_antiderivative: Some(ItoAntiderivative {
            value: Arc::new(move |_, x: &DVector<f64>, _| {
                DVector::from_element(1, 0.5 * x[0] * x[0] / sig2)
            }),
            hessians: Arc::new(move |_, _, _| vec![DMatrix::from_element(1, 1, 1.0 / sig2)]),
        }),
    };

    let theta_true = Theta::new(
        DVector::from_element(1, -1.0),
        DMatrix::from_element(1, 1, 0.25),
    );
    let (report_labels, report_map) = default_report(&["mu"], &theta_true);
    BundledModel {
        spec,
        theta_true,
        horizon: 1.0,
        x0: DVector::from_element(1, 1.0),
        fine_step: 1e-3,
        covariate_for_subject: Arc::new(|_| CovariateTrack::None),
        beta_selector: Vec::new(),
        report_labels,
        report_map,
    }
}
