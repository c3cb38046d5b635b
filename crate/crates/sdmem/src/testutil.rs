//! Small models shared by unit tests.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::model::{Diffusion, ItoAntiderivative, ModelSpec};

/// dX = (mu + phi) X dt + dW: scalar linear model with unit diffusion.
/// C(x) = x is gradient-type with H(x) = x^2 / 2.
pub(crate) fn scalar_linear_model() -> ModelSpec {
    ModelSpec {
        name: "scalar-linear".into(),
        state_dim: 1,
        effect_dim: 1,
        fixed_dim: 1,
        covariate_dim: 0,
        drift_offset: Arc::new(|_, _, _| DVector::zeros(1)),
        drift_design: Arc::new(|_, x: &DVector<f64>, _| DMatrix::from_element(1, 1, x[0])),
        fixed_design: None,
        diffusion: Diffusion::identity(1),
        prepare_drift: None,
        ito_antiderivative: Some(ItoAntiderivative {
            value: Arc::new(|_, x: &DVector<f64>, _| DVector::from_element(1, 0.5 * x[0] * x[0])),
            hessians: Arc::new(|_, _, _| vec![DMatrix::from_element(1, 1, 1.0)]),
        }),
    }
}
