//! Bundled model families and the name registry.

mod fhn;
mod ou;
mod transfer;

pub use fhn::{fhn_model, FhnConfig};
pub use ou::scalar_ou;
pub use transfer::{transfer5_model, TransferConfig};

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{CovariateTrack, ModelSpec, SubjectConfig, Theta};

/// A reported table row: label plus the generating true value.
#[derive(Debug, Clone)]
pub struct ReportedParam {
    pub label: String,
    pub true_value: f64,
}

/// A model family bundled with its ground-truth study configuration.
#[derive(Clone)]
pub struct BundledModel {
    pub spec: ModelSpec,
    pub theta_true: Theta,
    pub horizon: f64,
    pub x0: DVector<f64>,
    /// Euler step used by the reference studies.
    pub fine_step: f64,
    /// Covariate track assigned to subject `i`.
    pub covariate_for_subject: Arc<dyn Fn(usize) -> CovariateTrack + Send + Sync>,
    /// Indices of the treatment-effect block inside mu, empty when absent.
    pub beta_selector: Vec<usize>,
    /// Table rows reported for this model.
    pub report_labels: Vec<ReportedParam>,
    /// Maps an estimate to the reported rows (same order as labels).
    pub report_map: Arc<dyn Fn(&Theta) -> Vec<f64> + Send + Sync>,
}

impl BundledModel {
    /// Observation setup for subject `i` with spacing `dt` over the study
    /// horizon.
    pub fn subject_config(&self, i: usize, dt: f64) -> SubjectConfig {
        let n = (self.horizon / dt).round() as usize;
        SubjectConfig::uniform(
            self.x0.clone(),
            self.horizon,
            n,
            (self.covariate_for_subject)(i),
        )
    }

    pub fn reported_values(&self, theta: &Theta) -> Vec<f64> {
        (self.report_map)(theta)
    }
}

/// Standard report rows: every fixed effect, then the diagonal of Omega.
pub(crate) fn default_report(
    mu_labels: &[&str],
    theta_true: &Theta,
) -> (Vec<ReportedParam>, Arc<dyn Fn(&Theta) -> Vec<f64> + Send + Sync>) {
    let mut labels: Vec<ReportedParam> = mu_labels
        .iter()
        .zip(theta_true.mu.iter())
        .map(|(l, &v)| ReportedParam {
            label: l.to_string(),
            true_value: v,
        })
        .collect();
    for j in 0..theta_true.omega.nrows() {
        labels.push(ReportedParam {
            label: format!("omega_{}", j + 1),
            true_value: theta_true.omega[(j, j)],
        });
    }
    let map = Arc::new(|theta: &Theta| {
        let mut out: Vec<f64> = theta.mu.iter().copied().collect();
        out.extend(theta.omega.diagonal().iter().copied());
        out
    });
    (labels, map)
}

type ModelBuilder = Arc<dyn Fn() -> BundledModel + Send + Sync>;

/// Name-keyed model registry. Ships `transfer5` and `fhn`; user models can
/// be registered through [`Registry::register`].
pub struct Registry {
    map: BTreeMap<String, ModelBuilder>,
}

impl Registry {
    pub fn builtin() -> Registry {
        let mut reg = Registry {
            map: BTreeMap::new(),
        };
        reg.register("transfer5", Arc::new(|| transfer5_model(&TransferConfig::default())));
        reg.register("fhn", Arc::new(|| fhn_model(&FhnConfig::default())));
        reg
    }

    pub fn register(&mut self, name: &str, builder: ModelBuilder) {
        self.map.insert(name.to_string(), builder);
    }

    pub fn get(&self, name: &str) -> Result<BundledModel> {
        match self.map.get(name) {
            Some(b) => Ok(b()),
            None => Err(Error::UnknownModel(
                name.to_string(),
                self.names().join(", "),
            )),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_registry_contents() {
        let reg = Registry::builtin();
        assert_eq!(reg.names(), vec!["fhn".to_string(), "transfer5".to_string()]);
        assert!(reg.get("transfer5").is_ok());
        assert!(reg.get("fhn").is_ok());
        assert!(matches!(reg.get("lorenz"), Err(Error::UnknownModel(..))));
    }

    #[test]
    fn user_models_can_be_registered() {
        let mut reg = Registry::builtin();
        reg.register("ou", Arc::new(|| scalar_ou(1.0)));
        assert!(reg.get("ou").is_ok());
        assert_eq!(reg.names().len(), 3);
    }
}
