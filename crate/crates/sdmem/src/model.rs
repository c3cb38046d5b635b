//! Model declaration: state dynamics, parameter object, per-subject
//! observation setup, and observed trajectories.
//!
//! A model has drift `A(t, x, D) + B(t, x, D) mu + C(t, x, D) phi` and
//! diffusion `Sigma(t, x)`. `B` defaults to `C` (random effect on every
//! fixed-effect coordinate); a model may declare a separate fixed-effect
//! design `B` with more columns than `C`, in which case only the leading
//! random-effect block carries subject-level variation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Drift offset A: (t, x, covariate) -> r-vector.
pub type OffsetFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Design matrix (C or B): (t, x, covariate) -> r x k matrix.
pub type DesignFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Per-subject drift closure used by the integrator; writes into `out`.
pub type PreparedDrift = Box<dyn Fn(f64, &DVector<f64>, &mut DVector<f64>) + Send + Sync>;
/// Hook producing an optimized per-subject drift for simulation.
pub type PrepareDriftFn = Arc<
    dyn Fn(&DVector<f64>, &DVector<f64>, &CovariateTrack) -> PreparedDrift + Send + Sync,
>;

/// Diffusion coefficient Sigma(t, x).
#[derive(Clone)]
pub enum Diffusion {
    /// Constant diagonal Sigma; the common case for the bundled models.
    ConstantDiagonal(DVector<f64>),
    /// Constant full matrix.
    Constant(DMatrix<f64>),
    /// General state- and time-dependent coefficient.
    StateDependent(Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>),
}

impl Diffusion {
    pub fn identity(r: usize) -> Self {
        Diffusion::ConstantDiagonal(DVector::repeat(r, 1.0))
    }

    /// Evaluate Sigma(t, x) as a dense matrix.
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Diffusion::ConstantDiagonal(d) => DMatrix::from_diagonal(d),
            Diffusion::Constant(m) => m.clone(),
            Diffusion::StateDependent(f) => f(t, x),
        }
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, Diffusion::StateDependent(_))
    }
}

/// Deterministic covariate track D^i(t).
#[derive(Clone)]
pub enum CovariateTrack {
    /// No covariates (dimension 0).
    None,
    /// Constant in time.
    Constant(DVector<f64>),
    /// Piecewise constant: value[k] applies on [times[k], times[k+1]).
    PiecewiseConstant {
        times: Vec<f64>,
        values: Vec<DVector<f64>>,
    },
    /// Arbitrary deterministic function of time.
    Custom(Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
}

impl CovariateTrack {
    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            CovariateTrack::None => DVector::zeros(0),
            CovariateTrack::Constant(v) => v.clone(),
            CovariateTrack::PiecewiseConstant { times, values } => {
                let idx = match times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
                    Ok(i) => i,
                    Err(0) => 0,
                    Err(i) => i - 1,
                };
                values[idx.min(values.len() - 1)].clone()
            }
            CovariateTrack::Custom(f) => f(t),
        }
    }
}

/// One SDMEM family: dimensions plus drift/diffusion callbacks.
///
/// All callbacks are pure functions of their arguments; a `ModelSpec` is
/// immutable after construction and safe to share across workers.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    /// State dimension r.
    pub state_dim: usize,
    /// Random-effect dimension d (columns of C).
    pub effect_dim: usize,
    /// Fixed-effect dimension p (columns of B); equals `effect_dim` when
    /// `fixed_design` is None.
    pub fixed_dim: usize,
    /// Covariate dimension s.
    pub covariate_dim: usize,
    /// Drift offset A.
    pub drift_offset: OffsetFn,
    /// Random-effect design C.
    pub drift_design: DesignFn,
    /// Fixed-effect design B; None means B = C.
    pub fixed_design: Option<DesignFn>,
    pub diffusion: Diffusion,
    /// Optional fast path for the Euler integrator.
    pub prepare_drift: Option<PrepareDriftFn>,
    /// Optional antiderivative enabling the higher-order Ito statistics.
    pub ito_antiderivative: Option<ItoAntiderivative>,
}

/// Antiderivative H for the Ito discretization scheme: component m of H has
/// spatial gradient equal to row m of (C' Gamma^-1)(t, x).
#[derive(Clone)]
pub struct ItoAntiderivative {
    /// H(t, x, D) -> d-vector.
    pub value: Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>,
    /// Spatial Hessians of each component: d matrices of size r x r.
    pub hessians:
        Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>,
}

impl ModelSpec {
    /// Fixed-effect design B(t, x, D); falls back to C when not declared.
    pub fn fixed_design_at(&self, t: f64, x: &DVector<f64>, d: &DVector<f64>) -> DMatrix<f64> {
        match &self.fixed_design {
            Some(b) => b(t, x, d),
            None => (self.drift_design)(t, x, d),
        }
    }

    /// Whether the fixed and random-effect designs coincide.
    pub fn is_shared_design(&self) -> bool {
        self.fixed_design.is_none()
    }

    /// Gamma(t, x) = Sigma Sigma', symmetrized.
    pub fn gamma(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let sigma = self.diffusion.eval(t, x);
        let mut g = &sigma * sigma.transpose();
        linalg::symmetrize(&mut g);
        g
    }
}

/// Inverse of Gamma(t, x) via a symmetric positive-definite factorization.
pub fn gamma_inverse(model: &ModelSpec, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let g = model.gamma(t, x);
    let mut inv = match linalg::spd_inverse(&g, "Gamma") {
        Ok(inv) => inv,
        Err(Error::NotPositiveDefinite { value, .. }) => {
            return Err(Error::SingularGamma { t, pivot: value })
        }
        Err(e) => return Err(e),
    };
    linalg::symmetrize(&mut inv);
    Ok(inv)
}

/// The parameter theta = (mu, Omega): fixed-effect vector and
/// random-effect covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub mu: DVector<f64>,
    pub omega: DMatrix<f64>,
}

impl Theta {
    pub fn new(mu: DVector<f64>, omega: DMatrix<f64>) -> Self {
        Theta { mu, omega }
    }

    /// Effect dimension implied by Omega.
    pub fn effect_dim(&self) -> usize {
        self.omega.nrows()
    }
}

/// Entrywise symmetry tolerance for Omega.
pub const OMEGA_SYMMETRY_TOL: f64 = 1e-10;

/// Check theta against a model with fixed-effect dimension `p` and
/// random-effect dimension `d`: dimensions must match and Omega must be
/// symmetric positive definite.
pub fn validate_theta_general(theta: &Theta, p: usize, d: usize) -> Result<()> {
    if theta.mu.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "mu has length {}, expected {}",
            theta.mu.len(),
            p
        )));
    }
    if theta.omega.nrows() != d || theta.omega.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "omega is {}x{}, expected {d}x{d}",
            theta.omega.nrows(),
            theta.omega.ncols()
        )));
    }
    let skew = linalg::asymmetry(&theta.omega);
    if skew > OMEGA_SYMMETRY_TOL {
        return Err(Error::NotSymmetric(format!(
            "omega deviates from symmetry by {skew:.3e}"
        )));
    }
    let eigen = linalg::symmetric_eigenvalues(&theta.omega);
    let smallest = eigen.first().copied().unwrap_or(f64::NAN);
    if !(smallest > 0.0) {
        return Err(Error::NotPositiveDefinite {
            context: "omega".to_string(),
            value: smallest,
        });
    }
    Ok(())
}

/// Check theta for a shared-design model (B = C, so mu and phi share the
/// dimension d).
pub fn validate_theta(theta: &Theta, d: usize) -> Result<()> {
    validate_theta_general(theta, d, d)
}

/// Per-subject observation setup.
#[derive(Clone)]
pub struct SubjectConfig {
    /// Initial state x0.
    pub x0: DVector<f64>,
    /// Observation horizon T.
    pub horizon: f64,
    /// Deterministic covariate track D(t).
    pub covariates: CovariateTrack,
    /// Strictly increasing observation times t_0 < ... < t_n = horizon.
    pub grid: Vec<f64>,
}

impl SubjectConfig {
    /// Uniform grid with `n` intervals over [0, horizon].
    pub fn uniform(x0: DVector<f64>, horizon: f64, n: usize, covariates: CovariateTrack) -> Self {
        assert!(n >= 1 && horizon > 0.0);
        let dt = horizon / n as f64;
        let mut grid: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        grid.push(horizon);
        SubjectConfig {
            x0,
            horizon,
            covariates,
            grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.len() < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 points".into()));
        }
        if self.grid[0] < 0.0 {
            return Err(Error::InvalidInput("grid must start at t >= 0".into()));
        }
        if !self
            .grid
            .windows(2)
            .all(|w| w[1] > w[0] && w[0].is_finite())
        {
            return Err(Error::InvalidInput(
                "grid must be strictly increasing".into(),
            ));
        }
        let last = *self.grid.last().unwrap();
        if (last - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "grid must end at the horizon: last point {last}, horizon {}",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// One subject's discretely observed path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub subject_id: String,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub covariates: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.times.len() || self.covariates.len() != self.times.len() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory {}: {} times, {} states, {} covariate rows",
                self.subject_id,
                self.times.len(),
                self.states.len(),
                self.covariates.len()
            )));
        }
        if !self.times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidInput(format!(
                "trajectory {}: times must be strictly increasing",
                self.subject_id
            )));
        }
        Ok(())
    }
}
