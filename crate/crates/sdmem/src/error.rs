//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A dimension of an input does not match what the model declares.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A matrix that must be symmetric positive definite is not.
    /// Carries the offending smallest eigenvalue (or pivot) when known.
    #[error("matrix not positive definite: {context} (smallest eigenvalue/pivot {value:.3e})")]
    NotPositiveDefinite { context: String, value: f64 },

    /// A matrix that must be symmetric deviates beyond tolerance.
    #[error("matrix not symmetric: {0}")]
    NotSymmetric(String),

    /// The diffusion matrix Gamma = Sigma Sigma' could not be inverted.
    #[error("singular diffusion matrix at t={t}: pivot {pivot:.3e} below threshold")]
    SingularGamma { t: f64, pivot: f64 },

    /// A subject's V statistic is singular; the fixed effect is not identifiable.
    #[error("singular V statistic for subject {subject}: smallest eigenvalue {value:.3e}")]
    SingularV { subject: String, value: f64 },

    /// The summed information matrix in the mu-update is numerically singular.
    #[error("singular information matrix: condition number {cond:.3e} exceeds 1e12")]
    SingularInformation { cond: f64 },

    /// Simulation produced a NaN or infinite state component.
    #[error("non-finite state in subject {subject} at t={t} (component {component})")]
    NonFiniteState {
        subject: String,
        t: f64,
        component: usize,
    },

    /// A trajectory is too short to compute statistics from.
    #[error("trajectory {subject} has {points} points; at least 2 are required")]
    TooFewPoints { subject: String, points: usize },

    /// The Ito discretization scheme was requested for a model that does not
    /// ship a gradient antiderivative.
    #[error("model `{model}` has no antiderivative for the Ito scheme")]
    MissingAntiderivative { model: String },

    /// Replicate covariance needs at least two fits.
    #[error("replicate covariance requires at least 2 fits, got {0}")]
    TooFewReplicates(usize),

    /// A restriction matrix does not have full row rank.
    #[error("restriction matrix is rank deficient: numerical rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },

    /// The restricted covariance L V L' is not positive definite.
    #[error("restricted covariance is singular: {0}")]
    SingularRestrictedCovariance(String),

    /// A named model is not present in the registry.
    #[error("unknown model `{0}` (registered: {1})")]
    UnknownModel(String, String),

    /// Malformed plan, data file, or parameter file.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tag an error with the subject it occurred in, where that adds context.
    pub fn for_subject(self, id: &str) -> Error {
        match self {
            Error::SingularGamma { t, pivot } => Error::InvalidInput(format!(
                "subject {id}: singular diffusion matrix at t={t} (pivot {pivot:.3e})"
            )),
            other => other,
        }
    }
}
