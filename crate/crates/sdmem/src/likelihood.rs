//! Closed-form population likelihood and analytic score.
//!
//! Everything is computed from one symmetric factorization per subject:
//! with L the Cholesky factor of Omega и W = I + L' V2 L (symmetric PD),
//!   log det(I + V2 Omega) = log det W,
//!   R(Omega) = (V2 + Omega^-1)^-1 = L W^-1 L',
//!   K = (I + V2 Omega)^-1 = I - V2 L W^-1 L',
//!   G(Omega) = (I + V2 Omega)^-1 V2 = K V2.
//! The subject log-likelihood is
//!   -1/2 log det W + (U1 - S'R U2)' mu - 1/2 mu'(V1 - S'R S) mu
//!     + 1/2 U2' R U2,
//! which for a shared design (U1 = U2 = U, V1 = V2 = S = V) equals the
//! familiar -1/2 log det(I+V Omega) - 1/2 (mu - V^-1 U)' G (mu - V^-1 U)
//! + 1/2 U' V^-1 U, reference-measure-relative free term included.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Theta;
use crate::suffstats::{GeneralSuffStats, SuffStats};

/// Relative eigenvalue floor below which a subject's V is reported singular.
const V_SINGULAR_REL: f64 = 1e-10;

/// Derived per-subject quantities at one theta (shared-design model).
#[derive(Debug, Clone)]
pub struct LikelihoodTerms {
    /// G(Omega) = (I + V Omega)^-1 V.
    pub g: DMatrix<f64>,
    /// R(Omega) = (V + Omega^-1)^-1.
    pub r: DMatrix<f64>,
    /// Residual gamma(theta) = G(Omega)(V^-1 U - mu).
    pub gamma: DVector<f64>,
    /// Subject log density (free term 1/2 U'V^-1 U included).
    pub loglik: f64,
}

/// Cholesky factor of Omega, shared across subjects at a fixed theta.
pub(crate) struct OmegaFactor {
    pub l: DMatrix<f64>,
}

impl OmegaFactor {
    pub fn new(omega: &DMatrix<f64>) -> Result<OmegaFactor> {
        Ok(OmegaFactor {
            l: linalg::spd_cholesky(omega, "omega")?,
        })
    }
}

/// Per-subject pieces of the likelihood and score at a fixed Omega.
pub(crate) struct PreparedSubject {
    pub logdet: f64,
    /// (I + V2 Omega)^-1.
    pub k: DMatrix<f64>,
    /// G(Omega) = K V2.
    pub g: DMatrix<f64>,
    /// R(Omega).
    pub r: DMatrix<f64>,
    /// V1 - S' R S: the mu-precision contribution.
    pub mu_info: DMatrix<f64>,
    /// U1 - S' R U2: the mu-score contribution at mu = 0.
    pub mu_rhs: DVector<f64>,
    /// 1/2 U2' R U2.
    pub quad_const: f64,
}

impl PreparedSubject {
    pub fn new(stats: &GeneralSuffStats, of: &OmegaFactor) -> Result<PreparedSubject> {
        let d = stats.effect_dim();
        let l = &of.l;
        let vl = &stats.v2 * l;
        let mut w = DMatrix::identity(d, d);
        w.gemm_tr(1.0, l, &vl, 1.0);
        linalg::symmetrize(&mut w);
        // W is PD whenever V2 is PSD and Omega PD; a failure here signals
        // numerically corrupted inputs.
        let chol_w = linalg::spd_cholesky(&w, "I + V Omega").map_err(|_| {
            Error::NotPositiveDefinite {
                context: format!("I + V Omega for subject {}", stats.subject_id),
                value: f64::NAN,
            }
        })?;
        let logdet = linalg::chol_logdet(&chol_w);
        // Y = W^-1 L'.
        let y = linalg::chol_solve_mat(&chol_w, &l.transpose());
        let mut r = l * &y;
        linalg::symmetrize(&mut r);
        let mut k = DMatrix::identity(d, d);
        k.gemm(-1.0, &vl, &y, 1.0);
        let mut g = &k * &stats.v2;
        linalg::symmetrize(&mut g);

        let r_u2 = &r * &stats.u2;
        let r_s = &r * &stats.s;
        let mut mu_info = stats.v1.clone();
        mu_info.gemm_tr(-1.0, &stats.s, &r_s, 1.0);
        linalg::symmetrize(&mut mu_info);
        let mut mu_rhs = stats.u1.clone();
        mu_rhs.gemv_tr(-1.0, &stats.s, &r_u2, 1.0);
        let quad_const = 0.5 * stats.u2.dot(&r_u2);

        Ok(PreparedSubject {
            logdet,
            k,
            g,
            r,
            mu_info,
            mu_rhs,
            quad_const,
        })
    }

    pub fn loglik(&self, mu: &DVector<f64>) -> f64 {
        -0.5 * self.logdet + self.mu_rhs.dot(mu) - 0.5 * mu.dot(&(&self.mu_info * mu))
            + self.quad_const
    }

    /// P(theta) = (I + V2 Omega)^-1 (U2 - S mu); equals gamma for B = C.
    pub fn residual(&self, stats: &GeneralSuffStats, mu: &DVector<f64>) -> DVector<f64> {
        let mut w = stats.u2.clone();
        w.gemv(-1.0, &stats.s, mu, 1.0);
        &self.k * w
    }
}

/// Error unless V has smallest eigenvalue above `V_SINGULAR_REL` times its
/// largest; a singular V makes the fixed effect unidentifiable.
pub fn check_v_invertible(v: &DMatrix<f64>, subject: &str) -> Result<()> {
    let eigen = linalg::symmetric_eigenvalues(v);
    let largest = eigen.iter().fold(0.0_f64, |m, &e| m.max(e.abs()));
    let smallest = eigen.first().copied().unwrap_or(0.0);
    if smallest <= V_SINGULAR_REL * largest || largest == 0.0 {
        return Err(Error::SingularV {
            subject: subject.to_string(),
            value: smallest,
        });
    }
    Ok(())
}

fn check_general(stats: &GeneralSuffStats) -> Result<()> {
    check_v_invertible(&stats.v1, &stats.subject_id)?;
    check_v_invertible(&stats.v2, &stats.subject_id)
}

/// Log density of one subject under the shared-design model, together with
/// the derived matrices G, R and the residual gamma.
pub fn subject_loglik(stats: &SuffStats, theta: &Theta) -> Result<LikelihoodTerms> {
    crate::model::validate_theta(theta, stats.u.len())?;
    check_v_invertible(&stats.v, &stats.subject_id)?;
    let of = OmegaFactor::new(&theta.omega)?;
    let general = stats.as_general();
    let prep = PreparedSubject::new(&general, &of)?;
    let gamma = prep.residual(&general, &theta.mu);
    Ok(LikelihoodTerms {
        loglik: prep.loglik(&theta.mu),
        g: prep.g,
        r: prep.r,
        gamma,
    })
}

/// Log density of one subject under the general model.
pub fn subject_loglik_general(stats: &GeneralSuffStats, theta: &Theta) -> Result<f64> {
    crate::model::validate_theta_general(theta, stats.fixed_dim(), stats.effect_dim())?;
    check_general(stats)?;
    let of = OmegaFactor::new(&theta.omega)?;
    Ok(PreparedSubject::new(stats, &of)?.loglik(&theta.mu))
}

/// Population log-likelihood: the sum of subject log densities.
pub fn population_loglik(stats: &[SuffStats], theta: &Theta) -> Result<f64> {
    let general: Vec<GeneralSuffStats> = stats.iter().map(|s| s.as_general()).collect();
    population_loglik_general(&general, theta)
}

/// Population log-likelihood for the general model.
pub fn population_loglik_general(stats: &[GeneralSuffStats], theta: &Theta) -> Result<f64> {
    let of = OmegaFactor::new(&theta.omega)?;
    let mut total = 0.0;
    for s in stats {
        check_general(s)?;
        let prep = PreparedSubject::new(s, &of).map_err(|e| tag_subject(e, &s.subject_id))?;
        total += prep.loglik(&theta.mu);
    }
    Ok(total)
}

fn tag_subject(e: Error, id: &str) -> Error {
    match e {
        Error::NotPositiveDefinite { context, value } => Error::NotPositiveDefinite {
            context: format!("{context} (subject {id})"),
            value,
        },
        other => other,
    }
}

/// Analytic score of the shared-design model: the mu-block
/// sum_i gamma_i(theta) and the Omega-block 1/2 sum_i (-G_i + gamma gamma'),
/// the latter as a symmetric matrix of entrywise derivatives.
pub fn score(stats: &[SuffStats], theta: &Theta) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let general: Vec<GeneralSuffStats> = stats.iter().map(|s| s.as_general()).collect();
    score_general(&general, theta)
}

/// Analytic score of the general model.
pub fn score_general(
    stats: &[GeneralSuffStats],
    theta: &Theta,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let of = OmegaFactor::new(&theta.omega)?;
    let p = theta.mu.len();
    let d = theta.omega.nrows();
    let mut mu_block = DVector::zeros(p);
    let mut omega_block = DMatrix::zeros(d, d);
    for s in stats {
        check_general(s)?;
        let prep = PreparedSubject::new(s, &of).map_err(|e| tag_subject(e, &s.subject_id))?;
        mu_block += &prep.mu_rhs;
        mu_block.gemv(-1.0, &prep.mu_info, &theta.mu, 1.0);
        let resid = prep.residual(s, &theta.mu);
        omega_block.ger(0.5, &resid, &resid, 1.0);
        omega_block += prep.g.scale(-0.5);
    }
    linalg::symmetrize(&mut omega_block);
    Ok((mu_block, omega_block))
}
