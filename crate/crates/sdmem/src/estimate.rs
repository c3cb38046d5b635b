//! Maximum-likelihood fitting.
//!
//! The mu-equation of the MLE system is explicit given Omega, so the fit
//! profiles mu out and maximizes the remaining objective over an
//! unconstrained log-Cholesky parametrization of Omega by BFGS, with the
//! analytic Omega-score chained through the parametrization. An EM-style
//! fixed-point mode solving the same stationarity system ships as a
//! cross-check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::likelihood::{check_v_invertible, OmegaFactor, PreparedSubject};
use crate::linalg;
use crate::model::Theta;
use crate::suffstats::{GeneralSuffStats, SuffStats};

/// Unconstrained coordinates for a symmetric positive-definite matrix:
/// the lower triangle of the Cholesky factor L in row-major order, with the
/// diagonal log-transformed. Decoding always yields an SPD matrix.
#[derive(Debug, Clone)]
pub struct OmegaParam {
    pub dim: usize,
    pub coords: DVector<f64>,
}

impl OmegaParam {
    pub fn n_coords(dim: usize) -> usize {
        dim * (dim + 1) / 2
    }

    /// Position of L[(a, b)], b <= a, in the coordinate vector.
    fn idx(a: usize, b: usize) -> usize {
        a * (a + 1) / 2 + b
    }

    pub fn encode(omega: &DMatrix<f64>) -> Result<OmegaParam> {
        let l = linalg::spd_cholesky(omega, "omega")?;
        Ok(Self::from_factor(&l))
    }

    pub fn from_factor(l: &DMatrix<f64>) -> OmegaParam {
        let dim = l.nrows();
        let mut coords = DVector::zeros(Self::n_coords(dim));
        for a in 0..dim {
            for b in 0..=a {
                coords[Self::idx(a, b)] = if a == b { l[(a, a)].ln() } else { l[(a, b)] };
            }
        }
        OmegaParam { dim, coords }
    }

    /// The Cholesky factor L encoded by the coordinates.
    pub fn factor(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.dim, self.dim);
        for a in 0..self.dim {
            for b in 0..=a {
                let c = self.coords[Self::idx(a, b)];
                l[(a, b)] = if a == b { c.exp() } else { c };
            }
        }
        l
    }

    pub fn decode(&self) -> DMatrix<f64> {
        let l = self.factor();
        let mut omega = &l * l.transpose();
        linalg::symmetrize(&mut omega);
        omega
    }

    /// Chain an entrywise derivative matrix D = dl/dOmega (symmetric) into
    /// the coordinate gradient: dl/dxi_{ab} = 2 (D L)_{ab}, times L_{aa} on
    /// the log-diagonal.
    fn chain_gradient(&self, d_mat: &DMatrix<f64>, l: &DMatrix<f64>) -> DVector<f64> {
        let dl = d_mat * l;
        let mut grad = DVector::zeros(self.coords.len());
        for a in 0..self.dim {
            for b in 0..=a {
                let g = 2.0 * dl[(a, b)];
                grad[Self::idx(a, b)] = if a == b { g * l[(a, a)] } else { g };
            }
        }
        grad
    }
}

/// How the Omega-equation is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Profile BFGS over Omega with mu eliminated analytically.
    Profile,
    /// Damped alternation of the explicit mu-update and the EM-style
    /// Omega-update; slower, used as a cross-check.
    FixedPoint,
}

#[derive(Debug, Clone)]
pub struct MleOptions {
    /// Convergence requires |score|_inf < score_tol_per_subject * N.
    pub score_tol_per_subject: f64,
    pub max_iterations: usize,
    /// Step-size part of the convergence criterion.
    pub step_tol: f64,
    pub mode: FitMode,
    /// Extra jittered starts beyond the supplied/default initial value.
    pub multi_start: usize,
    pub compute_observed_information: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            score_tol_per_subject: 1e-6,
            max_iterations: 500,
            step_tol: 1e-3,
            mode: FitMode::Profile,
            multi_start: 0,
            compute_observed_information: true,
        }
    }
}

/// One row of the optimizer trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: usize,
    pub loglik: f64,
    pub score_norm: f64,
}

/// Fit result: estimate, diagnostics, and the observed information over
/// (mu, vech Omega) coordinates (row-major lower triangle of Omega).
#[derive(Debug, Clone)]
pub struct MleFit {
    pub theta_hat: Theta,
    pub loglik: f64,
    /// Infinity norm of the full score at theta_hat.
    pub score_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub observed_information: Option<DMatrix<f64>>,
    pub trace: Vec<TraceRow>,
    pub warnings: Vec<String>,
}

impl MleFit {
    /// Number of (mu, vech Omega) coordinates.
    pub fn n_params(&self) -> usize {
        self.theta_hat.mu.len() + OmegaParam::n_coords(self.theta_hat.omega.nrows())
    }
}

// ---------------------------------------------------------------------------
// Profile objective machinery
// ---------------------------------------------------------------------------

struct ProfilePoint {
    mu_hat: DVector<f64>,
    loglik: f64,
    /// Omega-block of the score at (mu_hat, Omega).
    omega_score: DMatrix<f64>,
    /// mu-block of the score at mu_hat; ~0 by construction.
    mu_score_norm: f64,
}

/// Evaluate the profile objective at the Omega factor `l`.
fn profile_point(stats: &[GeneralSuffStats], l: &DMatrix<f64>) -> Result<ProfilePoint> {
    let of = OmegaFactor { l: l.clone() };
    let p = stats[0].fixed_dim();
    let d = stats[0].effect_dim();

    let mut preps = Vec::with_capacity(stats.len());
    let mut info = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let mut logdet = 0.0;
    let mut quad = 0.0;
    for s in stats {
        let prep = PreparedSubject::new(s, &of)?;
        info += &prep.mu_info;
        rhs += &prep.mu_rhs;
        logdet += prep.logdet;
        quad += prep.quad_const;
        preps.push(prep);
    }
    let mu_hat = solve_information(&info, &rhs)?;
    let loglik = -0.5 * logdet + rhs.dot(&mu_hat) - 0.5 * mu_hat.dot(&(&info * &mu_hat)) + quad;

    let mut omega_score = DMatrix::zeros(d, d);
    let mut mu_score = rhs.clone();
    mu_score.gemv(-1.0, &info, &mu_hat, 1.0);
    for (s, prep) in stats.iter().zip(&preps) {
        let resid = prep.residual(s, &mu_hat);
        omega_score.ger(0.5, &resid, &resid, 1.0);
        omega_score += prep.g.scale(-0.5);
    }
    linalg::symmetrize(&mut omega_score);

    Ok(ProfilePoint {
        mu_hat,
        loglik,
        omega_score,
        mu_score_norm: mu_score.amax(),
    })
}

fn solve_information(info: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let cond = linalg::symmetric_condition(info);
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::SingularInformation { cond });
    }
    let l = linalg::spd_cholesky(info, "summed information")
        .map_err(|_| Error::SingularInformation { cond })?;
    Ok(linalg::chol_solve_vec(&l, rhs))
}

/// Explicit generalized-least-squares mu given Omega: the first line of the
/// MLE system. For a single scalar subject this reduces to U/V regardless
/// of Omega.
pub fn mu_given_omega(stats: &[SuffStats], omega: &DMatrix<f64>) -> Result<DVector<f64>> {
    let general: Vec<GeneralSuffStats> = stats.iter().map(|s| s.as_general()).collect();
    mu_given_omega_general(&general, omega)
}

/// General-design version of [`mu_given_omega`].
pub fn mu_given_omega_general(
    stats: &[GeneralSuffStats],
    omega: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let of = OmegaFactor::new(omega)?;
    let p = stats[0].fixed_dim();
    let mut info = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for s in stats {
        check_v_invertible(&s.v2, &s.subject_id)?;
        let prep = PreparedSubject::new(s, &of)?;
        info += &prep.mu_info;
        rhs += &prep.mu_rhs;
    }
    solve_information(&info, &rhs)
}

// ---------------------------------------------------------------------------
// Initial values
// ---------------------------------------------------------------------------

/// Moment-style starting point: mu from per-subject GLS estimates, Omega
/// from their sample covariance shrunk toward its diagonal by 0.9 and
/// eigenvalue-floored at 1e-4.
pub fn default_init(stats: &[SuffStats]) -> Result<Theta> {
    let general: Vec<GeneralSuffStats> = stats.iter().map(|s| s.as_general()).collect();
    default_init_general(&general)
}

/// General-design version of [`default_init`].
pub fn default_init_general(stats: &[GeneralSuffStats]) -> Result<Theta> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("no subjects".into()));
    }
    let p = stats[0].fixed_dim();
    let d = stats[0].effect_dim();
    let n = stats.len() as f64;

    let mut mu = DVector::zeros(p);
    for s in stats {
        check_v_invertible(&s.v1, &s.subject_id)?;
        check_v_invertible(&s.v2, &s.subject_id)?;
        let l1 = linalg::spd_cholesky(&s.v1, "V1")?;
        mu += linalg::chol_solve_vec(&l1, &s.u1);
    }
    mu /= n;

    // Per-subject effect estimates phi_i = V2^-1 (U2 - S mu).
    let mut effects = Vec::with_capacity(stats.len());
    let mut mean_eff = DVector::zeros(d);
    for s in stats {
        let l2 = linalg::spd_cholesky(&s.v2, "V2")?;
        let mut w = s.u2.clone();
        w.gemv(-1.0, &s.s, &mu, 1.0);
        let e = linalg::chol_solve_vec(&l2, &w);
        mean_eff += &e;
        effects.push(e);
    }
    mean_eff /= n;

    let mut cov = DMatrix::zeros(d, d);
    if stats.len() > 1 {
        for e in &effects {
            let c = e - &mean_eff;
            cov.ger(1.0, &c, &c, 1.0);
        }
        cov /= n - 1.0;
    }
    // Shrink toward the diagonal, then floor the spectrum.
    let diag = DMatrix::from_diagonal(&cov.diagonal());
    let omega = floor_spd(&(cov.scale(0.9) + diag.scale(0.1)), 1e-4);
    Ok(Theta::new(mu, omega))
}

/// Clamp the eigenvalues of a symmetric matrix from below.
fn floor_spd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    linalg::symmetrize(&mut out);
    out
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Fit the shared-design model. `init` defaults to [`default_init`].
pub fn fit_mle(stats: &[SuffStats], init: Option<&Theta>) -> Result<MleFit> {
    fit_mle_with(stats, init, &MleOptions::default())
}

pub fn fit_mle_with(stats: &[SuffStats], init: Option<&Theta>, opts: &MleOptions) -> Result<MleFit> {
    let general: Vec<GeneralSuffStats> = stats.iter().map(|s| s.as_general()).collect();
    fit_mle_general_with(&general, init, opts)
}

/// Fit the general-design model. `init` defaults to [`default_init_general`].
pub fn fit_mle_general(stats: &[GeneralSuffStats], init: Option<&Theta>) -> Result<MleFit> {
    fit_mle_general_with(stats, init, &MleOptions::default())
}

pub fn fit_mle_general_with(
    stats: &[GeneralSuffStats],
    init: Option<&Theta>,
    opts: &MleOptions,
) -> Result<MleFit> {
    if stats.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "Omega is not identifiable from {} subject(s); need at least 2",
            stats.len()
        )));
    }
    for s in stats {
        check_v_invertible(&s.v1, &s.subject_id)?;
        check_v_invertible(&s.v2, &s.subject_id)?;
    }
    let init_theta = match init {
        Some(t) => t.clone(),
        None => default_init_general(stats)?,
    };

    let mut best = run_single(stats, &init_theta, opts)?;
    if opts.multi_start > 0 {
        let mut rng = crate::rng::stream(0x4d4c45, &[stats.len() as u64]);
        for _ in 0..opts.multi_start {
            let jittered = jitter(&init_theta, &mut rng);
            if let Ok(fit) = run_single(stats, &jittered, opts) {
                if fit.loglik > best.loglik {
                    best = fit;
                }
            }
        }
    }

    if opts.compute_observed_information {
        best.observed_information = Some(observed_information(stats, &best.theta_hat)?);
    }
    Ok(best)
}

fn jitter(theta: &Theta, rng: &mut impl rand::Rng) -> Theta {
    use rand_distr::StandardNormal;
    let mu = theta.mu.map(|m| {
        let z: f64 = rng.sample(StandardNormal);
        m + 0.2 * (m.abs() + 0.1) * z
    });
    let scale: f64 = rng.gen_range(0.5..2.0);
    Theta::new(mu, theta.omega.scale(scale))
}

fn run_single(stats: &[GeneralSuffStats], init: &Theta, opts: &MleOptions) -> Result<MleFit> {
    match opts.mode {
        FitMode::Profile => profile_bfgs(stats, init, opts),
        FitMode::FixedPoint => fixed_point(stats, init, opts),
    }
}

fn finish(
    param: &OmegaParam,
    point: ProfilePoint,
    iterations: usize,
    converged: bool,
    trace: Vec<TraceRow>,
) -> MleFit {
    let omega = param.decode();
    let mut warnings = Vec::new();
    let eigen = linalg::symmetric_eigenvalues(&omega);
    if eigen[0] < 1e-6 || eigen[eigen.len() - 1] > 1e6 {
        warnings.push(format!(
            "omega eigenvalues [{:.3e}, {:.3e}] outside the expected range [1e-6, 1e6]",
            eigen[0],
            eigen[eigen.len() - 1]
        ));
    }
    let score_norm = point.omega_score.amax().max(point.mu_score_norm);
    MleFit {
        theta_hat: Theta::new(point.mu_hat, omega),
        loglik: point.loglik,
        score_norm,
        iterations,
        converged,
        observed_information: None,
        trace,
        warnings,
    }
}

fn profile_bfgs(stats: &[GeneralSuffStats], init: &Theta, opts: &MleOptions) -> Result<MleFit> {
    let mut param = OmegaParam::encode(&init.omega)?;
    let n_coords = param.coords.len();
    let score_tol = opts.score_tol_per_subject * stats.len() as f64;

    let mut l = param.factor();
    let mut point = profile_point(stats, &l)?;
    let mut grad = neg_gradient(&param, &point, &l);
    let mut h_inv = DMatrix::identity(n_coords, n_coords);
    let mut trace = vec![TraceRow {
        iteration: 0,
        loglik: point.loglik,
        score_norm: score_norm_of(&point),
    }];
    let mut last_step = 0.0_f64;
    let mut iterations = 0;
    let mut first_update = true;

    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let score = score_norm_of(&point);
        if score < score_tol && last_step < opts.step_tol {
            return Ok(finish(&param, point, iter - 1, true, trace));
        }

        let mut direction = -(&h_inv * &grad);
        if direction.dot(&grad) >= 0.0 {
            // Not a descent direction; restart the approximation.
            h_inv = DMatrix::identity(n_coords, n_coords);
            direction = -grad.clone();
        }

        // Backtracking Armijo line search on f = -loglik.
        let f0 = -point.loglik;
        let slope = grad.dot(&direction);
        let mut t = 1.0;
        let mut accepted: Option<(OmegaParam, DMatrix<f64>, ProfilePoint)> = None;
        for _ in 0..60 {
            let cand = OmegaParam {
                dim: param.dim,
                coords: &param.coords + direction.scale(t),
            };
            let l_cand = cand.factor();
            match profile_point(stats, &l_cand) {
                Ok(p) if -p.loglik <= f0 + 1e-4 * t * slope => {
                    accepted = Some((cand, l_cand, p));
                    break;
                }
                _ => t *= 0.5,
            }
        }
        let Some((new_param, new_l, new_point)) = accepted else {
            // Line search stalled: report the best point reached.
            let converged = score < score_tol && last_step < opts.step_tol;
            return Ok(finish(&param, point, iter, converged, trace));
        };

        let step = direction.scale(t);
        last_step = step.amax();
        let new_grad = neg_gradient(&new_param, &new_point, &new_l);
        let y = &new_grad - &grad;
        let sy = step.dot(&y);
        if sy > 1e-12 * step.norm() * y.norm() {
            if first_update {
                let yy = y.dot(&y);
                if yy > 0.0 {
                    h_inv = DMatrix::identity(n_coords, n_coords).scale(sy / yy);
                }
                first_update = false;
            }
            bfgs_update(&mut h_inv, &step, &y, sy);
        }

        param = new_param;
        l = new_l;
        point = new_point;
        grad = new_grad;
        trace.push(TraceRow {
            iteration: iter,
            loglik: point.loglik,
            score_norm: score_norm_of(&point),
        });
    }

    let converged = score_norm_of(&point) < score_tol && last_step < opts.step_tol;
    Ok(finish(&param, point, iterations, converged, trace))
}

fn score_norm_of(point: &ProfilePoint) -> f64 {
    point.omega_score.amax().max(point.mu_score_norm)
}

/// Gradient of -profile loglik in the Omega coordinates. By stationarity of
/// mu_hat the total derivative equals the partial Omega-score.
fn neg_gradient(param: &OmegaParam, point: &ProfilePoint, l: &DMatrix<f64>) -> DVector<f64> {
    -param.chain_gradient(&point.omega_score, l)
}

fn bfgs_update(h_inv: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, sy: f64) {
    let rho = 1.0 / sy;
    let hy = &*h_inv * y;
    let yhy = y.dot(&hy);
    // H <- H - rho(s (Hy)' + Hy s') + rho^2 s s' (y'Hy) + rho s s'
    h_inv.ger(-rho, s, &hy, 1.0);
    h_inv.ger(-rho, &hy, s, 1.0);
    h_inv.ger(rho * rho * yhy + rho, s, s, 1.0);
}

/// Damped alternation of the explicit mu-update and the EM-style
/// Omega-update Omega <- (1/N) sum_i [R_i + m_i m_i'] with m_i = Omega P_i;
/// its fixed points solve the same stationarity system.
fn fixed_point(stats: &[GeneralSuffStats], init: &Theta, opts: &MleOptions) -> Result<MleFit> {
    let damping = 0.5;
    let n = stats.len() as f64;
    let score_tol = opts.score_tol_per_subject * stats.len() as f64;
    let mut omega = init.omega.clone();
    let mut trace = Vec::new();
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..=opts.max_iterations {
        iterations = iter;
        let param = OmegaParam::encode(&omega)?;
        let l = param.factor();
        let point = profile_point(stats, &l)?;
        let score = score_norm_of(&point);
        trace.push(TraceRow {
            iteration: iter,
            loglik: point.loglik,
            score_norm: score,
        });
        if score < score_tol && last_step < opts.step_tol {
            return Ok(finish(&param, point, iter, true, trace));
        }
        if iter == opts.max_iterations {
            return Ok(finish(&param, point, iter, false, trace));
        }

        let of = OmegaFactor { l: l.clone() };
        let mut target = DMatrix::zeros(omega.nrows(), omega.ncols());
        for s in stats {
            let prep = PreparedSubject::new(s, &of)?;
            let m = &omega * prep.residual(s, &point.mu_hat);
            target += &prep.r;
            target.ger(1.0, &m, &m, 1.0);
        }
        target /= n;
        linalg::symmetrize(&mut target);
        let update = (&target - &omega).scale(damping);
        last_step = update.amax();
        omega += update;
    }
    unreachable!("loop always returns");
}

// ---------------------------------------------------------------------------
// Observed information
// ---------------------------------------------------------------------------

/// Score over (mu, vech Omega) coordinates: off-diagonal vech entries get
/// the doubled entrywise derivative, matching symmetric perturbations.
fn score_coords(stats: &[GeneralSuffStats], theta: &Theta) -> Result<DVector<f64>> {
    let (mu_block, omega_block) = crate::likelihood::score_general(stats, theta)?;
    let p = mu_block.len();
    let d = omega_block.nrows();
    let mut out = DVector::zeros(p + OmegaParam::n_coords(d));
    out.rows_mut(0, p).copy_from(&mu_block);
    for a in 0..d {
        for b in 0..=a {
            let v = if a == b {
                omega_block[(a, a)]
            } else {
                2.0 * omega_block[(a, b)]
            };
            out[p + OmegaParam::idx(a, b)] = v;
        }
    }
    Ok(out)
}

/// Observed information at theta: negative Jacobian of the score by central
/// finite differences (step 1e-5 per coordinate), symmetrized.
pub fn observed_information(stats: &[GeneralSuffStats], theta: &Theta) -> Result<DMatrix<f64>> {
    let h = 1e-5;
    let p = theta.mu.len();
    let d = theta.omega.nrows();
    let q = p + OmegaParam::n_coords(d);

    let perturb = |j: usize, delta: f64| -> Theta {
        let mut t = theta.clone();
        if j < p {
            t.mu[j] += delta;
        } else {
            let mut rem = j - p;
            'outer: for a in 0..d {
                for b in 0..=a {
                    if rem == 0 {
                        t.omega[(a, b)] += delta;
                        if a != b {
                            t.omega[(b, a)] += delta;
                        }
                        break 'outer;
                    }
                    rem -= 1;
                }
            }
        }
        t
    };

    let mut jac = DMatrix::zeros(q, q);
    for j in 0..q {
        let up = score_coords(stats, &perturb(j, h))?;
        let dn = score_coords(stats, &perturb(j, -h))?;
        let col = (up - dn) / (2.0 * h);
        jac.set_column(j, &col);
    }
    let mut info = -(jac.clone() + jac.transpose()) / 2.0;
    linalg::symmetrize(&mut info);
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::suffstats::Scheme;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn pair(u: DVector<f64>, v: DMatrix<f64>, id: &str) -> SuffStats {
        SuffStats {
            u,
            v,
            subject_id: id.into(),
            scheme: Scheme::FirstOrder,
        }
    }

    #[test]
    fn omega_param_round_trip() {
        let mut rng = rng::stream(51, &[0]);
        for d in 1..=4usize {
            for _ in 0..5 {
                let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
                let mut omega = &a * a.transpose();
                for i in 0..d {
                    omega[(i, i)] += 0.5;
                }
                let param = OmegaParam::encode(&omega).unwrap();
                let back = param.decode();
                assert_relative_eq!(back, omega, epsilon = 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn decode_always_spd(coords in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let param = OmegaParam { dim: 3, coords: DVector::from_vec(coords) };
            let omega = param.decode();
            let eigen = linalg::symmetric_eigenvalues(&omega);
            prop_assert!(eigen[0] > 0.0);
        }
    }

    #[test]
    fn mu_update_scalar_is_u_over_v() {
        let stats = vec![pair(
            DVector::from_element(1, 3.0),
            DMatrix::from_element(1, 1, 2.0),
            "0",
        )];
        for om in [0.1, 1.0, 10.0] {
            let mu =
                mu_given_omega(&stats, &DMatrix::from_element(1, 1, om)).unwrap();
            assert_relative_eq!(mu[0], 1.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn mu_update_equal_weights_limit() {
        // Identical V_i and Omega -> 0: mu approaches the mean of V^-1 U.
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let us = [
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 2.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        ];
        let stats: Vec<SuffStats> = us
            .iter()
            .enumerate()
            .map(|(i, u)| pair(u.clone(), v.clone(), &i.to_string()))
            .collect();
        let vinv = linalg::spd_inverse(&v, "v").unwrap();
        let mut expect = DVector::zeros(2);
        for u in &us {
            expect += &vinv * u;
        }
        expect /= 3.0;
        let mu = mu_given_omega(&stats, &DMatrix::identity(2, 2).scale(1e-8)).unwrap();
        assert_relative_eq!(mu, expect, epsilon = 1e-6);
    }

    fn simulated_scalar_stats(n: usize, seed: u64) -> Vec<SuffStats> {
        // dX = (mu + phi) X dt + dW on [0, 2], observed at dt = 0.002.
        use crate::model::{CovariateTrack, SubjectConfig, Theta as Th};
        use crate::simulate::{SimPlan, SubjectLayout};
        let model = crate::testutil::scalar_linear_model();
        let plan = SimPlan {
            fine_step: 0.002,
            thin_factor: 1,
            n_subjects: n,
            seed,
            theta_true: Th::new(
                DVector::from_element(1, -1.0),
                DMatrix::from_element(1, 1, 0.25),
            ),
            subjects: SubjectLayout::Template(SubjectConfig::uniform(
                DVector::from_element(1, 1.0),
                2.0,
                1000,
                CovariateTrack::None,
            )),
        };
        let pop = crate::simulate::simulate_population(&model, &plan).unwrap();
        pop.iter()
            .map(|s| crate::suffstats::suffstats_first_order(&model, &s.trajectory).unwrap())
            .collect()
    }

    #[test]
    fn fit_requires_two_subjects() {
        let stats = simulated_scalar_stats(1, 3);
        assert!(fit_mle(&stats, None).is_err());
    }

    #[test]
    fn fit_satisfies_stationarity() {
        let stats = simulated_scalar_stats(40, 4);
        let fit = fit_mle(&stats, None).unwrap();
        assert!(fit.converged, "fit did not converge: {:?}", fit.trace.last());
        // Both blocks of the MLE system hold at theta_hat.
        let mu_again = mu_given_omega(&stats, &fit.theta_hat.omega).unwrap();
        assert_relative_eq!(mu_again, fit.theta_hat.mu, epsilon = 1e-6);
        let (mu_block, omega_block) =
            crate::likelihood::score(&stats, &fit.theta_hat).unwrap();
        assert!(mu_block.amax() < 1e-6 * stats.len() as f64);
        assert!(omega_block.amax() < 1e-6 * stats.len() as f64);
    }

    #[test]
    fn profile_trace_is_monotone() {
        let stats = simulated_scalar_stats(30, 5);
        let fit = fit_mle(&stats, None).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1].loglik >= w[0].loglik - 1e-9);
        }
    }

    #[test]
    fn fixed_point_agrees_with_profile() {
        let stats = simulated_scalar_stats(30, 6);
        let profile = fit_mle(&stats, None).unwrap();
        let fp = fit_mle_with(
            &stats,
            None,
            &MleOptions {
                mode: FitMode::FixedPoint,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fp.converged);
        assert_relative_eq!(
            profile.theta_hat.mu[0],
            fp.theta_hat.mu[0],
            epsilon = 1e-4
        );
        assert_relative_eq!(
            profile.theta_hat.omega[(0, 0)],
            fp.theta_hat.omega[(0, 0)],
            epsilon = 1e-4
        );
    }

    #[test]
    fn init_from_truth_reaches_same_optimum() {
        let stats = simulated_scalar_stats(30, 7);
        let from_default = fit_mle(&stats, None).unwrap();
        let truth = Theta::new(
            DVector::from_element(1, -1.0),
            DMatrix::from_element(1, 1, 0.25),
        );
        let from_truth = fit_mle(&stats, Some(&truth)).unwrap();
        assert_relative_eq!(
            from_default.theta_hat.mu[0],
            from_truth.theta_hat.mu[0],
            epsilon = 1e-4
        );
        assert_relative_eq!(
            from_default.theta_hat.omega[(0, 0)],
            from_truth.theta_hat.omega[(0, 0)],
            epsilon = 1e-4
        );
    }

    #[test]
    fn default_init_matches_hand_computation() {
        // d=1 with V^-1 U in {1, 3}: mu0 = 2; sample variance 2 and the
        // diagonal shrinkage is the identity in one dimension.
        let stats = vec![
            pair(
                DVector::from_element(1, 1.0),
                DMatrix::from_element(1, 1, 1.0),
                "0",
            ),
            pair(
                DVector::from_element(1, 3.0),
                DMatrix::from_element(1, 1, 1.0),
                "1",
            ),
        ];
        let init = default_init(&stats).unwrap();
        assert_relative_eq!(init.mu[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(init.omega[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn default_init_floors_zero_covariance() {
        let s = pair(
            DVector::from_element(1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            "0",
        );
        let stats = vec![s.clone(), s];
        let init = default_init(&stats).unwrap();
        assert_relative_eq!(init.omega[(0, 0)], 1e-4, epsilon = 1e-12);
    }

    #[test]
    fn boundary_omega_stays_pd() {
        // Data generated with essentially no random effect: the estimate
        // must stay PD and the fit must not crash.
        use crate::model::{CovariateTrack, SubjectConfig, Theta as Th};
        use crate::simulate::{SimPlan, SubjectLayout};
        let model = crate::testutil::scalar_linear_model();
        let plan = SimPlan {
            fine_step: 0.002,
            thin_factor: 1,
            n_subjects: 60,
            seed: 8,
            theta_true: Th::new(
                DVector::from_element(1, -1.0),
                DMatrix::from_element(1, 1, 1e-8),
            ),
            subjects: SubjectLayout::Template(SubjectConfig::uniform(
                DVector::from_element(1, 1.0),
                2.0,
                1000,
                CovariateTrack::None,
            )),
        };
        let pop = crate::simulate::simulate_population(&model, &plan).unwrap();
        let stats: Vec<SuffStats> = pop
            .iter()
            .map(|s| crate::suffstats::suffstats_first_order(&model, &s.trajectory).unwrap())
            .collect();
        let fit = fit_mle(&stats, None).unwrap();
        let eigen = linalg::symmetric_eigenvalues(&fit.theta_hat.omega);
        assert!(eigen[0] > 0.0);
        assert!(eigen[eigen.len() - 1] < 0.05);
    }

    #[test]
    fn observed_information_is_positive_definite_at_mle() {
        let stats = simulated_scalar_stats(40, 9);
        let fit = fit_mle(&stats, None).unwrap();
        let info = fit.observed_information.unwrap();
        assert_eq!(info.nrows(), 2); // mu and one Omega coordinate
        let eigen = linalg::symmetric_eigenvalues(&info);
        assert!(eigen[0] > 0.0, "information not PD: {eigen:?}");
    }
}
