//! Discretized sufficient statistics.
//!
//! For the shared-design model the pair per subject is
//!   U = sum_k C'(t_k) Gamma^-1(t_k) [dX_k - A(t_k) dt_k],
//!   V = sum_k C'(t_k) Gamma^-1(t_k) C(t_k) dt_k,
//! with everything evaluated at the left endpoint (first-order scheme). The
//! general quintet (U1, V1, U2, V2, S) carries separate fixed- and
//! random-effect designs B and C. A higher-order scheme replaces the
//! stochastic-integral part of U by a telescoping Ito correction when the
//! integrand rows are gradients of a known antiderivative.
//!
//! Statistics are computed from observed (thinned) states only; they never
//! see the simulation's fine grid.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg;
use crate::model::{gamma_inverse, CovariateTrack, ModelSpec, SubjectConfig, Theta, Trajectory};
use crate::rng;
use crate::simulate::{draw_random_effect, euler_maruyama_multi_thin};

/// Discretization scheme used for the stochastic integral in U.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    FirstOrder,
    ItoHigherOrder,
}

/// Eigenvalues of V below `-PSD_TOL * |V|` are treated as corruption rather
/// than symmetrization noise.
const PSD_TOL: f64 = 1e-8;

/// Per-subject statistics for the shared-design (B = C) model.
#[derive(Debug, Clone)]
pub struct SuffStats {
    pub u: DVector<f64>,
    pub v: DMatrix<f64>,
    pub subject_id: String,
    pub scheme: Scheme,
}

/// Per-subject statistics for the general model with separate designs:
/// `u1`/`v1` belong to the fixed-effect design B (dimension p), `u2`/`v2`
/// to the random-effect design C (dimension d), and `s` couples them.
#[derive(Debug, Clone)]
pub struct GeneralSuffStats {
    pub u1: DVector<f64>,
    pub v1: DMatrix<f64>,
    pub u2: DVector<f64>,
    pub v2: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub subject_id: String,
    pub scheme: Scheme,
}

impl GeneralSuffStats {
    pub fn fixed_dim(&self) -> usize {
        self.u1.len()
    }

    pub fn effect_dim(&self) -> usize {
        self.u2.len()
    }

    /// Collapse to the shared-design pair; valid when B = C.
    pub fn as_pair(&self) -> SuffStats {
        SuffStats {
            u: self.u2.clone(),
            v: self.v2.clone(),
            subject_id: self.subject_id.clone(),
            scheme: self.scheme,
        }
    }
}

impl SuffStats {
    /// View the pair as a degenerate quintet (U1 = U2, V1 = V2 = S).
    pub fn as_general(&self) -> GeneralSuffStats {
        GeneralSuffStats {
            u1: self.u.clone(),
            v1: self.v.clone(),
            u2: self.u.clone(),
            v2: self.v.clone(),
            s: self.v.clone(),
            subject_id: self.subject_id.clone(),
            scheme: self.scheme,
        }
    }
}

fn check_points(traj: &Trajectory) -> Result<()> {
    traj.validate()?;
    if traj.len() < 2 {
        return Err(Error::TooFewPoints {
            subject: traj.subject_id.clone(),
            points: traj.len(),
        });
    }
    Ok(())
}

fn check_psd(v: &mut DMatrix<f64>, subject: &str) -> Result<()> {
    linalg::symmetrize(v);
    let eigen = linalg::symmetric_eigenvalues(v);
    let scale = eigen.iter().fold(0.0_f64, |m, &e| m.max(e.abs()));
    if let Some(&min) = eigen.first() {
        if min < -PSD_TOL * scale {
            return Err(Error::NotPositiveDefinite {
                context: format!("V statistic of subject {subject}"),
                value: min,
            });
        }
    }
    Ok(())
}

/// Gamma^-1 along the path: computed once for constant diffusion, per point
/// otherwise.
struct GammaInv<'a> {
    model: &'a ModelSpec,
    constant: Option<DMatrix<f64>>,
}

impl<'a> GammaInv<'a> {
    fn new(model: &'a ModelSpec, traj: &Trajectory) -> Result<Self> {
        let constant = if model.diffusion.is_constant() {
            Some(gamma_inverse(model, traj.times[0], &traj.states[0])?)
        } else {
            None
        };
        Ok(GammaInv { model, constant })
    }

    fn at(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.constant {
            Some(g) => Ok(g.clone()),
            None => gamma_inverse(self.model, t, x),
        }
    }
}

/// First-order statistics for the shared-design model.
pub fn suffstats_first_order(model: &ModelSpec, traj: &Trajectory) -> Result<SuffStats> {
    check_points(traj)?;
    let d = model.effect_dim;
    let r = model.state_dim;
    let ginv = GammaInv::new(model, traj)?;

    let mut u = DVector::zeros(d);
    let mut v = DMatrix::zeros(d, d);
    let mut ct_gi = DMatrix::zeros(d, r);
    let mut resid = DVector::zeros(r);

    for k in 0..traj.len() - 1 {
        let t = traj.times[k];
        let x = &traj.states[k];
        let dcov = &traj.covariates[k];
        let dt = traj.times[k + 1] - t;

        let c = (model.drift_design)(t, x, dcov);
        let gi = ginv.at(t, x)?;
        ct_gi.gemm_tr(1.0, &c, &gi, 0.0);

        let a = (model.drift_offset)(t, x, dcov);
        resid.copy_from(&traj.states[k + 1]);
        resid -= x;
        resid.axpy(-dt, &a, 1.0);

        u.gemv(1.0, &ct_gi, &resid, 1.0);
        v.gemm(dt, &ct_gi, &c, 1.0);
    }

    check_psd(&mut v, &traj.subject_id)?;
    Ok(SuffStats {
        u,
        v,
        subject_id: traj.subject_id.clone(),
        scheme: Scheme::FirstOrder,
    })
}

/// First-order quintet for a model with separate fixed-effect design B.
/// When the model shares one design (B = C) the quintet collapses exactly.
pub fn suffstats_general(model: &ModelSpec, traj: &Trajectory) -> Result<GeneralSuffStats> {
    if model.is_shared_design() {
        return Ok(suffstats_first_order(model, traj)?.as_general());
    }
    check_points(traj)?;
    let d = model.effect_dim;
    let p = model.fixed_dim;
    let r = model.state_dim;
    let ginv = GammaInv::new(model, traj)?;

    let mut u1 = DVector::zeros(p);
    let mut v1 = DMatrix::zeros(p, p);
    let mut u2 = DVector::zeros(d);
    let mut v2 = DMatrix::zeros(d, d);
    let mut s = DMatrix::zeros(d, p);
    let mut bt_gi = DMatrix::zeros(p, r);
    let mut ct_gi = DMatrix::zeros(d, r);
    let mut resid = DVector::zeros(r);

    for k in 0..traj.len() - 1 {
        let t = traj.times[k];
        let x = &traj.states[k];
        let dcov = &traj.covariates[k];
        let dt = traj.times[k + 1] - t;

        let b = model.fixed_design_at(t, x, dcov);
        let c = (model.drift_design)(t, x, dcov);
        let gi = ginv.at(t, x)?;
        bt_gi.gemm_tr(1.0, &b, &gi, 0.0);
        ct_gi.gemm_tr(1.0, &c, &gi, 0.0);

        let a = (model.drift_offset)(t, x, dcov);
        resid.copy_from(&traj.states[k + 1]);
        resid -= x;
        resid.axpy(-dt, &a, 1.0);

        u1.gemv(1.0, &bt_gi, &resid, 1.0);
        u2.gemv(1.0, &ct_gi, &resid, 1.0);
        v1.gemm(dt, &bt_gi, &b, 1.0);
        v2.gemm(dt, &ct_gi, &c, 1.0);
        s.gemm(dt, &ct_gi, &b, 1.0);
    }

    check_psd(&mut v1, &traj.subject_id)?;
    check_psd(&mut v2, &traj.subject_id)?;
    Ok(GeneralSuffStats {
        u1,
        v1,
        u2,
        v2,
        s,
        subject_id: traj.subject_id.clone(),
        scheme: Scheme::FirstOrder,
    })
}

/// Higher-order statistics: the stochastic-integral part of U is replaced by
/// the telescoping Ito form
///   H(t_{k+1}, X_{k+1}) - H(t_k, X_k)
///     - dt/2 * sum_{j,l} (d2H/dx_j dx_l) Gamma_{jl} (t_k, X_k),
/// which requires the model to declare an antiderivative H with
/// grad_x H_m = row m of C' Gamma^-1. The drift part of U and all of V stay
/// first-order.
pub fn suffstats_ito(model: &ModelSpec, traj: &Trajectory) -> Result<SuffStats> {
    let anti = model
        .ito_antiderivative
        .as_ref()
        .ok_or_else(|| Error::MissingAntiderivative {
            model: model.name.clone(),
        })?;
    check_points(traj)?;
    let d = model.effect_dim;
    let r = model.state_dim;
    let ginv = GammaInv::new(model, traj)?;

    let mut u = DVector::zeros(d);
    let mut v = DMatrix::zeros(d, d);
    let mut ct_gi = DMatrix::zeros(d, r);

    for k in 0..traj.len() - 1 {
        let t = traj.times[k];
        let t_next = traj.times[k + 1];
        let x = &traj.states[k];
        let x_next = &traj.states[k + 1];
        let dcov = &traj.covariates[k];
        let dt = t_next - t;

        let c = (model.drift_design)(t, x, dcov);
        let gi = ginv.at(t, x)?;
        ct_gi.gemm_tr(1.0, &c, &gi, 0.0);

        // Telescoping part plus second-order correction.
        let h_now = (anti.value)(t, x, dcov);
        let h_next = (anti.value)(t_next, x_next, dcov);
        let hessians = (anti.hessians)(t, x, dcov);
        let gamma = model.gamma(t, x);
        for m in 0..d {
            let trace = hessians[m].component_mul(&gamma).sum();
            u[m] += h_next[m] - h_now[m] - 0.5 * dt * trace;
        }

        // Drift part of U stays first-order.
        let a = (model.drift_offset)(t, x, dcov);
        u.gemv(-dt, &ct_gi, &a, 1.0);
        v.gemm(dt, &ct_gi, &c, 1.0);
    }

    check_psd(&mut v, &traj.subject_id)?;
    Ok(SuffStats {
        u,
        v,
        subject_id: traj.subject_id.clone(),
        scheme: Scheme::ItoHigherOrder,
    })
}

/// Statistics of a trajectory under the requested scheme.
pub fn suffstats(model: &ModelSpec, traj: &Trajectory, scheme: Scheme) -> Result<SuffStats> {
    match scheme {
        Scheme::FirstOrder => suffstats_first_order(model, traj),
        Scheme::ItoHigherOrder => suffstats_ito(model, traj),
    }
}

/// Statistics for a whole population; subjects are independent, so the map
/// is data-parallel.
pub fn suffstats_population(
    model: &ModelSpec,
    trajectories: &[Trajectory],
    scheme: Scheme,
) -> Result<Vec<SuffStats>> {
    exec::map_slice(trajectories, |t| suffstats(model, t, scheme))
        .into_iter()
        .collect()
}

/// General quintets for a whole population.
pub fn suffstats_population_general(
    model: &ModelSpec,
    trajectories: &[Trajectory],
) -> Result<Vec<GeneralSuffStats>> {
    exec::map_slice(trajectories, |t| suffstats_general(model, t))
        .into_iter()
        .collect()
}

/// Result of the discretization-order study: RMS errors of the first-order
/// statistics against a fine-grid reference, per observation count, with the
/// fitted log-log slope.
#[derive(Debug, Clone)]
pub struct DiscretizationStudy {
    pub steps: Vec<usize>,
    pub rms_u: Vec<f64>,
    pub rms_v: Vec<f64>,
    pub rms_total: Vec<f64>,
    /// Least-squares slope of log rms_total against log n.
    pub slope: f64,
}

/// Measure how fast the discretized statistics approach their fine-grid
/// values as the observation count n grows.
///
/// For each replicate one path is simulated on a grid `fine_multiple` times
/// finer than the largest n; every n in `steps` sees a thinned view of that
/// same path, and the full fine-grid statistics serve as the reference.
pub fn discretization_error_study(
    model: &ModelSpec,
    theta: &Theta,
    x0: &DVector<f64>,
    horizon: f64,
    steps: &[usize],
    replicates: usize,
    fine_multiple: usize,
    seed: u64,
) -> Result<DiscretizationStudy> {
    if steps.is_empty() || replicates == 0 {
        return Err(Error::InvalidInput(
            "study needs at least one step count and one replicate".into(),
        ));
    }
    let max_n = *steps.iter().max().unwrap();
    let n_fine = max_n * fine_multiple.max(1);
    for &n in steps {
        if n == 0 || n_fine % n != 0 {
            return Err(Error::InvalidInput(format!(
                "step count {n} does not divide the fine grid {n_fine}"
            )));
        }
    }
    let mut factors = vec![1usize];
    factors.extend(steps.iter().map(|&n| n_fine / n));
    let delta = horizon / n_fine as f64;

    let per_replicate: Vec<Result<Vec<(f64, f64)>>> = exec::map_indexed(replicates, |m| {
        let mut stream = rng::stream(seed, &[0x535455_44, m as u64]); // "STUD"
        let phi = draw_random_effect(&theta.omega, &mut stream)?;
        let trajs = euler_maruyama_multi_thin(
            model,
            x0,
            horizon,
            &CovariateTrack::None,
            &theta.mu,
            &phi,
            delta,
            &factors,
            &format!("rep{m}"),
            &mut stream,
        )?;
        let reference = suffstats_first_order(model, &trajs[0])?;
        let mut errs = Vec::with_capacity(steps.len());
        for j in 0..steps.len() {
            let stats = suffstats_first_order(model, &trajs[j + 1])?;
            let du = (&stats.u - &reference.u).norm();
            let dv = (&stats.v - &reference.v).norm();
            errs.push((du, dv));
        }
        Ok(errs)
    });

    let mut sq_u = vec![0.0; steps.len()];
    let mut sq_v = vec![0.0; steps.len()];
    for rep in per_replicate {
        let errs = rep?;
        for (j, (du, dv)) in errs.into_iter().enumerate() {
            sq_u[j] += du * du;
            sq_v[j] += dv * dv;
        }
    }
    let m = replicates as f64;
    let rms_u: Vec<f64> = sq_u.iter().map(|s| (s / m).sqrt()).collect();
    let rms_v: Vec<f64> = sq_v.iter().map(|s| (s / m).sqrt()).collect();
    let rms_total: Vec<f64> = sq_u
        .iter()
        .zip(&sq_v)
        .map(|(a, b)| ((a + b) / m).sqrt())
        .collect();

    let slope = log_log_slope(steps, &rms_total);
    Ok(DiscretizationStudy {
        steps: steps.to_vec(),
        rms_u,
        rms_v,
        rms_total,
        slope,
    })
}

/// Least-squares slope of log(err) against log(n); NaN-safe for zero errors.
fn log_log_slope(steps: &[usize], errs: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(errs)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&n, &e)| ((n as f64).ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Diffusion, ItoAntiderivative};
    use approx::assert_relative_eq;
    use rand::Rng;
    use std::sync::Arc;

    /// r = d = 1, C = 1, A = 0, Sigma = 1.
    fn unit_scalar_model() -> ModelSpec {
        ModelSpec {
            name: "unit".into(),
            state_dim: 1,
            effect_dim: 1,
            fixed_dim: 1,
            covariate_dim: 0,
            drift_offset: Arc::new(|_, _, _| DVector::zeros(1)),
            drift_design: Arc::new(|_, _, _| DMatrix::from_element(1, 1, 1.0)),
            fixed_design: None,
            diffusion: Diffusion::identity(1),
            prepare_drift: None,
            ito_antiderivative: None,
        }
    }

    fn walk_trajectory(values: &[f64], horizon: f64) -> Trajectory {
        let n = values.len();
        let dt = horizon / (n - 1) as f64;
        Trajectory {
            subject_id: "w".into(),
            times: (0..n).map(|k| k as f64 * dt).collect(),
            states: values.iter().map(|&v| DVector::from_element(1, v)).collect(),
            covariates: vec![DVector::zeros(0); n],
        }
    }

    #[test]
    fn telescoping_pair_is_exact() {
        let model = unit_scalar_model();
        let traj = walk_trajectory(&[0.3, 1.0, -0.2, 0.8, 0.5], 2.0);
        let stats = suffstats_first_order(&model, &traj).unwrap();
        assert_relative_eq!(stats.u[0], 0.5 - 0.3, epsilon = 1e-14);
        assert_relative_eq!(stats.v[(0, 0)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_path_gives_zero_u() {
        // X_t == x0 and A == 0: U = 0 and V = T * (C' Gamma^-1 C)(x0).
        let model = ModelSpec {
            drift_design: Arc::new(|_, x: &DVector<f64>, _| DMatrix::from_element(1, 1, x[0])),
            ..unit_scalar_model()
        };
        let x0 = 1.7;
        let traj = walk_trajectory(&[x0; 9], 3.0);
        let stats = suffstats_first_order(&model, &traj).unwrap();
        assert_relative_eq!(stats.u[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(stats.v[(0, 0)], 3.0 * x0 * x0, epsilon = 1e-12);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let model = unit_scalar_model();
        let traj = Trajectory {
            subject_id: "p".into(),
            times: vec![0.0],
            states: vec![DVector::zeros(1)],
            covariates: vec![DVector::zeros(0)],
        };
        assert!(matches!(
            suffstats_first_order(&model, &traj),
            Err(Error::TooFewPoints { points: 1, .. })
        ));
    }

    /// Random two-state linear model with distinct B and C, constant in x.
    fn random_general_model(rng: &mut impl Rng) -> ModelSpec {
        let b = DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let a = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
        let sig = DVector::from_vec(vec![rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)]);
        let (bb, cc, aa) = (b.clone(), c.clone(), a.clone());
        ModelSpec {
            name: "general".into(),
            state_dim: 2,
            effect_dim: 2,
            fixed_dim: 3,
            covariate_dim: 0,
            drift_offset: Arc::new(move |_, _, _| aa.clone()),
            drift_design: Arc::new(move |_, _, _| cc.clone()),
            fixed_design: Some(Arc::new(move |_, _, _| bb.clone())),
            diffusion: Diffusion::ConstantDiagonal(sig),
            prepare_drift: None,
            ito_antiderivative: None,
        }
    }

    fn random_walk_2d(rng: &mut impl Rng, n: usize, horizon: f64) -> Trajectory {
        let dt = horizon / (n - 1) as f64;
        let mut x = DVector::from_vec(vec![0.1, -0.2]);
        let mut states = vec![x.clone()];
        for _ in 1..n {
            x[0] += rng.gen_range(-0.3..0.3);
            x[1] += rng.gen_range(-0.3..0.3);
            states.push(x.clone());
        }
        Trajectory {
            subject_id: "g".into(),
            times: (0..n).map(|k| k as f64 * dt).collect(),
            states,
            covariates: vec![DVector::zeros(0); n],
        }
    }

    #[test]
    fn quintet_collapses_when_designs_are_shared() {
        let model = unit_scalar_model();
        let traj = walk_trajectory(&[0.0, 0.4, 0.1, 0.9], 1.5);
        let g = suffstats_general(&model, &traj).unwrap();
        let p = suffstats_first_order(&model, &traj).unwrap();
        assert_eq!(g.u1, g.u2);
        assert_eq!(g.v1, g.v2);
        assert_eq!(g.v1, g.s);
        assert_eq!(g.u2, p.u);
        assert_eq!(g.v2, p.v);
    }

    #[test]
    fn zero_fixed_design_zeroes_its_statistics() {
        let mut rng = rng::stream(5, &[0]);
        let mut model = random_general_model(&mut rng);
        model.fixed_design = Some(Arc::new(|_, _, _| DMatrix::zeros(2, 3)));
        let traj = random_walk_2d(&mut rng, 20, 1.0);
        let g = suffstats_general(&model, &traj).unwrap();
        assert_eq!(g.u1.norm(), 0.0);
        assert_eq!(g.v1.norm(), 0.0);
        assert_eq!(g.s.norm(), 0.0);
        assert!(g.v2.norm() > 0.0);
    }

    #[test]
    fn quintet_matches_independent_accumulation() {
        // Independent oracle: accumulate each of the five integrals directly
        // from the definitions, no shared buffers.
        let mut rng = rng::stream(6, &[1]);
        for _ in 0..5 {
            let model = random_general_model(&mut rng);
            let traj = random_walk_2d(&mut rng, 30, 2.0);
            let g = suffstats_general(&model, &traj).unwrap();

            let zero = DVector::zeros(0);
            let gi = gamma_inverse(&model, 0.0, &traj.states[0]).unwrap();
            let mut u1 = DVector::zeros(3);
            let mut v1 = DMatrix::zeros(3, 3);
            let mut u2 = DVector::zeros(2);
            let mut v2 = DMatrix::zeros(2, 2);
            let mut s = DMatrix::zeros(2, 3);
            for k in 0..traj.len() - 1 {
                let t = traj.times[k];
                let dt = traj.times[k + 1] - t;
                let x = &traj.states[k];
                let b = model.fixed_design_at(t, x, &zero);
                let c = (model.drift_design)(t, x, &zero);
                let a = (model.drift_offset)(t, x, &zero);
                let dx = &traj.states[k + 1] - x - &a * dt;
                u1 += b.transpose() * &gi * &dx;
                u2 += c.transpose() * &gi * &dx;
                v1 += b.transpose() * &gi * &b * dt;
                v2 += c.transpose() * &gi * &c * dt;
                s += c.transpose() * &gi * &b * dt;
            }
            assert_relative_eq!(g.u1, u1, epsilon = 1e-12);
            assert_relative_eq!(g.u2, u2, epsilon = 1e-12);
            assert_relative_eq!(g.v1, v1, epsilon = 1e-12);
            assert_relative_eq!(g.v2, v2, epsilon = 1e-12);
            assert_relative_eq!(g.s, s, epsilon = 1e-12);
        }
    }

    #[test]
    fn v_is_positive_semidefinite_on_random_inputs() {
        let mut rng = rng::stream(8, &[2]);
        for _ in 0..10 {
            let model = random_general_model(&mut rng);
            let traj = random_walk_2d(&mut rng, 25, 1.0);
            let g = suffstats_general(&model, &traj).unwrap();
            for v in [&g.v1, &g.v2] {
                let eigen = linalg::symmetric_eigenvalues(v);
                let scale = eigen.iter().fold(0.0_f64, |m, &e| m.max(e.abs()));
                assert!(eigen[0] >= -1e-10 * scale);
            }
        }
    }

    fn missing_h_model() -> ModelSpec {
        unit_scalar_model()
    }

    #[test]
    fn ito_requires_antiderivative() {
        let model = missing_h_model();
        let traj = walk_trajectory(&[0.0, 1.0], 1.0);
        assert!(matches!(
            suffstats_ito(&model, &traj),
            Err(Error::MissingAntiderivative { .. })
        ));
    }

    #[test]
    fn ito_equals_first_order_for_constant_integrand() {
        // h constant in x: H is linear, second derivatives vanish, and the
        // telescoped sum reproduces h * dX exactly.
        let mut model = unit_scalar_model();
        model.ito_antiderivative = Some(ItoAntiderivative {
            value: Arc::new(|_, x: &DVector<f64>, _| DVector::from_element(1, x[0])),
            hessians: Arc::new(|_, _, _| vec![DMatrix::zeros(1, 1)]),
        });
        let traj = walk_trajectory(&[0.3, -0.1, 0.6, 0.2], 1.2);
        let first = suffstats_first_order(&model, &traj).unwrap();
        let ito = suffstats_ito(&model, &traj).unwrap();
        assert_relative_eq!(ito.u[0], first.u[0], epsilon = 1e-13);
        assert_relative_eq!(ito.v[(0, 0)], first.v[(0, 0)], epsilon = 1e-13);
    }

    #[test]
    fn ito_matches_closed_form_identity() {
        // Scalar model with C(x) = x, Sigma = 1: H(x) = x^2/2, so
        // U_ito = (X_T^2 - X_0^2)/2 - T/2 exactly.
        let mut model = unit_scalar_model();
        model.drift_design = Arc::new(|_, x: &DVector<f64>, _| DMatrix::from_element(1, 1, x[0]));
        model.ito_antiderivative = Some(ItoAntiderivative {
            value: Arc::new(|_, x: &DVector<f64>, _| {
                DVector::from_element(1, 0.5 * x[0] * x[0])
            }),
            hessians: Arc::new(|_, _, _| vec![DMatrix::from_element(1, 1, 1.0)]),
        });
        let traj = walk_trajectory(&[0.5, 1.1, 0.4, -0.3, 0.9], 2.0);
        let ito = suffstats_ito(&model, &traj).unwrap();
        let expected = 0.5 * (0.9_f64 * 0.9 - 0.5 * 0.5) - 0.5 * 2.0;
        assert_relative_eq!(ito.u[0], expected, epsilon = 1e-13);
    }

    #[test]
    fn deterministic_statistics_have_zero_study_error() {
        // Constant C and A = 0 telescope exactly at every resolution.
        let model = unit_scalar_model();
        let theta = Theta::new(DVector::from_element(1, -0.5), DMatrix::from_element(1, 1, 0.1));
        let study = discretization_error_study(
            &model,
            &theta,
            &DVector::from_element(1, 1.0),
            1.0,
            &[10, 20],
            4,
            8,
            77,
        )
        .unwrap();
        for e in &study.rms_u {
            assert!(e.abs() < 1e-12);
        }
        for e in &study.rms_v {
            assert!(e.abs() < 1e-12);
        }
    }

    #[test]
    fn refinement_errors_shrink() {
        // Statistics on a grid and its refinements converge toward the
        // fine-grid value for a state-dependent integrand.
        let model = ModelSpec {
            drift_design: Arc::new(|_, x: &DVector<f64>, _| DMatrix::from_element(1, 1, x[0])),
            ..unit_scalar_model()
        };
        let theta = Theta::new(
            DVector::from_element(1, -1.0),
            DMatrix::from_element(1, 1, 0.25),
        );
        let study = discretization_error_study(
            &model,
            &theta,
            &DVector::from_element(1, 0.5),
            1.0,
            &[50, 100, 200],
            40,
            8,
            99,
        )
        .unwrap();
        assert!(study.rms_total[0] > study.rms_total[1]);
        assert!(study.rms_total[1] > study.rms_total[2]);
        assert!(study.slope < 0.0);
    }
}
