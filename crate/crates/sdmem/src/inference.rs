//! Wald tests on linear restrictions of fixed-effect subvectors.
//!
//! The statistic for H0: L beta = eta0 is
//!   W = (L b - eta0)' (L V L')^-1 (L b - eta0),
//! asymptotically chi-squared with k = rank(L) degrees of freedom. The
//! chi-squared tail is computed in-repo via the regularized incomplete
//! gamma function (series for small x, Lentz continued fraction for large).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::MleFit;
use crate::linalg;

/// Where the covariance of the tested subvector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovSource {
    /// Inverse observed information of a single fit.
    ObservedInformation,
    /// Sample covariance of estimates across replicate fits.
    ReplicateCovariance,
}

/// A linear hypothesis L beta = eta0 on the subvector beta = mu[selector].
#[derive(Debug, Clone)]
pub struct WaldSpec {
    /// Indices extracting beta from the fixed-effect vector.
    pub selector: Vec<usize>,
    /// k x s restriction matrix of full row rank.
    pub l_matrix: DMatrix<f64>,
    pub eta0: DVector<f64>,
    pub cov_source: CovSource,
}

impl WaldSpec {
    /// H0: beta = 0 for the given subvector.
    pub fn zero_hypothesis(selector: Vec<usize>, cov_source: CovSource) -> WaldSpec {
        let s = selector.len();
        WaldSpec {
            selector,
            l_matrix: DMatrix::identity(s, s),
            eta0: DVector::zeros(s),
            cov_source,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub reject_at_0_05: bool,
}

/// Numerical rank of L via singular values above 1e-10 of the largest.
fn numerical_rank(l: &DMatrix<f64>) -> usize {
    let svd = l.clone().svd(false, false);
    let max = svd.singular_values.amax();
    if max == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > 1e-10 * max).count()
}

/// Wald test from an estimated subvector and its covariance.
pub fn wald_test(
    beta_hat: &DVector<f64>,
    cov: &DMatrix<f64>,
    l_matrix: &DMatrix<f64>,
    eta0: &DVector<f64>,
) -> Result<WaldResult> {
    let k = l_matrix.nrows();
    let s = l_matrix.ncols();
    if s != beta_hat.len() || cov.nrows() != s || cov.ncols() != s || eta0.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "L is {k}x{s}, beta has {} entries, cov is {}x{}, eta0 has {}",
            beta_hat.len(),
            cov.nrows(),
            cov.ncols(),
            eta0.len()
        )));
    }
    if k > s {
        return Err(Error::RankDeficient {
            rank: s,
            expected: k,
        });
    }
    let rank = numerical_rank(l_matrix);
    if rank < k {
        return Err(Error::RankDeficient { rank, expected: k });
    }

    let diff = l_matrix * beta_hat - eta0;
    let mut restricted = l_matrix * cov * l_matrix.transpose();
    linalg::symmetrize(&mut restricted);
    let chol = linalg::spd_cholesky(&restricted, "L V L'")
        .map_err(|e| Error::SingularRestrictedCovariance(e.to_string()))?;
    let solved = linalg::chol_solve_vec(&chol, &diff);
    let statistic = diff.dot(&solved).max(0.0);
    let p_value = chi2_sf(statistic, k);
    Ok(WaldResult {
        statistic,
        df: k,
        p_value,
        reject_at_0_05: p_value < 0.05,
    })
}

/// Wald test against a fitted model, with beta extracted by the spec's
/// selector and covariance from the fit's observed information.
pub fn wald_test_fit(fit: &MleFit, spec: &WaldSpec) -> Result<WaldResult> {
    let beta = extract_beta(&fit.theta_hat.mu, &spec.selector)?;
    let cov = beta_covariance(std::slice::from_ref(fit), &spec.selector, CovSource::ObservedInformation)?;
    wald_test(&beta, &cov, &spec.l_matrix, &spec.eta0)
}

pub fn extract_beta(mu: &DVector<f64>, selector: &[usize]) -> Result<DVector<f64>> {
    let mut beta = DVector::zeros(selector.len());
    for (j, &idx) in selector.iter().enumerate() {
        if idx >= mu.len() {
            return Err(Error::DimensionMismatch(format!(
                "selector index {idx} out of range for mu of length {}",
                mu.len()
            )));
        }
        beta[j] = mu[idx];
    }
    Ok(beta)
}

/// Covariance of the selected subvector: sample covariance across replicate
/// fits, or the corresponding block of a single fit's inverse observed
/// information.
pub fn beta_covariance(
    fits: &[MleFit],
    selector: &[usize],
    source: CovSource,
) -> Result<DMatrix<f64>> {
    match source {
        CovSource::ReplicateCovariance => {
            if fits.len() < 2 {
                return Err(Error::TooFewReplicates(fits.len()));
            }
            let betas: Vec<DVector<f64>> = fits
                .iter()
                .map(|f| extract_beta(&f.theta_hat.mu, selector))
                .collect::<Result<_>>()?;
            Ok(sample_covariance(&betas))
        }
        CovSource::ObservedInformation => {
            let fit = fits.first().ok_or(Error::TooFewReplicates(0))?;
            let info = fit
                .observed_information
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("fit has no observed information".into()))?;
            let cond = linalg::symmetric_condition(info);
            if !cond.is_finite() || cond > 1e12 {
                return Err(Error::SingularInformation { cond });
            }
            let full_cov = linalg::spd_inverse(info, "observed information")
                .map_err(|_| Error::SingularInformation { cond })?;
            let s = selector.len();
            let mut block = DMatrix::zeros(s, s);
            for (i, &a) in selector.iter().enumerate() {
                for (j, &b) in selector.iter().enumerate() {
                    block[(i, j)] = full_cov[(a, b)];
                }
            }
            linalg::symmetrize(&mut block);
            Ok(block)
        }
    }
}

/// Sample covariance (n - 1 divisor) of a set of vectors.
pub fn sample_covariance(xs: &[DVector<f64>]) -> DMatrix<f64> {
    let n = xs.len();
    let d = xs[0].len();
    let mut mean = DVector::zeros(d);
    for x in xs {
        mean += x;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for x in xs {
        let c = x - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    cov
}

// ---------------------------------------------------------------------------
// Chi-squared survival function via the regularized incomplete gamma
// ---------------------------------------------------------------------------

/// ln Gamma(x) for x > 0 (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut ser = 1.000000000190015;
    for (i, &c) in COEF.iter().enumerate() {
        ser += c / (x + 1.0 + i as f64);
    }
    let tmp = x + 5.5;
    (x + 0.5) * tmp.ln() - tmp + (2.5066282746310005 * ser / x).ln()
}

/// Lower regularized incomplete gamma P(a, x) by series; converges fast for
/// x < a + 1.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let gln = ln_gamma(a);
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..500 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-15 {
            break;
        }
    }
    sum * (-x + a * x.ln() - gln).exp()
}

/// Upper regularized incomplete gamma Q(a, x) by a modified-Lentz continued
/// fraction; converges fast for x >= a + 1.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let gln = ln_gamma(a);
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    (-x + a * x.ln() - gln).exp() * h
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x < 0.0 || a <= 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Upper-tail probability of the chi-squared distribution with k degrees of
/// freedom: Q(k/2, x/2). Monotone nonincreasing in x.
pub fn chi2_sf(x: f64, k: usize) -> f64 {
    debug_assert!(x >= 0.0 && k > 0);
    gamma_q(k as f64 / 2.0, x / 2.0)
}
