//! Estimation-theoretic lower bounds: per-path delay variance, TDOA
//! measurement covariance, and the position error bound (PEB).
//!
//! The position bound is built on the TDOA measurement model the locator
//! actually uses (bistatic-range measurements with a diagonal covariance
//! assembled from per-path delay bounds), so estimator performance and bound
//! are directly comparable.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::channel::Scenario;
use crate::error::{Error, Result};
use crate::geometry::{bistatic_gradient, Vec3};
use crate::SPEED_OF_LIGHT;

/// Operands of the per-path delay variance bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbInputs {
    pub subcarriers: usize,
    pub symbols: usize,
    /// Energy per symbol in joules.
    pub symbol_energy: f64,
    /// Per-sample noise variance (noise figure included).
    pub noise_variance: f64,
    /// Subcarrier spacing in Hz.
    pub spacing: f64,
    /// Path-gain magnitude |beta|.
    pub beta_mag: f64,
}

/// Position error bound at one point together with the Fisher information it
/// came from. A singular information matrix is reported as an infinite bound
/// rather than an error so map sweeps can continue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PebResult {
    /// `sqrt(trace(fim^-1))` in meters; infinite when `fim` is singular.
    pub peb: f64,
    /// Position-domain Fisher information in 1/m^2.
    pub fim: Matrix3<f64>,
}

/// Lower bound on the variance of an unbiased delay estimate from one
/// projected path:
///
/// `var >= 6 N_eff / (K (K^2 - 1) T E_s |2 pi spacing beta|^2)`.
///
/// Scales as `1/T`, `1/E_s`, and `1/|beta|^2`.
pub fn toa_crb(c: &CrbInputs) -> Result<f64> {
    let k = c.subcarriers as f64;
    if c.subcarriers < 2 {
        return Err(Error::InvalidConfig(vec![format!(
            "delay variance bound needs at least 2 subcarriers, got {}",
            c.subcarriers
        )]));
    }
    let omega = std::f64::consts::TAU * c.spacing * c.beta_mag;
    Ok(6.0 * c.noise_variance
        / (k * (k * k - 1.0) * c.symbols as f64 * c.symbol_energy * omega * omega))
}

/// Variance of one TDOA measurement in meters^2: the reference (direct-path)
/// and user-path delay errors are independent, so their variances add and
/// scale by c^2.
pub fn tdoa_covariance(crb_n: f64, crb_0: f64) -> f64 {
    SPEED_OF_LIGHT * SPEED_OF_LIGHT * (crb_n + crb_0)
}

/// Fisher information accumulated from bistatic-range rows with per-row
/// variances.
fn fim_from_rows(x: Vec3, tx: Vec3, rows: &[(Vec3, f64)]) -> Result<PebResult> {
    let mut fim = Matrix3::zeros();
    for (anchor, variance) in rows {
        let h = bistatic_gradient(x, tx, *anchor)?;
        fim += h * h.transpose() / *variance;
    }
    if !fim.iter().all(|v| v.is_finite()) {
        return Ok(PebResult {
            peb: f64::INFINITY,
            fim,
        });
    }
    // A rank-deficient information matrix (collinear or coincident anchors)
    // may still pass `try_inverse` through rounding noise, so gate on the
    // eigenvalue spread before trusting the inverse.
    let eig = fim.symmetric_eigenvalues();
    let max_eig = eig.iter().cloned().fold(0.0_f64, f64::max);
    let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let singular = !(min_eig > max_eig * 1e-12);
    let peb = if singular {
        f64::INFINITY
    } else {
        match fim.try_inverse() {
            Some(inv) => inv.trace().sqrt(),
            None => f64::INFINITY,
        }
    };
    Ok(PebResult { peb, fim })
}

/// Position error bound for a source at `x` observed through TDOA
/// measurements at every receiver of `s`, with measurement variances
/// `sigma_diag` (meters^2, one per receiver).
///
/// Row `m` of the measurement Jacobian is the gradient of the bistatic range
/// `||x - tx|| + ||x - p_m||`; the bound is `sqrt(trace((H^T S^-1 H)^-1))`.
pub fn position_fim(x: Vec3, s: &Scenario, sigma_diag: &[f64]) -> Result<PebResult> {
    if sigma_diag.len() != s.num_rxs() {
        return Err(Error::IndexOutOfRange(format!(
            "{} variances for {} receivers",
            sigma_diag.len(),
            s.num_rxs()
        )));
    }
    if s.num_rxs() < 3 {
        return Err(Error::UnderDetermined {
            usable: s.num_rxs(),
        });
    }
    for (m, v) in sigma_diag.iter().enumerate() {
        if !(*v > 0.0) {
            return Err(Error::InvalidConfig(vec![format!(
                "measurement variance {m} must be positive, got {v}"
            )]));
        }
    }
    let rows: Vec<(Vec3, f64)> = s
        .rxs
        .iter()
        .zip(sigma_diag)
        .map(|(rx, v)| (rx.position, *v))
        .collect();
    fim_from_rows(x, s.tx, &rows)
}

/// PEB for the scenario's first user relocated to `x`, with measurement
/// variances derived from the true channel gains at that point (not from
/// estimates). Receivers whose reflected path is shadowed there are excluded;
/// fewer than 3 usable receivers yields an infinite bound.
pub fn peb_at(s: &Scenario, x: Vec3) -> Result<PebResult> {
    if s.ues.is_empty() {
        return Err(Error::DegenerateGeometry(
            "scenario has no user to take the RIS template from".into(),
        ));
    }
    let mut probe = s.clone();
    probe.ues.truncate(1);
    probe.ues[0].position = x;
    probe.scatterers.clear();
    let truth = crate::channel::ground_truth(&probe)?;
    let n_eff = s.noise_variance();
    // Same floor as the estimator applies, so a noiseless scenario yields a
    // tiny positive bound instead of a divide-by-zero information matrix.
    let crb_of = |beta_mag: f64| -> Result<f64> {
        Ok(toa_crb(&CrbInputs {
            subcarriers: s.ofdm.subcarriers,
            symbols: s.ofdm.symbols,
            symbol_energy: s.ofdm.symbol_energy,
            noise_variance: n_eff,
            spacing: s.ofdm.spacing,
            beta_mag,
        })?
        .max(crate::toa::MIN_DELAY_VARIANCE))
    };
    let mut rows = Vec::with_capacity(s.num_rxs());
    for (m, rx) in s.rxs.iter().enumerate() {
        let (Some(los), Some(path)) = (truth.path(0, m), truth.path(1, m)) else {
            continue;
        };
        let variance = tdoa_covariance(crb_of(path.gain.norm())?, crb_of(los.gain.norm())?);
        rows.push((rx.position, variance));
    }
    if rows.len() < 3 {
        return Ok(PebResult {
            peb: f64::INFINITY,
            fim: Matrix3::zeros(),
        });
    }
    fim_from_rows(x, s.tx, &rows)
}

/// PEB of user `n` (1-based path index) at its own position, using that
/// user's RIS template.
pub fn peb_for_user(s: &Scenario, n: usize) -> Result<PebResult> {
    if n == 0 || n > s.ues.len() {
        return Err(Error::IndexOutOfRange(format!("user path {n}")));
    }
    let mut probe = s.clone();
    probe.ues.swap(0, n - 1);
    let x = probe.ues[0].position;
    peb_at(&probe, x)
}

/// Evaluate [`peb_at`] over a grid of candidate user positions, in parallel.
/// Degenerate points (user on an anchor, all paths shadowed, singular
/// information) are reported as infinite instead of aborting the map.
pub fn peb_map(s: &Scenario, grid: &[Vec3]) -> Vec<(Vec3, f64)> {
    grid.par_iter()
        .map(|x| {
            let peb = match peb_at(s, *x) {
                Ok(r) => r.peb,
                Err(_) => f64::INFINITY,
            };
            (*x, peb)
        })
        .collect()
}
