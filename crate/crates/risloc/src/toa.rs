//! Per-path time-of-arrival estimation.
//!
//! The temporal codes make each path recoverable by projecting the `K x T`
//! observation onto its code, which collapses the block to a length-`K`
//! vector containing a single delay phasor in noise. The delay is then found
//! by a zero-padded FFT peak search followed by scalar refinement of the
//! fractional-bin offset, and the path-gain magnitude by matched correlation
//! at the refined delay.

use nalgebra::DVector;
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::TAU;

use crate::bounds::{toa_crb, CrbInputs};
use crate::channel::{OfdmConfig, RxSignalBlock};
use crate::error::{Error, Result};
use crate::ris::ProfileSet;

/// Observation of one path at one receiver after code projection:
/// `r = (1/T) Y conj(code)`, length `K`.
#[derive(Debug, Clone)]
pub struct ProjectedVector {
    pub rx_index: usize,
    pub path_index: usize,
    pub r: DVector<Complex64>,
}

/// The delay/gain estimate of one path, with the variance bound used as its
/// measurement weight downstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaEstimate {
    /// Delay in `[0, 1/spacing)` seconds.
    pub delay: f64,
    /// Estimated path-gain magnitude (dimensionless).
    pub gain_magnitude: f64,
    /// Delay variance bound in seconds^2, evaluated at the estimated gain.
    pub delay_variance: f64,
}

/// Per-path estimates indexed `[path][rx]`, path 0 the direct one. `None`
/// marks a path whose projection carried no usable signal.
#[derive(Debug, Clone)]
pub struct ToaGrid {
    entries: Vec<Vec<Option<ToaEstimate>>>,
}

impl ToaGrid {
    /// Assemble a grid from externally produced estimates; inner vectors are
    /// per-receiver rows and must share one length.
    pub fn from_entries(entries: Vec<Vec<Option<ToaEstimate>>>) -> ToaGrid {
        if let Some(first) = entries.first() {
            assert!(entries.iter().all(|row| row.len() == first.len()));
        }
        ToaGrid { entries }
    }

    pub fn get(&self, n: usize, m: usize) -> Option<&ToaEstimate> {
        self.entries.get(n).and_then(|row| row[m].as_ref())
    }

    pub fn num_paths(&self) -> usize {
        self.entries.len()
    }

    pub fn num_rxs(&self) -> usize {
        self.entries.first().map_or(0, Vec::len)
    }

    /// Iterate present entries as `(path, rx, estimate)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &ToaEstimate)> {
        self.entries.iter().enumerate().flat_map(|(n, row)| {
            row.iter()
                .enumerate()
                .filter_map(move |(m, e)| e.as_ref().map(|e| (n, m, e)))
        })
    }
}

/// Project a receiver block onto one temporal code. For a noiseless block the
/// result is exactly `sqrt(E_s) beta d(tau)` of the matching path; the other
/// paths cancel by code orthogonality, and noise retains variance
/// `N_eff / T` per element.
pub fn project(block: &RxSignalBlock, code: &[Complex64], path_index: usize) -> ProjectedVector {
    let t = code.len();
    debug_assert_eq!(block.samples.ncols(), t);
    let conj = DVector::from_iterator(t, code.iter().map(|z| z.conj()));
    let r = (&block.samples * conj) / Complex64::from(t as f64);
    ProjectedVector {
        rx_index: block.rx_index,
        path_index,
        r,
    }
}

/// Magnitude of the matched-filter correlation `|d(tau)^H r|`. The delay
/// estimate is the maximizer of this function; it is invariant to a global
/// phase rotation of `r`.
pub fn delay_correlation(r: &DVector<Complex64>, tau: f64, spacing: f64) -> f64 {
    let mut acc = Complex64::ZERO;
    for (k, z) in r.iter().enumerate() {
        acc += z * Complex64::from_polar(1.0, -TAU * k as f64 * spacing * tau);
    }
    acc.norm()
}

/// Golden-section maximization of `f` on `[a, b]`, assumed unimodal there.
/// Runs until the bracket shrinks below `tol` or 50 iterations.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..50 {
        if b - a < tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// One quadratic-interpolation polish step around `x`: fit a parabola through
/// `(x - h, x, x + h)` and move to its vertex if that improves `f`.
fn parabolic_polish(f: impl Fn(f64) -> f64, x: f64, fx: f64, h: f64) -> (f64, f64) {
    let fm = f(x - h);
    let fp = f(x + h);
    let denom = fm - 2.0 * fx + fp;
    if denom >= 0.0 {
        return (x, fx);
    }
    let step = 0.5 * h * (fm - fp) / denom;
    let cand = x + step;
    let fc = f(cand);
    if fc > fx {
        (cand, fc)
    } else {
        (x, fx)
    }
}

/// Estimate the delay of a projected path by coarse FFT peak search plus
/// fractional-bin refinement.
///
/// The joint search over (bin, fractional shift) splits into two scalar
/// stages: a zero-padded `fft_size`-point transform locates the strongest
/// bin, then the shift `delta` in `[0, 1/(fft_size * spacing)]` is maximized
/// for that bin and its upper neighbor (the continuous peak falls in exactly
/// one of the two windows). The result is reduced into `[0, 1/spacing)`.
pub fn estimate_toa(r: &ProjectedVector, fft_size: usize, spacing: f64) -> Result<f64> {
    let k = r.r.len();
    assert!(fft_size >= k, "estimation FFT shorter than the input");
    if r.r.iter().all(|z| *z == Complex64::ZERO) {
        return Err(Error::NoSignal {
            path_index: r.path_index,
            rx_index: r.rx_index,
        });
    }
    let mut buf: Vec<Complex64> = r.r.iter().copied().collect();
    buf.resize(fft_size, Complex64::ZERO);
    FftPlanner::new()
        .plan_fft_forward(fft_size)
        .process(&mut buf);
    let coarse_bin = buf
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
        .map(|(i, _)| i)
        .unwrap();
    let coarse_obj = buf[coarse_bin].norm();

    let bin_width = 1.0 / (fft_size as f64 * spacing);
    let window = 1.0 / spacing;
    // The delta window of bin k covers delays [(k-1), k] bins, so searching
    // the coarse bin and its successor covers a full bin to each side of the
    // coarse peak.
    let mut best_tau = coarse_bin as f64 * bin_width;
    let mut best_obj = coarse_obj;
    for bin in [coarse_bin, coarse_bin + 1] {
        let base = bin as f64 * bin_width;
        let f = |delta: f64| delay_correlation(&r.r, base - delta, spacing);
        let (delta, obj) = golden_max(f, 0.0, bin_width, 1e-15);
        let (delta, obj) = parabolic_polish(f, delta, obj, 1e-13);
        if obj > best_obj {
            best_obj = obj;
            best_tau = base - delta;
        }
    }
    let mut tau = best_tau.rem_euclid(window);
    if tau >= window {
        tau = 0.0;
    }
    Ok(tau)
}

/// Matched-correlation estimate of the path-gain magnitude:
/// `|d(tau)^H r| / (sqrt(E_s) K)`.
///
/// The plain (unconjugated) product `d^T d` is a geometric sum that depends
/// on `tau`; the conjugated product equals `K` for every delay, which is the
/// matched-filter normalization used here.
pub fn estimate_beta_mag(r: &ProjectedVector, tau: f64, symbol_energy: f64, spacing: f64) -> f64 {
    delay_correlation(&r.r, tau, spacing) / (symbol_energy.sqrt() * r.r.len() as f64)
}

/// Floor on the reported delay variance. A noiseless run has a zero bound,
/// which would break the inverse-variance weighting downstream; the floor
/// keeps weights finite while staying far below any physical variance.
pub(crate) const MIN_DELAY_VARIANCE: f64 = 1e-30;

/// Run projection, delay estimation, and gain estimation for every
/// (path, receiver) pair. Paths whose projected energy falls below six times
/// the expected post-projection noise floor are marked missing instead of
/// producing garbage measurements; `noise_variance` is the per-sample
/// variance before projection.
pub fn estimate_all(
    blocks: &[RxSignalBlock],
    profiles: &ProfileSet,
    cfg: &OfdmConfig,
    noise_variance: f64,
) -> Result<ToaGrid> {
    let n_paths = profiles.num_ues() + 1;
    // Expected squared norm of a signal-free projection.
    let noise_floor = cfg.subcarriers as f64 * noise_variance / cfg.symbols as f64;
    let mut entries = vec![vec![None; blocks.len()]; n_paths];
    for block in blocks {
        for (n, row) in entries.iter_mut().enumerate() {
            let r = project(block, profiles.code(n), n);
            if r.r.norm_squared() < 6.0 * noise_floor {
                continue;
            }
            let tau = match estimate_toa(&r, cfg.fft_size, cfg.spacing) {
                Ok(t) => t,
                Err(Error::NoSignal { .. }) => continue,
                Err(e) => return Err(e),
            };
            let beta = estimate_beta_mag(&r, tau, cfg.symbol_energy, cfg.spacing);
            let variance = toa_crb(&CrbInputs {
                subcarriers: cfg.subcarriers,
                symbols: cfg.symbols,
                symbol_energy: cfg.symbol_energy,
                noise_variance,
                spacing: cfg.spacing,
                beta_mag: beta,
            })?;
            row[block.rx_index] = Some(ToaEstimate {
                delay: tau,
                gain_magnitude: beta,
                delay_variance: variance.max(MIN_DELAY_VARIANCE),
            });
        }
    }
    Ok(ToaGrid { entries })
}
