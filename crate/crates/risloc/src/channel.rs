//! Frequency-domain received-signal synthesis.
//!
//! Each receiver observes a `K x T` matrix (subcarriers by OFDM symbols)
//! that is a sum of rank-1 path contributions plus noise: the direct
//! transmitter-receiver path, one RIS-reflected path per user, and a static
//! term per scatterer. A path at delay `tau` contributes the subcarrier
//! phasor `d(tau)` times the per-symbol gain row; for RIS paths the gain row
//! factors into a constant reflection coefficient times the user's temporal
//! code, which is what the estimator's code projection relies on.

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::{
    angles_of, bistatic_range, local_direction, AnglePair, RisGeometry, Rotation, Vec3,
};
use crate::ris::{ProfileSet, RisProfile};
use crate::{streams, substream, SPEED_OF_LIGHT};

/// Exponent of the angular factor in the RIS path-gain model.
const ANGULAR_GAIN_EXPONENT: f64 = 0.285;

/// OFDM numerology and estimation FFT size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmConfig {
    /// Number of subcarriers `K`.
    pub subcarriers: usize,
    /// Subcarrier spacing in Hz.
    pub spacing: f64,
    /// Number of OFDM symbols `T` per localization occasion.
    pub symbols: usize,
    /// Energy per symbol in joules.
    pub symbol_energy: f64,
    /// FFT length used for delay estimation (>= `subcarriers`).
    pub fft_size: usize,
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.subcarriers < 2 {
            problems.push("need at least 2 subcarriers".to_string());
        }
        if self.symbols < 1 {
            problems.push("need at least 1 symbol".to_string());
        }
        if !(self.spacing > 0.0) {
            problems.push("subcarrier spacing must be positive".to_string());
        }
        if !(self.symbol_energy > 0.0) {
            problems.push("symbol energy must be positive".to_string());
        }
        if self.fft_size < self.subcarriers {
            problems.push(format!(
                "estimation FFT size {} is smaller than the subcarrier count {}",
                self.fft_size, self.subcarriers
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    /// Delay ambiguity window `1 / spacing` in seconds: delays are only
    /// identifiable modulo this value.
    pub fn ambiguity_window(&self) -> f64 {
        1.0 / self.spacing
    }
}

/// A receiver with a known position and an unknown-to-the-estimator clock
/// bias, stored as a delay in `[0, 1/spacing)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxNode {
    pub position: Vec3,
    pub clock_bias_delay: f64,
}

/// A point scatterer re-radiating the direct transmitter signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: Vec3,
    /// Radar cross section in square meters.
    pub rcs: f64,
}

/// A user: unknown position (known here, as simulation ground truth), RIS
/// orientation, array geometry, and phase profile.
#[derive(Debug, Clone)]
pub struct UeNode {
    pub position: Vec3,
    pub rotation: Rotation,
    pub ris: RisGeometry,
    pub profile: RisProfile,
}

/// Full world description for one localization occasion.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub tx: Vec3,
    pub rxs: Vec<RxNode>,
    pub ues: Vec<UeNode>,
    pub scatterers: Vec<Scatterer>,
    pub ofdm: OfdmConfig,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Noise power spectral density in W/Hz (SI, not dBm).
    pub noise_psd: f64,
    pub noise_figure_db: f64,
    /// Seed for the noise substreams drawn in [`synthesize`].
    pub seed: u64,
}

impl Scenario {
    /// Effective per-sample noise variance: the PSD raised by the noise
    /// figure.
    pub fn noise_variance(&self) -> f64 {
        self.noise_psd * 10f64.powf(self.noise_figure_db / 10.0)
    }

    /// The temporal codes of all paths, including the static reference.
    pub fn profile_set(&self) -> Result<ProfileSet> {
        ProfileSet::from_profiles(
            self.ues.iter().map(|u| u.profile.clone()).collect(),
            self.ofdm.symbols,
        )
    }

    pub fn num_rxs(&self) -> usize {
        self.rxs.len()
    }

    pub fn num_ues(&self) -> usize {
        self.ues.len()
    }

    /// Check every scenario invariant, collecting all violations.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(Error::InvalidConfig(p)) = self.ofdm.validate() {
            problems.extend(p);
        }
        if self.rxs.is_empty() {
            problems.push("need at least one receiver".to_string());
        }
        if self.ues.len() >= self.ofdm.symbols {
            problems.push(format!(
                "{} users need at least {} symbols for orthogonal codes (have {})",
                self.ues.len(),
                self.ues.len() + 1,
                self.ofdm.symbols
            ));
        }
        if !(self.wavelength > 0.0) {
            problems.push("wavelength must be positive".to_string());
        }
        if self.noise_psd < 0.0 {
            problems.push("noise PSD must be non-negative".to_string());
        }
        let window = self.ofdm.ambiguity_window();
        for (m, rx) in self.rxs.iter().enumerate() {
            if !(0.0..window).contains(&rx.clock_bias_delay) {
                problems.push(format!(
                    "receiver {m} clock bias delay {} outside [0, {window})",
                    rx.clock_bias_delay
                ));
            }
            if rx.position == self.tx {
                problems.push(format!("receiver {m} coincides with the transmitter"));
            }
        }
        let mut seen_codes = std::collections::HashSet::new();
        for (i, ue) in self.ues.iter().enumerate() {
            if ue.position == self.tx {
                problems.push(format!("user {i} coincides with the transmitter"));
            }
            for (m, rx) in self.rxs.iter().enumerate() {
                if ue.position == rx.position {
                    problems.push(format!("user {i} coincides with receiver {m}"));
                }
            }
            if let Err(e) = ue.ris.validate() {
                problems.push(format!("user {i}: {e}"));
            }
            if ue.ris.wavelength != self.wavelength {
                problems.push(format!(
                    "user {i} RIS wavelength {} differs from the carrier wavelength {}",
                    ue.ris.wavelength, self.wavelength
                ));
            }
            if ue.profile.elements() != ue.ris.element_count() {
                problems.push(format!(
                    "user {i} profile has {} entries for a {}-element RIS",
                    ue.profile.elements(),
                    ue.ris.element_count()
                ));
            }
            if !seen_codes.insert(ue.profile.ue_index) {
                problems.push(format!(
                    "code index {} assigned to more than one user",
                    ue.profile.ue_index
                ));
            }
            if let Err(e) = ue.profile.validate() {
                problems.push(format!("user {i}: {e}"));
            }
        }
        for (i, sc) in self.scatterers.iter().enumerate() {
            if !(sc.rcs > 0.0) {
                problems.push(format!(
                    "scatterer {i} radar cross section must be positive"
                ));
            }
        }
        if let Err(e) = self.profile_set() {
            problems.push(format!("profile set: {e}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Frequency-domain observation at one receiver: `K x T` complex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RxSignalBlock {
    pub rx_index: usize,
    pub samples: DMatrix<Complex64>,
}

/// Identifies one propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathId {
    /// Direct transmitter-to-receiver path.
    Los { rx: usize },
    /// Transmitter-RIS-receiver path of user `ue` (1-based path index).
    Nlos { ue: usize, rx: usize },
}

/// Subcarrier phasor of a path delay: entries `exp(j 2 pi k spacing tau)` for
/// `k = 0..subcarriers`. Periodic in `tau` with period `1 / spacing`.
pub fn delay_phasor(tau: f64, subcarriers: usize, spacing: f64) -> DVector<Complex64> {
    DVector::from_iterator(
        subcarriers,
        (0..subcarriers).map(|k| Complex64::from_polar(1.0, TAU * k as f64 * spacing * tau)),
    )
}

/// Propagation delay of a path, including the receiver clock bias.
pub fn path_delay(path: PathId, s: &Scenario) -> Result<f64> {
    let rx_of = |m: usize| -> Result<&RxNode> {
        s.rxs
            .get(m)
            .ok_or_else(|| Error::IndexOutOfRange(format!("receiver {m}")))
    };
    match path {
        PathId::Los { rx } => {
            let node = rx_of(rx)?;
            Ok((s.tx - node.position).norm() / SPEED_OF_LIGHT + node.clock_bias_delay)
        }
        PathId::Nlos { ue, rx } => {
            let node = rx_of(rx)?;
            let ue_node =
                s.ues
                    .get(ue.checked_sub(1).ok_or_else(|| {
                        Error::IndexOutOfRange("NLOS path indices start at 1".into())
                    })?)
                    .ok_or_else(|| Error::IndexOutOfRange(format!("user path {ue}")))?;
            Ok(
                bistatic_range(ue_node.position, s.tx, node.position) / SPEED_OF_LIGHT
                    + node.clock_bias_delay,
            )
        }
    }
}

/// Direct-path gain from the free-space link budget with unit directivities:
/// magnitude `lambda / (4 pi d)`, phase `-2 pi d / lambda`.
pub fn los_gain(p0: Vec3, pm: Vec3, wavelength: f64) -> Result<Complex64> {
    let d = (p0 - pm).norm();
    if d == 0.0 {
        return Err(Error::DegenerateGeometry(
            "transmitter and receiver coincide".into(),
        ));
    }
    Ok(Complex64::from_polar(
        wavelength / (4.0 * PI * d),
        -TAU * d / wavelength,
    ))
}

/// Two-hop amplitude gain of a RIS path (excluding the array factor):
/// `lambda^2 (cos theta_el cos phi_el)^0.285 / (16 pi d_tx d_rx)`, where the
/// elevations are measured from the RIS normal in its local frame.
pub fn nlos_gain(
    p0: Vec3,
    ue: Vec3,
    pm: Vec3,
    theta_el: f64,
    phi_el: f64,
    wavelength: f64,
) -> Result<f64> {
    let d_tx = (p0 - ue).norm();
    let d_rx = (pm - ue).norm();
    if d_tx == 0.0 || d_rx == 0.0 {
        return Err(Error::DegenerateGeometry(
            "user coincides with the transmitter or a receiver".into(),
        ));
    }
    let cos_theta = theta_el.cos();
    let cos_phi = phi_el.cos();
    if cos_theta <= 0.0 || cos_phi <= 0.0 {
        return Err(Error::ShadowedPath {
            angular_factor: cos_theta * cos_phi,
        });
    }
    Ok(
        wavelength * wavelength * (cos_theta * cos_phi).powf(ANGULAR_GAIN_EXPONENT)
            / (16.0 * PI * d_tx * d_rx),
    )
}

/// Array factor of the RIS between departure angle `theta` and arrival angle
/// `phi` under the constant profile `omega`: the quadratic form
/// `a(theta)^T diag(omega) a(phi)`.
///
/// Evaluated through the row/column factorization of the steering vectors,
/// which needs `rows + cols` phasor constructions instead of `2 W`.
pub fn ris_reflection_factor(
    theta: AnglePair,
    phi: AnglePair,
    g: &RisGeometry,
    omega: &[Complex64],
) -> Complex64 {
    debug_assert_eq!(omega.len(), g.element_count());
    let rows: Vec<Complex64> = crate::geometry::steering_rows(theta, g)
        .iter()
        .zip(crate::geometry::steering_rows(phi, g))
        .map(|(a, b)| a * b)
        .collect();
    let cols: Vec<Complex64> = crate::geometry::steering_cols(theta, g)
        .iter()
        .zip(crate::geometry::steering_cols(phi, g))
        .map(|(a, b)| a * b)
        .collect();
    let mut total = Complex64::ZERO;
    for (r, ur) in rows.iter().enumerate() {
        let base = r * g.cols;
        let mut row_sum = Complex64::ZERO;
        for (c, uc) in cols.iter().enumerate() {
            row_sum += omega[base + c] * uc;
        }
        total += ur * row_sum;
    }
    total
}

/// Ground-truth gain and delay of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTruth {
    /// Path delay in seconds, clock bias included.
    pub delay: f64,
    /// Constant per-symbol gain: the direct gain for path 0, the reflection
    /// coefficient `beta` for RIS paths.
    pub gain: Complex64,
}

/// Ground truth of every path in a scenario, indexed `[path][rx]` with path 0
/// the direct one. `None` marks a shadowed RIS path.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    paths: Vec<Vec<Option<PathTruth>>>,
}

impl GroundTruth {
    pub fn path(&self, n: usize, m: usize) -> Option<&PathTruth> {
        self.paths.get(n).and_then(|row| row[m].as_ref())
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn num_rxs(&self) -> usize {
        self.paths.first().map_or(0, Vec::len)
    }
}

/// Reflection coefficient of user `ue`'s path to receiver `rx`, i.e. the
/// two-hop gain times the RIS array factor under the constant profile part.
fn nlos_beta(s: &Scenario, ue: usize, rx: usize) -> Result<Complex64> {
    let ue_node = &s.ues[ue - 1];
    let rx_node = &s.rxs[rx];
    let w = local_direction(&ue_node.rotation, rx_node.position, ue_node.position)?;
    let v = local_direction(&ue_node.rotation, s.tx, ue_node.position)?;
    let theta = angles_of(w)?;
    let phi = angles_of(v)?;
    let amplitude = nlos_gain(
        s.tx,
        ue_node.position,
        rx_node.position,
        theta.elevation,
        phi.elevation,
        s.wavelength,
    )?;
    Ok(amplitude * ris_reflection_factor(theta, phi, &ue_node.ris, &ue_node.profile.constant))
}

/// Compute gain and delay of every path. Shadowed RIS paths are dropped
/// (marked `None`); all other errors propagate.
pub fn ground_truth(s: &Scenario) -> Result<GroundTruth> {
    let mut paths = Vec::with_capacity(s.num_ues() + 1);
    let los: Vec<Option<PathTruth>> = s
        .rxs
        .iter()
        .enumerate()
        .map(|(m, rx)| -> Result<Option<PathTruth>> {
            Ok(Some(PathTruth {
                delay: path_delay(PathId::Los { rx: m }, s)?,
                gain: los_gain(s.tx, rx.position, s.wavelength)?,
            }))
        })
        .collect::<Result<_>>()?;
    paths.push(los);
    for n in 1..=s.num_ues() {
        let row: Vec<Option<PathTruth>> = (0..s.num_rxs())
            .map(|m| -> Result<Option<PathTruth>> {
                match nlos_beta(s, n, m) {
                    Ok(gain) => Ok(Some(PathTruth {
                        delay: path_delay(PathId::Nlos { ue: n, rx: m }, s)?,
                        gain,
                    })),
                    Err(Error::ShadowedPath { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        paths.push(row);
    }
    Ok(GroundTruth { paths })
}

/// Per-symbol gains of user `n`'s path to receiver `m`: the reflection
/// coefficient times the user's temporal code.
pub fn nlos_symbol_gains(n: usize, m: usize, s: &Scenario) -> Result<Vec<Complex64>> {
    if n == 0 || n > s.num_ues() {
        return Err(Error::IndexOutOfRange(format!("user path {n}")));
    }
    if m >= s.num_rxs() {
        return Err(Error::IndexOutOfRange(format!("receiver {m}")));
    }
    let beta = nlos_beta(s, n, m)?;
    Ok(s.ues[n - 1]
        .profile
        .temporal
        .iter()
        .map(|w| beta * w)
        .collect())
}

/// Amplitude gain of a scatterer path from the radar range equation:
/// magnitude `sqrt(lambda^2 rcs / ((4 pi)^3 d1^2 d2^2))`, phase from the
/// traveled distance.
pub fn scatterer_gain(p0: Vec3, sc: Vec3, pm: Vec3, wavelength: f64, rcs: f64) -> Complex64 {
    let d1 = (p0 - sc).norm();
    let d2 = (sc - pm).norm();
    let mag = (wavelength * wavelength * rcs / ((4.0 * PI).powi(3) * d1 * d1 * d2 * d2)).sqrt();
    Complex64::from_polar(mag, -TAU * (d1 + d2) / wavelength)
}

/// Sum of all scatterer contributions at receiver `m`: static rank-1 terms at
/// the scatterers' bistatic delays, `sqrt(E_s)` included.
pub fn scatterer_terms(s: &Scenario, m: usize) -> DMatrix<Complex64> {
    let k = s.ofdm.subcarriers;
    let t = s.ofdm.symbols;
    let mut out = DMatrix::zeros(k, t);
    let rx = &s.rxs[m];
    let amp = s.ofdm.symbol_energy.sqrt();
    for sc in &s.scatterers {
        let gain = scatterer_gain(s.tx, sc.position, rx.position, s.wavelength, sc.rcs);
        let delay =
            bistatic_range(sc.position, s.tx, rx.position) / SPEED_OF_LIGHT + rx.clock_bias_delay;
        let phasor = delay_phasor(delay, k, s.ofdm.spacing);
        let row = RowDVector::from_element(t, gain * amp);
        out += phasor * row;
    }
    out
}

/// Synthesize the frequency-domain observation at every receiver:
/// deterministic path terms plus i.i.d. circularly-symmetric Gaussian noise
/// with per-element variance [`Scenario::noise_variance`]. Deterministic
/// given the scenario (noise comes from per-receiver substreams of
/// `scenario.seed`).
pub fn synthesize(s: &Scenario) -> Result<Vec<RxSignalBlock>> {
    let truth = ground_truth(s)?;
    let k = s.ofdm.subcarriers;
    let t = s.ofdm.symbols;
    let amp = s.ofdm.symbol_energy.sqrt();
    let noise_var = s.noise_variance();
    let mut blocks = Vec::with_capacity(s.num_rxs());
    for m in 0..s.num_rxs() {
        let mut samples: DMatrix<Complex64> = DMatrix::zeros(k, t);
        for n in 0..=s.num_ues() {
            let Some(path) = truth.path(n, m) else {
                continue;
            };
            let phasor = delay_phasor(path.delay, k, s.ofdm.spacing);
            let gains: RowDVector<Complex64> = if n == 0 {
                RowDVector::from_element(t, path.gain * amp)
            } else {
                RowDVector::from_iterator(
                    t,
                    s.ues[n - 1]
                        .profile
                        .temporal
                        .iter()
                        .map(|w| path.gain * w * amp),
                )
            };
            samples += phasor * gains;
        }
        if !s.scatterers.is_empty() {
            samples += scatterer_terms(s, m);
        }
        if noise_var > 0.0 {
            let sigma = (noise_var / 2.0).sqrt();
            let mut rng = substream(s.seed, streams::RX_NOISE, m as u64);
            for z in samples.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *z += Complex64::new(re * sigma, im * sigma);
            }
        }
        blocks.push(RxSignalBlock {
            rx_index: m,
            samples,
        });
    }
    Ok(blocks)
}
