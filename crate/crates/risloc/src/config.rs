//! Configuration schema, parsing, unit conversion, and scenario
//! materialization.
//!
//! Config files are TOML with sections `[ofdm]`, `[tx]`, `[rx]`, `[ue]`,
//! `[scatterers]`, `[noise]`, and `[experiment]`. Every field has a default
//! (the standard simulation setup: 100 subcarriers at 120 kHz, 32 symbols,
//! 25 dBm transmit power, 1 cm carrier, 256x256 half-wavelength RIS,
//! -174 dBm/Hz noise floor with a 5 dB noise figure), so an empty file is a
//! valid configuration. All dB/dBm quantities are converted to SI here;
//! physics modules only ever see watts, joules, meters, and seconds.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::channel::{OfdmConfig, RxNode, Scatterer, Scenario, UeNode};
use crate::error::{Error, Result};
use crate::geometry::{vec3, RisGeometry, Rotation, Vec3};
use crate::locator::{LocatorOptions, Prior};
use crate::ris::RisProfile;
use crate::{streams, substream};
use rand::Rng;

/// Supported config schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Convert a dBm power to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert a dB ratio to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfdmSection {
    pub subcarriers: usize,
    pub spacing_hz: f64,
    pub symbols: usize,
    pub fft_size: usize,
}

impl Default for OfdmSection {
    fn default() -> Self {
        OfdmSection {
            subcarriers: 100,
            spacing_hz: 120e3,
            symbols: 32,
            fft_size: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TxSection {
    pub position_m: [f64; 3],
    pub power_dbm: f64,
    pub wavelength_m: f64,
}

impl Default for TxSection {
    fn default() -> Self {
        TxSection {
            position_m: [0.0, 0.0, 0.0],
            power_dbm: 25.0,
            wavelength_m: 0.01,
        }
    }
}

/// Receiver placement: explicit positions win over the circle parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RxSection {
    pub count: usize,
    pub radius_m: f64,
    pub z_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions_m: Option<Vec<[f64; 3]>>,
}

impl Default for RxSection {
    fn default() -> Self {
        RxSection {
            count: 3,
            radius_m: 10.0,
            z_m: 1.0,
            positions_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UeSection {
    pub positions_m: Vec<[f64; 3]>,
    pub ris_rows: usize,
    pub ris_cols: usize,
    pub element_spacing_m: f64,
    /// Optional per-user (roll, pitch, yaw) in degrees; identity if omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orientations_euler_deg: Option<Vec<[f64; 3]>>,
}

impl Default for UeSection {
    fn default() -> Self {
        UeSection {
            positions_m: vec![[0.0, 0.0, -3.0]],
            ris_rows: 256,
            ris_cols: 256,
            element_spacing_m: 0.005,
            orientations_euler_deg: None,
        }
    }
}

/// Scatterers are drawn uniformly on a horizontal disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScattererSection {
    pub count: usize,
    pub rcs_m2: f64,
    pub disc_center_m: [f64; 3],
    pub disc_radius_m: f64,
}

impl Default for ScattererSection {
    fn default() -> Self {
        ScattererSection {
            count: 0,
            rcs_m2: 0.1,
            disc_center_m: [0.0, 0.0, -4.0],
            disc_radius_m: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub psd_dbm_hz: f64,
    pub figure_db: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            psd_dbm_hz: -174.0,
            figure_db: 5.0,
        }
    }
}

/// Experiment-driver knobs: seeds, trial counts, sweep axes, solver region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub seed: u64,
    /// Number of random RIS profile draws.
    pub ris_draws: u64,
    /// Noise realizations per RIS draw.
    pub noise_draws: u64,
    pub grid_points_per_axis: usize,
    pub grid_half_extent_m: f64,
    pub grid_z_m: f64,
    /// Receiver-circle radii for the radius sweep.
    pub radii_m: Vec<f64>,
    /// Receiver counts for the count sweep.
    pub rx_counts: Vec<usize>,
    pub scatterer_counts: Vec<usize>,
    /// User x offsets (at y = 0, z = grid_z_m) for the error-CDF experiment.
    pub cdf_ue_x_m: Vec<f64>,
    pub region_min_m: [f64; 3],
    pub region_max_m: [f64; 3],
    /// Break position ambiguities with the knowledge that users sit below
    /// the lowest receiver.
    pub below_rx_prior: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: 1,
            ris_draws: 100,
            noise_draws: 10,
            grid_points_per_axis: 41,
            grid_half_extent_m: 20.0,
            grid_z_m: -3.0,
            radii_m: vec![5.0, 10.0, 20.0, 30.0],
            rx_counts: (3..=10).collect(),
            scatterer_counts: vec![10, 20, 30, 40, 50],
            cdf_ue_x_m: vec![0.0, 10.0, 20.0],
            region_min_m: [-25.0, -25.0, -10.0],
            region_max_m: [25.0, 25.0, -0.5],
            below_rx_prior: true,
        }
    }
}

/// Full simulation configuration. Implements the documented TOML schema;
/// unknown keys anywhere are rejected at parse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub schema_version: SchemaVersion,
    pub ofdm: OfdmSection,
    pub tx: TxSection,
    pub rx: RxSection,
    pub ue: UeSection,
    pub scatterers: ScattererSection,
    pub noise: NoiseSection,
    pub experiment: ExperimentSection,
}

/// Newtype so an omitted `schema_version` defaults to the current version
/// while an explicit wrong one is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaVersion(pub u32);

impl Default for SchemaVersion {
    fn default() -> Self {
        SchemaVersion(SCHEMA_VERSION)
    }
}

impl SimConfig {
    /// Parse a config from TOML text. `origin` labels error messages.
    pub fn from_toml(text: &str, origin: &str) -> Result<SimConfig> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        if cfg.schema_version.0 != SCHEMA_VERSION {
            return Err(Error::ConfigParse {
                path: origin.to_string(),
                message: format!(
                    "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                    cfg.schema_version.0
                ),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Serialize the fully-resolved configuration (defaults included).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Short hash of the resolved configuration for output-file provenance.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Energy per symbol in joules, from `P = K E_s spacing`.
    pub fn symbol_energy(&self) -> f64 {
        dbm_to_watts(self.tx.power_dbm) / (self.ofdm.subcarriers as f64 * self.ofdm.spacing_hz)
    }

    /// Noise PSD in W/Hz (before the noise figure).
    pub fn noise_psd(&self) -> f64 {
        dbm_to_watts(self.noise.psd_dbm_hz)
    }

    fn ofdm_config(&self) -> OfdmConfig {
        OfdmConfig {
            subcarriers: self.ofdm.subcarriers,
            spacing: self.ofdm.spacing_hz,
            symbols: self.ofdm.symbols,
            symbol_energy: self.symbol_energy(),
            fft_size: self.ofdm.fft_size,
        }
    }

    /// Receiver positions: explicit list, or `count` receivers equispaced on
    /// the circle of `radius_m` at height `z_m` centered above the origin.
    pub fn rx_positions(&self) -> Vec<Vec3> {
        match &self.rx.positions_m {
            Some(list) => list.iter().map(|p| vec3(p[0], p[1], p[2])).collect(),
            None => (0..self.rx.count)
                .map(|m| {
                    let ang = std::f64::consts::TAU * m as f64 / self.rx.count as f64;
                    vec3(
                        self.rx.radius_m * ang.cos(),
                        self.rx.radius_m * ang.sin(),
                        self.rx.z_m,
                    )
                })
                .collect(),
        }
    }

    /// Materialize a concrete scenario.
    ///
    /// `ris_seed` selects the random constant phase profiles; `trial_seed`
    /// selects clock biases, scatterer placement, and receiver noise. Calling
    /// twice with the same seeds yields an identical scenario.
    pub fn scenario(&self, ris_seed: u64, trial_seed: u64) -> Result<Scenario> {
        let ofdm = self.ofdm_config();
        let window = ofdm.ambiguity_window();
        let rxs: Vec<RxNode> = self
            .rx_positions()
            .into_iter()
            .enumerate()
            .map(|(m, position)| {
                let mut rng = substream(trial_seed, streams::CLOCK_BIAS, m as u64);
                RxNode {
                    position,
                    clock_bias_delay: rng.random_range(0.0..window),
                }
            })
            .collect();

        let ris = RisGeometry::new(
            self.ue.ris_rows,
            self.ue.ris_cols,
            self.ue.element_spacing_m,
            self.tx.wavelength_m,
        )?;
        if let Some(orients) = &self.ue.orientations_euler_deg {
            if orients.len() != self.ue.positions_m.len() {
                return Err(Error::InvalidConfig(vec![format!(
                    "{} orientations for {} users",
                    orients.len(),
                    self.ue.positions_m.len()
                )]));
            }
        }
        let ues: Vec<UeNode> = self
            .ue
            .positions_m
            .iter()
            .enumerate()
            .map(|(i, p)| -> Result<UeNode> {
                let rotation = match &self.ue.orientations_euler_deg {
                    Some(orients) => {
                        let [roll, pitch, yaw] = orients[i];
                        Rotation::from_euler_zyx(
                            yaw.to_radians(),
                            pitch.to_radians(),
                            roll.to_radians(),
                        )
                    }
                    None => Rotation::identity(),
                };
                Ok(UeNode {
                    position: vec3(p[0], p[1], p[2]),
                    rotation,
                    ris,
                    profile: RisProfile::randomized(
                        i + 1,
                        ofdm.symbols,
                        ris.element_count(),
                        ris_seed,
                    )?,
                })
            })
            .collect::<Result<_>>()?;

        let mut rng = substream(trial_seed, streams::SCATTERER, 0);
        let center = self.scatterers.disc_center_m;
        let scatterers = (0..self.scatterers.count)
            .map(|_| {
                let r = self.scatterers.disc_radius_m * rng.random_range(0.0f64..1.0).sqrt();
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                Scatterer {
                    position: vec3(
                        center[0] + r * ang.cos(),
                        center[1] + r * ang.sin(),
                        center[2],
                    ),
                    rcs: self.scatterers.rcs_m2,
                }
            })
            .collect();

        let s = Scenario {
            tx: vec3(
                self.tx.position_m[0],
                self.tx.position_m[1],
                self.tx.position_m[2],
            ),
            rxs,
            ues,
            scatterers,
            ofdm,
            wavelength: self.tx.wavelength_m,
            noise_psd: self.noise_psd(),
            noise_figure_db: self.noise.figure_db,
            seed: trial_seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Solver options for a materialized scenario: the fallback region from
    /// the experiment section, and the below-the-receivers prior when
    /// enabled.
    pub fn locator_options(&self, s: &Scenario) -> LocatorOptions {
        let prior = if self.experiment.below_rx_prior {
            let min_z = s
                .rxs
                .iter()
                .map(|r| r.position.z)
                .fold(f64::INFINITY, f64::min);
            Prior::BelowZ(min_z)
        } else {
            Prior::Anywhere
        };
        let lo = self.experiment.region_min_m;
        let hi = self.experiment.region_max_m;
        LocatorOptions {
            prior,
            region_min: vec3(lo[0], lo[1], lo[2]),
            region_max: vec3(hi[0], hi[1], hi[2]),
            ..LocatorOptions::default()
        }
    }
}
