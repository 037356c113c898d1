//! Per-user RIS phase profiles.
//!
//! Each user's RIS applies a profile that factors into a constant diagonal
//! part (drawn uniformly from the unit circle when no prior location is
//! available) and a time-varying unit-modulus scalar sequence. Choosing the
//! temporal sequences as distinct DFT columns makes them mutually orthogonal
//! and orthogonal to the all-ones sequence, which is what lets a receiver
//! separate the per-user reflections and the static clutter from each other.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::{streams, substream};

/// Orthogonality tolerance for temporal codes, relative to the sequence
/// length `T`.
pub const ORTHOGONALITY_TOL: f64 = 1e-9;

/// Phase profile of one user's RIS: a constant unit-modulus vector over the
/// `W` elements plus a temporal unit-modulus code over the `T` symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct RisProfile {
    /// User index `n >= 1`; the code slot 0 is reserved for the static
    /// (direct-path) reference.
    pub ue_index: usize,
    /// Diagonal of the constant profile part, length `W`.
    pub constant: Vec<Complex64>,
    /// Temporal code, length `T`.
    pub temporal: Vec<Complex64>,
}

impl RisProfile {
    /// Profile for user `n` in `1..symbols`: DFT column `n` as the temporal
    /// code and `elements` random unit-circle entries as the constant part.
    pub fn randomized(ue_index: usize, symbols: usize, elements: usize, seed: u64) -> Result<Self> {
        if ue_index == 0 {
            return Err(Error::IndexOutOfRange(
                "user profiles start at index 1; code 0 is the static reference".into(),
            ));
        }
        let temporal = dft_sequence(ue_index, symbols)?;
        let mut rng = substream(seed, streams::RIS_CONSTANT, ue_index as u64);
        Ok(RisProfile {
            ue_index,
            constant: random_unit_entries(elements, &mut rng),
            temporal,
        })
    }

    pub fn symbols(&self) -> usize {
        self.temporal.len()
    }

    pub fn elements(&self) -> usize {
        self.constant.len()
    }

    /// Check unit-modulus entries and orthogonality of the temporal code to
    /// the all-ones sequence.
    pub fn validate(&self) -> Result<()> {
        let t = self.symbols() as f64;
        for z in self.constant.iter().chain(self.temporal.iter()) {
            if (z.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(vec![format!(
                    "RIS profile {} has a non-unit-modulus entry ({z})",
                    self.ue_index
                )]));
            }
        }
        let static_overlap: Complex64 = self.temporal.iter().map(|z| z.conj()).sum();
        if static_overlap.norm() > ORTHOGONALITY_TOL * t {
            return Err(Error::InvalidConfig(vec![format!(
                "RIS profile {} temporal code is not orthogonal to the all-ones sequence \
                 (|1^T w*| = {:.3e})",
                self.ue_index,
                static_overlap.norm()
            )]));
        }
        Ok(())
    }
}

/// The full set of temporal codes for one localization occasion: the static
/// reference code (all ones, slot 0) plus one [`RisProfile`] per user.
#[derive(Debug, Clone)]
pub struct ProfileSet {
    symbols: usize,
    reference_code: Vec<Complex64>,
    profiles: Vec<RisProfile>,
}

impl ProfileSet {
    /// Build profiles for users `1..=n_ues` with random constant parts drawn
    /// from `seed`. Requires `n_ues < symbols` so that `n_ues + 1` orthogonal
    /// codes exist.
    pub fn with_random_constants(
        n_ues: usize,
        symbols: usize,
        elements: usize,
        seed: u64,
    ) -> Result<Self> {
        let profiles = (1..=n_ues)
            .map(|n| RisProfile::randomized(n, symbols, elements, seed))
            .collect::<Result<Vec<_>>>()?;
        Self::from_profiles(profiles, symbols)
    }

    /// Assemble a set from explicit profiles, checking pairwise orthogonality
    /// of all codes (including the static reference).
    pub fn from_profiles(profiles: Vec<RisProfile>, symbols: usize) -> Result<Self> {
        if profiles.len() >= symbols {
            return Err(Error::CodeCapacity {
                index: profiles.len(),
                symbols,
            });
        }
        for p in &profiles {
            if p.symbols() != symbols {
                return Err(Error::InvalidConfig(vec![format!(
                    "profile {} has {} symbols, expected {}",
                    p.ue_index,
                    p.symbols(),
                    symbols
                )]));
            }
            p.validate()?;
        }
        let set = ProfileSet {
            symbols,
            reference_code: vec![Complex64::ONE; symbols],
            profiles,
        };
        set.check_orthogonality()?;
        Ok(set)
    }

    fn check_orthogonality(&self) -> Result<()> {
        let t = self.symbols as f64;
        let n_codes = self.num_ues() + 1;
        for a in 0..n_codes {
            for b in a..n_codes {
                let inner: Complex64 = self
                    .code(a)
                    .iter()
                    .zip(self.code(b).iter())
                    .map(|(x, y)| x.conj() * y)
                    .sum();
                let expected = if a == b { t } else { 0.0 };
                if (inner.norm() - expected).abs() > ORTHOGONALITY_TOL * t {
                    return Err(Error::InvalidConfig(vec![format!(
                        "codes {a} and {b} are not orthogonal (|w_a^H w_b| = {:.3e})",
                        inner.norm()
                    )]));
                }
            }
        }
        Ok(())
    }

    /// Number of users (codes excluding the static reference).
    pub fn num_ues(&self) -> usize {
        self.profiles.len()
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    /// Temporal code for path `n`: the all-ones reference for `n = 0`, the
    /// user's code otherwise.
    pub fn code(&self, n: usize) -> &[Complex64] {
        if n == 0 {
            &self.reference_code
        } else {
            &self.profiles[n - 1].temporal
        }
    }

    /// Profile of user `n >= 1`.
    pub fn profile(&self, n: usize) -> &RisProfile {
        &self.profiles[n - 1]
    }
}

/// Column `n` of the `T x T` DFT matrix: entries `exp(-j 2 pi l n / T)` for
/// `l = 0..T`. Column 0 is the all-ones sequence.
pub fn dft_sequence(n: usize, symbols: usize) -> Result<Vec<Complex64>> {
    if n >= symbols {
        return Err(Error::CodeCapacity { index: n, symbols });
    }
    Ok((0..symbols)
        .map(|l| Complex64::from_polar(1.0, -TAU * (l * n) as f64 / symbols as f64))
        .collect())
}

fn random_unit_entries(count: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    (0..count)
        .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..TAU)))
        .collect()
}

/// `count` unit-circle entries drawn deterministically from `seed`.
pub fn random_constant_profile(count: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_unit_entries(count, &mut rng)
}

/// Profile applied at symbol `t`: the constant part scaled by the temporal
/// code entry.
pub fn profile_at(profile: &RisProfile, t: usize) -> Result<Vec<Complex64>> {
    let scale = *profile.temporal.get(t).ok_or_else(|| {
        Error::IndexOutOfRange(format!(
            "symbol {t} out of range for a {}-symbol profile",
            profile.symbols()
        ))
    })?;
    Ok(profile.constant.iter().map(|z| z * scale).collect())
}
