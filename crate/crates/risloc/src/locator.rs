//! Position estimation from per-path delay estimates.
//!
//! Differencing each user path's delay against the direct path at the same
//! receiver cancels that receiver's clock bias and, after scaling by the
//! speed of light and adding the known transmitter-receiver distance, yields
//! a bistatic range: the user lies on an ellipsoid with the transmitter and
//! that receiver as foci. Intersecting at least three ellipsoids fixes the
//! position. A closed-form linearization provides the initial guess (two
//! candidates in general), and damped Gauss-Newton minimization of the
//! covariance-weighted residual refines it.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::bounds::tdoa_covariance;
use crate::channel::Scenario;
use crate::error::{Error, Result};
use crate::geometry::{bistatic_gradient, bistatic_range, vec3, Vec3};
use crate::toa::ToaGrid;
use crate::SPEED_OF_LIGHT;

/// Bias-free bistatic-range measurements of one user, restricted to the
/// receivers where both the user path and the direct reference were usable.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaVector {
    pub ue_index: usize,
    /// Receivers contributing a row, in ascending order.
    pub rx_indices: Vec<usize>,
    /// Bistatic ranges in meters. Noise permitting, each entry is at least
    /// the transmitter-receiver distance of its row.
    pub measurements: DVector<f64>,
    /// Diagonal of the measurement covariance, meters^2.
    pub variances: DVector<f64>,
}

/// Output of one position solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub position: Vec3,
    /// Weighted squared residual at `position`.
    pub objective: f64,
    /// Initial guess the refinement started from.
    pub init: Vec3,
    pub converged: bool,
}

/// Region admitting a position candidate when geometry alone cannot decide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    /// No prior information.
    Anywhere,
    /// The user is known to sit below this height (e.g. below the receiver
    /// plane).
    BelowZ(f64),
}

impl Prior {
    pub fn admits(&self, x: Vec3) -> bool {
        match self {
            Prior::Anywhere => true,
            Prior::BelowZ(z) => x.z < *z,
        }
    }
}

/// Solver knobs: ambiguity prior and the multistart fallback region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocatorOptions {
    pub prior: Prior,
    /// Corners of the fallback search box.
    pub region_min: Vec3,
    pub region_max: Vec3,
    /// Grid points per axis for the multistart fallback.
    pub starts_per_axis: usize,
}

impl Default for LocatorOptions {
    fn default() -> Self {
        LocatorOptions {
            prior: Prior::Anywhere,
            region_min: vec3(-25.0, -25.0, -10.0),
            region_max: vec3(25.0, 25.0, -0.5),
            starts_per_axis: 5,
        }
    }
}

const MAX_ITERS: usize = 100;
const GRAD_TOL: f64 = 1e-9;
const STEP_TOL: f64 = 1e-12;
/// Objective ratio above which the better ambiguity candidate wins outright.
const DOMINANCE_FACTOR: f64 = 100.0;

/// Difference user path `n` against the direct path at each receiver,
/// producing bistatic-range measurements with their covariance diagonal.
///
/// Estimated delays live in `[0, 1/spacing)`, so the raw difference may wrap
/// negative; it is lifted by one ambiguity window in that case, which is the
/// physical branch because the reflected path is never shorter than the
/// direct one. Receivers missing either estimate are skipped; fewer than
/// three usable rows cannot fix a 3D position.
pub fn form_tdoa(estimates: &ToaGrid, n: usize, s: &Scenario) -> Result<TdoaVector> {
    if n == 0 || n >= estimates.num_paths() {
        return Err(Error::IndexOutOfRange(format!("user path {n}")));
    }
    let window = s.ofdm.ambiguity_window();
    let mut rx_indices = Vec::new();
    let mut measurements = Vec::new();
    let mut variances = Vec::new();
    for m in 0..estimates.num_rxs() {
        let (Some(path), Some(reference)) = (estimates.get(n, m), estimates.get(0, m)) else {
            continue;
        };
        let mut diff = path.delay - reference.delay;
        if diff < 0.0 {
            diff += window;
        }
        let direct = (s.tx - s.rxs[m].position).norm();
        rx_indices.push(m);
        measurements.push(SPEED_OF_LIGHT * diff + direct);
        variances.push(tdoa_covariance(
            path.delay_variance,
            reference.delay_variance,
        ));
    }
    if rx_indices.len() < 3 {
        return Err(Error::UnderDetermined {
            usable: rx_indices.len(),
        });
    }
    Ok(TdoaVector {
        ue_index: n,
        rx_indices,
        measurements: DVector::from_vec(measurements),
        variances: DVector::from_vec(variances),
    })
}

/// Covariance-weighted squared residual of the bistatic-range model at `x`.
pub fn tdoa_objective(x: Vec3, delta: &TdoaVector, s: &Scenario) -> f64 {
    delta
        .rx_indices
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let r = delta.measurements[i] - bistatic_range(x, s.tx, s.rxs[m].position);
            r * r / delta.variances[i]
        })
        .sum()
}

/// Real positive roots of `a2 s^2 + a1 s + a0 = 0`, degenerating to the
/// linear case when `a2` vanishes.
fn positive_roots(a2: f64, a1: f64, a0: f64) -> Result<Vec<f64>> {
    if a2.abs() < 1e-300 {
        if a1 == 0.0 {
            return Err(Error::InitFailure("degenerate norm equation".into()));
        }
        let s = -a0 / a1;
        return Ok(if s > 0.0 { vec![s] } else { vec![] });
    }
    let disc = a1 * a1 - 4.0 * a2 * a0;
    if disc < 0.0 {
        return Err(Error::InitFailure(format!(
            "negative discriminant {disc:e} in the norm equation"
        )));
    }
    // Numerically stable pairing: compute the larger-magnitude root first.
    let q = -0.5 * (a1 + a1.signum() * disc.sqrt());
    let mut roots = vec![];
    for s in [q / a2, if q != 0.0 { a0 / q } else { 0.0 }] {
        if s > 0.0 && s.is_finite() && !roots.iter().any(|r: &f64| (r - s).abs() < 1e-9 * s) {
            roots.push(s);
        }
    }
    Ok(roots)
}

/// Closed-form position candidates from the linearized ellipsoid system.
///
/// With the transmitter translated to the origin, squaring
/// `||x - q_m|| = delta_m - ||x||` turns each measurement into a linear
/// equation `q_m^T x = (||q_m||^2 - delta_m^2)/2 + delta_m ||x||`. Solving
/// the stacked system by least squares for fixed `||x||` gives
/// `x = a + b ||x||`; substituting back yields a quadratic in `||x||` whose
/// positive roots produce the candidates (two in general).
pub fn closed_form_init(delta: &TdoaVector, s: &Scenario) -> Result<Vec<Vec3>> {
    let m_rows = delta.rx_indices.len();
    if m_rows < 3 {
        return Err(Error::UnderDetermined { usable: m_rows });
    }
    let mut p = DMatrix::zeros(m_rows, 3);
    let mut z = DVector::zeros(m_rows);
    for (i, &m) in delta.rx_indices.iter().enumerate() {
        let q = s.rxs[m].position - s.tx;
        p.set_row(i, &q.transpose());
        z[i] = 0.5 * (q.norm_squared() - delta.measurements[i] * delta.measurements[i]);
    }
    let ptp: Matrix3<f64> = (p.transpose() * &p).fixed_view::<3, 3>(0, 0).into_owned();
    let inv = ptp.try_inverse().ok_or_else(|| {
        Error::DegenerateGeometry("receiver directions span fewer than 3 dimensions".into())
    })?;
    let pt_z = p.transpose() * &z;
    let pt_d = p.transpose() * &delta.measurements;
    let a = inv * Vector3::new(pt_z[0], pt_z[1], pt_z[2]);
    let b = inv * Vector3::new(pt_d[0], pt_d[1], pt_d[2]);

    let roots = positive_roots(b.norm_squared() - 1.0, 2.0 * a.dot(&b), a.norm_squared())?;
    if roots.is_empty() {
        return Err(Error::InitFailure(
            "no positive-norm solution of the linearized system".into(),
        ));
    }
    Ok(roots.into_iter().map(|r| s.tx + a + b * r).collect())
}

/// Pick one initial guess out of the closed-form candidates: a candidate
/// whose residual beats the runner-up by [`DOMINANCE_FACTOR`] wins; otherwise
/// the prior region decides; if it admits none or several of the comparable
/// candidates, the ambiguity is surfaced as an error.
pub fn resolve_ambiguity(
    candidates: &[Vec3],
    delta: &TdoaVector,
    s: &Scenario,
    prior: Prior,
) -> Result<Vec3> {
    match candidates {
        [] => Err(Error::InitFailure("no candidates to choose from".into())),
        [only] => Ok(*only),
        _ => {
            let mut scored: Vec<(f64, Vec3)> = candidates
                .iter()
                .map(|x| (tdoa_objective(*x, delta, s), *x))
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0));
            if scored[0].0 * DOMINANCE_FACTOR <= scored[1].0 {
                return Ok(scored[0].1);
            }
            let admitted: Vec<&(f64, Vec3)> =
                scored.iter().filter(|(_, x)| prior.admits(*x)).collect();
            match admitted.as_slice() {
                [one] => Ok(one.1),
                _ => Err(Error::AmbiguousGeometry {
                    objective_a: scored[0].0,
                    objective_b: scored[1].0,
                }),
            }
        }
    }
}

/// Minimize the weighted bistatic-range residual by damped Gauss-Newton
/// (Levenberg-style: the normal equations are regularized and the damping
/// grows until a step decreases the objective, so the objective never
/// increases across iterations). Terminates on gradient norm, step size, or
/// the iteration cap; `converged` records whether a tolerance was met.
pub fn refine_ml(init: Vec3, delta: &TdoaVector, s: &Scenario) -> Result<PositionEstimate> {
    if !init.iter().all(|c| c.is_finite()) {
        return Err(Error::InitFailure("non-finite initial guess".into()));
    }
    let mut x = init;
    let mut f = tdoa_objective(x, delta, s);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        // Gradient and Gauss-Newton normal matrix of the weighted residual.
        let mut jtj = Matrix3::<f64>::zeros();
        let mut g = Vec3::zeros();
        for (i, &m) in delta.rx_indices.iter().enumerate() {
            let anchor = s.rxs[m].position;
            let h = bistatic_gradient(x, s.tx, anchor)?;
            let r = delta.measurements[i] - bistatic_range(x, s.tx, anchor);
            let w = 1.0 / delta.variances[i];
            jtj += h * h.transpose() * w;
            g += -2.0 * w * r * h;
        }
        if g.norm() <= GRAD_TOL {
            converged = true;
            break;
        }
        let mut stepped = false;
        for _ in 0..25 {
            let damped = jtj + Matrix3::identity() * (lambda * jtj.trace() / 3.0);
            let Some(inv) = damped.try_inverse() else {
                lambda *= 10.0;
                continue;
            };
            let step = -(inv * g) * 0.5;
            let cand = x + step;
            let fc = tdoa_objective(cand, delta, s);
            if fc < f {
                x = cand;
                f = fc;
                lambda = (lambda / 3.0).max(1e-12);
                stepped = true;
                if step.norm() < STEP_TOL {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            // No damping level produced a decrease: numerically at a minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Ok(PositionEstimate {
        position: x,
        objective: f,
        init,
        converged,
    })
}

/// Multistart fallback: refine from a coarse grid over the configured region
/// and keep the best objective, preferring results the prior admits.
fn multistart(delta: &TdoaVector, s: &Scenario, opts: &LocatorOptions) -> Result<PositionEstimate> {
    let steps = opts.starts_per_axis.max(2);
    let lerp = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (steps - 1) as f64;
    let mut best: Option<PositionEstimate> = None;
    let mut best_admitted: Option<PositionEstimate> = None;
    for i in 0..steps {
        for j in 0..steps {
            for k in 0..steps {
                let start = vec3(
                    lerp(opts.region_min.x, opts.region_max.x, i),
                    lerp(opts.region_min.y, opts.region_max.y, j),
                    lerp(opts.region_min.z, opts.region_max.z, k),
                );
                let Ok(est) = refine_ml(start, delta, s) else {
                    continue;
                };
                if best.as_ref().is_none_or(|b| est.objective < b.objective) {
                    best = Some(est);
                }
                if opts.prior.admits(est.position)
                    && best_admitted
                        .as_ref()
                        .is_none_or(|b| est.objective < b.objective)
                {
                    best_admitted = Some(est);
                }
            }
        }
    }
    best_admitted
        .or(best)
        .ok_or_else(|| Error::InitFailure("every multistart refinement failed".into()))
}

/// Full single-user solve: difference, initialize, disambiguate, refine.
/// Falls back to the multistart search when the closed form degenerates.
pub fn localize_one(
    estimates: &ToaGrid,
    n: usize,
    s: &Scenario,
    opts: &LocatorOptions,
) -> Result<PositionEstimate> {
    let delta = form_tdoa(estimates, n, s)?;
    let init = match closed_form_init(&delta, s) {
        Ok(cands) => Some(resolve_ambiguity(&cands, &delta, s, opts.prior)?),
        Err(Error::InitFailure(_)) | Err(Error::DegenerateGeometry(_)) => None,
        Err(e) => return Err(e),
    };
    match init {
        Some(x0) => refine_ml(x0, &delta, s),
        None => multistart(&delta, s, opts),
    }
}

/// Localize every user, isolating per-user failures.
pub fn localize_all(
    estimates: &ToaGrid,
    s: &Scenario,
    opts: &LocatorOptions,
) -> Vec<Result<PositionEstimate>> {
    (1..estimates.num_paths())
        .map(|n| localize_one(estimates, n, s, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::tests::test_scenario;
    use crate::channel::{ground_truth, synthesize, RxNode};
    use crate::toa::{estimate_all, ToaEstimate};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Exact delay grid built straight from the geometry, bypassing the
    /// estimator, with unit delay variances.
    fn exact_grid(s: &Scenario) -> ToaGrid {
        let truth = ground_truth(s).unwrap();
        let window = s.ofdm.ambiguity_window();
        let entries = (0..=s.num_ues())
            .map(|n| {
                (0..s.num_rxs())
                    .map(|m| {
                        truth.path(n, m).map(|p| ToaEstimate {
                            delay: p.delay.rem_euclid(window),
                            gain_magnitude: p.gain.norm(),
                            delay_variance: 1e-20,
                        })
                    })
                    .collect()
            })
            .collect();
        ToaGrid::from_entries(entries)
    }

    fn circle_scenario(radius: f64, n_rx: usize, ue_pos: Vec3) -> Scenario {
        let mut s = test_scenario(1, 0.0, 0);
        s.rxs = (0..n_rx)
            .map(|m| {
                let ang = 2.0 * PI * m as f64 / n_rx as f64;
                RxNode {
                    position: vec3(radius * ang.cos(), radius * ang.sin(), 1.0),
                    clock_bias_delay: 1e-6 * (m as f64 + 0.3),
                }
            })
            .collect();
        s.ues[0].position = ue_pos;
        s
    }

    #[test]
    fn tdoa_recovers_bistatic_ranges_and_ignores_bias() {
        let s = circle_scenario(10.0, 3, vec3(0.0, 0.0, -3.0));
        let delta = form_tdoa(&exact_grid(&s), 1, &s).unwrap();
        for (i, &m) in delta.rx_indices.iter().enumerate() {
            let expected = bistatic_range(s.ues[0].position, s.tx, s.rxs[m].position);
            assert_relative_eq!(delta.measurements[i], expected, epsilon = 1e-6);
        }
        // Perturbing one clock bias leaves the differences unchanged.
        let mut biased = s.clone();
        biased.rxs[1].clock_bias_delay += 10e-9;
        let delta2 = form_tdoa(&exact_grid(&biased), 1, &biased).unwrap();
        for i in 0..3 {
            assert_relative_eq!(
                delta2.measurements[i],
                delta.measurements[i],
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn tdoa_variances_combine_both_paths() {
        let s = circle_scenario(10.0, 3, vec3(2.0, 1.0, -3.0));
        let entries = vec![
            vec![
                Some(ToaEstimate {
                    delay: 1e-6,
                    gain_magnitude: 1e-5,
                    delay_variance: 3e-22,
                });
                3
            ],
            vec![
                Some(ToaEstimate {
                    delay: 1.5e-6,
                    gain_magnitude: 1e-5,
                    delay_variance: 5e-22,
                });
                3
            ],
        ];
        let delta = form_tdoa(&ToaGrid::from_entries(entries), 1, &s).unwrap();
        let c2 = SPEED_OF_LIGHT * SPEED_OF_LIGHT;
        for i in 0..3 {
            assert_relative_eq!(delta.variances[i], c2 * 8e-22, max_relative = 1e-12);
        }
    }

    #[test]
    fn tdoa_requires_three_usable_receivers() {
        let s = circle_scenario(10.0, 3, vec3(0.0, 0.0, -3.0));
        let est = Some(ToaEstimate {
            delay: 1e-6,
            gain_magnitude: 1e-5,
            delay_variance: 1e-22,
        });
        // Only two receivers carry both paths.
        let entries = vec![vec![est; 3], vec![est, est, None]];
        let grid = ToaGrid::from_entries(entries);
        assert!(matches!(
            form_tdoa(&grid, 1, &s),
            Err(Error::UnderDetermined { usable: 2 })
        ));
    }

    #[test]
    fn quadratic_root_selection() {
        // (s - 2)(s - 5): both positive roots kept.
        let two = positive_roots(1.0, -7.0, 10.0).unwrap();
        assert_eq!(two.len(), 2);
        assert!(two.iter().any(|r| (r - 2.0).abs() < 1e-12));
        assert!(two.iter().any(|r| (r - 5.0).abs() < 1e-12));
        // (s + 2)(s - 5): only the positive one.
        let one = positive_roots(1.0, -3.0, -10.0).unwrap();
        assert_eq!(one, vec![5.0]);
        // No real roots.
        assert!(positive_roots(1.0, 0.0, 1.0).is_err());
        // Linear fallback.
        assert_eq!(positive_roots(0.0, -2.0, 6.0).unwrap(), vec![3.0]);
    }

    #[test]
    fn closed_form_recovers_noiseless_position() {
        let truth = vec3(0.0, 0.0, -3.0);
        let s = circle_scenario(10.0, 3, truth);
        let delta = form_tdoa(&exact_grid(&s), 1, &s).unwrap();
        let cands = closed_form_init(&delta, &s).unwrap();
        let best = cands
            .iter()
            .map(|c| (c - truth).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6, "closest candidate {best:e} m away");
        // Candidate norms satisfy the scalar equation they came from.
        for c in &cands {
            let r = c - s.tx;
            let recomputed = closed_form_init(&delta, &s).unwrap();
            assert!(recomputed
                .iter()
                .any(|c2| ((c2 - s.tx).norm() - r.norm()).abs() < 1e-9 * r.norm()));
        }
    }

    #[test]
    fn closed_form_is_translation_consistent() {
        let truth = vec3(4.0, -1.0, -3.5);
        let s = circle_scenario(12.0, 4, truth);
        let mut moved = s.clone();
        let t = vec3(100.0, -40.0, 7.0);
        moved.tx += t;
        for rx in &mut moved.rxs {
            rx.position += t;
        }
        moved.ues[0].position += t;
        let cands = closed_form_init(&form_tdoa(&exact_grid(&s), 1, &s).unwrap(), &s).unwrap();
        let cands_moved =
            closed_form_init(&form_tdoa(&exact_grid(&moved), 1, &moved).unwrap(), &moved).unwrap();
        let d = cands_moved
            .iter()
            .map(|c| (c - (truth + t)).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(d < 1e-6);
        assert_eq!(cands.len(), cands_moved.len());
    }

    #[test]
    fn coplanar_receivers_degenerate_the_closed_form() {
        let mut s = circle_scenario(10.0, 3, vec3(1.0, 2.0, -3.0));
        for rx in &mut s.rxs {
            rx.position.z = 0.0;
        }
        let delta = form_tdoa(&exact_grid(&s), 1, &s).unwrap();
        assert!(matches!(
            closed_form_init(&delta, &s),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn ambiguity_dominance_prior_and_single_candidate() {
        let truth = vec3(1.0, 2.0, -3.0);
        let mut s = circle_scenario(10.0, 3, truth);
        for rx in &mut s.rxs {
            rx.position.z = 0.0;
        }
        let delta = form_tdoa(&exact_grid(&s), 1, &s).unwrap();

        // Dominance: the true position against a far-off impostor.
        let picked =
            resolve_ambiguity(&[truth, vec3(15.0, 15.0, 5.0)], &delta, &s, Prior::Anywhere)
                .unwrap();
        assert_relative_eq!(picked, truth);

        // Receivers and transmitter all at z = 0 make the mirror image an
        // exact tie; only the prior can break it.
        let mirror = vec3(truth.x, truth.y, -truth.z);
        let picked = resolve_ambiguity(&[mirror, truth], &delta, &s, Prior::BelowZ(0.0)).unwrap();
        assert_relative_eq!(picked, truth);
        assert!(matches!(
            resolve_ambiguity(&[mirror, truth], &delta, &s, Prior::BelowZ(-10.0)),
            Err(Error::AmbiguousGeometry { .. })
        ));
        let single = resolve_ambiguity(&[mirror], &delta, &s, Prior::BelowZ(0.0)).unwrap();
        assert_relative_eq!(single, mirror);
    }

    #[test]
    fn refinement_converges_and_descends() {
        let truth = vec3(3.0, -2.0, -4.0);
        let s = circle_scenario(10.0, 4, truth);
        let delta = form_tdoa(&exact_grid(&s), 1, &s).unwrap();

        let est = refine_ml(truth + vec3(0.5, -0.4, 0.6), &delta, &s).unwrap();
        assert!(est.converged);
        assert!((est.position - truth).norm() < 1e-9);
        assert!(est.objective < 1e-15);
        assert!(est.objective <= tdoa_objective(est.init, &delta, &s));

        // Starting at the optimum returns it unchanged.
        let at_truth = refine_ml(truth, &delta, &s).unwrap();
        assert!(at_truth.converged);
        assert!((at_truth.position - truth).norm() < 1e-9);
    }

    #[test]
    fn refinement_is_weight_scale_equivariant() {
        let truth = vec3(-2.0, 4.0, -2.5);
        let s = circle_scenario(11.0, 4, truth);
        let mut delta = form_tdoa(&exact_grid(&s), 1, &s).unwrap();
        // Noisy measurements so the optimum is not exactly the truth.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for v in delta.measurements.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let init = truth + vec3(0.3, 0.1, -0.2);
        let a = refine_ml(init, &delta, &s).unwrap();
        let mut scaled = delta.clone();
        scaled.variances *= 7.3;
        let b = refine_ml(init, &scaled, &s).unwrap();
        assert!((a.position - b.position).norm() < 1e-7);
        assert_relative_eq!(a.objective, b.objective * 7.3, max_relative = 1e-6);
    }

    #[test]
    fn noiseless_solutions_sit_on_every_ellipsoid() {
        let truth = vec3(5.0, 5.0, -3.0);
        let s = circle_scenario(10.0, 5, truth);
        let grid = exact_grid(&s);
        let opts = LocatorOptions {
            prior: Prior::BelowZ(1.0),
            ..LocatorOptions::default()
        };
        let est = localize_one(&grid, 1, &s, &opts).unwrap();
        let delta = form_tdoa(&grid, 1, &s).unwrap();
        for (i, &m) in delta.rx_indices.iter().enumerate() {
            let resid =
                delta.measurements[i] - bistatic_range(est.position, s.tx, s.rxs[m].position);
            assert!(resid.abs() < 1e-9, "rx {m} residual {resid:e}");
        }
    }

    #[test]
    fn multistart_rescues_coplanar_geometry() {
        // Coplanar anchors break the closed form; the grid fallback with the
        // below-plane prior still finds the truth.
        let truth = vec3(2.0, 1.0, -4.0);
        let mut s = circle_scenario(10.0, 4, truth);
        for rx in &mut s.rxs {
            rx.position.z = 0.0;
        }
        let opts = LocatorOptions {
            prior: Prior::BelowZ(0.0),
            ..LocatorOptions::default()
        };
        let est = localize_one(&exact_grid(&s), 1, &s, &opts).unwrap();
        assert!(
            (est.position - truth).norm() < 1e-6,
            "got {:?}",
            est.position
        );
    }

    #[test]
    fn full_pipeline_noiseless_end_to_end() {
        let mut s = test_scenario(2, 0.0, 0);
        s.rxs = (0..3)
            .map(|m| {
                let ang = 2.0 * PI * m as f64 / 3.0;
                RxNode {
                    position: vec3(10.0 * ang.cos(), 10.0 * ang.sin(), 1.0),
                    clock_bias_delay: [3.1e-6, 0.2e-6, 7.9e-6][m],
                }
            })
            .collect();
        let blocks = synthesize(&s).unwrap();
        let grid = estimate_all(
            &blocks,
            &s.profile_set().unwrap(),
            &s.ofdm,
            s.noise_variance(),
        )
        .unwrap();
        let opts = LocatorOptions {
            prior: Prior::BelowZ(1.0),
            ..LocatorOptions::default()
        };
        let results = localize_all(&grid, &s, &opts);
        assert_eq!(results.len(), 2);
        for (i, r) in results.iter().enumerate() {
            let est = r.as_ref().unwrap();
            let err = (est.position - s.ues[i].position).norm();
            assert!(err < 1e-6, "ue {i} error {err:e} m");
        }
    }

    #[test]
    fn underdetermined_user_fails_in_isolation() {
        let s = circle_scenario(10.0, 3, vec3(0.0, 0.0, -3.0));
        let mut s2 = test_scenario(2, 0.0, 0);
        s2.rxs = s.rxs.clone();
        s2.ues[0].position = vec3(0.0, 0.0, -3.0);
        s2.ues[1].position = vec3(4.0, 2.0, -3.0);
        let mut grid_entries: Vec<Vec<Option<ToaEstimate>>> = Vec::new();
        {
            let truth = ground_truth(&s2).unwrap();
            let window = s2.ofdm.ambiguity_window();
            for n in 0..=2usize {
                grid_entries.push(
                    (0..3)
                        .map(|m| {
                            truth.path(n, m).map(|p| ToaEstimate {
                                delay: p.delay.rem_euclid(window),
                                gain_magnitude: p.gain.norm(),
                                delay_variance: 1e-20,
                            })
                        })
                        .collect(),
                );
            }
        }
        // Knock out user 2 at two receivers.
        grid_entries[2][0] = None;
        grid_entries[2][1] = None;
        let grid = ToaGrid::from_entries(grid_entries);
        let opts = LocatorOptions {
            prior: Prior::BelowZ(1.0),
            ..LocatorOptions::default()
        };
        let results = localize_all(&grid, &s2, &opts);
        assert!(results[0].is_ok());
        assert!(matches!(
            results[1],
            Err(Error::UnderDetermined { usable: 1 })
        ));
        let est = results[0].as_ref().unwrap();
        assert!((est.position - s2.ues[0].position).norm() < 1e-6);
    }
}
