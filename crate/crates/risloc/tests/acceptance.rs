//! Acceptance gate for the localization pipeline: every test prints one
//! PASS/FAIL line with the measured numbers (visible with
//! `cargo test --test acceptance -- --nocapture`) and asserts the same
//! condition, so the suite both reports and gates.

use nalgebra::{DVector, Matrix3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use risloc::bounds::{peb_at, peb_for_user, position_fim, toa_crb, CrbInputs};
use risloc::channel::{delay_phasor, ground_truth, synthesize};
use risloc::config::SimConfig;
use risloc::geometry::{bistatic_gradient, bistatic_range, vec3, Rotation};
use risloc::harness::{median, run_cell};
use risloc::locator::localize_all;
use risloc::toa::{estimate_all, estimate_toa, project, ProjectedVector};

fn report(name: &str, pass: bool, detail: &str) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

/// Distance between two delays on the cyclic ambiguity window.
fn wrapped(a: f64, b: f64, window: f64) -> f64 {
    let d = (a - b).rem_euclid(window);
    d.min(window - d)
}

fn rmse_of(values: &[f64]) -> f64 {
    (values.iter().map(|e| e * e).sum::<f64>() / values.len() as f64).sqrt()
}

#[test]
fn code_orthogonality_and_path_decoupling() {
    let mut worst_gram = 0.0f64;
    let mut worst_dc = 0.0f64;
    let mut worst_leak = 0.0f64;
    let mut symbols = 0usize;
    for n_ues in [1usize, 3, 8] {
        let mut cfg = SimConfig::default();
        cfg.noise.psd_dbm_hz = f64::NEG_INFINITY;
        cfg.ue.ris_rows = 64;
        cfg.ue.ris_cols = 64;
        cfg.ue.positions_m = (0..n_ues)
            .map(|i| [2.0 + 2.0 * i as f64, 1.0 - 0.7 * i as f64, -3.0])
            .collect();
        let s = cfg.scenario(5 + n_ues as u64, 5).unwrap();
        let profiles = s.profile_set().unwrap();
        symbols = s.ofdm.symbols;

        // Pairwise temporal-code Gram matrix against T on the diagonal and
        // zero off it, including the static reference code 0.
        for i in 0..=n_ues {
            for j in 0..=n_ues {
                let inner: Complex64 = profiles
                    .code(i)
                    .iter()
                    .zip(profiles.code(j))
                    .map(|(a, b)| a * b.conj())
                    .sum();
                let expect = if i == j { symbols as f64 } else { 0.0 };
                worst_gram = worst_gram.max((inner - Complex64::from(expect)).norm());
            }
        }
        // Every user code sums to zero over the occasion, which is what
        // cancels time-constant interference.
        for n in 1..=n_ues {
            let dc: Complex64 = profiles.code(n).iter().map(|z| z.conj()).sum();
            worst_dc = worst_dc.max(dc.norm());
        }

        // Projecting a noiseless multi-user block onto one code must return
        // exactly that path's single-path model; everything else is leakage.
        let blocks = synthesize(&s).unwrap();
        let truth = ground_truth(&s).unwrap();
        let amp = Complex64::from(s.ofdm.symbol_energy.sqrt());
        for block in &blocks {
            for n in 0..=n_ues {
                let r = project(block, profiles.code(n), n);
                let p = truth.path(n, block.rx_index).expect("path present");
                let model =
                    delay_phasor(p.delay, s.ofdm.subcarriers, s.ofdm.spacing) * (amp * p.gain);
                let leak = (&r.r - &model).norm() / model.norm();
                worst_leak = worst_leak.max(leak);
            }
        }
    }
    let tol_gram = 1e-12 * symbols as f64;
    let pass = worst_gram <= tol_gram && worst_dc <= tol_gram && worst_leak <= 1e-9;
    report(
        "code orthogonality and path decoupling",
        pass,
        &format!(
            "worst Gram deviation {worst_gram:.2e} (tol {tol_gram:.1e}), \
             worst user-code sum {worst_dc:.2e}, \
             worst projected leakage {worst_leak:.2e} (tol 1e-9)"
        ),
    );
}

#[test]
fn delay_rmse_attains_the_delay_bound() {
    let cfg = SimConfig::default();
    let k = cfg.ofdm.subcarriers;
    let spacing = cfg.ofdm.spacing_hz;
    let t = cfg.ofdm.symbols as f64;
    let fft = cfg.ofdm.fft_size;
    let e_s = cfg.symbol_energy();
    let n_eff = cfg.noise_psd() * 10f64.powf(cfg.noise.figure_db / 10.0);
    let window = 1.0 / spacing;
    let tau_true = 3.1712e-6;
    let trials = 500usize;
    let mut rng = ChaCha8Rng::seed_from_u64(20_260_814);
    // Projection divides the block by T, so each retained noise component has
    // variance N_eff / T, split evenly between real and imaginary parts.
    let per_component = Normal::new(0.0, (n_eff / (2.0 * t)).sqrt()).unwrap();

    let mut lines = Vec::new();
    let mut pass = true;
    for beta in [7.96e-5, 7.96e-6, 7.96e-7] {
        let root_crb = toa_crb(&CrbInputs {
            subcarriers: k,
            symbols: cfg.ofdm.symbols,
            symbol_energy: e_s,
            noise_variance: n_eff,
            spacing,
            beta_mag: beta,
        })
        .unwrap()
        .sqrt();
        assert!(root_crb <= 1e-9, "operating point left the sub-ns regime");
        let clean = delay_phasor(tau_true, k, spacing)
            * (Complex64::from(e_s.sqrt() * beta) * Complex64::from_polar(1.0, 0.7));
        let mut sq = 0.0;
        for _ in 0..trials {
            let noise = DVector::from_iterator(
                k,
                (0..k).map(|_| {
                    Complex64::new(
                        per_component.sample(&mut rng),
                        per_component.sample(&mut rng),
                    )
                }),
            );
            let pv = ProjectedVector {
                rx_index: 0,
                path_index: 1,
                r: &clean + noise,
            };
            let tau_hat = estimate_toa(&pv, fft, spacing).unwrap();
            let err = wrapped(tau_hat, tau_true, window);
            sq += err * err;
        }
        let rmse = (sq / trials as f64).sqrt();
        let ok = (rmse - root_crb).abs() <= 0.15 * root_crb;
        pass &= ok;
        lines.push(format!(
            "gain {beta:.2e}: rmse {rmse:.3e} s vs bound {root_crb:.3e} s ({:+.1}%)",
            100.0 * (rmse / root_crb - 1.0)
        ));
    }
    report(
        "delay rmse attains the delay bound",
        pass,
        &format!("{} noise trials per point; {}", trials, lines.join("; ")),
    );
}

#[test]
fn noiseless_pipeline_recovers_positions_exactly() {
    let mut cfg = SimConfig::default();
    cfg.noise.psd_dbm_hz = f64::NEG_INFINITY;
    cfg.ue.positions_m = vec![[10.0, 0.0, -3.0], [-4.0, 6.0, -2.2], [0.0, 0.0, -3.0]];
    cfg.ue.orientations_euler_deg =
        Some(vec![[0.0, 0.0, 25.0], [0.0, 0.0, 140.0], [0.0, 0.0, 0.0]]);
    let mut worst = 0.0f64;
    let mut all_converged = true;
    // Different trial seeds redraw every receiver's clock bias uniformly over
    // the whole ambiguity window.
    for (ris_seed, trial_seed) in [(3u64, 17u64), (11, 29)] {
        for row in run_cell(&cfg, ris_seed, trial_seed).unwrap() {
            all_converged &= row.converged;
            worst = worst.max(row.error_m);
        }
    }
    let pass = all_converged && worst < 1e-6;
    report(
        "noiseless pipeline exactness",
        pass,
        &format!("3 users x 2 bias/profile draws, worst position error {worst:.2e} m (tol 1e-6)"),
    );
}

/// Per-profile-draw bound plus the position errors of `noise_draws` full
/// pipeline runs, parallel over profile draws.
fn bound_and_errors(cfg: &SimConfig, ris_draws: u64, noise_draws: u64) -> Vec<(f64, Vec<f64>)> {
    let base = cfg.experiment.seed;
    (0..ris_draws)
        .into_par_iter()
        .map(|i| {
            let ris_seed = base + i;
            let s = cfg.scenario(ris_seed, base).unwrap();
            let peb = peb_for_user(&s, 1).map_or(f64::INFINITY, |r| r.peb);
            let errors = (0..noise_draws)
                .map(|j| {
                    let trial_seed = base + 1_000_003 + i * noise_draws + j;
                    run_cell(cfg, ris_seed, trial_seed).unwrap()[0].error_m
                })
                .collect();
            (peb, errors)
        })
        .collect()
}

#[test]
fn monte_carlo_error_matches_the_position_bound() {
    let ris_draws = 100u64;
    let noise_draws = 10u64;

    // Off-center user: pooled estimation RMSE against the RMS bound over the
    // profile draws whose bound is below 8 m.
    let mut cfg = SimConfig::default();
    cfg.ue.positions_m = vec![[10.0, 0.0, -3.0]];
    let cells = bound_and_errors(&cfg, ris_draws, noise_draws);
    // Per-draw comparison: each retained draw's estimation RMSE against its
    // own bound. The across-draw median tolerates both the ~22% sampling
    // noise of a 10-trial RMSE and rare wrong-root outliers, which would
    // dominate a pooled RMSE through their squares. A weak profile draw can
    // also push one receiver's reflected path below the detection floor;
    // those solves fail outright and are counted separately.
    let mut ratios = Vec::new();
    let mut n_success = 0usize;
    let mut retained = 0usize;
    let mut failures = 0usize;
    for (peb, errors) in &cells {
        if *peb < 8.0 {
            retained += 1;
            let ok: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
            failures += errors.len() - ok.len();
            n_success += ok.len();
            if !ok.is_empty() {
                ratios.push(rmse_of(&ok) / peb);
            }
        }
    }
    let ratio = median(&ratios);
    let rel_dev = (ratio - 1.0).abs();
    let fail_frac = failures as f64 / (failures + n_success) as f64;

    // Centered user: the median trial error must be submeter.
    let mut cfg0 = SimConfig::default();
    cfg0.ue.positions_m = vec![[0.0, 0.0, -3.0]];
    let center_errors: Vec<f64> = bound_and_errors(&cfg0, ris_draws, noise_draws)
        .into_iter()
        .flat_map(|(_, errors)| errors)
        .collect();
    let center_median = median(&center_errors);

    let pass = rel_dev <= 0.20 && fail_frac <= 0.25 && center_median < 1.0;
    report(
        "monte carlo error matches the position bound",
        pass,
        &format!(
            "off-center: median per-draw rmse/bound {ratio:.3} ({:+.1}%, tol 20%) over \
             {retained}/{ris_draws} retained draws x {noise_draws} noise trials, \
             {failures} undetectable-path failures ({:.1}%) counted separately; \
             centered median error {center_median:.3} m (tol 1 m)",
            100.0 * (ratio - 1.0),
            100.0 * fail_frac
        ),
    );
}

/// Mean bound at the first user over `draws` profile draws.
fn mean_peb(cfg: &SimConfig, draws: u64) -> f64 {
    let base = cfg.experiment.seed;
    let sum: f64 = (0..draws)
        .into_par_iter()
        .map(|i| {
            let s = cfg.scenario(base + i, base + i).unwrap();
            peb_for_user(&s, 1).unwrap().peb
        })
        .sum();
    sum / draws as f64
}

#[test]
fn bound_scales_linearly_with_receiver_radius() {
    // The bound distribution over profile draws is heavy-tailed, so the mean
    // needs this many draws to settle.
    let draws = 1000u64;
    let mut cfg = SimConfig::default();
    cfg.ue.positions_m = vec![[0.0, 0.0, -3.0]];
    cfg.rx.radius_m = 10.0;
    let near = mean_peb(&cfg, draws);
    cfg.rx.radius_m = 20.0;
    let far = mean_peb(&cfg, draws);
    let ratio = far / near;
    let pass = (1.7..=2.3).contains(&ratio);
    report(
        "bound scales linearly with receiver radius",
        pass,
        &format!(
            "mean bound {near:.3} m at radius 10 vs {far:.3} m at radius 20, \
             ratio {ratio:.2} (band [1.7, 2.3], {draws} draws)"
        ),
    );
}

#[test]
fn receiver_count_saturation() {
    let draws = 1000u64;
    let mut cfg = SimConfig::default();
    cfg.ue.positions_m = vec![[0.0, 0.0, -3.0]];
    let mut means = Vec::new();
    for count in [3usize, 5, 8, 10] {
        cfg.rx.count = count;
        means.push(mean_peb(&cfg, draws));
    }
    let (m3, m5, m8, m10) = (means[0], means[1], means[2], means[3]);
    let tail_change = (m10 - m8).abs() / m8;
    let pass = m5 < m3 && tail_change < 0.15;
    report(
        "receiver count saturation",
        pass,
        &format!(
            "mean bound {m3:.3} m at 3 receivers, {m5:.3} at 5, {m8:.3} at 8, {m10:.3} at 10; \
             8-to-10 change {:.1}% (tol 15%, {draws} draws)",
            100.0 * tail_change
        ),
    );
}

#[test]
fn static_clutter_leaves_user_paths_clean() {
    let mut cfg = SimConfig::default();
    cfg.ue.positions_m = vec![[10.0, 0.0, -3.0]];
    let ris_draws = 40u64;
    let noise_draws = 5u64;
    let base = cfg.experiment.seed;

    // Paired runs: identical profile, bias, and noise draws with 0 versus 50
    // scatterers, so any divergence is caused by the clutter alone.
    let per_draw: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..ris_draws)
        .into_par_iter()
        .map(|i| {
            let ris_seed = base + i;
            let mut clean = Vec::new();
            let mut cluttered = Vec::new();
            let mut pos_errors = Vec::new();
            for j in 0..noise_draws {
                let trial_seed = base + 7_000_003 + i * noise_draws + j;
                for count in [0usize, 50] {
                    let mut c = cfg.clone();
                    c.scatterers.count = count;
                    let s = c.scenario(ris_seed, trial_seed).unwrap();
                    let blocks = synthesize(&s).unwrap();
                    let grid = estimate_all(
                        &blocks,
                        &s.profile_set().unwrap(),
                        &s.ofdm,
                        s.noise_variance(),
                    )
                    .unwrap();
                    let truth = ground_truth(&s).unwrap();
                    let window = s.ofdm.ambiguity_window();
                    for m in 0..s.num_rxs() {
                        if let (Some(est), Some(tru)) = (grid.get(1, m), truth.path(1, m)) {
                            let err = wrapped(est.delay, tru.delay, window);
                            if count == 0 {
                                clean.push(err);
                            } else {
                                cluttered.push(err);
                            }
                        }
                    }
                    if count == 50 {
                        let sols = localize_all(&grid, &s, &c.locator_options(&s));
                        pos_errors.push(match &sols[0] {
                            Ok(e) if e.converged => (e.position - vec3(10.0, 0.0, -3.0)).norm(),
                            _ => f64::INFINITY,
                        });
                    }
                }
            }
            (clean, cluttered, pos_errors)
        })
        .collect();

    let mut clean = Vec::new();
    let mut cluttered = Vec::new();
    let mut pos_errors = Vec::new();
    for (a, b, p) in per_draw {
        clean.extend(a);
        cluttered.extend(b);
        pos_errors.extend(p);
    }
    let rmse_clean = rmse_of(&clean);
    let rmse_cluttered = rmse_of(&cluttered);
    let rel_dev = (rmse_cluttered / rmse_clean - 1.0).abs();
    let med = median(&pos_errors);
    let pass = rel_dev <= 0.10 && med < 1.0;
    report(
        "static clutter robustness",
        pass,
        &format!(
            "user-path delay rmse {rmse_cluttered:.3e} s with 50 scatterers vs \
             {rmse_clean:.3e} s without ({:+.2}%, tol 10%); \
             median position error {med:.3} m (tol 1 m, {} solves)",
            100.0 * (rmse_cluttered / rmse_clean - 1.0),
            pos_errors.len()
        ),
    );
}

#[test]
fn bound_is_self_consistent() {
    let cfg = SimConfig::default();
    let s = cfg.scenario(9, 9).unwrap();
    let x = vec3(4.0, -2.0, -3.0);

    // Information matrix assembled from central-difference range gradients
    // must match the analytic one.
    let sigma = [2.5e-2, 1.5e-2, 3.5e-2];
    let analytic = position_fim(x, &s, &sigma).unwrap();
    let h = 1e-6;
    let mut fd_fim = Matrix3::<f64>::zeros();
    let mut worst_grad = 0.0f64;
    for (m, rx) in s.rxs.iter().enumerate() {
        let mut g = vec3(0.0, 0.0, 0.0);
        for axis in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[axis] += h;
            xm[axis] -= h;
            g[axis] = (bistatic_range(xp, s.tx, rx.position)
                - bistatic_range(xm, s.tx, rx.position))
                / (2.0 * h);
        }
        let exact = bistatic_gradient(x, s.tx, rx.position).unwrap();
        worst_grad = worst_grad.max((g - exact).norm() / exact.norm());
        fd_fim += g * g.transpose() / sigma[m];
    }
    let fim_dev = (analytic.fim - fd_fim).norm() / fd_fim.norm();

    // The bound must not care where the world origin is or which way north
    // points: translate and z-rotate everything rigidly.
    let base = peb_at(&s, x).unwrap().peb;
    let t = vec3(13.0, -7.0, 2.5);
    let mut moved = s.clone();
    moved.tx += t;
    for rx in &mut moved.rxs {
        rx.position += t;
    }
    for ue in &mut moved.ues {
        ue.position += t;
    }
    let trans_dev = (peb_at(&moved, x + t).unwrap().peb / base - 1.0).abs();

    let q = nalgebra::Rotation3::from_euler_angles(0.0, 0.0, 1.1);
    let qm = *q.matrix();
    let mut spun = s.clone();
    spun.tx = qm * spun.tx;
    for rx in &mut spun.rxs {
        rx.position = qm * rx.position;
    }
    for ue in &mut spun.ues {
        ue.position = qm * ue.position;
        ue.rotation = Rotation::from_matrix(ue.rotation.matrix() * qm.transpose()).unwrap();
    }
    let rot_dev = (peb_at(&spun, qm * x).unwrap().peb / base - 1.0).abs();

    let pass = fim_dev < 1e-6 && worst_grad < 1e-6 && trans_dev < 1e-9 && rot_dev < 1e-9;
    report(
        "bound self-consistency",
        pass,
        &format!(
            "information matrix vs central differences {fim_dev:.2e} (tol 1e-6), \
             worst gradient deviation {worst_grad:.2e}; \
             translation deviation {trans_dev:.2e}, rotation deviation {rot_dev:.2e} (tol 1e-9)"
        ),
    );
}
