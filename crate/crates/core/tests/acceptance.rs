//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line with its measured numbers. Tolerances are pinned in code.
//!
//! Criterion 8's "within 25% of V-hat at eps = 0.2" clause is expected to
//! fail at these noise levels: space-time white noise heats all K modes
//! (stationary energy ~ K eps^2 / (2 alpha)), which puts a prefactor
//! correction eps^2 |log C| ~ 0.24 on the measured exponent -- comparable
//! to any V-hat reachable inside the runtime budget. The test asserts the
//! criterion as stated and documents the measured gap.

use std::time::Instant;
use wavemeta_core::*;

fn pi() -> f64 {
    std::f64::consts::PI
}

fn line(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "[criterion {id:02}] {}: {name} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn cubic_cfg(modes: usize, alpha: f64) -> SimConfig {
    let grid = grid::SpectralGrid::new(pi() / 2.0, modes);
    let dt = 0.1 / grid.eigenvalues().last().unwrap().sqrt();
    SimConfig::new(grid, alpha, dt, PolynomialDrift::cubic(5.0)).with_seed(1)
}

fn random_band_limited(grid: &grid::SpectralGrid, seed: u64) -> StateE {
    let mut rng = path_rng(seed, 0);
    use rand::Rng;
    let k = grid.modes();
    let pos: Vec<f64> = (0..k)
        .map(|m| rng.random_range(-1.0..1.0) / ((m + 1) as f64).powi(2))
        .collect();
    let vel: Vec<f64> = (0..k)
        .map(|m| rng.random_range(-1.0..1.0) / (m + 1) as f64)
        .collect();
    StateE::new(pos, vel)
}

#[test]
fn criterion_01_semigroup_cross_validation() {
    let start = Instant::now();
    let grid = grid::SpectralGrid::new(1.9, 128);
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let z = random_band_limited(&grid, 100 + seed);
        for &t in &[0.3, 1.7] {
            let a = dalembert_evolve(&z, t, &grid);
            let b = apply_semigroup(&z, 0.0, t, &grid);
            worst = worst.max(a.sub(&b).e_norm(&grid));
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-8 && elapsed.as_secs_f64() < 5.0;
    line(
        1,
        "semigroup cross-validation",
        pass,
        &format!("worst E-norm gap {worst:.2e} over 20 states, t in {{0.3, 1.7}}, {elapsed:?}"),
    );
    assert!(pass, "spectral vs d'Alembert gap {worst:.3e} (budget 1e-8)");
}

#[test]
fn criterion_02_energy_identities() {
    let start = Instant::now();
    // undamped drift over T = 10
    let grid = grid::SpectralGrid::new(pi() / 2.0, 24);
    let drift = PolynomialDrift::cubic(5.0);
    let cfg = SimConfig::new(grid, 0.0, 5e-4, drift.clone())
        .with_horizon(10.0)
        .with_seed(1);
    let mut z = StateE::zero(24);
    z.position[0] = 0.3;
    z.velocity[1] = -0.15;
    let e0 = energy_functional(&z, &drift, &cfg.grid);
    let (_, out) = simulate_path(&z, &cfg, None, 0, 1000);
    let drift_err = (energy_functional(&out.final_state, &drift, &cfg.grid) - e0).abs();

    // damped identity E(T) - E(0) + alpha int |v|_H^2 = 0, relative 1e-5
    let grid = grid::SpectralGrid::new(pi() / 2.0, 24);
    let alpha = 1.0;
    let cfg = SimConfig::new(grid, alpha, 2e-4, drift.clone())
        .with_horizon(3.0)
        .with_seed(1);
    let mut z = StateE::zero(24);
    z.position[0] = 0.5;
    z.velocity[1] = -0.25;
    let e0 = energy_functional(&z, &drift, &cfg.grid);
    let (traj, out) = simulate_path(&z, &cfg, None, 0, 1);
    let e1 = energy_functional(&out.final_state, &drift, &cfg.grid);
    let mut integral = 0.0;
    for i in 1..traj.times.len() {
        let h = traj.times[i] - traj.times[i - 1];
        integral += 0.5 * h * (traj.velocity_h_sq[i] + traj.velocity_h_sq[i - 1]);
    }
    let identity_rel = (e1 - e0 + alpha * integral).abs() / e0.abs();
    let elapsed = start.elapsed();
    let pass = drift_err < 1e-6 && identity_rel < 1e-5;
    line(
        2,
        "energy identities",
        pass,
        &format!("undamped drift {drift_err:.2e} (< 1e-6), damped identity {identity_rel:.2e} rel (< 1e-5), {elapsed:?}"),
    );
    assert!(pass, "drift {drift_err:.3e}, identity {identity_rel:.3e}");
}

#[test]
fn criterion_03_sup_norm_decay() {
    let start = Instant::now();
    let grid = grid::SpectralGrid::new(pi() / 2.0, 32);
    let est1 = measure_decay_rate(&grid, 1.0, 40.0, 12, 5);
    let est4 = measure_decay_rate(&grid, 4.0, 40.0, 12, 5);
    let elapsed = start.elapsed();
    let pass = est1.rate >= 0.115 && est4.rate >= 0.24 && elapsed.as_secs_f64() < 30.0;
    line(
        3,
        "sup-norm decay thresholds",
        pass,
        &format!(
            "alpha=1 rate {:.3} (>= 0.115), alpha=4 rate {:.3} (>= 0.24), {elapsed:?}",
            est1.rate, est4.rate
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_attraction_certificate() {
    let start = Instant::now();
    let cfg = cubic_cfg(16, 1.0);
    let eq = solve_equilibrium(&cfg.drift, &cfg.grid, &vec![0.0; 16]).unwrap();
    let theta = (cfg.alpha / 8.0).min(eq.gap() / (4.0 * cfg.alpha));
    let lin = semigroup::measure_linearized_decay(&eq.operator, &cfg.grid, cfg.alpha, 40.0, 8, 1);
    let cert = attraction_radius(
        &cfg.drift,
        &cfg.grid.to_values(&eq.position),
        lin.prefactor.max(1.0),
        cfg.grid.ell(),
    );
    let domain = DomainSpec::ball(eq.state(), 0.9 * cert.rho0);
    let report = verify_uniform_attraction(&domain, 50, &cfg, theta);
    let elapsed = start.elapsed();
    let pass = report.pass && cert.rho0.is_finite() && elapsed.as_secs_f64() < 120.0;
    line(
        4,
        "attraction certificate",
        pass,
        &format!(
            "rho0 {:.4} (recursion root {:.4}, worked-example rho+ {:.4}; constants differ at nontrivial equilibria, see ledger), 50 samples in 0.9 rho0 all decayed: {}, worst margin {:.3}, {elapsed:?}",
            cert.rho0,
            cert.recursion_root,
            cert.closed_form_rho.unwrap_or(f64::NAN),
            report.pass,
            report.worst_margin
        ),
    );
    assert!(pass, "worst margin {}", report.worst_margin);
}

#[test]
fn criterion_05_exact_controllability() {
    let start = Instant::now();
    let cfg = cubic_cfg(32, 1.0);
    let eq = StateE::zero(32);
    let est = measure_decay_rate(&cfg.grid, cfg.alpha, 40.0, 8, 3);
    let t0 = t0_from_decay_rule(est.prefactor.max(1.0), est.rate);
    let mut energies = Vec::new();
    let mut worst_gap = 0.0f64;
    for &delta in &[0.1, 0.05, 0.025] {
        let mut z = StateE::zero(32);
        z.position[0] = delta;
        z.velocity[0] = 0.4 * delta;
        let rep = exact_nonlinear_control(&z, &eq, t0, 256, &cfg).unwrap();
        worst_gap = worst_gap.max(rep.verification_gap);
        energies.push(rep.energy);
    }
    let monotone = energies[0] > energies[1] && energies[1] > energies[2];
    // linear minimal-norm bound on random targets
    let op = discretize_control_operator(t0, cfg.alpha, &cfg.grid, 512).unwrap();
    let mut bound_ok = true;
    let mut worst_margin = f64::INFINITY;
    for seed in 0..10 {
        let target = random_band_limited(&cfg.grid, 300 + seed).scale(0.1);
        let ctrl = min_norm_linear_control(&target, &op);
        let l2 = (2.0 * ctrl.energy()).sqrt();
        let bound = 2.0 * cfg.alpha.sqrt() * target.h1_norm(&cfg.grid);
        worst_margin = worst_margin.min(bound - l2);
        bound_ok &= l2 <= bound;
    }
    let elapsed = start.elapsed();
    let pass =
        worst_gap < 1e-5 && monotone && bound_ok && elapsed.as_secs_f64() < 60.0;
    line(
        5,
        "exact controllability",
        pass,
        &format!(
            "worst endpoint gap {worst_gap:.2e} (< 1e-5), energies {energies:.4?} decreasing: {monotone}, minimal-norm bound margin {worst_margin:.4}, {elapsed:?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_quasipotential_vs_oracle() {
    let start = Instant::now();
    let cfg = cubic_cfg(16, 1.0);
    // cylinder sized so the pinned tolerances are jointly meaningful: the
    // M = 64 control grid carries a ~+2.3% discretization floor, so the
    // absolute 1e-3 headroom needs V ~ 0.02 (see the ledger)
    let dom = DomainSpec::cylinder(vec![0.0; 16], 0.12, 0.165);
    let opts = OptimizerOptions {
        ctrl_steps: 64,
        max_inner: 200,
        seed: 1,
        ..Default::default()
    };
    // adjoint gradients vs central finite differences (M = 64, K = 16)
    let fd_rel = quasipotential::adjoint_gradient_check(&cfg, 4.0, 64, 20, 7);
    let res = minimize_quasipotential(
        &StateE::zero(16),
        &TargetSpec::Boundary(dom),
        ConstraintMode::Free,
        &[6.0, 12.0, 24.0],
        None,
        &cfg,
        &opts,
    );
    // oracle at the found minimizer: fully relaxed reversal, value
    // cross-checked against 2 alpha dE inside the op
    let (_, _, identity) = reversed_path_oracle(&res.terminal, &cfg, 24.0, 256).unwrap();
    let elapsed = start.elapsed();
    let within = (res.value - identity).abs() <= 0.05 * identity;
    let no_overshoot = res.value <= identity + 1e-3;
    let pass = res.feasible
        && within
        && no_overshoot
        && fd_rel < 1e-5
        && elapsed.as_secs_f64() < 600.0;
    line(
        6,
        "quasipotential vs reversed-path oracle",
        pass,
        &format!(
            "optimizer {:.5} vs reversed-path oracle 2 alpha dE = {:.5} at its terminal (within 5%: {within}; above by {:+.2e} <= 1e-3: {no_overshoot}); adjoint-vs-FD rel {fd_rel:.2e}, {elapsed:?}",
            res.value, identity, res.value - identity
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_vd_equals_v_to_boundary() {
    let start = Instant::now();
    let cfg = cubic_cfg(12, 1.0);
    let dom = DomainSpec::cylinder(vec![0.0; 12], 0.2, 0.25);
    let opts = OptimizerOptions {
        ctrl_steps: 48,
        max_inner: 120,
        seed: 1,
        ..Default::default()
    };
    let free = minimize_quasipotential(
        &StateE::zero(12),
        &TargetSpec::Boundary(dom.clone()),
        ConstraintMode::Free,
        &[8.0, 16.0],
        None,
        &cfg,
        &opts,
    );
    let stay = minimize_quasipotential(
        &StateE::zero(12),
        &TargetSpec::Boundary(dom.clone()),
        ConstraintMode::StayInD,
        &[8.0, 16.0],
        Some(&dom),
        &cfg,
        &opts,
    );
    let rel = (free.value - stay.value).abs() / free.value.max(1e-12);
    let elapsed = start.elapsed();
    let pass = free.feasible && stay.feasible && rel < 0.03;
    line(
        7,
        "V_D = V to the boundary",
        pass,
        &format!(
            "free {:.5} vs stay-in-D {:.5} (rel {:.3}%), {elapsed:?}",
            free.value,
            stay.value,
            100.0 * rel
        ),
    );
    assert!(pass);
}

#[test]
fn criteria_08_09_exit_time_scaling_and_exit_place() {
    let start = Instant::now();
    let modes = 32;
    let alpha = 2.0;
    let cfg = cubic_cfg(modes, alpha);
    let eq = solve_equilibrium(&cfg.drift, &cfg.grid, &vec![0.0; modes]).unwrap();
    let radius = 0.6;
    // invariant orbit-union domain with the calibrated finite-horizon
    // membership reduction
    let spec = OrbitUnionSpec::calibrate(&eq.state(), radius, &cfg, 8, 0.02);
    let dom = DomainSpec::OrbitUnion(spec);

    // V-hat on the boundary via the candidate reduction
    let opts = OptimizerOptions {
        ctrl_steps: 48,
        max_inner: 100,
        seed: 1,
        ..Default::default()
    };
    let est = measure_decay_rate(&cfg.grid, alpha, 40.0, 8, 1);
    let horizons = [2.0 / est.rate, 4.0 / est.rate, 8.0 / est.rate];
    let vres = minimize_quasipotential(
        &eq.state(),
        &TargetSpec::Boundary(dom.clone()),
        ConstraintMode::Free,
        &horizons,
        None,
        &cfg,
        &opts,
    );
    let v_hat = vres.value;

    let mut mc = cfg.clone();
    mc.horizon = 20_000.0;
    let eps_list = [0.35, 0.3, 0.25, 0.2];
    let ensembles = run_exit_mc(&eq.state(), &dom, &eps_list, 200, &mc).unwrap();

    // criterion 8: strictly increasing eps^2 log(mean tau), within 25% of
    // V-hat at eps = 0.2
    let scales: Vec<(f64, f64, (f64, f64))> = ensembles
        .iter()
        .map(|e| (e.eps, e.estimator.log_scale, e.estimator.log_scale_band))
        .collect();
    let mut increasing = true;
    for w in scales.windows(2) {
        if w[1].1 <= w[0].1 {
            increasing = false;
        }
    }
    let last = scales.last().unwrap();
    let within = (last.1 - v_hat).abs() <= 0.25 * v_hat;
    let elapsed = start.elapsed();
    let pass8 = increasing && within && elapsed.as_secs_f64() < 1800.0;
    line(
        8,
        "exit-time scaling",
        pass8,
        &format!(
            "eps^2 log(mean tau) = {:?} strictly increasing: {increasing}; at eps=0.2: {:.4} vs V-hat {:.4} ({:+.1}%, band [{:.4}, {:.4}]); {elapsed:?}; the 25% clause is blocked by the K-mode heating prefactor, see the ledger",
            scales.iter().map(|s| (s.0, (s.1 * 1e4).round() / 1e4)).collect::<Vec<_>>(),
            last.1,
            v_hat,
            100.0 * (last.1 - v_hat) / v_hat,
            last.2 .0,
            last.2 .1,
        ),
    );

    // criterion 9: exit-place concentration non-decreasing as eps drops;
    // the delta = 0.1 window is empty at these eps, so the mean distance
    // to the minimizer is asserted as the non-vacuous concentration signal
    let mirror = eq.state().sub(&vres.terminal.sub(&eq.state()));
    let minimizers = vec![vres.terminal.clone(), mirror];
    let hists: Vec<_> = ensembles
        .iter()
        .map(|e| exit_place_histogram(e, &dom, &minimizers, 0.1, &cfg))
        .collect();
    let fractions: Vec<f64> = hists.iter().map(|h| h.fraction_near_minimizer).collect();
    let mean_dists: Vec<f64> = hists
        .iter()
        .map(|h| {
            let n = h.features.len().max(1) as f64;
            h.features.iter().map(|f| f.distance_to_minimizer).sum::<f64>() / n
        })
        .collect();
    let mut lln = true;
    for w in fractions.windows(2) {
        if w[1] < w[0] {
            lln = false;
        }
    }
    let concentrating = mean_dists[mean_dists.len() - 1] < mean_dists[0];
    line(
        9,
        "exit-place concentration trend",
        lln && concentrating,
        &format!(
            "fraction within 0.1 of the V_Dbar minimizer per eps {eps_list:?}: {fractions:?}; mean E-distance to the minimizer: {mean_dists:.3?} (shrinking: {concentrating})"
        ),
    );
    assert!(lln && concentrating, "fractions {fractions:?}, mean distances {mean_dists:?}");
    assert!(
        pass8,
        "scaling {scales:?} vs V-hat {v_hat} — see the decisions ledger for the desk-scale analysis"
    );
}

#[test]
fn criterion_10_boundary_classifier() {
    let start = Instant::now();
    let cfg = cubic_cfg(16, 1.0);
    let grid = &cfg.grid;
    let dom = DomainSpec::cylinder(vec![0.0; 16], 0.2, 0.5);
    let bump = |radius: f64, vel: f64| -> StateE {
        let mut e1 = vec![0.0; 16];
        e1[0] = 1.0;
        let gmax = grid.sup_norm(&grid.to_values(&e1));
        let mut z = StateE::zero(16);
        z.position[0] = radius / gmax;
        if vel != 0.0 {
            let vals: Vec<f64> = grid
                .points()
                .iter()
                .map(|&x| {
                    let d = (x - grid.ell() / 2.0) / (0.15 * grid.ell());
                    vel * (-d * d).exp()
                })
                .collect();
            z.velocity = grid.to_coefficients(&vals);
        }
        z
    };

    // B_out: derived exit horizon from the example's constants
    let z_out = bump(0.2, 0.3);
    let out_class = classify_boundary_point(&z_out, &dom, &cfg).unwrap();
    let v0 = 0.3 * 0.5; // pairing lower bound used by the example
    let u_vals = grid.to_values(&z_out.position);
    let zeta_b = u_vals
        .iter()
        .map(|&x| cfg.drift.eval(x).abs())
        .fold(0.0f64, f64::max)
        + cfg.alpha * 0.3;
    let derived_t0 = (v0 / (2.0 * zeta_b)).min(grid.ell() / 4.0);
    let out_ok = out_class.verdict == BoundaryVerdict::RegularOut
        && out_class.witness_horizon <= derived_t0;

    // B_in: the 50-control falsification battery must fail to exit
    let z_in = bump(0.2, -0.3);
    let in_class = classify_boundary_point(&z_in, &dom, &cfg).unwrap();
    let in_ok = in_class.verdict == BoundaryVerdict::IrregularIn;

    // B_perp: witness exits with >= 10% budget margin
    let z_perp = bump(0.2, 0.0);
    let perp_class = classify_boundary_point(&z_perp, &dom, &cfg).unwrap();
    let perp_ok = perp_class.verdict == BoundaryVerdict::RegularPerp
        && perp_class.witness_energy <= 0.9 * perp_class.declared_budget;

    // B_flat on the spherical domain
    let flat_cfg = cubic_cfg(32, 1.0);
    let fgrid = &flat_cfg.grid;
    let radius = 0.2;
    let vals: Vec<f64> = fgrid
        .points()
        .iter()
        .map(|&x| {
            let s = (pi() * x / fgrid.ell()).sin();
            (1.4 * radius * s * s).min(radius)
        })
        .collect();
    let z_flat = StateE::new(fgrid.to_coefficients(&vals), vec![0.0; 32]);
    let ball = DomainSpec::ball(StateE::zero(32), radius);
    let flat_class = classify_boundary_point(&z_flat, &ball, &flat_cfg).unwrap();
    let flat_ok = flat_class.verdict == BoundaryVerdict::RegularFlat
        && flat_class.witness_energy <= 0.9 * flat_class.declared_budget;

    let elapsed = start.elapsed();
    let pass = out_ok && in_ok && perp_ok && flat_ok && elapsed.as_secs_f64() < 300.0;
    line(
        10,
        "boundary classifier",
        pass,
        &format!(
            "out: exits at {:.4} <= derived T0 {derived_t0:.4}; in: battery held ({}); perp energy {:.3e} <= 0.9 x {:.3e}; flat energy {:.3e} <= 0.9 x {:.3e}; {elapsed:?}",
            out_class.witness_horizon,
            in_ok,
            perp_class.witness_energy,
            perp_class.declared_budget,
            flat_class.witness_energy,
            flat_class.declared_budget
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_stochastic_convolution_bound() {
    let start = Instant::now();
    let mk_cfg = |modes: usize| {
        let grid = grid::SpectralGrid::new(pi() / 2.0, modes);
        SimConfig::new(grid, 1.0, 5e-3, PolynomialDrift::zero(5.0)).with_seed(2)
    };
    let cfg16 = mk_cfg(16);
    let one16 = |_: f64| vec![1.0; 16];
    let two16 = |_: f64| vec![2.0; 16];
    let e1 = stochastic_convolution_sup_moment(one16, &cfg16, 1.0, 2000, 10);
    let e2 = stochastic_convolution_sup_moment(two16, &cfg16, 1.0, 2000, 11);
    let ratio = e2 / e1;
    let cfg32 = mk_cfg(32);
    let one32 = |_: f64| vec![1.0; 32];
    let e1_fine = stochastic_convolution_sup_moment(one32, &cfg32, 1.0, 2000, 12);
    let refine_rel = (e1_fine - e1).abs() / e1;
    let elapsed = start.elapsed();
    let pass = (3.6..=4.4).contains(&ratio) && refine_rel <= 0.10;
    line(
        11,
        "stochastic-convolution bound",
        pass,
        &format!(
            "estimate(2 Psi)/estimate(Psi) = {ratio:.3} (in [3.6, 4.4]); K 16 -> 32 change {:.1}% (<= 10%); {elapsed:?}",
            100.0 * refine_rel
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_12_determinism() {
    let start = Instant::now();
    let cfg = cubic_cfg(10, 1.0).with_horizon(10.0).with_seed(21);
    let dom = DomainSpec::cylinder(vec![0.0; 10], 0.15, 0.2);
    let a = run_exit_mc(&StateE::zero(10), &dom, &[0.4], 24, &cfg).unwrap();
    let b = run_exit_mc(&StateE::zero(10), &dom, &[0.4], 24, &cfg).unwrap();
    let pool1 = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let c = pool1.install(|| run_exit_mc(&StateE::zero(10), &dom, &[0.4], 24, &cfg).unwrap());
    let pool3 = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let d = pool3.install(|| run_exit_mc(&StateE::zero(10), &dom, &[0.4], 24, &cfg).unwrap());
    let pass = exit::replay_matches(&a, &b)
        && exit::replay_matches(&a, &c)
        && exit::replay_matches(&a, &d);
    let elapsed = start.elapsed();
    line(
        12,
        "determinism",
        pass,
        &format!(
            "identical records across repeat runs and 1/3-thread pools (byte-level CLI check lives in the cli tests); {elapsed:?}"
        ),
    );
    assert!(pass);
}
