//! Time integration of the deterministic flow, the controlled skeleton and
//! the stochastic dynamics with localized coefficients, plus explosion
//! detection, white-noise sampling, the energy functional and the
//! stochastic-convolution moment probe.
//!
//! The scheme is an exponential integrator: the stiff linear part is
//! propagated exactly mode by mode, and the nonlinearity enters through the
//! exact weight Phi(t) = int_0^t S_alpha(s) ds (so equilibria are fixed
//! points of the discrete map to machine precision). The noise increment is
//! frozen at the left endpoint, eps S_alpha(dt)(0, sigma_n(u) dW).

use crate::domain::DomainSpec;
use crate::drift::{NoiseCoefficient, PolynomialDrift};
use crate::error::{Error, Result};
use crate::grid::SpectralGrid;
use crate::semigroup::{propagator_for, ModePropagator};
use crate::state::StateE;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Time-stepping scheme for the nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Left-point nonlinearity (first order).
    ExpEuler,
    /// Midpoint evaluation of the nonlinearity (second order).
    ExpMidpoint,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub grid: SpectralGrid,
    pub alpha: f64,
    /// Time step; accuracy budget dt <= 0.1 / sqrt(a_K).
    pub dt: f64,
    pub drift: PolynomialDrift,
    pub noise: NoiseCoefficient,
    pub eps: f64,
    /// Localization radius n_D; crossing it in sup norm is the explosion
    /// surrogate.
    pub cutoff: f64,
    pub horizon: f64,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn new(grid: SpectralGrid, alpha: f64, dt: f64, drift: PolynomialDrift) -> Self {
        assert!(dt > 0.0, "dt must be positive");
        let cutoff = drift.cutoff();
        assert!(cutoff >= 1.0, "cutoff n_D must be at least 1");
        Self {
            grid,
            alpha,
            dt,
            drift,
            noise: NoiseCoefficient::constant(1.0),
            eps: 0.0,
            cutoff,
            horizon: 10.0,
            seed: 0,
            scheme: Scheme::ExpMidpoint,
        }
    }

    /// The documented accuracy budget for the time step.
    pub fn dt_budget(&self) -> f64 {
        0.1 / self.grid.eigenvalues().last().unwrap().sqrt()
    }

    pub fn with_noise(mut self, noise: NoiseCoefficient, eps: f64) -> Self {
        self.noise = noise;
        self.eps = eps;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }
}

/// Exact integral Phi(t) = int_0^t P(s) ds of a mode propagator, from the
/// identity Phi = A^{-1} (P(t) - I) with A = [[0, 1], [-a, -alpha]].
pub fn phi_for(a: f64, alpha: f64, t: f64) -> [f64; 4] {
    let p = propagator_for(a, alpha, t);
    [
        (-alpha * (p.m11 - 1.0) - p.m21) / a,
        (-alpha * p.m12 - (p.m22 - 1.0)) / a,
        p.m11 - 1.0,
        p.m12,
    ]
}

/// Precomputed propagators for one step size.
struct ModeKernels {
    full: Vec<ModePropagator>,
    phi_full: Vec<[f64; 4]>,
    half: Vec<ModePropagator>,
    phi_half: Vec<[f64; 4]>,
}

impl ModeKernels {
    fn new(grid: &SpectralGrid, alpha: f64, dt: f64) -> Self {
        let eigs = grid.eigenvalues();
        ModeKernels {
            full: eigs.iter().map(|&a| propagator_for(a, alpha, dt)).collect(),
            phi_full: eigs.iter().map(|&a| phi_for(a, alpha, dt)).collect(),
            half: eigs
                .iter()
                .map(|&a| propagator_for(a, alpha, dt / 2.0))
                .collect(),
            phi_half: eigs.iter().map(|&a| phi_for(a, alpha, dt / 2.0)).collect(),
        }
    }
}

/// One-step integrator bound to a configuration.
pub struct Stepper<'a> {
    pub cfg: &'a SimConfig,
    kernels: ModeKernels,
}

fn propagate(
    p: &[ModePropagator],
    phi: &[[f64; 4]],
    z: &StateE,
    g: &[f64],
) -> StateE {
    let k = z.modes();
    let mut out = StateE::zero(k);
    for m in 0..k {
        out.position[m] = p[m].m11 * z.position[m] + p[m].m12 * z.velocity[m] + phi[m][1] * g[m];
        out.velocity[m] = p[m].m21 * z.position[m] + p[m].m22 * z.velocity[m] + phi[m][3] * g[m];
    }
    out
}

impl<'a> Stepper<'a> {
    pub fn new(cfg: &'a SimConfig) -> Self {
        Stepper {
            cfg,
            kernels: ModeKernels::new(&cfg.grid, cfg.alpha, cfg.dt),
        }
    }

    /// Sanity guard: a state has blown up numerically if it is non-finite
    /// or wildly beyond the localization radius.
    fn guard(&self, sup: f64) -> Result<()> {
        if !sup.is_finite() || sup > 50.0 * self.cfg.cutoff {
            return Err(Error::NumericalBlowup { t: f64::NAN });
        }
        Ok(())
    }

    /// Drift-plus-control field at collocation points.
    fn forcing(&self, u_vals: &[f64], ctrl_vals: Option<&[f64]>) -> Vec<f64> {
        let cfg = self.cfg;
        let mut g: Vec<f64> = u_vals.iter().map(|&x| cfg.drift.eval(x)).collect();
        if let Some(h) = ctrl_vals {
            for (gi, (&ui, &hi)) in g.iter_mut().zip(u_vals.iter().zip(h)) {
                *gi += cfg.noise.eval(ui, cfg.cutoff) * hi;
            }
        }
        g
    }

    /// Advance one step of size `dt`. `ctrl` is a per-mode control slice
    /// (constant over the step), `dw` per-mode noise increments of
    /// variance dt.
    pub fn step(&self, z: &StateE, ctrl: Option<&[f64]>, dw: Option<&[f64]>) -> Result<StateE> {
        let cfg = self.cfg;
        let grid = &cfg.grid;
        let u_vals = grid.to_values(&z.position);
        self.guard(grid.sup_norm(&u_vals))?;
        let ctrl_vals = ctrl.map(|h| grid.to_values(h));
        let g0 = grid.to_coefficients(&self.forcing(&u_vals, ctrl_vals.as_deref()));
        let g = match cfg.scheme {
            Scheme::ExpEuler => g0,
            Scheme::ExpMidpoint => {
                let z_half = propagate(&self.kernels.half, &self.kernels.phi_half, z, &g0);
                let uh_vals = grid.to_values(&z_half.position);
                self.guard(grid.sup_norm(&uh_vals))?;
                grid.to_coefficients(&self.forcing(&uh_vals, ctrl_vals.as_deref()))
            }
        };
        let mut out = propagate(&self.kernels.full, &self.kernels.phi_full, z, &g);
        if let Some(dw) = dw {
            // frozen-coefficient increment eps S(dt)(0, sigma_n(u) dW)
            let dw_vals = grid.to_values(dw);
            let noise_vals: Vec<f64> = u_vals
                .iter()
                .zip(&dw_vals)
                .map(|(&u, &w)| cfg.noise.eval(u, cfg.cutoff) * w)
                .collect();
            let nc = grid.to_coefficients(&noise_vals);
            for m in 0..grid.modes() {
                out.position[m] += cfg.eps * self.kernels.full[m].m12 * nc[m];
                out.velocity[m] += cfg.eps * self.kernels.full[m].m22 * nc[m];
            }
        }
        if !out.is_finite() {
            return Err(Error::NumericalBlowup { t: f64::NAN });
        }
        Ok(out)
    }

    /// Partial step of size delta in (0, dt], with the step's noise
    /// increment linearly interpolated (delta/dt scaling of dW). Used by
    /// the exit-time bisection.
    pub fn partial_step(
        &self,
        z: &StateE,
        delta: f64,
        ctrl: Option<&[f64]>,
        dw: Option<&[f64]>,
    ) -> Result<StateE> {
        let cfg = self.cfg;
        let grid = &cfg.grid;
        let u_vals = grid.to_values(&z.position);
        self.guard(grid.sup_norm(&u_vals))?;
        let ctrl_vals = ctrl.map(|h| grid.to_values(h));
        let g = grid.to_coefficients(&self.forcing(&u_vals, ctrl_vals.as_deref()));
        let eigs = grid.eigenvalues();
        let p: Vec<ModePropagator> = eigs
            .iter()
            .map(|&a| propagator_for(a, cfg.alpha, delta))
            .collect();
        let phi: Vec<[f64; 4]> = eigs.iter().map(|&a| phi_for(a, cfg.alpha, delta)).collect();
        let mut out = propagate(&p, &phi, z, &g);
        if let Some(dw) = dw {
            let scale = delta / cfg.dt;
            let dw_vals = grid.to_values(dw);
            let noise_vals: Vec<f64> = u_vals
                .iter()
                .zip(&dw_vals)
                .map(|(&u, &w)| cfg.noise.eval(u, cfg.cutoff) * w * scale)
                .collect();
            let nc = grid.to_coefficients(&noise_vals);
            for m in 0..grid.modes() {
                out.position[m] += cfg.eps * p[m].m12 * nc[m];
                out.velocity[m] += cfg.eps * p[m].m22 * nc[m];
            }
        }
        if !out.is_finite() {
            return Err(Error::NumericalBlowup { t: f64::NAN });
        }
        Ok(out)
    }
}

/// Deterministic step (eps = 0, no control).
pub fn step_deterministic(z: &StateE, cfg: &SimConfig) -> Result<StateE> {
    Stepper::new(cfg).step(z, None, None)
}

/// Skeleton step with a per-mode control slice.
pub fn step_skeleton(z: &StateE, ctrl: &[f64], cfg: &SimConfig) -> Result<StateE> {
    Stepper::new(cfg).step(z, Some(ctrl), None)
}

/// Stochastic step drawing its own increment from `rng`.
pub fn step_stochastic(z: &StateE, cfg: &SimConfig, rng: &mut impl Rng) -> Result<StateE> {
    let dw = sample_noise_increment(cfg.grid.modes(), cfg.dt, rng);
    Stepper::new(cfg).step(z, None, Some(&dw))
}

/// K independent Gaussian increments of variance dt (the projection of
/// space-time white noise onto the sine modes).
pub fn sample_noise_increment(modes: usize, dt: f64, rng: &mut impl Rng) -> Vec<f64> {
    let s = dt.sqrt();
    (0..modes)
        .map(|_| s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Per-path RNG stream derived from the master seed; path-indexed streams
/// make parallel and serial runs agree.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index.wrapping_add(1));
    rng
}

/// Exact per-mode additive reference scheme (requires b = 0 and constant
/// sigma): samples the Gaussian pair with the true per-step covariance of
/// the stochastic convolution, Q(dt) = int_0^dt P(s) e2 e2^T P(s)^T ds.
pub struct ExactAdditiveStepper<'a> {
    cfg: &'a SimConfig,
    props: Vec<ModePropagator>,
    /// Lower Cholesky factors of the per-mode step covariance.
    chol: Vec<[f64; 3]>,
}

/// Covariance of int_0^t P(s) e2 dW per mode, by panel-refined Simpson
/// quadrature to the requested tolerance.
pub fn convolution_covariance(a: f64, alpha: f64, t: f64, tol: f64) -> [f64; 3] {
    let f = |s: f64| -> [f64; 3] {
        let p = propagator_for(a, alpha, s);
        [p.m12 * p.m12, p.m12 * p.m22, p.m22 * p.m22]
    };
    let mut n = 16usize;
    let mut prev = [f64::INFINITY; 3];
    loop {
        let h = t / n as f64;
        let mut acc = [0.0f64; 3];
        for i in 0..n {
            let x0 = i as f64 * h;
            let fa = f(x0);
            let fm = f(x0 + 0.5 * h);
            let fb = f(x0 + h);
            for j in 0..3 {
                acc[j] += h / 6.0 * (fa[j] + 4.0 * fm[j] + fb[j]);
            }
        }
        let err = (0..3).map(|j| (acc[j] - prev[j]).abs()).fold(0.0, f64::max);
        if err < tol || n > 1 << 16 {
            return acc;
        }
        prev = acc;
        n *= 2;
    }
}

impl<'a> ExactAdditiveStepper<'a> {
    pub fn new(cfg: &'a SimConfig) -> Result<Self> {
        let sigma = cfg
            .noise
            .is_constant()
            .ok_or_else(|| Error::Precondition("exact scheme needs constant sigma".into()))?;
        if cfg.drift.coefficients().iter().any(|&c| c != 0.0) {
            return Err(Error::Precondition("exact scheme needs b = 0".into()));
        }
        let props: Vec<ModePropagator> = cfg
            .grid
            .eigenvalues()
            .iter()
            .map(|&a| propagator_for(a, cfg.alpha, cfg.dt))
            .collect();
        let chol = cfg
            .grid
            .eigenvalues()
            .iter()
            .map(|&a| {
                let q = convolution_covariance(a, cfg.alpha, cfg.dt, 1e-14);
                let s2 = sigma * sigma;
                let (q11, q12, q22) = (q[0] * s2, q[1] * s2, q[2] * s2);
                let l11 = q11.sqrt();
                let l21 = if l11 > 0.0 { q12 / l11 } else { 0.0 };
                let l22 = (q22 - l21 * l21).max(0.0).sqrt();
                [l11, l21, l22]
            })
            .collect();
        Ok(ExactAdditiveStepper { cfg, props, chol })
    }

    pub fn step(&self, z: &StateE, rng: &mut impl Rng) -> StateE {
        let k = z.modes();
        let mut out = StateE::zero(k);
        for m in 0..k {
            let (u, v) = self.props[m].apply(z.position[m], z.velocity[m]);
            let n1: f64 = rng.sample(StandardNormal);
            let n2: f64 = rng.sample(StandardNormal);
            let l = &self.chol[m];
            out.position[m] = u + self.cfg.eps * l[0] * n1;
            out.velocity[m] = v + self.cfg.eps * (l[1] * n1 + l[2] * n2);
        }
        out
    }
}

/// How a simulated path ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Exit,
    Explosion,
    Timeout,
}

#[derive(Debug, Clone)]
pub struct PathOutcome {
    pub termination: Termination,
    pub tau: f64,
    pub final_state: StateE,
}

/// Stored trajectory, decimated by `stride` steps (the final state is
/// always recorded).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateE>,
    /// |v(t)|_H^2 at the stored times (for the damped energy identity).
    pub velocity_h_sq: Vec<f64>,
}

/// Integrate from z0 until domain exit, explosion (sup-norm crossing of
/// n_D) or the horizon. Exit times are refined within the crossing step by
/// bisection on the membership predicate to dt/16 accuracy.
pub fn simulate_path(
    z0: &StateE,
    cfg: &SimConfig,
    domain: Option<&DomainSpec>,
    path_index: u64,
    stride: usize,
) -> (Trajectory, PathOutcome) {
    let stepper = Stepper::new(cfg);
    let grid = &cfg.grid;
    let mut rng = path_rng(cfg.seed, path_index);
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        velocity_h_sq: Vec::new(),
    };
    let record = |traj: &mut Trajectory, t: f64, z: &StateE| {
        traj.times.push(t);
        traj.states.push(z.clone());
        traj.velocity_h_sq.push(
            z.velocity.iter().map(|v| v * v).sum::<f64>(),
        );
    };

    let mut z = z0.clone();
    let mut t = 0.0;
    record(&mut traj, t, &z);

    if z.sup_norm(grid) > cfg.cutoff {
        let out = PathOutcome {
            termination: Termination::Explosion,
            tau: 0.0,
            final_state: z,
        };
        return (traj, out);
    }
    if let Some(d) = domain {
        if !d.contains(&z, cfg) {
            let out = PathOutcome {
                termination: Termination::Exit,
                tau: 0.0,
                final_state: z,
            };
            return (traj, out);
        }
    }

    let n_steps = (cfg.horizon / cfg.dt).ceil() as usize;
    for step_idx in 0..n_steps {
        let dw = if cfg.eps > 0.0 {
            Some(sample_noise_increment(grid.modes(), cfg.dt, &mut rng))
        } else {
            None
        };
        let next = match stepper.step(&z, None, dw.as_deref()) {
            Ok(n) => n,
            Err(_) => {
                let out = PathOutcome {
                    termination: Termination::Explosion,
                    tau: t,
                    final_state: z.clone(),
                };
                return (traj, out);
            }
        };
        let t_next = t + cfg.dt;

        if next.sup_norm(grid) > cfg.cutoff {
            record(&mut traj, t_next, &next);
            let out = PathOutcome {
                termination: Termination::Explosion,
                tau: t_next,
                final_state: next,
            };
            return (traj, out);
        }

        if let Some(d) = domain {
            if !d.contains(&next, cfg) {
                // bisection refinement of the crossing time to dt/16
                let mut lo = 0.0;
                let mut hi = cfg.dt;
                let mut z_hi = next.clone();
                for _ in 0..4 {
                    let mid = 0.5 * (lo + hi);
                    match stepper.partial_step(&z, mid, None, dw.as_deref()) {
                        Ok(zm) => {
                            if d.contains(&zm, cfg) {
                                lo = mid;
                            } else {
                                hi = mid;
                                z_hi = zm;
                            }
                        }
                        Err(_) => break,
                    }
                }
                let tau = t + hi;
                record(&mut traj, tau, &z_hi);
                let out = PathOutcome {
                    termination: Termination::Exit,
                    tau,
                    final_state: z_hi,
                };
                return (traj, out);
            }
        }

        z = next;
        t = t_next;
        if (step_idx + 1) % stride == 0 {
            record(&mut traj, t, &z);
        }
    }
    if traj.times.last() != Some(&t) {
        record(&mut traj, t, &z);
    }
    let out = PathOutcome {
        termination: Termination::Timeout,
        tau: cfg.horizon,
        final_state: z,
    };
    (traj, out)
}

/// E(z) = 1/2 |v|_H^2 + 1/2 |u_x|_H^2 - int_0^l beta(u(x)) dx, with beta
/// the exact polynomial antiderivative and the integral by collocation
/// quadrature.
pub fn energy_functional(z: &StateE, drift: &PolynomialDrift, grid: &SpectralGrid) -> f64 {
    let kin: f64 = 0.5 * z.velocity.iter().map(|v| v * v).sum::<f64>();
    let grad: f64 = 0.5
        * z.position
            .iter()
            .zip(grid.eigenvalues())
            .map(|(&u, &a)| a * u * u)
            .sum::<f64>();
    let u_vals = grid.to_values(&z.position);
    let pot: f64 = grid.quadrature(
        &u_vals
            .iter()
            .map(|&x| drift.antiderivative(x))
            .collect::<Vec<_>>(),
    );
    kin + grad - pot
}

/// Monte Carlo estimate of E sup_{t <= T} |Gamma_Psi(t)|_E^2 for the
/// stochastic convolution driven by a deterministic bounded field path
/// Psi (collocation values as a function of time).
pub fn stochastic_convolution_sup_moment<F>(
    psi: F,
    cfg: &SimConfig,
    horizon: f64,
    n_mc: usize,
    seed: u64,
) -> f64
where
    F: Fn(f64) -> Vec<f64> + Sync,
{
    let grid = &cfg.grid;
    let props: Vec<ModePropagator> = grid
        .eigenvalues()
        .iter()
        .map(|&a| propagator_for(a, cfg.alpha, cfg.dt))
        .collect();
    let n_steps = (horizon / cfg.dt).ceil() as usize;
    let total: f64 = (0..n_mc as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(seed, path);
            let mut g = StateE::zero(grid.modes());
            let mut sup = 0.0f64;
            for i in 0..n_steps {
                let t = i as f64 * cfg.dt;
                let dw = sample_noise_increment(grid.modes(), cfg.dt, &mut rng);
                let dw_vals = grid.to_values(&dw);
                let psi_vals = psi(t);
                let forced: Vec<f64> = psi_vals
                    .iter()
                    .zip(&dw_vals)
                    .map(|(&p, &w)| p * w)
                    .collect();
                let nc = grid.to_coefficients(&forced);
                for m in 0..grid.modes() {
                    let (u, v) = props[m].apply(g.position[m], g.velocity[m]);
                    g.position[m] = u + props[m].m12 * nc[m];
                    g.velocity[m] = v + props[m].m22 * nc[m];
                }
                let norm = g.e_norm(grid);
                sup = sup.max(norm * norm);
            }
            sup
        })
        .sum();
    total / n_mc as f64
}


#[cfg(test)]
mod skeleton_tests {
    use super::*;
    use crate::control::{rate_functional, ControlPath};
    use crate::semigroup::propagator_for;

    fn pi() -> f64 {
        std::f64::consts::PI
    }

    #[test]
    fn skeleton_with_zero_control_equals_deterministic() {
        let grid = SpectralGrid::new(pi() / 2.0, 8);
        let cfg = SimConfig::new(grid, 1.0, 1e-3, PolynomialDrift::cubic(5.0));
        let mut z = StateE::zero(8);
        z.position[0] = 0.3;
        let a = step_deterministic(&z, &cfg).unwrap();
        let b = step_skeleton(&z, &vec![0.0; 8], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn skeleton_matches_duhamel_quadrature_oracle() {
        // sigma = 1, b = 0, h = c e_1 constant over [0, T]: the terminal
        // state is z(T) = S(T) z0 + c int_0^T P_1(T - s) e2 ds, evaluated
        // here by an independent fine Simpson quadrature of the propagator
        let grid = SpectralGrid::new(1.3, 8);
        let alpha = 0.8;
        let cfg = SimConfig::new(grid.clone(), alpha, 1e-3, PolynomialDrift::zero(5.0));
        let mut z0 = StateE::zero(8);
        z0.position[0] = 0.2;
        z0.velocity[1] = -0.1;
        let c = 0.7;
        let t_end = 1.2;
        let steps = 1200;
        let mut h = vec![0.0; 8];
        h[0] = c;
        let ctrl = ControlPath::new(t_end / steps as f64, vec![h; steps]);
        let (_, terminal) = rate_functional(&ctrl, &z0, &cfg).unwrap();

        // oracle: per-mode Simpson quadrature with 2^14 panels
        let a1 = grid.eigenvalue(1);
        let n = 1 << 14;
        let hq = t_end / n as f64;
        let mut acc = [0.0f64; 2];
        for i in 0..n {
            let eval = |s: f64| {
                let p = propagator_for(a1, alpha, t_end - s);
                [p.m12, p.m22]
            };
            let x0 = i as f64 * hq;
            let fa = eval(x0);
            let fm = eval(x0 + 0.5 * hq);
            let fb = eval(x0 + hq);
            for j in 0..2 {
                acc[j] += hq / 6.0 * (fa[j] + 4.0 * fm[j] + fb[j]);
            }
        }
        let free = crate::semigroup::apply_semigroup(&z0, alpha, t_end, &grid);
        let expect_u = free.position[0] + c * acc[0];
        let expect_v = free.velocity[0] + c * acc[1];
        assert!((terminal.position[0] - expect_u).abs() < 1e-6, "u: {} vs {}", terminal.position[0], expect_u);
        assert!((terminal.velocity[0] - expect_v).abs() < 1e-6, "v: {} vs {}", terminal.velocity[0], expect_v);
    }

    #[test]
    fn control_to_state_bound_is_linear_and_monotone() {
        // |Z^h - Z^0|_{C([0,T];E)} <= Lambda(|h|roken_L2) with Lambda linear
        // through the origin: fit the slope over control magnitudes
        let grid = SpectralGrid::new(pi() / 2.0, 8);
        let cfg = SimConfig::new(grid.clone(), 1.0, 2e-3, PolynomialDrift::cubic(5.0));
        let mut z0 = StateE::zero(8);
        z0.position[0] = 0.2;
        let t_end = 1.0;
        let steps = 100;
        let base_free = {
            let ctrl = ControlPath::zero(steps, 8, t_end / steps as f64);
            rate_functional(&ctrl, &z0, &cfg).unwrap().1
        };
        let mut gaps = Vec::new();
        let mut l2s = Vec::new();
        for &amp in &[0.05, 0.1, 0.2, 0.4] {
            let mut h = vec![0.0; 8];
            h[0] = amp;
            let ctrl = ControlPath::new(t_end / steps as f64, vec![h; steps]);
            let (energy, term) = rate_functional(&ctrl, &z0, &cfg).unwrap();
            gaps.push(term.sub(&base_free).e_norm(&grid));
            l2s.push((2.0 * energy).sqrt());
        }
        // monotone in |h|_{L^2}
        for w in gaps.windows(2) {
            assert!(w[1] > w[0]);
        }
        // linear through the origin: the fitted slope reproduces each gap
        // within 20% (the cubic bends it slightly at the large end)
        let slope = gaps
            .iter()
            .zip(&l2s)
            .map(|(g, l)| g / l)
            .sum::<f64>()
            / gaps.len() as f64;
        for (g, l) in gaps.iter().zip(&l2s) {
            assert!(
                (g - slope * l).abs() < 0.2 * g,
                "gap {g} vs linear fit {}",
                slope * l
            );
        }
    }

    #[test]
    fn skeleton_continuity_under_weak_perturbations() {
        // oscillatory perturbations of fixed L2 norm converge weakly to
        // zero; the terminal-state gap must shrink monotonically with the
        // oscillation frequency
        let grid = SpectralGrid::new(pi() / 2.0, 8);
        let cfg = SimConfig::new(grid.clone(), 1.0, 1e-3, PolynomialDrift::cubic(5.0));
        let mut z0 = StateE::zero(8);
        z0.position[0] = 0.2;
        let t_end = 1.0;
        let steps = 400;
        let dt_c = t_end / steps as f64;
        let base: Vec<Vec<f64>> = (0..steps)
            .map(|_| {
                let mut h = vec![0.0; 8];
                h[0] = 0.3;
                h
            })
            .collect();
        let (_, ref_term) = rate_functional(&ControlPath::new(dt_c, base.clone()), &z0, &cfg).unwrap();
        let mut gaps = Vec::new();
        for &freq in &[4.0, 16.0, 64.0] {
            let mut slices = base.clone();
            for (i, s) in slices.iter_mut().enumerate() {
                let t = i as f64 * dt_c;
                s[1] = 0.5 * (2.0 * pi() * freq * t).sin();
            }
            let (_, term) = rate_functional(&ControlPath::new(dt_c, slices), &z0, &cfg).unwrap();
            gaps.push(term.sub(&ref_term).e_norm(&grid));
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "gaps {gaps:?}");
    }

    #[test]
    fn stochastic_strong_self_convergence_reported() {
        // halving dt against a dt/16 reference with shared noise; the
        // observed order is reported, not asserted (only sanity-checked)
        let grid = SpectralGrid::new(pi() / 2.0, 8);
        let t_end = 0.25;
        let run = |dt: f64| -> StateE {
            let cfg = SimConfig::new(grid.clone(), 1.0, dt, PolynomialDrift::cubic(5.0))
                .with_noise(NoiseCoefficient::constant(1.0), 0.3);
            let stepper = Stepper::new(&cfg);
            // shared noise: one increment per fine step, aggregated for
            // coarser runs
            let fine_dt = 1e-3 / 16.0;
            let mut rng = path_rng(5, 0);
            let n_fine = (t_end / fine_dt).round() as usize;
            let increments: Vec<Vec<f64>> = (0..n_fine)
                .map(|_| sample_noise_increment(8, fine_dt, &mut rng))
                .collect();
            let group = (dt / fine_dt).round() as usize;
            let mut z = StateE::zero(8);
            z.position[0] = 0.3;
            for chunk in increments.chunks(group) {
                let mut dw = vec![0.0; 8];
                for inc in chunk {
                    for (d, i) in dw.iter_mut().zip(inc) {
                        *d += i;
                    }
                }
                z = stepper.step(&z, None, Some(&dw)).unwrap();
            }
            z
        };
        let reference = run(1e-3 / 16.0);
        let e1 = run(1e-3).sub(&reference).e_norm(&grid);
        let e2 = run(5e-4).sub(&reference).e_norm(&grid);
        let order = (e1 / e2).log2();
        println!("strong self-convergence: errors {e1:.3e} -> {e2:.3e}, observed order {order:.2}");
        assert!(order > 0.2, "no convergence at all: order {order}");
    }
}
