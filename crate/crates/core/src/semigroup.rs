//! Linear propagators for the damped wave equation: the group S_alpha(t)
//! mode by mode, the undamped d'Alembert evolution as an independent
//! representation of S_0(t), the semigroup linearized at an equilibrium,
//! and empirical decay-rate measurement.

use crate::error::{Error, Result};
use crate::grid::SpectralGrid;
use crate::state::StateE;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// 2x2 solution matrix of u'' + alpha u' + a u = 0 over time t, mapping
/// (u(0), u'(0)) -> (u(t), u'(t)).
#[derive(Debug, Clone, Copy)]
pub struct ModePropagator {
    pub a: f64,
    pub alpha: f64,
    pub t: f64,
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl ModePropagator {
    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        (self.m11 * u + self.m12 * v, self.m21 * u + self.m22 * v)
    }

    /// det = e^{-alpha t} (Abel/Wronskian identity).
    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }
}

/// cosh(g t) and sinh(g t)/g as functions of d = g^2, stable through d = 0.
/// d > 0 is the overdamped branch, d < 0 underdamped (trig), and near the
/// critical point the Taylor series in d avoids the 0/0 cancellation.
fn cosh_sinhc(d: f64, t: f64) -> (f64, f64) {
    if (d * t * t).abs() < 1e-4 {
        // c = sum d^n t^{2n} / (2n)!,  s = sum d^n t^{2n+1} / (2n+1)!
        let mut c = 1.0;
        let mut s = t;
        let mut term_c = 1.0;
        let mut term_s = t;
        for n in 1..=6 {
            let nn = n as f64;
            term_c *= d * t * t / ((2.0 * nn - 1.0) * (2.0 * nn));
            term_s *= d * t * t / ((2.0 * nn) * (2.0 * nn + 1.0));
            c += term_c;
            s += term_s;
        }
        (c, s)
    } else if d > 0.0 {
        let g = d.sqrt();
        ((g * t).cosh(), (g * t).sinh() / g)
    } else {
        let w = (-d).sqrt();
        ((w * t).cos(), (w * t).sin() / w)
    }
}

/// Propagator for the raw eigenvalue a (not necessarily a grid eigenvalue;
/// the linearized semigroup feeds shifted spectra through here).
pub fn propagator_for(a: f64, alpha: f64, t: f64) -> ModePropagator {
    let d = alpha * alpha / 4.0 - a; // gamma^2
    let (c, s) = cosh_sinhc(d, t);
    let e = (-alpha * t / 2.0).exp();
    ModePropagator {
        a,
        alpha,
        t,
        m11: e * (c + 0.5 * alpha * s),
        m12: e * s,
        m21: -a * e * s,
        m22: e * (c - 0.5 * alpha * s),
    }
}

/// Propagator of grid mode k (1-based).
pub fn mode_propagator(k: usize, alpha: f64, t: f64, grid: &SpectralGrid) -> ModePropagator {
    propagator_for(grid.eigenvalue(k), alpha, t)
}

/// Apply S_alpha(t) mode by mode.
pub fn apply_semigroup(z: &StateE, alpha: f64, t: f64, grid: &SpectralGrid) -> StateE {
    let k = grid.modes();
    let mut out = StateE::zero(k);
    for m in 0..k {
        let p = propagator_for(grid.eigenvalues()[m], alpha, t);
        let (u, v) = p.apply(z.position[m], z.velocity[m]);
        out.position[m] = u;
        out.velocity[m] = v;
    }
    out
}

/// Undamped evolution through d'Alembert's formula, an independent
/// representation of S_0(t).
///
/// Position: 1/2 (u°(x-t) + u°(x+t)) + 1/2 (V°(x+t) - V°(x-t)).
/// Velocity: recovered from its antiderivative (vanishing at 0)
///   W(x) = 1/2 (u°(x+t) - u°(x-t)) + 1/2 (V°(x+t) + V°(x-t)) - W_0,
/// where V° is the (even, 2l-periodic) antiderivative of the odd extension
/// of v and W_0 pins W(0) = 0. Both extensions are evaluated through the
/// band-limited series, which is exact for spectral states; the velocity
/// coefficients come out of a cosine-transform of W on a midpoint grid.
pub fn dalembert_evolve(z: &StateE, t: f64, grid: &SpectralGrid) -> StateE {
    let k = grid.modes();
    let ell = grid.ell();

    // position at the collocation points, then project
    let mut pos_vals = Vec::with_capacity(k);
    for &x in grid.points() {
        let up = grid.eval_series(&z.position, x + t);
        let um = grid.eval_series(&z.position, x - t);
        let vp = grid.eval_antiderivative(&z.velocity, x + t);
        let vm = grid.eval_antiderivative(&z.velocity, x - t);
        pos_vals.push(0.5 * (um + up) + 0.5 * (vp - vm));
    }
    let position = grid.to_coefficients(&pos_vals);

    // velocity antiderivative on a midpoint grid, cosine-transformed
    let n = 2 * (k + 1);
    let w_at = |x: f64| -> f64 {
        let up = grid.eval_series(&z.position, x + t);
        let um = grid.eval_series(&z.position, x - t);
        let vp = grid.eval_antiderivative(&z.velocity, x + t);
        let vm = grid.eval_antiderivative(&z.velocity, x - t);
        0.5 * (up - um) + 0.5 * (vp + vm)
    };
    let w0 = w_at(0.0);
    let samples: Vec<f64> = (0..n)
        .map(|i| w_at((i as f64 + 0.5) * ell / n as f64) - w0)
        .collect();
    let mut velocity = vec![0.0; k];
    for (m, vel) in velocity.iter_mut().enumerate() {
        let kk = (m + 1) as f64;
        let mut acc = 0.0;
        for (i, &s) in samples.iter().enumerate() {
            acc += s * (kk * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos();
        }
        let coef = 2.0 * acc / n as f64;
        *vel = -coef * kk * std::f64::consts::PI / ell * (ell / 2.0).sqrt();
    }

    StateE::new(position, velocity)
}

/// Spectrum and eigenbasis of the Galerkin matrix of -d^2/dx^2 - b'(x*)
/// in the sine basis.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    /// Eigenvalues a_k^b, ascending.
    pub eigenvalues: Vec<f64>,
    /// Column m holds the sine coefficients of the m-th eigenvector.
    pub eigenvectors: DMatrix<f64>,
    /// Spectral gap a_2^b - a_1^b.
    pub gap: f64,
}

/// Galerkin-assemble and diagonalize the operator linearized at the
/// position field x* (given by sine coefficients). `bprime_values` are the
/// collocation samples of b'(x*).
pub fn assemble_linearized_operator(
    bprime_values: &[f64],
    grid: &SpectralGrid,
) -> Result<LinearizedOperator> {
    grid.check_len(bprime_values)?;
    let k = grid.modes();
    let h = grid.quadrature_weight();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for row in 0..k {
        for col in row..k {
            let mut acc = 0.0;
            for i in 0..k {
                acc += bprime_values[i]
                    * grid.eigenfunction(row + 1, grid.points()[i])
                    * grid.eigenfunction(col + 1, grid.points()[i]);
            }
            let mut val = -h * acc;
            if row == col {
                val += grid.eigenvalues()[row];
            }
            a[(row, col)] = val;
            a[(col, row)] = val;
        }
    }
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::<f64>::zeros(k, k);
    for (newcol, &oldcol) in order.iter().enumerate() {
        eigenvectors.set_column(newcol, &eig.eigenvectors.column(oldcol));
    }
    let gap = eigenvalues[1] - eigenvalues[0];
    if gap <= 0.0 {
        return Err(Error::StabilityAssumptionViolated { gap });
    }
    Ok(LinearizedOperator {
        eigenvalues,
        eigenvectors,
        gap,
    })
}

/// Apply the linearized semigroup: per-eigenmode propagation with a_k
/// replaced by a_k^b, in the eigenvector basis.
pub fn apply_linearized_semigroup(
    z: &StateE,
    alpha: f64,
    t: f64,
    op: &LinearizedOperator,
) -> StateE {
    let k = z.modes();
    let q = &op.eigenvectors;
    let u = nalgebra::DVector::from_column_slice(&z.position);
    let v = nalgebra::DVector::from_column_slice(&z.velocity);
    let mut uh = q.transpose() * u;
    let mut vh = q.transpose() * v;
    for m in 0..k {
        let p = propagator_for(op.eigenvalues[m], alpha, t);
        let (a, b) = p.apply(uh[m], vh[m]);
        uh[m] = a;
        vh[m] = b;
    }
    let u_out = q * uh;
    let v_out = q * vh;
    StateE::new(u_out.as_slice().to_vec(), v_out.as_slice().to_vec())
}

/// Fitted exponential decay of the semigroup in E-norm.
#[derive(Debug, Clone, Copy)]
pub struct DecayEstimate {
    /// Least-squares rate of the log-envelope over [T/2, T].
    pub rate: f64,
    /// sup_t envelope(t) e^{rate t} over the sample grid.
    pub prefactor: f64,
    pub horizon: f64,
    pub samples: usize,
}

/// Envelope fit shared by the plain and linearized measurements: evolve
/// random unit-E states with `evolve`, fit the log of the worst-case
/// envelope on [T/2, T].
pub fn measure_decay_rate_with<F>(
    evolve: F,
    grid: &SpectralGrid,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> DecayEstimate
where
    F: Fn(&StateE, f64) -> StateE,
{
    let k = grid.modes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let pos: Vec<f64> = (0..k)
            .map(|m| rng.sample::<f64, _>(StandardNormal) / (m + 1) as f64)
            .collect();
        let vel: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut z = StateE::new(pos, vel);
        let norm = z.e_norm(grid);
        z = z.scale(1.0 / norm);
        states.push(z);
    }
    let n_t = 64;
    let times: Vec<f64> = (0..=n_t).map(|i| horizon * i as f64 / n_t as f64).collect();
    let mut envelope = Vec::with_capacity(times.len());
    for &t in &times {
        let worst = states
            .iter()
            .map(|z| evolve(z, t).e_norm(grid))
            .fold(0.0f64, f64::max);
        envelope.push(worst);
    }
    // least-squares slope of log envelope on [T/2, T]
    let fit: Vec<(f64, f64)> = times
        .iter()
        .zip(&envelope)
        .filter(|(&t, &e)| t >= horizon / 2.0 && e > 0.0)
        .map(|(&t, &e)| (t, e.ln()))
        .collect();
    let n = fit.len() as f64;
    let sx: f64 = fit.iter().map(|p| p.0).sum();
    let sy: f64 = fit.iter().map(|p| p.1).sum();
    let sxx: f64 = fit.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = fit.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let rate = -slope;
    let prefactor = times
        .iter()
        .zip(&envelope)
        .map(|(&t, &e)| e * (rate * t).exp())
        .fold(0.0f64, f64::max);
    DecayEstimate {
        rate,
        prefactor,
        horizon,
        samples: n_samples,
    }
}

/// Tabulate the worst-case E-norm envelope used by the decay fit (the
/// same sample population as [`measure_decay_rate`]).
pub fn decay_envelope(
    grid: &SpectralGrid,
    alpha: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    let k = grid.modes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let pos: Vec<f64> = (0..k)
            .map(|m| rng.sample::<f64, _>(StandardNormal) / (m + 1) as f64)
            .collect();
        let vel: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut z = StateE::new(pos, vel);
        let norm = z.e_norm(grid);
        z = z.scale(1.0 / norm);
        states.push(z);
    }
    (0..=64)
        .map(|i| {
            let t = horizon * i as f64 / 64.0;
            let env = states
                .iter()
                .map(|z| apply_semigroup(z, alpha, t, grid).e_norm(grid))
                .fold(0.0f64, f64::max);
            (t, env)
        })
        .collect()
}

/// Draw random unit-E-norm states, evolve under S_alpha, and fit the decay
/// rate of the worst-case E-norm envelope. The fit window [T/2, T] discards
/// transients.
pub fn measure_decay_rate(
    grid: &SpectralGrid,
    alpha: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> DecayEstimate {
    measure_decay_rate_with(
        |z, t| apply_semigroup(z, alpha, t, grid),
        grid,
        horizon,
        n_samples,
        seed,
    )
}

/// Decay estimate of the linearized semigroup; the fitted prefactor serves
/// as the constant A_1 of the attraction recursion.
pub fn measure_linearized_decay(
    op: &LinearizedOperator,
    grid: &SpectralGrid,
    alpha: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> DecayEstimate {
    measure_decay_rate_with(
        |z, t| apply_linearized_semigroup(z, alpha, t, op),
        grid,
        horizon,
        n_samples,
        seed,
    )
}
