//! Dirichlet sine eigenbasis on (0, l): collocation points, eigenvalues,
//! forward/inverse transforms and the norms built on top of them.
//!
//! The basis functions are e_k(x) = sqrt(2/l) sin(k pi x / l) with
//! eigenvalues a_k = (k pi / l)^2 of -d^2/dx^2, k = 1..K. Collocation
//! points are the K interior nodes x_j = j l / (K+1), on which the
//! discrete sine transform is exactly orthogonal, so forward-then-inverse
//! is the identity up to rounding.

use crate::error::{Error, Result};

/// Refinement factor used when evaluating antiderivative (C^{-1}) norms.
pub const CMINUS_REFINEMENT: usize = 4;

/// Relative tolerance below which a field is treated as identically zero.
pub const DEGENERATE_SUP_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct SpectralGrid {
    /// Interval length l.
    ell: f64,
    /// Mode count K.
    modes: usize,
    /// Interior collocation points x_j = j l/(K+1), j = 1..K.
    points: Vec<f64>,
    /// Dirichlet eigenvalues a_k = (k pi / l)^2, k = 1..K.
    eigenvalues: Vec<f64>,
    /// basis[k*K + j] = e_{k+1}(x_{j+1}); shared by both transform directions.
    basis: Vec<f64>,
    /// Antiderivative basis on the refinement grid: anti[i*K + k] is the
    /// antiderivative of e_{k+1} at the i-th refinement node.
    anti: Vec<f64>,
    /// Refinement node count (CMINUS_REFINEMENT * (K+1) + 1, spanning [0, l]).
    anti_rows: usize,
    /// Quadrature weight h = l/(K+1).
    weight: f64,
}

impl SpectralGrid {
    pub fn new(ell: f64, modes: usize) -> Self {
        assert!(ell > 0.0, "interval length must be positive");
        assert!(modes > 0, "mode count must be positive");
        let n = modes + 1;
        let weight = ell / n as f64;
        let points: Vec<f64> = (1..=modes).map(|j| j as f64 * ell / n as f64).collect();
        let eigenvalues: Vec<f64> = (1..=modes)
            .map(|k| {
                let w = k as f64 * std::f64::consts::PI / ell;
                w * w
            })
            .collect();
        let scale = (2.0 / ell).sqrt();
        let mut basis = vec![0.0; modes * modes];
        for k in 0..modes {
            for j in 0..modes {
                let arg = (k + 1) as f64 * (j + 1) as f64 * std::f64::consts::PI / n as f64;
                basis[k * modes + j] = scale * arg.sin();
            }
        }
        let anti_rows = CMINUS_REFINEMENT * n + 1;
        let mut anti = vec![0.0; anti_rows * modes];
        for i in 0..anti_rows {
            let x = i as f64 * ell / (anti_rows - 1) as f64;
            for k in 0..modes {
                let kk = (k + 1) as f64;
                anti[i * modes + k] = scale * ell / (kk * std::f64::consts::PI)
                    * (1.0 - (kk * std::f64::consts::PI * x / ell).cos());
            }
        }
        Self {
            ell,
            modes,
            points,
            eigenvalues,
            basis,
            anti,
            anti_rows,
            weight,
        }
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// a_k for the 1-based mode index k.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k - 1]
    }

    pub fn quadrature_weight(&self) -> f64 {
        self.weight
    }

    /// e_k(x) for the 1-based mode index k, at arbitrary x.
    pub fn eigenfunction(&self, k: usize, x: f64) -> f64 {
        (2.0 / self.ell).sqrt() * (k as f64 * std::f64::consts::PI * x / self.ell).sin()
    }

    /// e_{k+1}(x_{j+1}) from the precomputed basis table (0-based indices).
    pub fn basis_value(&self, mode: usize, point: usize) -> f64 {
        self.basis[mode * self.modes + point]
    }

    pub fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.modes {
            return Err(Error::DimensionMismatch {
                expected: self.modes,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Collocation samples -> sine coefficients (quadrature projection).
    pub fn to_coefficients(&self, values: &[f64]) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.modes);
        let k = self.modes;
        let mut out = vec![0.0; k];
        for (m, o) in out.iter_mut().enumerate() {
            let row = &self.basis[m * k..(m + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                acc += row[j] * values[j];
            }
            *o = acc * self.weight;
        }
        out
    }

    /// Sine coefficients -> collocation samples.
    pub fn to_values(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.modes);
        let k = self.modes;
        let mut out = vec![0.0; k];
        for m in 0..k {
            let c = coeffs[m];
            if c == 0.0 {
                continue;
            }
            let row = &self.basis[m * k..(m + 1) * k];
            for j in 0..k {
                out[j] += c * row[j];
            }
        }
        out
    }

    /// Band-limited point evaluation of a coefficient vector at arbitrary x.
    /// The sine series is its own odd 2l-periodic extension, so this is
    /// valid for every real x.
    pub fn eval_series(&self, coeffs: &[f64], x: f64) -> f64 {
        let scale = (2.0 / self.ell).sqrt();
        let base = std::f64::consts::PI * x / self.ell;
        let mut acc = 0.0;
        for (k, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                acc += c * ((k + 1) as f64 * base).sin();
            }
        }
        scale * acc
    }

    /// Antiderivative of a coefficient vector, vanishing at 0:
    /// F(x) = sum_k c_k sqrt(2/l) (l/(k pi)) (1 - cos(k pi x / l)).
    /// The formula is even and 2l-periodic, i.e. it already evaluates the
    /// antiderivative of the odd periodic extension at any real x.
    pub fn eval_antiderivative(&self, coeffs: &[f64], x: f64) -> f64 {
        let scale = (2.0 / self.ell).sqrt();
        let base = std::f64::consts::PI * x / self.ell;
        let mut acc = 0.0;
        for (k, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                let kk = (k + 1) as f64;
                acc += c * self.ell / (kk * std::f64::consts::PI) * (1.0 - (kk * base).cos());
            }
        }
        scale * acc
    }

    /// Grid maximum of |values|. A lower bound of the continuum sup norm
    /// with O(K^-2) gap for H^2-regular fields.
    pub fn sup_norm(&self, values: &[f64]) -> f64 {
        values.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// C^{-1} norm of a velocity coefficient vector: max of |antiderivative|
    /// over a refinement grid (factor >= 4 over collocation resolution).
    pub fn cminus_norm(&self, coeffs: &[f64]) -> f64 {
        let k = self.modes;
        let mut m = 0.0f64;
        for i in 1..self.anti_rows {
            let row = &self.anti[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                acc += row[j] * coeffs[j];
            }
            m = m.max(acc.abs());
        }
        m
    }

    /// Argmax of |values| over the collocation grid: (index, signed value).
    pub fn sup_argmax(&self, values: &[f64]) -> (usize, f64) {
        let mut best = (0usize, 0.0f64);
        for (i, &v) in values.iter().enumerate() {
            if v.abs() > best.1.abs() {
                best = (i, v);
            }
        }
        best
    }

    /// Argmax of the |antiderivative| over the refinement grid:
    /// (row index, signed value). Row 0 is x = 0 where it vanishes.
    pub fn cminus_argmax(&self, coeffs: &[f64]) -> (usize, f64) {
        let k = self.modes;
        let mut best = (0usize, 0.0f64);
        for i in 1..self.anti_rows {
            let row = &self.anti[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                acc += row[j] * coeffs[j];
            }
            if acc.abs() > best.1.abs() {
                best = (i, acc);
            }
        }
        best
    }

    /// Antiderivative-basis row of the refinement grid.
    pub fn anti_row(&self, i: usize) -> &[f64] {
        &self.anti[i * self.modes..(i + 1) * self.modes]
    }

    /// H^delta norm: (sum_k a_k^delta c_k^2)^{1/2}.
    pub fn hdelta_norm(&self, coeffs: &[f64], delta: f64) -> f64 {
        coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(&c, &a)| a.powf(delta) * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// L^2 quadrature norm of collocation samples, (h sum v_j^2)^{1/2}.
    pub fn l2_norm_values(&self, values: &[f64]) -> f64 {
        (self.weight * values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Collocation quadrature of samples, h sum v_j.
    pub fn quadrature(&self, values: &[f64]) -> f64 {
        self.weight * values.iter().sum::<f64>()
    }
}

/// Odd, 2l-periodic extension of a sampled position field, evaluated
/// pointwise: exact on collocation-aligned x, linear interpolation between
/// nodes (the boundary values u(0) = u(l) = 0 are implied).
pub fn odd_periodic_extend(grid: &SpectralGrid, values: &[f64], x: f64) -> f64 {
    let ell = grid.ell();
    // fold into [-l, l)
    let period = 2.0 * ell;
    let mut r = x % period;
    if r >= ell {
        r -= period;
    } else if r < -ell {
        r += period;
    }
    let (sign, xr) = if r < 0.0 { (-1.0, -r) } else { (1.0, r) };
    // linear interpolation on [0, l] with zero boundary values
    let h = grid.quadrature_weight();
    let s = xr / h;
    let j = s.floor() as usize; // node index, 0 = left boundary
    let frac = s - j as f64;
    let n = values.len();
    let node = |i: usize| -> f64 {
        if i == 0 || i > n {
            0.0
        } else {
            values[i - 1]
        }
    };
    if j >= n + 1 {
        return 0.0; // xr == l up to rounding
    }
    sign * (node(j) * (1.0 - frac) + node(j + 1) * frac)
}

/// Subdifferential of the sup norm: the argmax set of |u| with signs.
#[derive(Debug, Clone)]
pub struct SubdifferentialSet {
    /// (location, sign) pairs at which |u| attains its grid maximum
    /// within the relative tolerance.
    pub maximizers: Vec<(f64, i8)>,
    /// Set when |u|_inf is at machine scale; the subdifferential is the
    /// whole dual unit ball and the argmax description is meaningless.
    pub degenerate: bool,
}

/// All grid locations within `tol * |u|_inf` of the maximum of |u|,
/// with the sign of u there.
pub fn subdifferential_sup_norm(
    grid: &SpectralGrid,
    values: &[f64],
    tol: f64,
) -> SubdifferentialSet {
    assert!(tol > 0.0, "argmax tolerance must be positive");
    let sup = grid.sup_norm(values);
    if sup < DEGENERATE_SUP_TOL {
        return SubdifferentialSet {
            maximizers: Vec::new(),
            degenerate: true,
        };
    }
    let cut = sup * (1.0 - tol);
    let maximizers = grid
        .points()
        .iter()
        .zip(values)
        .filter(|(_, v)| v.abs() >= cut)
        .map(|(&x, &v)| (x, if v > 0.0 { 1i8 } else { -1i8 }))
        .collect();
    SubdifferentialSet {
        maximizers,
        degenerate: false,
    }
}
