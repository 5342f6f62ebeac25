//! Polynomial drift b with its tangent-line localization b_n, and the
//! noise coefficient sigma with the same localization.

/// Polynomial nonlinearity b(x) = c_0 + c_1 x + ... + c_gamma x^gamma,
/// together with the cutoff radius n of the localized b_n: b on [-n, n],
/// extended outside by the tangent lines at +-n (globally Lipschitz).
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialDrift {
    coeffs: Vec<f64>,
    cutoff: f64,
}

impl PolynomialDrift {
    pub fn new(coeffs: Vec<f64>, cutoff: f64) -> Self {
        assert!(cutoff > 0.0, "localization cutoff must be positive");
        assert!(!coeffs.is_empty());
        Self { coeffs, cutoff }
    }

    /// The cubic b(u) = u - u^3.
    pub fn cubic(cutoff: f64) -> Self {
        Self::new(vec![0.0, 1.0, 0.0, -1.0], cutoff)
    }

    pub fn linear(slope: f64, cutoff: f64) -> Self {
        Self::new(vec![0.0, slope], cutoff)
    }

    pub fn zero(cutoff: f64) -> Self {
        Self::new(vec![0.0], cutoff)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn with_cutoff(&self, cutoff: f64) -> Self {
        Self::new(self.coeffs.clone(), cutoff)
    }

    /// Raw polynomial value (no localization).
    pub fn eval_raw(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// k-th derivative of the raw polynomial.
    pub fn derivative_raw(&self, x: f64, order: usize) -> f64 {
        let mut acc = 0.0;
        for (i, &c) in self.coeffs.iter().enumerate().skip(order).rev() {
            let mut f = 1.0;
            for m in 0..order {
                f *= (i - m) as f64;
            }
            acc = acc * x + c * f;
        }
        acc
    }

    /// Localized drift b_n.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.cutoff;
        if x > n {
            self.eval_raw(n) + (x - n) * self.derivative_raw(n, 1)
        } else if x < -n {
            self.eval_raw(-n) + (x + n) * self.derivative_raw(-n, 1)
        } else {
            self.eval_raw(x)
        }
    }

    /// Derivative of the localized drift.
    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.cutoff;
        self.derivative_raw(x.clamp(-n, n), 1)
    }

    /// Exact polynomial antiderivative beta(x) = int_0^x b, without
    /// localization (energy bookkeeping happens inside the cutoff).
    pub fn antiderivative(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &c) in self.coeffs.iter().enumerate().rev() {
            acc = acc * x + c / (i + 1) as f64;
        }
        acc * x
    }

    /// Lipschitz constant of b_n: max_{|x| <= n} |b'(x)|, by dense scan.
    pub fn lipschitz_constant(&self) -> f64 {
        let n = self.cutoff;
        (0..=4000)
            .map(|i| -n + 2.0 * n * i as f64 / 4000.0)
            .map(|x| self.derivative_raw(x, 1).abs())
            .fold(0.0, f64::max)
    }

    pub fn eval_slice(&self, xs: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = self.eval(x);
        }
    }
}

/// Noise coefficient sigma, with the non-degeneracy floor C_sigma and the
/// localization cutoff mirrored from the drift.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCoefficient {
    Constant { value: f64 },
    /// sigma(x) = base + amp / (1 + (x/scale)^2): smooth, bounded in
    /// (base, base + amp].
    BoundedSmooth { base: f64, amp: f64, scale: f64 },
}

impl NoiseCoefficient {
    pub fn constant(value: f64) -> Self {
        assert!(value > 0.0);
        NoiseCoefficient::Constant { value }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, NoiseCoefficient::Constant { value } if (*value - 1.0).abs() < 1e-15)
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self {
            NoiseCoefficient::Constant { value } => Some(*value),
            _ => None,
        }
    }

    /// Raw sigma.
    pub fn eval_raw(&self, x: f64) -> f64 {
        match self {
            NoiseCoefficient::Constant { value } => *value,
            NoiseCoefficient::BoundedSmooth { base, amp, scale } => {
                let r = x / scale;
                base + amp / (1.0 + r * r)
            }
        }
    }

    fn derivative_raw(&self, x: f64) -> f64 {
        match self {
            NoiseCoefficient::Constant { .. } => 0.0,
            NoiseCoefficient::BoundedSmooth { amp, scale, .. } => {
                let r = x / scale;
                -amp * 2.0 * r / (scale * (1.0 + r * r) * (1.0 + r * r))
            }
        }
    }

    /// Localized sigma_n (tangent-line extension beyond the cutoff).
    pub fn eval(&self, x: f64, cutoff: f64) -> f64 {
        if x > cutoff {
            self.eval_raw(cutoff) + (x - cutoff) * self.derivative_raw(cutoff)
        } else if x < -cutoff {
            self.eval_raw(-cutoff) + (x + cutoff) * self.derivative_raw(-cutoff)
        } else {
            self.eval_raw(x)
        }
    }

    /// Lower bound of sigma over the sampled range [-range, range];
    /// compare against the configured C_sigma.
    pub fn sampled_lower_bound(&self, range: f64, cutoff: f64) -> f64 {
        (0..=4000)
            .map(|i| -range + 2.0 * range * i as f64 / 4000.0)
            .map(|x| self.eval(x, cutoff))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cubic_values_and_derivatives() {
        let b = PolynomialDrift::cubic(10.0);
        assert_relative_eq!(b.eval_raw(0.5), 0.5 - 0.125);
        assert_relative_eq!(b.derivative_raw(0.5, 1), 1.0 - 3.0 * 0.25);
        assert_relative_eq!(b.derivative_raw(0.7, 2), -6.0 * 0.7);
        assert_relative_eq!(b.derivative_raw(0.7, 3), -6.0);
        assert_relative_eq!(b.derivative_raw(0.7, 4), 0.0);
        // beta(x) = x^2/2 - x^4/4
        assert_relative_eq!(b.antiderivative(2.0), 2.0 - 4.0);
        assert_relative_eq!(b.antiderivative(0.0), 0.0);
    }

    #[test]
    fn localization_matches_inside_and_is_tangent_outside() {
        let n = 1.5;
        let b = PolynomialDrift::cubic(n);
        assert_relative_eq!(b.eval(1.2), b.eval_raw(1.2));
        assert_relative_eq!(b.eval(-0.3), b.eval_raw(-0.3));
        // outside: linear with slope b'(+-n)
        let s = b.derivative_raw(n, 1);
        assert_relative_eq!(b.eval(2.5), b.eval_raw(n) + s * 1.0, max_relative = 1e-14);
        let sm = b.derivative_raw(-n, 1);
        assert_relative_eq!(b.eval(-2.5), b.eval_raw(-n) + sm * -1.0, max_relative = 1e-14);
    }

    #[test]
    fn localized_drift_is_globally_lipschitz() {
        let b = PolynomialDrift::cubic(2.0);
        let lip = b.lipschitz_constant();
        assert_relative_eq!(lip, 3.0 * 4.0 - 1.0, max_relative = 1e-3);
        // difference quotients on a dense grid spanning past the cutoff
        let xs: Vec<f64> = (0..2000).map(|i| -5.0 + 10.0 * i as f64 / 1999.0).collect();
        for w in xs.windows(2) {
            let q = (b.eval(w[1]) - b.eval(w[0])) / (w[1] - w[0]);
            assert!(q.abs() <= lip + 1e-9);
        }
    }

    #[test]
    fn noise_floor_holds_on_sampled_range() {
        let s = NoiseCoefficient::BoundedSmooth {
            base: 0.5,
            amp: 0.8,
            scale: 1.0,
        };
        let lb = s.sampled_lower_bound(4.0, 2.0);
        assert!(lb > 0.3, "sigma dipped to {lb}");
        let c = NoiseCoefficient::constant(0.7);
        assert_relative_eq!(c.sampled_lower_bound(10.0, 2.0), 0.7);
    }
}
