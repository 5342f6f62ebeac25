//! Phase-space points z = (u, v): continuous position (vanishing at the
//! endpoints) paired with a distributional velocity, both held as sine
//! coefficients. Collocation views are derived through the grid transforms.

use crate::grid::SpectralGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct StateE {
    /// Sine coefficients of the position u.
    pub position: Vec<f64>,
    /// Sine coefficients of the velocity v (a distribution; its pointwise
    /// meaning is through the antiderivative).
    pub velocity: Vec<f64>,
}

impl StateE {
    pub fn new(position: Vec<f64>, velocity: Vec<f64>) -> Self {
        assert_eq!(position.len(), velocity.len());
        Self { position, velocity }
    }

    pub fn zero(modes: usize) -> Self {
        Self {
            position: vec![0.0; modes],
            velocity: vec![0.0; modes],
        }
    }

    pub fn modes(&self) -> usize {
        self.position.len()
    }

    /// Collocation samples of the position.
    pub fn position_values(&self, grid: &SpectralGrid) -> Vec<f64> {
        grid.to_values(&self.position)
    }

    /// |u|_inf on the collocation grid.
    pub fn sup_norm(&self, grid: &SpectralGrid) -> f64 {
        grid.sup_norm(&grid.to_values(&self.position))
    }

    /// |v|_{C^-1}: sup of the velocity antiderivative on the refinement grid.
    pub fn cminus_norm(&self, grid: &SpectralGrid) -> f64 {
        grid.cminus_norm(&self.velocity)
    }

    /// |z|_E = |u|_inf + |v|_{C^-1}.
    pub fn e_norm(&self, grid: &SpectralGrid) -> f64 {
        self.sup_norm(grid) + self.cminus_norm(grid)
    }

    /// |z|_H = |u|_{L^2} + |v|_{H^-1}.
    pub fn h_norm(&self, grid: &SpectralGrid) -> f64 {
        grid.hdelta_norm(&self.position, 0.0) + grid.hdelta_norm(&self.velocity, -1.0)
    }

    /// |z|_{H^1 x L^2} = (|u|^2_{H^1} + |v|^2_{L^2})^{1/2}.
    pub fn h1_norm(&self, grid: &SpectralGrid) -> f64 {
        let a = grid.hdelta_norm(&self.position, 1.0);
        let b = grid.hdelta_norm(&self.velocity, 0.0);
        (a * a + b * b).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && self.velocity.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &StateE) -> StateE {
        StateE {
            position: self
                .position
                .iter()
                .zip(&other.position)
                .map(|(a, b)| a + b)
                .collect(),
            velocity: self
                .velocity
                .iter()
                .zip(&other.velocity)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &StateE) -> StateE {
        StateE {
            position: self
                .position
                .iter()
                .zip(&other.position)
                .map(|(a, b)| a - b)
                .collect(),
            velocity: self
                .velocity
                .iter()
                .zip(&other.velocity)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> StateE {
        StateE {
            position: self.position.iter().map(|a| a * s).collect(),
            velocity: self.velocity.iter().map(|a| a * s).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn e_norm_zero_iff_zero() {
        let g = SpectralGrid::new(1.0, 16);
        let z = StateE::zero(16);
        assert_eq!(z.e_norm(&g), 0.0);
        let mut z2 = StateE::zero(16);
        z2.velocity[3] = 1e-3;
        assert!(z2.e_norm(&g) > 0.0);
    }

    #[test]
    fn collocation_and_spectral_views_agree() {
        let g = SpectralGrid::new(2.0, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pos: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = StateE::new(pos.clone(), vec![0.0; 64]);
        let back = g.to_coefficients(&z.position_values(&g));
        for (a, b) in pos.iter().zip(&back) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-13);
        }
    }

    #[test]
    fn h_bounded_by_e_norm() {
        // continuous inclusion E in H: |z|_H <= 2 sqrt(l) |z|_E
        let ell = 1.9;
        let g = SpectralGrid::new(ell, 48);
        let c = 2.0 * ell.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let pos: Vec<f64> = (0..48)
                .map(|k| rng.random_range(-1.0..1.0) / (k + 1) as f64)
                .collect();
            let vel: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = StateE::new(pos, vel);
            assert!(z.h_norm(&g) <= c * z.e_norm(&g) + 1e-12);
        }
    }
}
