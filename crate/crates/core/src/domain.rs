//! Exit domains as data: cylinders, E-balls and orbit-union domains with
//! membership and boundary-distance predicates.

use crate::dynamics::{SimConfig, Stepper};
use crate::state::StateE;

/// Outcome of the reverse-flow membership semi-decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReverseOutcome {
    /// The backward orbit entered the generating ball: member.
    Reached,
    /// The backward orbit left the certified outer bound: not a member.
    LeftOuter,
    /// The anti-damped flow blew up: definitely not a member.
    Blowup,
    /// Horizon exhausted without a decision: treated as outside, with caveat.
    HorizonExhausted,
}

/// Orbit-union domain D = union_{t >= 0} Z(t, B_E(z*, radius)).
///
/// Membership is decided by integrating the time-reversed (anti-damped)
/// flow: z is a member iff its backward orbit enters the generating ball.
/// Once T with Z(T, B) inside B is known, the union over all t >= 0 equals
/// the union over [0, T], so a finite backward horizon decides exactly;
/// `outer_radius` is a certified bound on sup_{z in D} |z - z*|_E used as
/// an early-out (reverse orbits of members never leave D).
#[derive(Debug, Clone)]
pub struct OrbitUnionSpec {
    pub center: StateE,
    /// Radius of the generating ball in E-norm.
    pub radius: f64,
    /// Backward horizon of the semi-decision.
    pub backward_horizon: f64,
    /// Conservative outer E-radius of the domain.
    pub outer_radius: f64,
    /// Step size of the reverse integration.
    pub reverse_dt: f64,
}

impl OrbitUnionSpec {
    /// Calibrate the finite-horizon reduction empirically: integrate
    /// forward orbits from sampled generating-ball boundary states, record
    /// the longest excursion above the ball radius (the maximal "age" a
    /// domain point can have) and the largest E-distance reached. The
    /// backward horizon gets a 2x safety factor, the outer radius 15%.
    pub fn calibrate(
        center: &StateE,
        radius: f64,
        cfg: &SimConfig,
        n_samples: usize,
        reverse_dt: f64,
    ) -> Self {
        use crate::dynamics::Stepper;
        let grid = &cfg.grid;
        let mut run_cfg = cfg.clone();
        run_cfg.eps = 0.0;
        let stepper = Stepper::new(&run_cfg);
        let mut rng = crate::dynamics::path_rng(cfg.seed ^ 0x0b17, 0);
        let mut worst_excursion = 0.0f64;
        let mut sup_dist = radius;
        for _ in 0..n_samples {
            let dir =
                crate::stability::random_state_in_ball(&StateE::zero(grid.modes()), 1.0, grid, &mut rng);
            let unit = dir.scale(1.0 / dir.e_norm(grid).max(1e-12));
            let mut z = center.add(&unit.scale(radius));
            let mut t = 0.0;
            let mut left_at: Option<f64> = None;
            // follow until the orbit has settled well inside the ball
            while t < 200.0 {
                z = match stepper.step(&z, None, None) {
                    Ok(s) => s,
                    Err(_) => break,
                };
                t += run_cfg.dt;
                let d = z.sub(center).e_norm(grid);
                sup_dist = sup_dist.max(d);
                if d > radius {
                    if left_at.is_none() {
                        left_at = Some(t);
                    }
                } else {
                    if let Some(start) = left_at.take() {
                        worst_excursion = worst_excursion.max(t - start);
                    }
                    if d < 0.5 * radius {
                        break;
                    }
                }
            }
        }
        OrbitUnionSpec {
            center: center.clone(),
            radius,
            backward_horizon: (2.0 * worst_excursion).max(2.0),
            outer_radius: 1.15 * sup_dist,
            reverse_dt,
        }
    }

    /// Reverse-integrate z and classify. The time-reversed position/velocity
    /// pair (p, q) = (u(T-s), -v(T-s)) satisfies the wave system with the
    /// damping sign flipped, so we integrate forward with -alpha.
    pub fn reverse_decision(&self, z: &StateE, cfg: &SimConfig) -> ReverseOutcome {
        let grid = &cfg.grid;
        let dist = z.sub(&self.center).e_norm(grid);
        if dist <= self.radius {
            return ReverseOutcome::Reached;
        }
        if dist > self.outer_radius {
            return ReverseOutcome::LeftOuter;
        }
        let mut rev_cfg = cfg.clone();
        rev_cfg.alpha = -cfg.alpha;
        rev_cfg.dt = self.reverse_dt;
        rev_cfg.eps = 0.0;
        let stepper = Stepper::new(&rev_cfg);
        let mut w = StateE::new(z.position.clone(), z.velocity.iter().map(|v| -v).collect());
        let n = (self.backward_horizon / self.reverse_dt).ceil() as usize;
        for _ in 0..n {
            w = match stepper.step(&w, None, None) {
                Ok(next) => next,
                Err(_) => return ReverseOutcome::Blowup,
            };
            // the state on the original orbit is (p, -q)
            let orbit_state = StateE::new(w.position.clone(), w.velocity.iter().map(|v| -v).collect());
            let d = orbit_state.sub(&self.center).e_norm(grid);
            if d <= self.radius {
                return ReverseOutcome::Reached;
            }
            if d > self.outer_radius {
                return ReverseOutcome::LeftOuter;
            }
            if orbit_state.sup_norm(grid) > cfg.cutoff {
                return ReverseOutcome::Blowup;
            }
        }
        ReverseOutcome::HorizonExhausted
    }
}

#[derive(Debug, Clone)]
pub enum DomainSpec {
    /// |u - x*|_inf < R and |v|_{C^-1} < rho.
    Cylinder {
        /// Sine coefficients of the center position x*.
        center_position: Vec<f64>,
        radius_position: f64,
        radius_velocity: f64,
    },
    /// sqrt(|u - x*|_inf^2 + |v|_{C^-1}^2) < R.
    BallE { center: StateE, radius: f64 },
    OrbitUnion(OrbitUnionSpec),
}

impl DomainSpec {
    pub fn cylinder(center_position: Vec<f64>, radius_position: f64, radius_velocity: f64) -> Self {
        DomainSpec::Cylinder {
            center_position,
            radius_position,
            radius_velocity,
        }
    }

    pub fn ball(center: StateE, radius: f64) -> Self {
        DomainSpec::BallE { center, radius }
    }

    /// The equilibrium the domain is built around.
    pub fn center(&self) -> StateE {
        match self {
            DomainSpec::Cylinder {
                center_position, ..
            } => StateE::new(center_position.clone(), vec![0.0; center_position.len()]),
            DomainSpec::BallE { center, .. } => center.clone(),
            DomainSpec::OrbitUnion(spec) => spec.center.clone(),
        }
    }

    pub fn contains(&self, z: &StateE, cfg: &SimConfig) -> bool {
        match self {
            DomainSpec::Cylinder { .. } => {
                let (mp, mv) = self.cylinder_margins(z, cfg).unwrap();
                mp > 0.0 && mv > 0.0
            }
            DomainSpec::BallE { center, radius } => {
                let d = z.sub(center);
                let su = d.sup_norm(&cfg.grid);
                let cv = d.cminus_norm(&cfg.grid);
                (su * su + cv * cv).sqrt() < *radius
            }
            DomainSpec::OrbitUnion(spec) => {
                spec.reverse_decision(z, cfg) == ReverseOutcome::Reached
            }
        }
    }

    /// Position and velocity margins of a cylinder (positive inside).
    pub fn cylinder_margins(&self, z: &StateE, cfg: &SimConfig) -> Option<(f64, f64)> {
        if let DomainSpec::Cylinder {
            center_position,
            radius_position,
            radius_velocity,
        } = self
        {
            let du: Vec<f64> = z
                .position
                .iter()
                .zip(center_position)
                .map(|(a, b)| a - b)
                .collect();
            let su = cfg.grid.sup_norm(&cfg.grid.to_values(&du));
            let cv = cfg.grid.cminus_norm(&z.velocity);
            Some((radius_position - su, radius_velocity - cv))
        } else {
            None
        }
    }

    /// Signed distance-like margin to the boundary (positive inside). For
    /// cylinders and balls this is exact in the defining norms; for orbit
    /// unions it is a radial bisection along the segment to the center
    /// (semi-decision, optimizer use only).
    pub fn boundary_margin(&self, z: &StateE, cfg: &SimConfig) -> f64 {
        match self {
            DomainSpec::Cylinder { .. } => {
                let (mp, mv) = self.cylinder_margins(z, cfg).unwrap();
                mp.min(mv)
            }
            DomainSpec::BallE { center, radius } => {
                let d = z.sub(center);
                let su = d.sup_norm(&cfg.grid);
                let cv = d.cminus_norm(&cfg.grid);
                radius - (su * su + cv * cv).sqrt()
            }
            DomainSpec::OrbitUnion(spec) => {
                let dir = z.sub(&spec.center);
                let d = dir.e_norm(&cfg.grid);
                if d < 1e-12 {
                    return spec.radius;
                }
                // radial boundary scale along z* + lambda (z - z*)
                let mut lo = 0.0f64; // inside
                let mut hi = (spec.outer_radius / d) * 1.05; // outside
                for _ in 0..20 {
                    let mid = 0.5 * (lo + hi);
                    let probe = spec.center.add(&dir.scale(mid));
                    if self.contains(&probe, cfg) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (0.5 * (lo + hi) - 1.0) * d
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::PolynomialDrift;
    use crate::grid::SpectralGrid;
    use crate::{dynamics, SimConfig as Cfg};

    fn pi() -> f64 {
        std::f64::consts::PI
    }

    fn cfg(modes: usize) -> Cfg {
        let grid = SpectralGrid::new(pi() / 2.0, modes);
        Cfg::new(grid, 1.0, 1e-3, PolynomialDrift::cubic(5.0))
    }

    #[test]
    fn cylinder_membership_and_margins() {
        let cfg = cfg(16);
        let d = DomainSpec::cylinder(vec![0.0; 16], 0.5, 0.4);
        assert!(d.contains(&StateE::zero(16), &cfg));
        let mut z = StateE::zero(16);
        z.position[0] = 10.0;
        assert!(!d.contains(&z, &cfg));
        let (mp, mv) = d.cylinder_margins(&StateE::zero(16), &cfg).unwrap();
        assert_eq!(mp, 0.5);
        assert_eq!(mv, 0.4);
    }

    #[test]
    fn ball_membership_consistent_under_refinement() {
        // a band-limited state keeps its verdict when K doubles
        let mk = |modes: usize| -> (Cfg, DomainSpec, StateE) {
            let c = cfg(modes);
            let d = DomainSpec::ball(StateE::zero(modes), 0.5);
            let mut z = StateE::zero(modes);
            z.position[0] = 0.2;
            z.velocity[1] = 0.1;
            (c, d, z)
        };
        let (c1, d1, z1) = mk(16);
        let (c2, d2, z2) = mk(32);
        assert_eq!(d1.contains(&z1, &c1), d2.contains(&z2, &c2));
    }

    #[test]
    fn orbit_union_contains_ball_and_forward_orbit() {
        let cfg = cfg(12);
        let spec = OrbitUnionSpec {
            center: StateE::zero(12),
            radius: 0.2,
            backward_horizon: 30.0,
            outer_radius: 1.5,
            reverse_dt: 1e-3,
        };
        let d = DomainSpec::OrbitUnion(spec);
        // center and small states are members
        assert!(d.contains(&StateE::zero(12), &cfg));
        // forward image of a ball state is a member (reverse flow returns)
        let mut z0 = StateE::zero(12);
        z0.position[0] = 0.15;
        let mut run_cfg = cfg.clone();
        run_cfg.horizon = 2.0;
        let (_, out) = dynamics::simulate_path(&z0, &run_cfg, None, 0, 1000);
        assert!(d.contains(&out.final_state, &cfg));
        // a state far away is not
        let mut far = StateE::zero(12);
        far.position[0] = 3.0;
        assert!(!d.contains(&far, &cfg));
    }
}
