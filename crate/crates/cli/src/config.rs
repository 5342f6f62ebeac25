//! Experiment configuration: JSON schema, strict validation with key-level
//! errors, and defaults (K = 128, dt = 0.1/sqrt(a_K), seed = 0).

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wavemeta_core::{
    DomainSpec, NoiseCoefficient, OrbitUnionSpec, PolynomialDrift, Scheme, SimConfig,
    SpectralGrid, StateE,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Interval length l.
    pub ell: f64,
    /// Damping coefficient.
    pub alpha: f64,
    /// Drift polynomial coefficients c_0..c_gamma.
    pub drift: Vec<f64>,
    /// Mode count K.
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Time step; None picks 0.1/sqrt(a_K).
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: SigmaSpec,
    /// Non-degeneracy floor C_sigma.
    #[serde(default = "default_c_sigma")]
    pub c_sigma: f64,
    /// Localization radius n_D.
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub experiment: ExperimentBlock,
}

fn default_modes() -> usize {
    128
}
fn default_c_sigma() -> f64 {
    0.5
}
fn default_cutoff() -> f64 {
    5.0
}
fn default_sigma() -> SigmaSpec {
    SigmaSpec::Constant { value: 1.0 }
}
fn default_scheme() -> SchemeSpec {
    SchemeSpec::Midpoint
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Constant { value: f64 },
    BoundedSmooth { base: f64, amp: f64, scale: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SchemeSpec {
    Euler,
    Midpoint,
}

/// Per-subcommand parameters; unset blocks take defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    #[serde(default)]
    pub decay: Option<DecayBlock>,
    #[serde(default)]
    pub attract: Option<AttractBlock>,
    #[serde(default)]
    pub simulate: Option<SimulateBlock>,
    #[serde(default)]
    pub quasipotential: Option<QuasipotentialBlock>,
    #[serde(default)]
    pub exit_mc: Option<ExitMcBlock>,
    #[serde(default)]
    pub classify_boundary: Option<ClassifyBlock>,
    #[serde(default)]
    pub exit_rates: Option<ExitRatesBlock>,
    #[serde(default)]
    pub control: Option<ControlBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DecayBlock {
    #[serde(default = "default_decay_horizon")]
    pub horizon: f64,
    #[serde(default = "default_decay_samples")]
    pub n_samples: usize,
}
fn default_decay_horizon() -> f64 {
    40.0
}
fn default_decay_samples() -> usize {
    12
}
impl Default for DecayBlock {
    fn default() -> Self {
        DecayBlock {
            horizon: default_decay_horizon(),
            n_samples: default_decay_samples(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttractBlock {
    #[serde(default = "default_attract_samples")]
    pub n_samples: usize,
    /// Ball radius as a fraction of rho_0.
    #[serde(default = "default_ball_factor")]
    pub ball_factor: f64,
}
fn default_attract_samples() -> usize {
    50
}
fn default_ball_factor() -> f64 {
    0.9
}
impl Default for AttractBlock {
    fn default() -> Self {
        AttractBlock {
            n_samples: default_attract_samples(),
            ball_factor: default_ball_factor(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "default_sim_horizon")]
    pub horizon: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub initial: Option<PointSpec>,
    #[serde(default)]
    pub domain: Option<DomainBlock>,
}
fn default_sim_horizon() -> f64 {
    10.0
}
fn default_stride() -> usize {
    10
}
impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock {
            eps: 0.0,
            horizon: default_sim_horizon(),
            stride: default_stride(),
            initial: None,
            domain: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct QuasipotentialBlock {
    pub target: TargetBlock,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub horizons: Option<Vec<f64>>,
    #[serde(default = "default_ctrl_steps")]
    pub ctrl_steps: usize,
    #[serde(default)]
    pub domain: Option<DomainBlock>,
}
fn default_mode() -> String {
    "free".into()
}
fn default_ctrl_steps() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetBlock {
    Point { point: PointSpec },
    Boundary { domain: DomainBlock },
    ExteriorClosure { domain: DomainBlock },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointSpec {
    /// Explicit sine coefficients.
    Coeffs {
        position: Vec<f64>,
        velocity: Vec<f64>,
    },
    /// First-mode bump of given sup-norm radius and peak velocity.
    Bump { radius: f64, velocity: f64 },
}

impl PointSpec {
    pub fn build(&self, grid: &SpectralGrid) -> Result<StateE> {
        match self {
            PointSpec::Coeffs { position, velocity } => {
                if position.len() != grid.modes() || velocity.len() != grid.modes() {
                    bail!(
                        "point coefficient length must equal modes = {}",
                        grid.modes()
                    );
                }
                Ok(StateE::new(position.clone(), velocity.clone()))
            }
            PointSpec::Bump { radius, velocity } => {
                let k = grid.modes();
                let mut e1 = vec![0.0; k];
                e1[0] = 1.0;
                let gmax = grid.sup_norm(&grid.to_values(&e1));
                let mut z = StateE::zero(k);
                z.position[0] = radius / gmax;
                if *velocity != 0.0 {
                    let vals: Vec<f64> = grid
                        .points()
                        .iter()
                        .map(|&x| {
                            let d = (x - grid.ell() / 2.0) / (0.15 * grid.ell());
                            velocity * (-d * d).exp()
                        })
                        .collect();
                    z.velocity = grid.to_coefficients(&vals);
                }
                Ok(z)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainBlock {
    Cylinder {
        radius_position: f64,
        radius_velocity: f64,
    },
    Ball {
        radius: f64,
    },
    OrbitUnion {
        radius: f64,
        #[serde(default = "default_backward_horizon")]
        backward_horizon: f64,
        #[serde(default = "default_outer_radius")]
        outer_radius: f64,
    },
}
fn default_backward_horizon() -> f64 {
    40.0
}
fn default_outer_radius() -> f64 {
    2.0
}

impl DomainBlock {
    /// Build the domain around the given equilibrium.
    pub fn build(&self, center: &StateE, reverse_dt: f64) -> DomainSpec {
        match self {
            DomainBlock::Cylinder {
                radius_position,
                radius_velocity,
            } => DomainSpec::cylinder(center.position.clone(), *radius_position, *radius_velocity),
            DomainBlock::Ball { radius } => DomainSpec::ball(center.clone(), *radius),
            DomainBlock::OrbitUnion {
                radius,
                backward_horizon,
                outer_radius,
            } => DomainSpec::OrbitUnion(OrbitUnionSpec {
                center: center.clone(),
                radius: *radius,
                backward_horizon: *backward_horizon,
                outer_radius: *outer_radius,
                reverse_dt,
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExitMcBlock {
    pub domain: DomainBlock,
    pub eps_list: Vec<f64>,
    pub n_paths: usize,
    #[serde(default = "default_mc_horizon")]
    pub horizon: f64,
    /// E-norm window for the exit-place concentration fraction.
    #[serde(default = "default_place_delta")]
    pub place_delta: f64,
}
fn default_mc_horizon() -> f64 {
    500.0
}
fn default_place_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ClassifyBlock {
    pub domain: DomainBlock,
    pub point: PointSpec,
    #[serde(default)]
    pub escape_budget: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExitRatesBlock {
    pub domain: DomainBlock,
    #[serde(default = "default_boundary_sample")]
    pub n_boundary: usize,
    #[serde(default)]
    pub horizons: Option<Vec<f64>>,
    #[serde(default = "default_ctrl_steps")]
    pub ctrl_steps: usize,
}
fn default_boundary_sample() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControlBlock {
    pub target: PointSpec,
    #[serde(default)]
    pub t0: Option<f64>,
    #[serde(default = "default_control_steps")]
    pub steps: usize,
}
fn default_control_steps() -> usize {
    256
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).context("config parse")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ell > 0.0) {
            bail!("key \"ell\": expected a positive length, got {}", self.ell);
        }
        if self.alpha < 0.0 {
            bail!("key \"alpha\": expected a nonnegative damping, got {}", self.alpha);
        }
        if self.drift.is_empty() {
            bail!("key \"drift\": expected at least one polynomial coefficient");
        }
        if self.modes == 0 {
            bail!("key \"modes\": expected a positive mode count");
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                bail!("key \"dt\": expected a positive time step, got {dt}");
            }
        }
        if !(self.c_sigma > 0.0) {
            bail!("key \"c_sigma\": expected a positive floor, got {}", self.c_sigma);
        }
        if self.cutoff < 1.0 {
            bail!("key \"cutoff\": expected n_D >= 1, got {}", self.cutoff);
        }
        match &self.sigma {
            SigmaSpec::Constant { value } if !(*value > 0.0) => {
                bail!("key \"sigma.value\": expected a positive coefficient, got {value}")
            }
            SigmaSpec::BoundedSmooth { base, .. } if !(*base > 0.0) => {
                bail!("key \"sigma.base\": expected a positive base, got {base}")
            }
            _ => {}
        }
        if let Some(mc) = &self.experiment.exit_mc {
            if mc.n_paths == 0 {
                bail!("key \"experiment.exit_mc.n_paths\": expected at least one path");
            }
            if mc.eps_list.is_empty() {
                bail!("key \"experiment.exit_mc.eps_list\": expected at least one eps");
            }
        }
        // the configured noise must respect the declared floor on the
        // localized range
        let noise = self.noise();
        let lb = noise.sampled_lower_bound(2.0 * self.cutoff, self.cutoff);
        if lb <= self.c_sigma * 0.999 && self.alpha > 0.0 {
            bail!(
                "key \"c_sigma\": declared floor {} exceeds the sampled sigma minimum {lb:.6}",
                self.c_sigma
            );
        }
        Ok(())
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    pub fn noise(&self) -> NoiseCoefficient {
        match &self.sigma {
            SigmaSpec::Constant { value } => NoiseCoefficient::Constant { value: *value },
            SigmaSpec::BoundedSmooth { base, amp, scale } => NoiseCoefficient::BoundedSmooth {
                base: *base,
                amp: *amp,
                scale: *scale,
            },
        }
    }

    /// Resolved time step: explicit or the 0.1/sqrt(a_K) default.
    pub fn resolved_dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| {
            let a_k = (self.modes as f64 * std::f64::consts::PI / self.ell).powi(2);
            0.1 / a_k.sqrt()
        })
    }

    /// Build the core simulation config.
    pub fn sim_config(&self) -> SimConfig {
        let grid = SpectralGrid::new(self.ell, self.modes);
        let drift = PolynomialDrift::new(self.drift.clone(), self.cutoff);
        let scheme = match self.scheme {
            SchemeSpec::Euler => Scheme::ExpEuler,
            SchemeSpec::Midpoint => Scheme::ExpMidpoint,
        };
        SimConfig::new(grid, self.alpha, self.resolved_dt(), drift)
            .with_noise(self.noise(), 0.0)
            .with_seed(self.seed)
            .with_scheme(scheme)
    }
}
