//! The four benchmark flows: parallel shear lines, eccentric rotating
//! cylinders, wall-induced migration of an elastic ring, and an elastic
//! ring driven through a narrow channel — together with their reference
//! solutions and diagnostics.
//!
//! Each scenario builds a `Scene` (grid, parameters, structures, gap
//! pairings) from a `ScenarioConfig` whose defaults are the benchmark
//! values. References:
//!
//! * shear lines: the periodic sawtooth profile interpolating the two
//!   prescribed line velocities, v ≡ 0, p ≡ 0;
//! * eccentric cylinders: a 1D Reynolds (thin-film) solve over the exact
//!   gap width h(θ) = √(r₂² − x₀²sin²θ) − x₀cosθ − r₁, giving the gap
//!   pressure gradient, the tangential velocity profile, and the lift by
//!   integrating traction over the inner cylinder; the rigid tether
//!   kinematics supply the X and U references.
//!
//! Diagnostics report area-weighted L¹ and L∞ error norms, the relative
//! mean-shear-rate error γ̇ = (Ū_h − Ū₀)/h̄, the lift (the net Lagrangian
//! force density on the fluid summed over the inner boundary, the negative
//! of the traction the fluid exerts on the cylinder), a reverse-flow flag,
//! and the ring centroid and enclosed (shoelace) area.

use std::f64::consts::PI;

use crate::boundary::{Boundary, ElasticRingModel, TargetMotion, TetherModel};
use crate::elliptic::MgConfig;
use crate::error::{IbisError, Result};
use crate::geometry::{pair_boundaries, CurveGeometry, GapPairing};
use crate::grid::Grid;
use crate::kernels;
use crate::lubrication::{CorrectionSettings, Pass};
use crate::stepper::{
    BodyForce, ForceModel, Method, PairingSpec, PhysicalParams, RunState, StepReport, Stepper,
    StopReason, Structure,
};
use crate::vec2::Vec2;

/// The benchmark being run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    ShearLines,
    EccentricCylinders,
    WallMigration,
    Channel,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Scenario> {
        match s {
            "shear-lines" => Ok(Scenario::ShearLines),
            "eccentric-cylinders" => Ok(Scenario::EccentricCylinders),
            "wall-migration" => Ok(Scenario::WallMigration),
            "channel" => Ok(Scenario::Channel),
            other => Err(IbisError::Config(format!(
                "unknown scenario '{other}' (expected shear-lines, eccentric-cylinders, \
                 wall-migration, or channel)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::ShearLines => "shear-lines",
            Scenario::EccentricCylinders => "eccentric-cylinders",
            Scenario::WallMigration => "wall-migration",
            Scenario::Channel => "channel",
        }
    }
}

/// All knobs of a run. `ScenarioConfig::new` installs the benchmark
/// defaults for the chosen scenario; fields not used by that scenario are
/// ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Grid cells per side (the grid is always n × n).
    pub n: usize,
    pub method: Method,
    pub t_final: f64,
    pub rho: f64,
    pub mu: f64,
    /// Δt = dt_factor · Δx.
    pub dt_factor: f64,
    pub cutoff_factor: f64,
    pub offset_gridpoints: f64,
    // shear lines
    pub gamma_dot: f64,
    pub gap: f64,
    // eccentric cylinders
    pub r1: f64,
    pub r2: f64,
    pub x0: f64,
    /// Prescribed drive of the inner cylinder (counter-clockwise).
    pub u_drive: f64,
    /// Interpret `u_drive` as the rim speed (default) or as the angular
    /// rate ω.
    pub u_is_rim_speed: bool,
    // elastic-ring scenarios
    pub r0: f64,
    pub k_spring: f64,
    pub k_bend: f64,
    /// Uniform +x force density applied to the channel ring.
    pub ring_force: f64,
    pub ring_points: usize,
    pub wall_points: usize,
    pub k_wall: f64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, n: usize, method: Method) -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            scenario,
            n,
            method,
            t_final: 10.0,
            rho: 1.0,
            mu: 0.02,
            dt_factor: 0.01,
            cutoff_factor: 1.0,
            offset_gridpoints: 2.0,
            gamma_dot: 0.15,
            gap: 1.0 / 24.0,
            r1: 0.75,
            r2: 0.75 * (1.0 + 1.0 / 24.0),
            x0: 3.0 / 128.0,
            u_drive: 8.33e-4,
            u_is_rim_speed: true,
            r0: PI / 4.0,
            k_spring: 1.0,
            k_bend: 0.004,
            ring_force: 0.05,
            ring_points: 32,
            wall_points: 128,
            k_wall: 3200.0,
        };
        match scenario {
            Scenario::ShearLines => {}
            Scenario::EccentricCylinders => {
                cfg.t_final = 100.0;
            }
            Scenario::WallMigration => {
                cfg.t_final = 28.0;
                cfg.mu = 0.2;
                cfg.dt_factor = 0.005;
            }
            Scenario::Channel => {
                cfg.t_final = 40.0;
                cfg.mu = 0.2;
                cfg.r0 = 9.0 * PI * PI / 40.0;
                cfg.ring_points = 64;
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("rho", self.rho),
            ("mu", self.mu),
            ("dt_factor", self.dt_factor),
            ("gamma_dot", self.gamma_dot),
            ("gap", self.gap),
            ("r1", self.r1),
            ("r0", self.r0),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IbisError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.t_final < 0.0 || !self.t_final.is_finite() {
            return Err(IbisError::Config(format!(
                "t_final must be non-negative, got {}",
                self.t_final
            )));
        }
        if self.r2 <= self.r1 {
            return Err(IbisError::Config(format!(
                "outer radius {} must exceed inner radius {}",
                self.r2, self.r1
            )));
        }
        if self.x0.abs() >= self.r2 - self.r1 {
            return Err(IbisError::Config(format!(
                "offset {} puts the cylinders in contact (clearance {})",
                self.x0,
                self.r2 - self.r1
            )));
        }
        Ok(())
    }

    /// Domain extents.
    pub fn domain(&self) -> (f64, f64) {
        match self.scenario {
            Scenario::ShearLines | Scenario::EccentricCylinders => (2.0, 2.0),
            Scenario::WallMigration | Scenario::Channel => (4.0 * PI, 2.0 * PI),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        let (lx, ly) = self.domain();
        Grid::new(self.n, self.n, lx, ly)
    }

    pub fn dt(&self) -> f64 {
        let (lx, _) = self.domain();
        self.dt_factor * lx / self.n as f64
    }

    /// Nondimensional gap thickness ε = (r₂ − r₁)/r₁.
    pub fn epsilon(&self) -> f64 {
        (self.r2 - self.r1) / self.r1
    }

    /// Dimensionless eccentricity λ = x₀/(r₁ε).
    pub fn lambda(&self) -> f64 {
        self.x0 / (self.r1 * self.epsilon())
    }

    /// Rim speed of the inner cylinder.
    pub fn u_rim(&self) -> f64 {
        if self.u_is_rim_speed {
            self.u_drive
        } else {
            self.u_drive * self.r1
        }
    }

    /// Cylinder centers on the torus (the configured frame centers the
    /// outer cylinder at the origin of a [−1,1]² cell; periodicity lets us
    /// shift everything by (1,1) onto [0,2]²).
    pub fn centers(&self) -> (Vec2, Vec2) {
        let outer = Vec2::new(1.0, 1.0);
        (outer + Vec2::new(self.x0, 0.0), outer)
    }

    pub fn settings(&self) -> CorrectionSettings {
        CorrectionSettings {
            cutoff_factor: self.cutoff_factor,
            offset_gridpoints: self.offset_gridpoints,
            ..CorrectionSettings::default()
        }
    }
}

/// Eccentricity above which the gap flow develops a counter-rotating
/// vortex on the wide side: λ* = (√13 − 3)/2 ≈ 0.303.
pub fn reverse_flow_lambda() -> f64 {
    (13.0_f64.sqrt() - 3.0) / 2.0
}

/// A fully assembled run.
pub struct Scene {
    pub grid: Grid,
    pub cfg: ScenarioConfig,
    pub params: PhysicalParams,
    pub pairings: Vec<PairingSpec>,
    pub state: RunState,
}

impl Scene {
    pub fn stepper(&self) -> Result<Stepper> {
        self.stepper_with(MgConfig::default(), self.cfg.settings())
    }

    /// Like [`Scene::stepper`] but with explicit solver and lubrication
    /// settings (driver programs expose both as configuration).
    pub fn stepper_with(&self, mg: MgConfig, settings: CorrectionSettings) -> Result<Stepper> {
        Stepper::new(
            self.grid.clone(),
            self.params,
            mg,
            settings,
            self.pairings.clone(),
        )
    }
}

/// Build the scenario's grid, fluid parameters, structures, and pairings.
pub fn setup(cfg: &ScenarioConfig) -> Result<Scene> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let dt = cfg.dt();
    let mut body_force = BodyForce::None;
    let (structures, pairings) = match cfg.scenario {
        Scenario::ShearLines => {
            let nr = 2 * cfg.n;
            let k = 12.5 * (nr as f64 / 16.0).powi(2);
            let y0 = 0.5 * grid.ly - 0.5 * cfg.gap;
            let yh = 0.5 * grid.ly + 0.5 * cfg.gap;
            let v = 0.5 * cfg.gamma_dot * cfg.gap;
            let line = |name: &str, y: f64, vel: f64| -> Result<Structure> {
                let b = Boundary::line_x(name, y, grid.lx, nr, true)?;
                let model = TetherModel::new(
                    k,
                    b.x.clone(),
                    TargetMotion::Translate {
                        vel: Vec2::new(vel, 0.0),
                    },
                )?;
                Ok(Structure {
                    boundary: b,
                    model: ForceModel::Tether(model),
                })
            };
            (
                vec![line("lower", y0, -v)?, line("upper", yh, v)?],
                vec![PairingSpec { lower: 0, upper: 1 }],
            )
        }
        Scenario::EccentricCylinders => {
            let nr = 2 * cfg.n;
            let k = 50.0 * (nr as f64 / 16.0).powi(2);
            let (c1, c2) = cfg.centers();
            let omega = cfg.u_rim() / cfg.r1;
            // clockwise parameterisation puts the outward normal on both
            // cylinders, so the inner normal points into the gap and the
            // outer normal out of it (aligned frames)
            let inner = Boundary::circle("inner", c1, cfg.r1, nr, false)?;
            let outer = Boundary::circle("outer", c2, cfg.r2, nr, false)?;
            let inner_model = TetherModel::new(
                k,
                inner.x.clone(),
                TargetMotion::Rotate { center: c1, omega },
            )?;
            let outer_model = TetherModel::new(k, outer.x.clone(), TargetMotion::Fixed)?;
            (
                vec![
                    Structure {
                        boundary: inner,
                        model: ForceModel::Tether(inner_model),
                    },
                    Structure {
                        boundary: outer,
                        model: ForceModel::Tether(outer_model),
                    },
                ],
                vec![PairingSpec { lower: 0, upper: 1 }],
            )
        }
        Scenario::WallMigration => {
            body_force = BodyForce::SinY { amp: cfg.mu };
            let wall = Boundary::line_x("wall", 0.0, grid.lx, cfg.wall_points, true)?;
            let wall_model = TetherModel::new(cfg.k_wall, wall.x.clone(), TargetMotion::Fixed)?;
            let center = Vec2::new(0.0, cfg.r0 + PI / 192.0);
            let ring = Boundary::circle("ring", center, cfg.r0, cfg.ring_points, true)?;
            let ring_model = ElasticRingModel::new(cfg.k_spring, cfg.k_bend, Vec2::ZERO)?;
            (
                vec![
                    Structure {
                        boundary: wall,
                        model: ForceModel::Tether(wall_model),
                    },
                    Structure {
                        boundary: ring,
                        model: ForceModel::Ring(ring_model),
                    },
                ],
                vec![PairingSpec { lower: 0, upper: 1 }],
            )
        }
        Scenario::Channel => {
            let clearance = cfg.r0 + PI / 192.0;
            let y_bot = PI - clearance;
            let y_top = PI + clearance;
            // the bottom wall runs left-to-right (normal up, into the
            // channel); the top wall right-to-left (normal down)
            let bot = Boundary::line_x("bottom", y_bot, grid.lx, cfg.wall_points, true)?;
            let top = Boundary::line_x("top", y_top, grid.lx, cfg.wall_points, false)?;
            let bot_model = TetherModel::new(cfg.k_wall, bot.x.clone(), TargetMotion::Fixed)?;
            let top_model = TetherModel::new(cfg.k_wall, top.x.clone(), TargetMotion::Fixed)?;
            let ring = Boundary::circle(
                "ring",
                Vec2::new(0.0, PI),
                cfg.r0,
                cfg.ring_points,
                true,
            )?;
            let ring_model = ElasticRingModel::new(
                cfg.k_spring,
                cfg.k_bend,
                Vec2::new(cfg.ring_force, 0.0),
            )?;
            (
                vec![
                    Structure {
                        boundary: bot,
                        model: ForceModel::Tether(bot_model),
                    },
                    Structure {
                        boundary: top,
                        model: ForceModel::Tether(top_model),
                    },
                    Structure {
                        boundary: ring,
                        model: ForceModel::Ring(ring_model),
                    },
                ],
                vec![
                    PairingSpec { lower: 0, upper: 2 },
                    PairingSpec { lower: 1, upper: 2 },
                ],
            )
        }
    };
    let params = PhysicalParams {
        rho: cfg.rho,
        mu: cfg.mu,
        dt,
        body_force,
    };
    let state = RunState::new(&grid, structures, cfg.method)?;
    Ok(Scene {
        grid,
        cfg: cfg.clone(),
        params,
        pairings,
        state,
    })
}

// ---------------------------------------------------------------------
// shear-lines reference
// ---------------------------------------------------------------------

/// The exact periodic sawtooth shear profile: linear between the two line
/// velocities inside the gap, linear back across the wrap-around outside.
#[derive(Debug, Clone, Copy)]
pub struct ShearReference {
    pub y0: f64,
    pub yh: f64,
    pub u0: f64,
    pub uh: f64,
    pub ly: f64,
}

impl ShearReference {
    pub fn u(&self, y: f64) -> f64 {
        let mut yy = (y - self.y0).rem_euclid(self.ly) + self.y0;
        if yy >= self.y0 + self.ly {
            yy -= self.ly;
        }
        let h = self.yh - self.y0;
        if yy <= self.yh {
            self.u0 + (self.uh - self.u0) * (yy - self.y0) / h
        } else {
            self.uh + (self.u0 - self.uh) * (yy - self.yh) / (self.ly - h)
        }
    }
}

pub fn exact_shear(cfg: &ScenarioConfig) -> ShearReference {
    let (_, ly) = cfg.domain();
    let v = 0.5 * cfg.gamma_dot * cfg.gap;
    ShearReference {
        y0: 0.5 * ly - 0.5 * cfg.gap,
        yh: 0.5 * ly + 0.5 * cfg.gap,
        u0: -v,
        uh: v,
        ly,
    }
}

// ---------------------------------------------------------------------
// eccentric-cylinders reference
// ---------------------------------------------------------------------

/// Samples used for the periodic trapezoid quadrature of the Reynolds
/// solve (spectrally accurate for these smooth periodic integrands).
const REYNOLDS_SAMPLES: usize = 4096;

/// Thin-film reference for the journal-bearing configuration. All arrays
/// are sampled at θ_m = 2πm/M measured from the inner center; w measures
/// distance from the inner surface along its outward normal.
#[derive(Debug, Clone)]
pub struct EccentricReference {
    pub thetas: Vec<f64>,
    /// Exact gap width along the inner normal.
    pub h: Vec<f64>,
    /// Gap pressure gradient dp/ds (s = arclength along the inner circle).
    pub dpds: Vec<f64>,
    /// Gap pressure (mean zero).
    pub p: Vec<f64>,
    /// Flux constant h* = ∮h⁻² / ∮h⁻³.
    pub h_star: f64,
    pub mean_h: f64,
    /// Net Lagrangian force the inner boundary applies to the fluid
    /// (pressure + shear traction reaction), the quantity the measured
    /// lift Σ F_k Δq converges to.
    pub lift_tether: Vec2,
    /// Canonical closed-form load of the full-film journal bearing,
    /// F = 12πμUλ / (ε²(2 + λ²)√(1 − λ²)), the asymptotic (ε → 0) limit of
    /// the thin-film solve; agrees with `lift_tether` to O(ε).
    pub lift_formula: f64,
    pub r1: f64,
    pub u_rim: f64,
    pub mu: f64,
    pub inner_center: Vec2,
    pub outer_center: Vec2,
    pub r2: f64,
}

impl EccentricReference {
    pub fn compute(cfg: &ScenarioConfig) -> EccentricReference {
        let m = REYNOLDS_SAMPLES;
        let (c1, c2) = cfg.centers();
        let (r1, r2, x0, mu) = (cfg.r1, cfg.r2, cfg.x0, cfg.mu);
        let u_rim = cfg.u_rim();
        let dth = 2.0 * PI / m as f64;
        let thetas: Vec<f64> = (0..m).map(|k| k as f64 * dth).collect();
        let h: Vec<f64> = thetas
            .iter()
            .map(|&th| (r2 * r2 - x0 * x0 * th.sin().powi(2)).sqrt() - x0 * th.cos() - r1)
            .collect();
        let (mut i2, mut i3) = (0.0, 0.0);
        for &hk in &h {
            i2 += hk.powi(-2);
            i3 += hk.powi(-3);
        }
        let h_star = i2 / i3;
        let mean_h = h.iter().sum::<f64>() / m as f64;
        let dpds: Vec<f64> = h
            .iter()
            .map(|&hk| 6.0 * mu * u_rim * (hk - h_star) / hk.powi(3))
            .collect();
        // integrate p along s = r1·θ; h* makes it exactly periodic
        let mut p = vec![0.0; m];
        for k in 1..m {
            p[k] = p[k - 1] + 0.5 * (dpds[k - 1] + dpds[k]) * r1 * dth;
        }
        let pbar = p.iter().sum::<f64>() / m as f64;
        for v in &mut p {
            *v -= pbar;
        }
        // traction on the inner cylinder: −p n̂ + μ(∂u_t/∂w)|₀ t̂,
        // t̂ = counter-clockwise tangent; the tether (Lagrangian) force is
        // its negative
        let mut f_cyl = Vec2::ZERO;
        for k in 0..m {
            let (s, c) = thetas[k].sin_cos();
            let nrm = Vec2::new(c, s);
            let tan = Vec2::new(-s, c);
            let tau = -mu * u_rim / h[k] - 0.5 * h[k] * dpds[k];
            f_cyl += (nrm * -p[k] + tan * tau) * (r1 * dth);
        }
        let lam = cfg.lambda();
        let eps = cfg.epsilon();
        let lift_formula = 12.0 * PI * mu * u_rim * lam
            / (eps * eps * (2.0 + lam * lam) * (1.0 - lam * lam).sqrt());
        EccentricReference {
            thetas,
            h,
            dpds,
            p,
            h_star,
            mean_h,
            lift_tether: -f_cyl,
            lift_formula,
            r1,
            u_rim,
            mu,
            inner_center: c1,
            outer_center: c2,
            r2,
        }
    }

    fn index_weights(&self, theta: f64) -> (usize, usize, f64) {
        let m = self.thetas.len();
        let t = theta.rem_euclid(2.0 * PI) / (2.0 * PI) * m as f64;
        let k0 = (t.floor() as usize) % m;
        (k0, (k0 + 1) % m, t - t.floor())
    }

    pub fn gap_width(&self, theta: f64) -> f64 {
        let (a, b, w) = self.index_weights(theta);
        self.h[a] * (1.0 - w) + self.h[b] * w
    }

    pub fn pressure_gradient(&self, theta: f64) -> f64 {
        let (a, b, w) = self.index_weights(theta);
        self.dpds[a] * (1.0 - w) + self.dpds[b] * w
    }

    /// Tangential gap velocity at angle θ, distance w from the inner
    /// surface: the Couette–Poiseuille profile with u(0) = u_rim, u(h) = 0.
    pub fn u_t(&self, theta: f64, w: f64) -> f64 {
        let h = self.gap_width(theta);
        let dp = self.pressure_gradient(theta);
        self.u_rim * (1.0 - w / h) + 0.5 / self.mu * dp * (w * w - w * h)
    }

    /// Region-wise reference velocity: rigid rotation inside the inner
    /// cylinder, thin-film profile in the gap, rest outside the outer
    /// cylinder.
    pub fn velocity_at(&self, x: Vec2) -> Vec2 {
        let d1 = x - self.inner_center;
        let rin = d1.norm();
        if rin < self.r1 {
            return d1.perp() * (self.u_rim / self.r1);
        }
        let d2 = x - self.outer_center;
        if d2.norm() >= self.r2 {
            return Vec2::ZERO;
        }
        let theta = d1.y.atan2(d1.x);
        let w = (rin - self.r1).clamp(0.0, self.gap_width(theta));
        let that = d1.perp() / rin;
        that * self.u_t(theta, w)
    }

    /// True whenever λ exceeds the vortex threshold the profile must show
    /// negative tangential velocity somewhere in the gap.
    pub fn min_u_t(&self) -> f64 {
        let mut lo = f64::INFINITY;
        for k in 0..self.thetas.len() {
            for j in 0..=16 {
                let w = self.h[k] * j as f64 / 16.0;
                lo = lo.min(self.u_t(self.thetas[k], w));
            }
        }
        lo
    }
}

// ---------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------

/// Scenario reference data used by `diagnose`.
pub enum Reference {
    None,
    Shear(ShearReference),
    Eccentric(Box<EccentricReference>),
}

pub fn reference_for(cfg: &ScenarioConfig) -> Reference {
    match cfg.scenario {
        Scenario::ShearLines => Reference::Shear(exact_shear(cfg)),
        Scenario::EccentricCylinders => {
            Reference::Eccentric(Box::new(EccentricReference::compute(cfg)))
        }
        _ => Reference::None,
    }
}

/// One row of the diagnostics table.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub l1_u: f64,
    pub linf_u: f64,
    pub l1_v: f64,
    pub linf_v: f64,
    /// p for the shear scenario, dp/dθ for the eccentric one.
    pub l1_p: f64,
    pub linf_p: f64,
    pub l1_x: f64,
    pub linf_x: f64,
    pub l1_ub: f64,
    pub linf_ub: f64,
    pub rel_gamma: f64,
    pub lift: Vec2,
    pub reverse_flow: bool,
    pub centroid: Vec2,
    pub area: f64,
}

impl DiagnosticsRecord {
    pub const CSV_HEADER: &'static str = "t,L1_u,Linf_u,L1_v,Linf_v,L1_p,Linf_p,L1_X,Linf_X,\
                                          L1_U,Linf_U,rel_gamma,lift_x,lift_y,reverse_flow,cx,cy,area";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},\
             {:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}",
            self.t,
            self.l1_u,
            self.linf_u,
            self.l1_v,
            self.linf_v,
            self.l1_p,
            self.linf_p,
            self.l1_x,
            self.linf_x,
            self.l1_ub,
            self.linf_ub,
            self.rel_gamma,
            self.lift.x,
            self.lift.y,
            u8::from(self.reverse_flow),
            self.centroid.x,
            self.centroid.y,
            self.area,
        )
    }
}

/// Geometric pairings with a cutoff generous enough to cover the whole
/// benchmark gap (independent of the lubrication gating), used for
/// mean-gap and reverse-flow diagnostics and for height dumps.
pub fn diagnostic_pairings(
    grid: &Grid,
    lower: &Boundary,
    upper: &Boundary,
    cutoff: f64,
) -> Result<Vec<Option<GapPairing>>> {
    let lg = CurveGeometry::build(lower)?;
    let ug = CurveGeometry::build(upper)?;
    Ok(pair_boundaries(grid, lower, &lg, upper, &ug, cutoff)?.lower)
}

#[derive(Clone, Copy)]
enum TetherKind {
    Position,
    Velocity,
}

/// Δq-weighted L¹ and L∞ errors of tethered boundaries against their
/// prescribed kinematics (structures without tethers are skipped).
fn tether_norms(structures: &[Structure], t: f64, kind: TetherKind) -> (f64, f64) {
    let (mut l1, mut linf) = (0.0, 0.0_f64);
    for s in structures {
        let ForceModel::Tether(m) = &s.model else { continue };
        for k in 0..s.boundary.nq {
            let e = match kind {
                TetherKind::Position => (s.boundary.x[k] - m.target(k, t)).norm(),
                TetherKind::Velocity => (s.boundary.u[k] - m.target_velocity(k, t)).norm(),
            };
            l1 += e * s.boundary.dq;
            linf = linf.max(e);
        }
    }
    (l1, linf)
}

/// Net Lagrangian force a structure applies to the fluid at time `t`
/// (Σ F_k Δq with the force densities evaluated at the current positions).
pub fn measured_lift(s: &Structure, t: f64) -> Vec2 {
    let f = s.forces(t);
    f.iter().fold(Vec2::ZERO, |a, &b| a + b) * s.boundary.dq
}

/// Compute the full diagnostics record for the current state. Boundary
/// velocities and forces stored in `state` are restored afterwards; the
/// lubrication pass used for gap profiles runs on a scratch copy.
pub fn diagnose(
    stepper: &Stepper,
    state: &mut RunState,
    cfg: &ScenarioConfig,
    reference: &Reference,
) -> Result<DiagnosticsRecord> {
    let grid = &stepper.grid;
    let mut rec = DiagnosticsRecord {
        t: state.t,
        ..DiagnosticsRecord::default()
    };
    stepper.set_forces(state, state.t);

    // gap profiles and pairings from the lubrication machinery (the
    // boundary velocities are scratched by the advection call, so save the
    // stored midpoint advection velocities and put them back)
    let saved_u: Vec<Vec<Vec2>> = state
        .structures
        .iter()
        .map(|s| s.boundary.u.clone())
        .collect();
    let adv = stepper.advection(state)?;
    for (s, u) in state.structures.iter_mut().zip(saved_u) {
        s.boundary.u = u;
    }

    let cell = grid.dx * grid.dy;
    match reference {
        Reference::Shear(rf) => {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let idx = grid.idx(i, j);
                    let c = grid.cell_center(i, j);
                    accumulate(&mut rec.l1_u, &mut rec.linf_u, state.u.u[idx] - rf.u(c.y), cell);
                    accumulate(&mut rec.l1_v, &mut rec.linf_v, state.u.v[idx], cell);
                    accumulate(&mut rec.l1_p, &mut rec.linf_p, state.p.data[idx], cell);
                }
            }
            (rec.l1_x, rec.linf_x) = tether_norms(&state.structures, state.t, TetherKind::Position);
            (rec.l1_ub, rec.linf_ub) =
                tether_norms(&state.structures, state.t, TetherKind::Velocity);

            // mean shear rate (Ū_h − Ū_0)/h̄ from the two lines
            let lo = &state.structures[0].boundary;
            let hi = &state.structures[1].boundary;
            let u0 = lo.u.iter().map(|v| v.x).sum::<f64>() / lo.nq as f64;
            let uh = hi.u.iter().map(|v| v.x).sum::<f64>() / hi.nq as f64;
            let hbar =
                hi.x.iter().zip(&lo.x).map(|(a, b)| a.y - b.y).sum::<f64>() / lo.nq as f64;
            rec.rel_gamma = ((uh - u0) / hbar / cfg.gamma_dot - 1.0).abs();
        }
        Reference::Eccentric(rf) => {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let idx = grid.idx(i, j);
                    let want = rf.velocity_at(grid.cell_center(i, j));
                    accumulate(&mut rec.l1_u, &mut rec.linf_u, state.u.u[idx] - want.x, cell);
                    accumulate(&mut rec.l1_v, &mut rec.linf_v, state.u.v[idx] - want.y, cell);
                }
            }
            (rec.l1_x, rec.linf_x) = tether_norms(&state.structures, state.t, TetherKind::Position);
            (rec.l1_ub, rec.linf_ub) =
                tether_norms(&state.structures, state.t, TetherKind::Velocity);

            let inner = &state.structures[0].boundary;
            let outer = &state.structures[1].boundary;
            let c1 = rf.inner_center;

            // dp/dθ along the inner boundary: jump-condition gap pressure
            // differentiated in arclength where the lubrication pass
            // produced profiles, interpolated grid pressure otherwise
            let profiles = adv
                .outcomes
                .iter()
                .find(|o| o.side == Pass::Lower && o.owner == 0)
                .map(|o| o.profiles.as_slice());
            let theta = |k: usize| -> f64 {
                let d = inner.x[k] - c1;
                d.y.atan2(d.x)
            };
            let p_interp: Vec<f64> = inner
                .x
                .iter()
                .map(|&x| kernels::interpolate_scalar(grid, &state.p, x))
                .collect();
            for k in 0..inner.nq {
                let th = theta(k);
                let measured = match profiles.and_then(|p| p[k].as_ref()) {
                    Some(prof) => prof.dp_dt * rf.r1,
                    None => {
                        let (kp, km) = ((k + 1) % inner.nq, (k + inner.nq - 1) % inner.nq);
                        let mut dth = theta(kp) - theta(km);
                        while dth > PI {
                            dth -= 2.0 * PI;
                        }
                        while dth < -PI {
                            dth += 2.0 * PI;
                        }
                        (p_interp[kp] - p_interp[km]) / dth
                    }
                };
                let err = measured - rf.pressure_gradient(th) * rf.r1;
                rec.l1_p += err.abs() * inner.dq;
                rec.linf_p = rec.linf_p.max(err.abs());
            }

            // mean shear rate between the cylinders: mean tangential
            // (counter-clockwise) speeds over the generous-cutoff pairing
            let diag = diagnostic_pairings(
                grid,
                inner,
                outer,
                1.25 * (cfg.r2 - cfg.r1 + cfg.x0.abs()),
            )?;
            let t_ccw = |b: &Boundary, k: usize, c: Vec2| -> Vec2 {
                let d = b.x[k] - c;
                d.perp() / d.norm()
            };
            let mean_t = |b: &Boundary, c: Vec2| -> f64 {
                (0..b.nq).map(|k| b.u[k].dot(t_ccw(b, k, c))).sum::<f64>() / b.nq as f64
            };
            let hbar = {
                let hs: Vec<f64> = diag.iter().flatten().map(|g| g.h).collect();
                if hs.is_empty() {
                    rf.mean_h
                } else {
                    hs.iter().sum::<f64>() / hs.len() as f64
                }
            };
            let gm = (mean_t(outer, rf.outer_center) - mean_t(inner, c1)) / hbar;
            let gref = -rf.u_rim / rf.mean_h;
            rec.rel_gamma = (gm / gref - 1.0).abs();

            rec.lift = measured_lift(&state.structures[0], state.t);

            // reverse flow: tangential gap velocity opposite the rim
            // motion anywhere in a reconstructed profile or at an
            // interpolated mid-gap sample
            let thr = 1e-6 * cfg.u_drive * cfg.r1;
            let mut reverse = false;
            if let Some(profiles) = profiles {
                let pairings = &adv
                    .outcomes
                    .iter()
                    .find(|o| o.side == Pass::Lower && o.owner == 0)
                    .unwrap()
                    .pairings;
                for (k, prof) in profiles.iter().enumerate() {
                    let (Some(prof), Some(pairing)) = (prof, &pairings[k]) else {
                        continue;
                    };
                    let sf = pairing.t0.dot(t_ccw(inner, k, c1)).signum();
                    for j in 0..=16 {
                        let w = prof.h * j as f64 / 16.0;
                        let (ut, _) = prof.velocity(w)?;
                        if sf * ut < -thr {
                            reverse = true;
                        }
                    }
                }
            }
            for (k, g) in diag.iter().enumerate() {
                let Some(g) = g else { continue };
                let mid = inner.x[k] + g.n0 * (0.5 * g.h);
                let u_mid = kernels::interpolate_at(grid, &state.u, mid);
                if u_mid.dot(t_ccw(inner, k, c1)) < -thr {
                    reverse = true;
                }
            }
            rec.reverse_flow = reverse;
        }
        Reference::None => {}
    }

    if let Some(ring) = state.structures.last() {
        rec.centroid = ring.boundary.centroid();
        rec.area = ring.boundary.signed_area().abs();
    }
    match cfg.scenario {
        Scenario::EccentricCylinders => {
            let inner = &state.structures[0];
            rec.centroid = inner.boundary.centroid();
            rec.area = inner.boundary.signed_area().abs();
        }
        Scenario::ShearLines => {
            rec.centroid = Vec2::ZERO;
            rec.area = 0.0;
        }
        _ => {}
    }
    Ok(rec)
}

fn accumulate(l1: &mut f64, linf: &mut f64, err: f64, weight: f64) {
    let e = err.abs();
    *l1 += e * weight;
    *linf = (*linf).max(e);
}

// ---------------------------------------------------------------------
// run loops
// ---------------------------------------------------------------------

/// Early-exit rule for the slow eccentric runs: stop once the measured
/// lift has stopped moving (the configuration is kinematically steady, so
/// the lift settles after the startup transient).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauSettings {
    /// Time span over which the lift must be flat.
    pub window: f64,
    /// Relative change bound over the window.
    pub rel_tol: f64,
    /// Never exit before this time.
    pub min_time: f64,
}

impl Default for PlateauSettings {
    fn default() -> Self {
        PlateauSettings {
            window: 2.0,
            rel_tol: 1e-4,
            min_time: 5.0,
        }
    }
}

/// Advance to `t_final` (or a lift plateau, if `plateau` is given),
/// invoking `on_step` after every step. Returns the stop reason.
pub fn run_with_plateau<F>(
    stepper: &mut Stepper,
    state: &mut RunState,
    t_final: f64,
    plateau: Option<PlateauSettings>,
    mut on_step: F,
) -> Result<StopReason>
where
    F: FnMut(&RunState, &StepReport) -> Result<()>,
{
    let mut monitor = plateau.map(PlateauMonitor::new);
    stepper.run(state, t_final, |st, report| {
        on_step(st, report)?;
        match monitor.as_mut() {
            Some(m) => Ok(!m.observe(st)),
            None => Ok(true),
        }
    })
}

/// Windowed lift trace behind the plateau exit. Feed the state after each
/// step; `observe` returns `true` once the lift on the first structure has
/// changed by less than `rel_tol` (relative) over the trailing `window`
/// time units, after `min_time` has elapsed.
#[derive(Debug, Clone)]
pub struct PlateauMonitor {
    pl: PlateauSettings,
    trace: std::collections::VecDeque<(f64, f64)>,
}

impl PlateauMonitor {
    pub fn new(pl: PlateauSettings) -> Self {
        PlateauMonitor {
            pl,
            trace: std::collections::VecDeque::new(),
        }
    }

    pub fn observe(&mut self, st: &RunState) -> bool {
        let pl = self.pl;
        let lift = measured_lift(&st.structures[0], st.t).y;
        self.trace.push_back((st.t, lift));
        while self.trace.len() > 2
            && self
                .trace
                .front()
                .map_or(false, |f| f.0 < st.t - pl.window - 1e-12)
        {
            self.trace.pop_front();
        }
        if st.t >= pl.min_time {
            if let Some(&(t0, l0)) = self.trace.front() {
                if t0 <= st.t - pl.window
                    && (lift - l0).abs() <= pl.rel_tol * lift.abs().max(f64::MIN_POSITIVE)
                {
                    return true;
                }
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shear_defaults_follow_the_resolution_laws() {
        let cfg = ScenarioConfig::new(Scenario::ShearLines, 16, Method::Lubricated);
        let scene = setup(&cfg).unwrap();
        assert_eq!(scene.state.structures.len(), 2);
        let lo = &scene.state.structures[0];
        assert_eq!(lo.boundary.nq, 32);
        let ForceModel::Tether(m) = &lo.model else { panic!("expected tethers") };
        assert!((m.k - 50.0).abs() < 1e-12);
        assert!((scene.params.dt - 0.01 * scene.grid.dx).abs() < 1e-15);
        let y = lo.boundary.x[0].y;
        assert!((y - (1.0 - 1.0 / 48.0)).abs() < 1e-12);
        assert_eq!(scene.pairings.len(), 1);
    }

    #[test]
    fn sawtooth_profile_interpolates_the_line_velocities() {
        let cfg = ScenarioConfig::new(Scenario::ShearLines, 16, Method::Lubricated);
        let rf = exact_shear(&cfg);
        let v = 0.5 * cfg.gamma_dot * cfg.gap;
        assert!((rf.u(rf.y0) + v).abs() < 1e-15);
        assert!((rf.u(rf.yh) - v).abs() < 1e-15);
        assert!(rf.u(0.5 * (rf.y0 + rf.yh)).abs() < 1e-15);
        // periodic continuity and the outer branch slope
        assert!((rf.u(rf.y0 + rf.ly) - rf.u(rf.y0)).abs() < 1e-12);
        let d = 1e-6;
        let slope = (rf.u(rf.yh + d) - rf.u(rf.yh)) / d;
        let want = -cfg.gamma_dot * cfg.gap / (rf.ly - cfg.gap);
        assert!((slope - want).abs() < 1e-6);
        // inside-gap slope is the prescribed shear rate
        let slope_in = (rf.u(rf.yh - d) - rf.u(rf.y0 + d)) / (cfg.gap - 2.0 * d);
        assert!((slope_in - cfg.gamma_dot).abs() < 1e-6);
    }

    #[test]
    fn eccentric_geometry_matches_the_benchmark_gaps() {
        let cfg = ScenarioConfig::new(Scenario::EccentricCylinders, 16, Method::Lubricated);
        assert!((cfg.lambda() - 0.75).abs() < 1e-14);
        let rf = EccentricReference::compute(&cfg);
        let dx = 2.0 / 16.0;
        // narrowest gap Δx/16, widest ≈ Δx/2
        assert!((rf.h[0] - dx / 16.0).abs() < 1e-14);
        let hmax = rf.gap_width(PI);
        assert!((hmax - (cfg.r2 - cfg.r1 + cfg.x0)).abs() < 1e-14);
        assert!(hmax > 0.4 * dx && hmax < 0.5 * dx);
        assert!(cfg.lambda() > reverse_flow_lambda());
    }

    #[test]
    fn closed_form_lift_value_is_pinned() {
        let cfg = ScenarioConfig::new(Scenario::EccentricCylinders, 16, Method::Lubricated);
        let rf = EccentricReference::compute(&cfg);
        assert!(
            (rf.lift_formula - 0.160080).abs() < 1e-5,
            "formula lift {}",
            rf.lift_formula
        );
    }

    #[test]
    fn concentric_cylinders_generate_no_lift() {
        let mut cfg = ScenarioConfig::new(Scenario::EccentricCylinders, 16, Method::Lubricated);
        cfg.x0 = 0.0;
        let rf = EccentricReference::compute(&cfg);
        assert!(rf.lift_formula.abs() < 1e-15);
        assert!(rf.lift_tether.norm() < 1e-12, "oracle lift {:?}", rf.lift_tether);
        assert!(rf.dpds.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn reynolds_oracle_agrees_with_the_closed_form() {
        let cfg = ScenarioConfig::new(Scenario::EccentricCylinders, 16, Method::Lubricated);
        let rf = EccentricReference::compute(&cfg);
        // the lift is perpendicular to the line of centers; the tether
        // force on the fluid points toward −y for counter-clockwise drive
        assert!(rf.lift_tether.x.abs() < 1e-3 * rf.lift_tether.y.abs());
        assert!(rf.lift_tether.y < 0.0);
        // the thin-film solve over the exact gap shape differs from the
        // asymptotic closed form only at O(ε)
        let rel = (rf.lift_tether.y.abs() - rf.lift_formula).abs() / rf.lift_formula;
        assert!(rel < 0.02, "oracle {} vs formula {}", rf.lift_tether.y, rf.lift_formula);
        // frozen oracle value for the benchmark configuration
        assert!(
            (rf.lift_tether.y + 0.161268316547).abs() < 1e-9,
            "oracle lift drifted: {}",
            rf.lift_tether.y
        );
    }

    #[test]
    fn gap_profile_reverses_only_beyond_the_vortex_threshold() {
        let mut cfg = ScenarioConfig::new(Scenario::EccentricCylinders, 16, Method::Lubricated);
        let rf = EccentricReference::compute(&cfg);
        assert!(rf.min_u_t() < -1e-6 * rf.u_rim, "expected reverse flow at λ=3/4");
        // move the centers nearly together: below threshold, no reversal
        cfg.x0 = 0.2 * cfg.r1 * cfg.epsilon();
        assert!(cfg.lambda() < reverse_flow_lambda());
        let rf2 = EccentricReference::compute(&cfg);
        assert!(rf2.min_u_t() > -1e-9 * rf2.u_rim);
    }

    #[test]
    fn region_wise_reference_velocity() {
        let cfg = ScenarioConfig::new(Scenario::EccentricCylinders, 16, Method::Lubricated);
        let rf = EccentricReference::compute(&cfg);
        let (c1, c2) = cfg.centers();
        // rigid rotation inside the inner cylinder
        let u = rf.velocity_at(c1 + Vec2::new(0.5 * cfg.r1, 0.0));
        assert!((u - Vec2::new(0.0, 0.5 * rf.u_rim)).norm() < 1e-14);
        // at rest outside the outer cylinder
        assert_eq!(rf.velocity_at(c2 + Vec2::new(0.0, cfg.r2 + 0.01)), Vec2::ZERO);
        // rim speed on the inner surface at the widest point
        let u = rf.velocity_at(c1 + Vec2::new(-cfg.r1 - 1e-12, 0.0));
        assert!((u - Vec2::new(0.0, -rf.u_rim)).norm() < 1e-6);
    }

    #[test]
    fn channel_walls_leave_the_configured_clearance() {
        let cfg = ScenarioConfig::new(Scenario::Channel, 64, Method::Lubricated);
        let scene = setup(&cfg).unwrap();
        assert_eq!(scene.state.structures.len(), 3);
        assert_eq!(scene.pairings.len(), 2);
        let bot = &scene.state.structures[0].boundary;
        let top = &scene.state.structures[1].boundary;
        let ring = &scene.state.structures[2].boundary;
        let clear_b = ring.x.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - bot.x[0].y;
        let clear_t = top.x[0].y - ring.x.iter().map(|p| p.y).fold(f64::MIN, f64::max);
        assert!((clear_b - PI / 192.0).abs() < 1e-12);
        assert!((clear_t - PI / 192.0).abs() < 1e-12);
        // Δy/6 in grid units
        assert!((clear_b - scene.grid.dy / 6.0).abs() < 1e-12);
    }

    #[test]
    fn migration_setup_matches_the_benchmark() {
        let cfg = ScenarioConfig::new(Scenario::WallMigration, 64, Method::Lubricated);
        let scene = setup(&cfg).unwrap();
        assert!((scene.grid.dx - 2.0 * scene.grid.dy).abs() < 1e-14);
        assert_eq!(scene.state.structures[1].boundary.nq, 32);
        let ring = &scene.state.structures[1].boundary;
        let wall_gap = ring.x.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        assert!((wall_gap - PI / 192.0).abs() < 1e-12);
        assert!(matches!(scene.params.body_force, BodyForce::SinY { amp } if amp == cfg.mu));
        assert!((scene.params.dt - 0.005 * scene.grid.dx).abs() < 1e-15);
    }

    #[test]
    fn diagnostic_pairings_recover_the_analytic_gap() {
        let cfg = ScenarioConfig::new(Scenario::EccentricCylinders, 16, Method::Lubricated);
        let scene = setup(&cfg).unwrap();
        let rf = EccentricReference::compute(&cfg);
        let inner = &scene.state.structures[0].boundary;
        let outer = &scene.state.structures[1].boundary;
        let diag = diagnostic_pairings(
            &scene.grid,
            inner,
            outer,
            1.25 * (cfg.r2 - cfg.r1 + cfg.x0),
        )
        .unwrap();
        let (c1, _) = cfg.centers();
        let mut paired = 0;
        for (k, g) in diag.iter().enumerate() {
            let Some(g) = g else { continue };
            paired += 1;
            let d = inner.x[k] - c1;
            let th = d.y.atan2(d.x);
            assert!(
                (g.h - rf.gap_width(th)).abs() < 2e-4,
                "point {k}: paired h {} vs analytic {}",
                g.h,
                rf.gap_width(th)
            );
        }
        assert_eq!(paired, inner.nq, "expected full coverage at 16²");
    }

    #[test]
    fn fresh_state_diagnostics_are_exact_in_position() {
        let cfg = ScenarioConfig::new(Scenario::ShearLines, 16, Method::Lubricated);
        let scene = setup(&cfg).unwrap();
        let stepper = scene.stepper().unwrap();
        let mut state = scene.state;
        let rf = reference_for(&cfg);
        let rec = diagnose(&stepper, &mut state, &cfg, &rf).unwrap();
        assert_eq!(rec.l1_x, 0.0);
        assert_eq!(rec.linf_x, 0.0);
        // u = 0 initially: boundary-velocity error is the target speed and
        // the measured shear rate is zero
        let v = 0.5 * cfg.gamma_dot * cfg.gap;
        assert!((rec.linf_ub - v).abs() < 1e-15);
        assert!((rec.rel_gamma - 1.0).abs() < 1e-12);
        assert!(!rec.reverse_flow);
        let row = rec.csv_row();
        assert_eq!(row.split(',').count(), DiagnosticsRecord::CSV_HEADER.split(',').count());
    }

    #[test]
    fn channel_without_forcing_keeps_the_ring_centered() {
        let mut cfg = ScenarioConfig::new(Scenario::Channel, 64, Method::Lubricated);
        cfg.ring_force = 0.0;
        let scene = setup(&cfg).unwrap();
        let mut stepper = scene.stepper().unwrap();
        let mut state = scene.state;
        let c0 = state.structures[2].boundary.centroid();
        for _ in 0..3 {
            stepper.step(&mut state).unwrap();
        }
        let c1 = state.structures[2].boundary.centroid();
        assert!(
            (c1 - c0).norm() < 1e-9,
            "unforced ring centroid moved by {:?}",
            c1 - c0
        );
    }
}
