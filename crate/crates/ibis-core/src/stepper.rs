//! The predictor–corrector time step for unsteady Stokes flow coupled to
//! immersed boundaries.
//!
//! One step from t^n to t^{n+1}:
//!
//! 1. forces F^n at X^n; advection velocities U^n (standard IB
//!    interpolation of u^n, lubrication-corrected where gaps are active,
//!    using p^{n−1/2} for the outer pressure samples);
//! 2. predictor: X* = X^n + Δt U^n, forces F* at X* with targets at
//!    t^{n+1};
//! 3. time-centered fluid solve with f̄ = (f^n + f*)/2 + f_body: the
//!    divergence of the momentum equation gives a Poisson problem for
//!    p^{n+1/2} (D and L commute on the periodic grid), then a Helmholtz
//!    solve (ρ/Δt − μL/2) u^{n+1} = ρu^n/Δt + (μ/2)L u^n + f̄ − G p^{n+1/2};
//! 4. corrector: U* from u^{n+1} at X* (pairings and corrections rebuilt
//!    at X*), X^{n+1} = X^n + (Δt/2)(U^n + U*).
//!
//! The fluid is advanced by Crank–Nicolson; the boundary by the midpoint
//! rule, making the whole scheme second order in Δt. After every step the
//! discrete divergence of u^{n+1} is checked against the solver tolerance.

use crate::boundary::{self, tether_force, ring_forces, Boundary, ElasticRingModel, TetherModel};
use crate::elliptic::{helmholtz::HelmholtzSolver, pressure::PressureSolver, MgConfig};
use crate::error::{IbisError, Result};
use crate::geometry::{pair_boundaries, CurveGeometry, GapPairing, SpatialBins};
use crate::grid::{self, Grid, Loc, ScalarField, VectorField};
use crate::kernels;
use crate::lubrication::{
    correct_pass, CorrectionSettings, CorrectionStats, GapProfile, Pass,
};
use crate::textio;
use crate::vec2::Vec2;

/// Bulk force density applied to the fluid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BodyForce {
    None,
    /// f = (amp·sin y, 0).
    SinY { amp: f64 },
}

/// Fluid constants and the timestep.
#[derive(Debug, Clone, Copy)]
pub struct PhysicalParams {
    pub rho: f64,
    pub mu: f64,
    pub dt: f64,
    pub body_force: BodyForce,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(IbisError::Config(format!("density must be positive, got {}", self.rho)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(IbisError::Config(format!("viscosity must be positive, got {}", self.mu)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(IbisError::Config(format!("timestep must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Constitutive model generating a boundary's force density.
#[derive(Debug, Clone)]
pub enum ForceModel {
    Tether(TetherModel),
    Ring(ElasticRingModel),
}

/// One immersed structure: a boundary plus its force model.
#[derive(Debug, Clone)]
pub struct Structure {
    pub boundary: Boundary,
    pub model: ForceModel,
}

impl Structure {
    /// Force densities at the current positions and time.
    pub fn forces(&self, t: f64) -> Vec<Vec2> {
        match &self.model {
            ForceModel::Tether(m) => tether_force(&self.boundary, m, t),
            ForceModel::Ring(m) => ring_forces(&self.boundary, m),
        }
    }
}

/// Advection-velocity formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Standard,
    Lubricated,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "standard" => Ok(Method::Standard),
            "lubricated" => Ok(Method::Lubricated),
            other => Err(IbisError::Config(format!(
                "unknown method '{other}' (expected standard or lubricated)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Lubricated => "lubricated",
        }
    }
}

/// A lower/upper boundary pair to monitor for thin gaps, by structure
/// index.
#[derive(Debug, Clone, Copy)]
pub struct PairingSpec {
    pub lower: usize,
    pub upper: usize,
}

/// Everything that evolves in time.
#[derive(Debug, Clone)]
pub struct RunState {
    pub t: f64,
    pub step: u64,
    pub u: VectorField,
    /// Most recent half-time pressure p^{n−1/2} (zero initially).
    pub p: ScalarField,
    pub structures: Vec<Structure>,
    pub method: Method,
}

impl RunState {
    pub fn new(grid: &Grid, structures: Vec<Structure>, method: Method) -> Result<RunState> {
        for (a, s) in structures.iter().enumerate() {
            for other in structures.iter().skip(a + 1) {
                if s.boundary.name == other.boundary.name {
                    return Err(IbisError::Config(format!(
                        "duplicate boundary name '{}'",
                        s.boundary.name
                    )));
                }
            }
        }
        Ok(RunState {
            t: 0.0,
            step: 0,
            u: VectorField::zeros(grid),
            p: ScalarField::zeros(grid, Loc::Corner),
            structures,
            method,
        })
    }

    /// Serialize the full mutable state — fields and boundaries, in the
    /// module dump formats — prefixed by a
    /// `# checkpoint t=<t> step=<n> method=<m> structures=<k>` header.
    /// Restartable via [`RunState::restore`].
    pub fn checkpoint(&self, grid: &Grid) -> Result<String> {
        let mut out = format!(
            "# checkpoint t={} step={} method={} structures={}\n",
            textio::fmt17(self.t),
            self.step,
            self.method.name(),
            self.structures.len()
        );
        out.push_str(&grid::dump_vector(grid, "u", &self.u)?);
        out.push_str(&grid::dump_scalar(grid, "p", &self.p)?);
        for s in &self.structures {
            out.push_str(&boundary::dump_boundary(&s.boundary));
        }
        Ok(out)
    }

    /// Restore state from checkpoint text. The receiving state must come
    /// from an identically configured run: same grid, same method, and the
    /// same structures (names, point counts, spacings) in the same order.
    pub fn restore(&mut self, grid: &Grid, text: &str) -> Result<()> {
        let mut lines = text.lines();
        let header = textio::next_line(&mut lines, "a '# checkpoint ...' header")?;
        let pairs = textio::header_pairs(header, "checkpoint")?;
        let t: f64 = textio::header_get(&pairs, "t")?;
        let step: u64 = textio::header_get(&pairs, "step")?;
        let method: String = textio::header_get(&pairs, "method")?;
        let nstructures: usize = textio::header_get(&pairs, "structures")?;
        if Method::parse(&method)? != self.method {
            return Err(IbisError::Config(format!(
                "checkpoint method '{method}' does not match the configured '{}'",
                self.method.name()
            )));
        }
        if nstructures != self.structures.len() {
            return Err(IbisError::Config(format!(
                "checkpoint has {nstructures} structures, run has {}",
                self.structures.len()
            )));
        }
        let (name, gu, u) = grid::parse_vector(&mut lines)?;
        let (pname, gp, p) = grid::parse_scalar(&mut lines)?;
        if name != "u" || pname != "p" {
            return Err(IbisError::Parse(format!(
                "expected fields u then p, got '{name}' and '{pname}'"
            )));
        }
        if gu != *grid || gp != *grid {
            return Err(IbisError::Config(format!(
                "checkpoint grid {}x{} does not match the configured {}x{}",
                gu.nx, gu.ny, grid.nx, grid.ny
            )));
        }
        if p.loc != self.p.loc {
            return Err(IbisError::Config(
                "checkpoint pressure staggering does not match".into(),
            ));
        }
        let mut snaps = Vec::with_capacity(nstructures);
        for _ in 0..nstructures {
            snaps.push(boundary::parse_boundary(&mut lines)?);
        }
        for (s, snap) in self.structures.iter_mut().zip(&snaps) {
            s.boundary.apply_snapshot(snap)?;
        }
        self.t = t;
        self.step = step;
        self.u = u;
        self.p = p;
        Ok(())
    }
}

/// One correction pass retained for diagnostics: which pairing spec, which
/// side, and the per-owner-point pairings and gap profiles.
#[derive(Debug, Clone)]
pub struct PassOutcome {
    pub spec: PairingSpec,
    pub side: Pass,
    /// Structure index owning the pass.
    pub owner: usize,
    pub pairings: Vec<Option<GapPairing>>,
    pub profiles: Vec<Option<GapProfile>>,
}

/// Advection velocities for all structures plus the lubrication state that
/// produced them.
#[derive(Debug, Clone)]
pub struct Advection {
    /// Per structure, per point.
    pub velocities: Vec<Vec<Vec2>>,
    pub outcomes: Vec<PassOutcome>,
    pub stats: CorrectionStats,
}

/// Per-step summary for callbacks and invariant checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepReport {
    /// Largest boundary-point displacement during the step.
    pub max_displacement: f64,
    /// ‖D·u^{n+1}‖∞ and the ‖·‖∞ of the momentum right-hand side it is
    /// measured against (the residuals of both elliptic solves scale with
    /// the latter).
    pub div_inf: f64,
    pub rhs_inf: f64,
    pub poisson_cycles: usize,
    pub helmholtz_cycles: usize,
    pub lub_stats: CorrectionStats,
}

/// Why a run loop returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    FinalTime,
    /// Boundary displacement stayed below 10⁻¹³·L for 100 consecutive
    /// steps.
    SteadyState,
    /// The per-step callback requested a stop.
    Callback,
}

const STEADY_DISPLACEMENT_REL: f64 = 1e-13;
const STEADY_STREAK: u32 = 100;

/// Unwrapped positions beyond this many domain lengths (or velocities that
/// would carry a point that far in one step) mean the run has blown up:
/// legitimate drifts stay within a handful of periods, and flagging early
/// keeps all index arithmetic far from overflow.
const BLOWUP_DOMAINS: f64 = 1e6;

/// Streak counter behind the steady-state exit: once every boundary point
/// moves less than `1e-13 · max(lx, ly)` per step for 100 consecutive
/// steps, the run may stop early. Exposed so external driver loops apply
/// the same criterion as [`Stepper::run`].
#[derive(Debug, Clone)]
pub struct SteadyMonitor {
    threshold: f64,
    active: bool,
    streak: u32,
}

impl SteadyMonitor {
    pub fn new(grid: &Grid, active: bool) -> Self {
        SteadyMonitor {
            threshold: STEADY_DISPLACEMENT_REL * grid.lx.max(grid.ly),
            active,
            streak: 0,
        }
    }

    /// Feed one step's largest boundary displacement; returns `true` when
    /// the motion has stayed below threshold long enough to call the run
    /// steady.
    pub fn observe(&mut self, max_displacement: f64) -> bool {
        if !self.active {
            return false;
        }
        if max_displacement < self.threshold {
            self.streak += 1;
            self.streak >= STEADY_STREAK
        } else {
            self.streak = 0;
            false
        }
    }
}

/// Remove the nullspace content (mean per corner parity class) from a
/// Poisson right-hand side. A discrete divergence is orthogonal to both
/// classes in exact arithmetic; this clears the round-off remainder.
fn project_range(grid: &Grid, rhs: &mut ScalarField) {
    debug_assert_eq!(rhs.loc, Loc::Corner);
    let mut sums = [0.0_f64; 2];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            sums[(i + j) % 2] += rhs.data[grid.idx(i, j)];
        }
    }
    let half = (grid.nx * grid.ny / 2) as f64;
    let means = [sums[0] / half, sums[1] / half];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            rhs.data[grid.idx(i, j)] -= means[(i + j) % 2];
        }
    }
}

/// Owns the elliptic solvers and per-run settings; advances a `RunState`.
pub struct Stepper {
    pub grid: Grid,
    pub params: PhysicalParams,
    pub settings: CorrectionSettings,
    pub pairings: Vec<PairingSpec>,
    pressure: PressureSolver,
    helmholtz: HelmholtzSolver,
    body: VectorField,
    mg_tol: f64,
}

impl Stepper {
    pub fn new(
        grid: Grid,
        params: PhysicalParams,
        mg: MgConfig,
        settings: CorrectionSettings,
        pairings: Vec<PairingSpec>,
    ) -> Result<Stepper> {
        params.validate()?;
        settings.validate()?;
        let pressure = PressureSolver::new(&grid, mg.clone())?;
        let helmholtz = HelmholtzSolver::new(&grid, params.rho, params.mu, params.dt, mg.clone())?;
        let mut body = VectorField::zeros(&grid);
        if let BodyForce::SinY { amp } = params.body_force {
            for j in 0..grid.ny {
                let fy = amp * grid.cell_center(0, j).y.sin();
                for i in 0..grid.nx {
                    body.u[grid.idx(i, j)] = fy;
                }
            }
        }
        Ok(Stepper {
            grid,
            params,
            settings,
            pairings,
            pressure,
            helmholtz,
            body,
            mg_tol: mg.tol,
        })
    }

    /// Set every structure's force densities for its current positions at
    /// time `t`.
    pub(crate) fn set_forces(&self, state: &mut RunState, t: f64) {
        for s in &mut state.structures {
            s.boundary.f = s.forces(t);
        }
    }

    /// Advection velocities for the current positions: standard IB
    /// interpolation of `state.u`, plus lubrication corrections over the
    /// configured pairings when the method is lubricated. Boundary `f`
    /// must be current; boundary `u` is refreshed here.
    pub fn advection(&self, state: &mut RunState) -> Result<Advection> {
        let grid = &self.grid;
        for s in &mut state.structures {
            s.boundary.u = kernels::interpolate(grid, &state.u, &s.boundary.x);
        }
        let mut adv = Advection {
            velocities: state
                .structures
                .iter()
                .map(|s| s.boundary.u.clone())
                .collect(),
            outcomes: Vec::new(),
            stats: CorrectionStats::default(),
        };
        if state.method == Method::Standard || self.pairings.is_empty() {
            return Ok(adv);
        }
        let cutoff = self.settings.cutoff_len(grid);
        let geos: Vec<CurveGeometry> = state
            .structures
            .iter()
            .map(|s| CurveGeometry::build(&s.boundary))
            .collect::<Result<_>>()?;
        let bins: Vec<SpatialBins> = state
            .structures
            .iter()
            .map(|s| SpatialBins::build(&s.boundary, grid))
            .collect();
        let obstacles: Vec<(&Boundary, &SpatialBins)> = state
            .structures
            .iter()
            .zip(&bins)
            .map(|(s, b)| (&s.boundary, b))
            .collect();
        for &spec in &self.pairings {
            let lo = &state.structures[spec.lower].boundary;
            let up = &state.structures[spec.upper].boundary;
            let ps = pair_boundaries(grid, lo, &geos[spec.lower], up, &geos[spec.upper], cutoff)?;
            for (side, owner_idx, pairs) in [
                (Pass::Lower, spec.lower, &ps.lower),
                (Pass::Upper, spec.upper, &ps.upper),
            ] {
                let owner = &state.structures[owner_idx].boundary;
                let partner_idx = if side == Pass::Lower { spec.upper } else { spec.lower };
                let partner_name = state.structures[partner_idx].boundary.name.as_str();
                let out = correct_pass(
                    grid,
                    &self.settings,
                    self.params.mu,
                    owner,
                    &geos[owner_idx],
                    partner_name,
                    pairs,
                    side,
                    &state.u,
                    &state.p,
                    &obstacles,
                )?;
                for (k, touched) in out.corrected_mask.iter().enumerate() {
                    if *touched {
                        adv.velocities[owner_idx][k] = out.velocities[k];
                    }
                }
                adv.stats.merge(&out.stats);
                adv.outcomes.push(PassOutcome {
                    spec,
                    side,
                    owner: owner_idx,
                    pairings: pairs.clone(),
                    profiles: out.profiles,
                });
            }
        }
        Ok(adv)
    }

    /// Advance one step. On success `state` holds u^{n+1}, p^{n+1/2},
    /// X^{n+1}, and each boundary's `u` holds the effective advection
    /// velocity (U^n + U*)/2.
    pub fn step(&mut self, state: &mut RunState) -> Result<StepReport> {
        let grid = self.grid.clone();
        let dt = self.params.dt;
        let (rho, mu) = (self.params.rho, self.params.mu);
        let t0 = state.t;

        // forces and advection velocities at X^n
        self.set_forces(state, t0);
        let mut fbar = VectorField::zeros(&grid);
        for s in &state.structures {
            kernels::spread_into(&grid, &s.boundary.x, &s.boundary.f, s.boundary.dq, &mut fbar)?;
        }
        let adv_n = self.advection(state)?;

        // predictor positions X*
        let xn: Vec<Vec<Vec2>> = state
            .structures
            .iter()
            .map(|s| s.boundary.x.clone())
            .collect();
        for (s, un) in state.structures.iter_mut().zip(&adv_n.velocities) {
            for (x, u) in s.boundary.x.iter_mut().zip(un) {
                *x += *u * dt;
            }
        }

        // predictor forces F* (targets at t^{n+1}), time-averaged load
        self.set_forces(state, t0 + dt);
        for s in &state.structures {
            kernels::spread_into(&grid, &s.boundary.x, &s.boundary.f, s.boundary.dq, &mut fbar)?;
        }
        let n_cells = fbar.u.len();
        for k in 0..n_cells {
            fbar.u[k] = 0.5 * fbar.u[k] + self.body.u[k];
            fbar.v[k] = 0.5 * fbar.v[k] + self.body.v[k];
        }

        // time-centered momentum right-hand side
        let lap = grid::laplacian(&grid, &state.u)?;
        let mut rhs_mom = VectorField::zeros(&grid);
        for k in 0..n_cells {
            rhs_mom.u[k] = rho / dt * state.u.u[k] + 0.5 * mu * lap.u[k] + fbar.u[k];
            rhs_mom.v[k] = rho / dt * state.u.v[k] + 0.5 * mu * lap.v[k] + fbar.v[k];
        }

        // pressure Poisson (warm-started from p^{n−1/2}); the divergence of
        // anything lies in the operator's range up to round-off, so project
        // out the residual parity-class means before the solve
        let mut div_rhs = grid::divergence(&grid, &rhs_mom)?;
        project_range(&grid, &mut div_rhs);
        let rhs_inf = grid::linf_norm(&rhs_mom.u).max(grid::linf_norm(&rhs_mom.v));
        let pstats = self.pressure.solve(&div_rhs, &mut state.p)?;

        // velocity Helmholtz (warm-started from u^n)
        let gp = grid::gradient(&grid, &state.p)?;
        let mut hrhs = rhs_mom;
        for k in 0..n_cells {
            hrhs.u[k] -= gp.u[k];
            hrhs.v[k] -= gp.v[k];
        }
        let mut u_new = state.u.clone();
        let hstats = self.helmholtz.solve(&hrhs, &mut u_new)?;
        // a state this far past any physical scale is already dead; flag
        // it while every coordinate is still safely indexable
        let u_limit = BLOWUP_DOMAINS * grid.lx.max(grid.ly) / dt;
        if !u_new.is_finite() || grid::linf_norm(&u_new.u).max(grid::linf_norm(&u_new.v)) > u_limit
        {
            return Err(IbisError::NumericalBlowup {
                step: state.step as usize,
                time: state.t,
            });
        }
        state.u = u_new;

        // corrector advection velocities at X* from u^{n+1}, p^{n+1/2}
        let adv_star = self.advection(state)?;

        // midpoint position update; boundaries keep the effective velocity
        let mut max_disp = 0.0_f64;
        let x_limit = BLOWUP_DOMAINS * grid.lx.max(grid.ly);
        for (si, s) in state.structures.iter_mut().enumerate() {
            for k in 0..s.boundary.nq {
                let umid = (adv_n.velocities[si][k] + adv_star.velocities[si][k]) * 0.5;
                let x1 = xn[si][k] + umid * dt;
                if !x1.is_finite() || x1.norm() > x_limit {
                    return Err(IbisError::NumericalBlowup {
                        step: state.step as usize,
                        time: state.t,
                    });
                }
                max_disp = max_disp.max((x1 - xn[si][k]).norm());
                s.boundary.x[k] = x1;
                s.boundary.u[k] = umid;
            }
        }

        state.step += 1;
        state.t = state.step as f64 * dt;

        let div = grid::divergence(&grid, &state.u)?;
        let div_inf = grid::linf_norm(&div.data);
        debug_assert!(
            div_inf <= 10.0 * self.mg_tol * rhs_inf + f64::MIN_POSITIVE,
            "divergence {div_inf} exceeds solver tolerance ({} × {rhs_inf})",
            self.mg_tol
        );

        let mut lub = adv_n.stats;
        lub.merge(&adv_star.stats);
        Ok(StepReport {
            max_displacement: max_disp,
            div_inf,
            rhs_inf,
            poisson_cycles: pstats.cycles,
            helmholtz_cycles: hstats.cycles,
            lub_stats: lub,
        })
    }

    /// Advance until `t_final` (or steady state, or the callback asks to
    /// stop). The callback sees the state after every step.
    pub fn run<F>(&mut self, state: &mut RunState, t_final: f64, mut on_step: F) -> Result<StopReason>
    where
        F: FnMut(&RunState, &StepReport) -> Result<bool>,
    {
        let dt = self.params.dt;
        let nsteps = ((t_final - state.t) / dt).round().max(0.0) as u64;
        let mut steady = SteadyMonitor::new(&self.grid, !state.structures.is_empty());
        for _ in 0..nsteps {
            let report = self.step(state)?;
            if !on_step(state, &report)? {
                return Ok(StopReason::Callback);
            }
            if steady.observe(report.max_displacement) {
                return Ok(StopReason::SteadyState);
            }
        }
        Ok(StopReason::FinalTime)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::TargetMotion;

    fn quiet_params(dt: f64) -> PhysicalParams {
        PhysicalParams {
            rho: 1.0,
            mu: 0.02,
            dt,
            body_force: BodyForce::None,
        }
    }

    /// The standard tethered shear-line pair on a small grid.
    fn shear_setup(grid: &Grid, gamma: f64, gap: f64, k: f64) -> Vec<Structure> {
        let nq = 2 * grid.nx;
        let y_lo = 0.5 * grid.ly - 0.5 * gap;
        let y_hi = 0.5 * grid.ly + 0.5 * gap;
        let mk = |name: &str, y: f64, ltr: bool, vel: f64| -> Structure {
            let b = Boundary::line_x(name, y, grid.lx, nq, ltr).unwrap();
            let model = TetherModel::new(
                k,
                b.x.clone(),
                TargetMotion::Translate {
                    vel: Vec2::new(vel, 0.0),
                },
            )
            .unwrap();
            Structure {
                boundary: b,
                model: ForceModel::Tether(model),
            }
        };
        vec![
            mk("lower", y_lo, true, -0.5 * gamma * gap),
            mk("upper", y_hi, true, 0.5 * gamma * gap),
        ]
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let grid = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let mut stepper = Stepper::new(
            grid.clone(),
            quiet_params(0.01),
            MgConfig::default(),
            CorrectionSettings::default(),
            vec![],
        )
        .unwrap();
        let mut state = RunState::new(&grid, vec![], Method::Standard).unwrap();
        for _ in 0..3 {
            let r = stepper.step(&mut state).unwrap();
            assert_eq!(r.div_inf, 0.0);
        }
        assert!(state.u.u.iter().all(|&v| v == 0.0));
        assert!(state.u.v.iter().all(|&v| v == 0.0));
        assert!(state.p.data.iter().all(|&v| v == 0.0));
        assert_eq!(state.step, 3);
    }

    #[test]
    fn stokes_mode_decays_at_the_crank_nicolson_rate() {
        let grid = Grid::new(32, 32, 2.0, 2.0).unwrap();
        let (rho, mu, dt) = (1.3, 0.07, 0.05);
        let mut stepper = Stepper::new(
            grid.clone(),
            PhysicalParams {
                rho,
                mu,
                dt,
                body_force: BodyForce::None,
            },
            MgConfig::default(),
            CorrectionSettings::default(),
            vec![],
        )
        .unwrap();
        let mut state = RunState::new(&grid, vec![], Method::Standard).unwrap();
        let ky = 2.0 * std::f64::consts::PI / grid.ly;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                state.u.u[grid.idx(i, j)] = (ky * grid.cell_center(i, j).y).sin();
            }
        }
        let u0 = state.u.clone();
        let lam = 2.0 / (grid.dy * grid.dy) * (1.0 - (ky * grid.dy).cos());
        let r = (rho / dt - 0.5 * mu * lam) / (rho / dt + 0.5 * mu * lam);
        let nsteps = 5;
        for _ in 0..nsteps {
            stepper.step(&mut state).unwrap();
        }
        let factor = r.powi(nsteps);
        let mut worst = 0.0_f64;
        for k in 0..state.u.u.len() {
            worst = worst.max((state.u.u[k] - factor * u0.u[k]).abs());
            worst = worst.max(state.u.v[k].abs());
        }
        assert!(worst < 1e-10, "deviation from CN decay: {worst}");
    }

    #[test]
    fn sinusoidal_body_force_drives_the_expected_channel_flow() {
        let grid = Grid::new(16, 16, 2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI)
            .unwrap();
        let mu = 0.2;
        let mut stepper = Stepper::new(
            grid.clone(),
            PhysicalParams {
                rho: 1.0,
                mu,
                dt: 0.05,
                body_force: BodyForce::SinY { amp: mu },
            },
            MgConfig::default(),
            CorrectionSettings::default(),
            vec![],
        )
        .unwrap();
        let mut state = RunState::new(&grid, vec![], Method::Standard).unwrap();
        stepper.run(&mut state, 20.0, |_, _| Ok(true)).unwrap();
        // discrete fixed point: u = sin(y)/λ with λ the 5-point eigenvalue
        let lam = 2.0 / (grid.dy * grid.dy) * (1.0 - grid.dy.cos());
        let mut worst = 0.0_f64;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let yj = grid.cell_center(i, j).y;
                let want = yj.sin() / lam;
                worst = worst.max((state.u.u[grid.idx(i, j)] - want).abs());
                worst = worst.max(state.u.v[grid.idx(i, j)].abs());
            }
        }
        assert!(worst < 0.03, "distance from steady flow: {worst}");
        // and the analytic target (sin y, 0) is close on this grid
        let err = (1.0 / lam - 1.0).abs();
        assert!(err < 0.02, "discrete amplitude offset {err}");
    }

    #[test]
    fn divergence_stays_within_solver_tolerance_under_forcing() {
        let grid = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let dt = 0.01 * grid.dx;
        let mut stepper = Stepper::new(
            grid.clone(),
            quiet_params(dt),
            MgConfig::default(),
            CorrectionSettings::default(),
            vec![PairingSpec { lower: 0, upper: 1 }],
        )
        .unwrap();
        let structures = shear_setup(&grid, 0.15, 1.0 / 24.0, 50.0);
        let mut state = RunState::new(&grid, structures, Method::Lubricated).unwrap();
        for _ in 0..10 {
            let r = stepper.step(&mut state).unwrap();
            assert!(
                r.div_inf <= 10.0 * 1e-10 * r.rhs_inf + f64::MIN_POSITIVE,
                "div {} rhs {}",
                r.div_inf,
                r.rhs_inf
            );
            assert!(r.rhs_inf > 0.0);
        }
    }

    #[test]
    fn zero_net_force_conserves_total_momentum() {
        let grid = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let dt = 0.01 * grid.dx;
        let mut stepper = Stepper::new(
            grid.clone(),
            quiet_params(dt),
            MgConfig::default(),
            CorrectionSettings::default(),
            vec![],
        )
        .unwrap();
        // opposite tethered lines: net applied force cancels by symmetry
        let structures = shear_setup(&grid, 0.15, 1.0 / 24.0, 50.0);
        let mut state = RunState::new(&grid, structures, Method::Standard).unwrap();
        for _ in 0..20 {
            stepper.step(&mut state).unwrap();
        }
        let cell = grid.dx * grid.dy;
        let mx: f64 = state.u.u.iter().sum::<f64>() * cell;
        let my: f64 = state.u.v.iter().sum::<f64>() * cell;
        assert!(mx.abs() < 1e-12 && my.abs() < 1e-12, "momentum ({mx}, {my})");
    }

    #[test]
    fn gated_off_lubrication_is_bitwise_identical_to_standard() {
        // wide gap: no pairings activate, so the lubricated path must
        // reproduce the standard one exactly
        let grid = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let dt = 0.01 * grid.dx;
        let gap = 3.0 * grid.dx;
        let mk_stepper = |pairings| {
            Stepper::new(
                grid.clone(),
                quiet_params(dt),
                MgConfig::default(),
                CorrectionSettings::default(),
                pairings,
            )
            .unwrap()
        };
        let mut s_std = mk_stepper(vec![]);
        let mut s_lub = mk_stepper(vec![PairingSpec { lower: 0, upper: 1 }]);
        let mut st_std =
            RunState::new(&grid, shear_setup(&grid, 0.15, gap, 50.0), Method::Standard).unwrap();
        let mut st_lub =
            RunState::new(&grid, shear_setup(&grid, 0.15, gap, 50.0), Method::Lubricated)
                .unwrap();
        for _ in 0..5 {
            s_std.step(&mut st_std).unwrap();
            s_lub.step(&mut st_lub).unwrap();
        }
        for k in 0..st_std.u.u.len() {
            assert_eq!(st_std.u.u[k].to_bits(), st_lub.u.u[k].to_bits());
            assert_eq!(st_std.u.v[k].to_bits(), st_lub.u.v[k].to_bits());
        }
        for (a, b) in st_std.structures.iter().zip(&st_lub.structures) {
            for (xa, xb) in a.boundary.x.iter().zip(&b.boundary.x) {
                assert_eq!(xa.x.to_bits(), xb.x.to_bits());
                assert_eq!(xa.y.to_bits(), xb.y.to_bits());
            }
        }
    }

    #[test]
    fn timestep_self_convergence_is_second_order() {
        let grid = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let t_end = 0.2;
        let dt0 = 0.01 * grid.dx;
        let run_with = |dt: f64| -> Vec<Vec2> {
            let mut stepper = Stepper::new(
                grid.clone(),
                quiet_params(dt),
                MgConfig::default(),
                CorrectionSettings::default(),
                vec![],
            )
            .unwrap();
            let mut state =
                RunState::new(&grid, shear_setup(&grid, 0.15, 1.0 / 24.0, 50.0), Method::Standard)
                    .unwrap();
            stepper.run(&mut state, t_end, |_, _| Ok(true)).unwrap();
            let mut xs = state.structures[0].boundary.x.clone();
            xs.extend_from_slice(&state.structures[1].boundary.x);
            xs
        };
        let x1 = run_with(dt0);
        let x2 = run_with(0.5 * dt0);
        let x4 = run_with(0.25 * dt0);
        let diff = |a: &[Vec2], b: &[Vec2]| -> f64 {
            a.iter().zip(b).map(|(p, q)| (*p - *q).norm()).fold(0.0, f64::max)
        };
        let e1 = diff(&x1, &x2);
        let e2 = diff(&x2, &x4);
        let order = (e1 / e2).log2();
        assert!(order >= 1.8, "observed temporal order {order:.2} (errors {e1:.3e}, {e2:.3e})");
    }

    #[test]
    fn run_respects_final_time_and_callback_stop() {
        let grid = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let dt = 0.01 * grid.dx;
        let mut stepper = Stepper::new(
            grid.clone(),
            quiet_params(dt),
            MgConfig::default(),
            CorrectionSettings::default(),
            vec![],
        )
        .unwrap();
        let mut state = RunState::new(&grid, vec![], Method::Standard).unwrap();
        // T = 0: no steps at all
        let reason = stepper.run(&mut state, 0.0, |_, _| Ok(true)).unwrap();
        assert_eq!(reason, StopReason::FinalTime);
        assert_eq!(state.step, 0);
        // step count honors T/Δt exactly
        let reason = stepper.run(&mut state, 100.0 * dt, |_, _| Ok(true)).unwrap();
        assert_eq!(reason, StopReason::FinalTime);
        assert_eq!(state.step, 100);
        // callback stop
        let reason = stepper
            .run(&mut state, 200.0 * dt, |st, _| Ok(st.step < 105))
            .unwrap();
        assert_eq!(reason, StopReason::Callback);
        assert_eq!(state.step, 105);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(quiet_params(0.0).validate().is_err());
        assert!(PhysicalParams {
            rho: -1.0,
            ..quiet_params(0.1)
        }
        .validate()
        .is_err());
        assert!(PhysicalParams {
            mu: 0.0,
            ..quiet_params(0.1)
        }
        .validate()
        .is_err());
        let grid = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let dup = vec![
            Structure {
                boundary: Boundary::line_x("w", 0.5, 2.0, 16, true).unwrap(),
                model: ForceModel::Ring(ElasticRingModel::new(1.0, 0.0, Vec2::ZERO).unwrap()),
            },
            Structure {
                boundary: Boundary::line_x("w", 1.5, 2.0, 16, true).unwrap(),
                model: ForceModel::Ring(ElasticRingModel::new(1.0, 0.0, Vec2::ZERO).unwrap()),
            },
        ];
        assert!(RunState::new(&grid, dup, Method::Standard).is_err());
    }

    #[test]
    fn checkpoint_restart_resumes_bitwise_identically() {
        let grid = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let dt = 0.01 * grid.dx;
        let gap = 1.0 / 24.0;
        let mk_stepper = || {
            Stepper::new(
                grid.clone(),
                quiet_params(dt),
                MgConfig::default(),
                CorrectionSettings::default(),
                vec![PairingSpec { lower: 0, upper: 1 }],
            )
            .unwrap()
        };
        let mut stepper = mk_stepper();
        let mut state =
            RunState::new(&grid, shear_setup(&grid, 0.15, gap, 50.0), Method::Lubricated)
                .unwrap();
        for _ in 0..3 {
            stepper.step(&mut state).unwrap();
        }
        let ck = state.checkpoint(&grid).unwrap();
        // writing is stable: restoring and re-serializing is the identity
        let mut fresh =
            RunState::new(&grid, shear_setup(&grid, 0.15, gap, 50.0), Method::Lubricated)
                .unwrap();
        fresh.restore(&grid, &ck).unwrap();
        assert_eq!(fresh.checkpoint(&grid).unwrap(), ck);
        assert_eq!(fresh.t, state.t);
        assert_eq!(fresh.step, state.step);

        // continuing from the restore matches continuing the original,
        // bit for bit, including through the warm-started solvers
        let mut s2 = mk_stepper();
        for _ in 0..4 {
            stepper.step(&mut state).unwrap();
            s2.step(&mut fresh).unwrap();
        }
        let bits = |st: &RunState| -> Vec<u64> {
            st.u.u
                .iter()
                .chain(st.u.v.iter())
                .chain(st.p.data.iter())
                .map(|x| x.to_bits())
                .chain(st.structures.iter().flat_map(|s| {
                    s.boundary.x.iter().flat_map(|p| [p.x.to_bits(), p.y.to_bits()])
                }))
                .collect()
        };
        assert_eq!(bits(&state), bits(&fresh));

        // mismatched configurations are rejected
        let mut wrong_method =
            RunState::new(&grid, shear_setup(&grid, 0.15, gap, 50.0), Method::Standard).unwrap();
        assert!(wrong_method.restore(&grid, &ck).is_err());
        let g2 = Grid::new(32, 32, 2.0, 2.0).unwrap();
        let mut wrong_grid =
            RunState::new(&g2, shear_setup(&g2, 0.15, gap, 50.0), Method::Lubricated).unwrap();
        assert!(wrong_grid.restore(&g2, &ck).is_err());
        assert!(fresh.restore(&grid, "# not a checkpoint\n").is_err());
    }
}
