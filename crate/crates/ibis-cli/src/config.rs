//! Declarative run configuration: a flat `key = value` text document
//! covering every scenario, lubrication, solver, and output knob.
//!
//! The format is deliberately plain: one assignment per line, `#` starts a
//! comment, blank lines are ignored. `scenario` is the only required key;
//! every other key defaults to the chosen scenario's benchmark value.
//! Unknown and duplicate keys are rejected so a typo cannot silently fall
//! back to a default. Serialization emits every key in a fixed order with
//! round-trip-exact numbers, so parse → serialize → parse is the identity.

use ibis_core::elliptic::MgConfig;
use ibis_core::error::{IbisError, Result};
use ibis_core::lubrication::{Blend, CorrectionSettings};
use ibis_core::scenarios::{PlateauSettings, Scenario, ScenarioConfig};
use ibis_core::stepper::Method;

/// What the driver writes while a run progresses.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    /// Steps between diagnostics rows (0 = first and last row only).
    pub cadence: usize,
    /// Also dump velocity/pressure fields and boundary states at every
    /// sampled step.
    pub fields: bool,
    /// Cross-gap samples per point in gap-profile dumps.
    pub gap_samples: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            cadence: 100,
            fields: false,
            gap_samples: 32,
        }
    }
}

/// Fully resolved configuration for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub blend: Blend,
    pub mg: MgConfig,
    pub output: OutputConfig,
    /// Stop early once the measured lift plateaus (kinematically driven
    /// scenarios reach a steady load long before any fixed final time).
    pub plateau_enabled: bool,
    pub plateau: PlateauSettings,
}

impl RunConfig {
    pub fn new(scenario: Scenario, n: usize, method: Method) -> RunConfig {
        RunConfig {
            scenario: ScenarioConfig::new(scenario, n, method),
            blend: Blend::Hard,
            mg: MgConfig::default(),
            output: OutputConfig::default(),
            plateau_enabled: false,
            plateau: PlateauSettings::default(),
        }
    }

    /// Lubrication settings including the blend mode (the scenario config
    /// alone carries only the numeric knobs).
    pub fn settings(&self) -> CorrectionSettings {
        CorrectionSettings {
            blend: self.blend,
            ..self.scenario.settings()
        }
    }

    /// Checks the driver-level knobs; scenario fields are validated again
    /// by `setup`.
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if !(self.mg.tol > 0.0) {
            return Err(IbisError::Config(format!(
                "mg.tol must be positive, got {}",
                self.mg.tol
            )));
        }
        if self.mg.max_cycles == 0 {
            return Err(IbisError::Config("mg.max_cycles must be at least 1".into()));
        }
        if self.mg.nu_pre == 0 && self.mg.nu_post == 0 {
            return Err(IbisError::Config(
                "mg.nu_pre and mg.nu_post cannot both be zero".into(),
            ));
        }
        if self.output.gap_samples < 2 {
            return Err(IbisError::Config(format!(
                "output.gap_samples must be at least 2, got {}",
                self.output.gap_samples
            )));
        }
        if !(self.plateau.window > 0.0) || !(self.plateau.rel_tol > 0.0) || self.plateau.min_time < 0.0
        {
            return Err(IbisError::Config(
                "plateau.window and plateau.rel_tol must be positive, plateau.min_time \
                 non-negative"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Parse the flat key-value document. `scenario` must be present;
    /// `grid` and `method` may override their defaults (16, lubricated);
    /// all other keys patch the scenario's benchmark defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(IbisError::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if value.is_empty() {
                return Err(IbisError::Config(format!("line {}: empty value for '{key}'", lineno + 1)));
            }
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(IbisError::Config(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
            pairs.push((key, value));
        }

        let lookup = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let Some(scenario) = lookup("scenario") else {
            return Err(IbisError::Config("missing required key 'scenario'".into()));
        };
        let scenario = Scenario::parse(scenario)?;
        let method = match lookup("method") {
            Some(v) => Method::parse(v)?,
            None => Method::Lubricated,
        };
        let n = match lookup("grid") {
            Some(v) => parse_usize("grid", v)?,
            None => 16,
        };

        let mut cfg = RunConfig::new(scenario, n, method);
        for (key, value) in &pairs {
            cfg.apply(key, value)?;
        }
        Ok(cfg)
    }

    /// Set one field from its config key. Unknown keys are an error.
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let sc = &mut self.scenario;
        match key {
            "scenario" => sc.scenario = Scenario::parse(value)?,
            "method" => sc.method = Method::parse(value)?,
            "grid" => sc.n = parse_usize(key, value)?,
            "t_final" => sc.t_final = parse_f64(key, value)?,
            "rho" => sc.rho = parse_f64(key, value)?,
            "mu" => sc.mu = parse_f64(key, value)?,
            "dt_factor" => sc.dt_factor = parse_f64(key, value)?,
            "cutoff_factor" => sc.cutoff_factor = parse_f64(key, value)?,
            "offset_gridpoints" => sc.offset_gridpoints = parse_f64(key, value)?,
            "blend" => self.blend = Blend::parse(value)?,
            "shear.gamma_dot" => sc.gamma_dot = parse_f64(key, value)?,
            "shear.gap" => sc.gap = parse_f64(key, value)?,
            "eccentric.r1" => sc.r1 = parse_f64(key, value)?,
            "eccentric.r2" => sc.r2 = parse_f64(key, value)?,
            "eccentric.x0" => sc.x0 = parse_f64(key, value)?,
            "eccentric.u_drive" => sc.u_drive = parse_f64(key, value)?,
            "eccentric.u_is_rim_speed" => sc.u_is_rim_speed = parse_bool(key, value)?,
            "ring.r0" => sc.r0 = parse_f64(key, value)?,
            "ring.k_spring" => sc.k_spring = parse_f64(key, value)?,
            "ring.k_bend" => sc.k_bend = parse_f64(key, value)?,
            "ring.force" => sc.ring_force = parse_f64(key, value)?,
            "ring.points" => sc.ring_points = parse_usize(key, value)?,
            "wall.points" => sc.wall_points = parse_usize(key, value)?,
            "wall.k" => sc.k_wall = parse_f64(key, value)?,
            "mg.tol" => self.mg.tol = parse_f64(key, value)?,
            "mg.max_cycles" => self.mg.max_cycles = parse_usize(key, value)?,
            "mg.nu_pre" => self.mg.nu_pre = parse_usize(key, value)?,
            "mg.nu_post" => self.mg.nu_post = parse_usize(key, value)?,
            "output.cadence" => self.output.cadence = parse_usize(key, value)?,
            "output.fields" => self.output.fields = parse_bool(key, value)?,
            "output.gap_samples" => self.output.gap_samples = parse_usize(key, value)?,
            "plateau.enabled" => self.plateau_enabled = parse_bool(key, value)?,
            "plateau.window" => self.plateau.window = parse_f64(key, value)?,
            "plateau.rel_tol" => self.plateau.rel_tol = parse_f64(key, value)?,
            "plateau.min_time" => self.plateau.min_time = parse_f64(key, value)?,
            other => {
                return Err(IbisError::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Emit every key in fixed order. Numbers use the shortest exact
    /// decimal form, so re-parsing reproduces the same configuration
    /// bit for bit.
    pub fn serialize(&self) -> String {
        let sc = &self.scenario;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("scenario", sc.scenario.name().into());
        put("method", sc.method.name().into());
        put("grid", sc.n.to_string());
        put("t_final", sc.t_final.to_string());
        put("rho", sc.rho.to_string());
        put("mu", sc.mu.to_string());
        put("dt_factor", sc.dt_factor.to_string());
        put("cutoff_factor", sc.cutoff_factor.to_string());
        put("offset_gridpoints", sc.offset_gridpoints.to_string());
        put("blend", self.blend.name().into());
        put("shear.gamma_dot", sc.gamma_dot.to_string());
        put("shear.gap", sc.gap.to_string());
        put("eccentric.r1", sc.r1.to_string());
        put("eccentric.r2", sc.r2.to_string());
        put("eccentric.x0", sc.x0.to_string());
        put("eccentric.u_drive", sc.u_drive.to_string());
        put("eccentric.u_is_rim_speed", sc.u_is_rim_speed.to_string());
        put("ring.r0", sc.r0.to_string());
        put("ring.k_spring", sc.k_spring.to_string());
        put("ring.k_bend", sc.k_bend.to_string());
        put("ring.force", sc.ring_force.to_string());
        put("ring.points", sc.ring_points.to_string());
        put("wall.points", sc.wall_points.to_string());
        put("wall.k", sc.k_wall.to_string());
        put("mg.tol", self.mg.tol.to_string());
        put("mg.max_cycles", self.mg.max_cycles.to_string());
        put("mg.nu_pre", self.mg.nu_pre.to_string());
        put("mg.nu_post", self.mg.nu_post.to_string());
        put("output.cadence", self.output.cadence.to_string());
        put("output.fields", self.output.fields.to_string());
        put("output.gap_samples", self.output.gap_samples.to_string());
        put("plateau.enabled", self.plateau_enabled.to_string());
        put("plateau.window", self.plateau.window.to_string());
        put("plateau.rel_tol", self.plateau.rel_tol.to_string());
        put("plateau.min_time", self.plateau.min_time.to_string());
        s
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| IbisError::Config(format!("key '{key}': '{value}' is not a number")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| IbisError::Config(format!("key '{key}': '{value}' is not a non-negative integer")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(IbisError::Config(format!(
            "key '{key}': '{value}' is not 'true' or 'false'"
        ))),
    }
}
