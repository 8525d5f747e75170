//! Run execution and artifact writing shared by the subcommands.
//!
//! A run directory holds `config.echo` (the fully resolved configuration),
//! `diag.csv` (one diagnostics row at the configured cadence plus the
//! final state), `checkpoint.txt` (restartable final state), and — when
//! field output is enabled — velocity/pressure/boundary/height dumps at
//! every sampled step. Nothing in any artifact depends on wall-clock time
//! or memory layout, so identical configurations produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ibis_core::error::{IbisError, Result};
use ibis_core::geometry::dump_heights;
use ibis_core::grid::{dump_scalar, dump_vector};
use ibis_core::lubrication::{dump_gap_profile, Pass};
use ibis_core::scenarios::{
    diagnose, reference_for, setup, DiagnosticsRecord, PlateauMonitor, Reference, Scene,
};
use ibis_core::stepper::{RunState, SteadyMonitor, Stepper, StopReason};

use crate::config::RunConfig;

/// Everything left standing after a run, for subcommands that keep going
/// (gap dumps, checkpointing, tables).
pub struct Finished {
    pub scene: Scene,
    pub stepper: Stepper,
    pub state: RunState,
    pub record: DiagnosticsRecord,
    pub stop: StopReason,
}

/// Observer hooks invoked at every diagnostics sample.
pub trait Observer {
    fn record(&mut self, rec: &DiagnosticsRecord) -> Result<()>;
    /// Called right after `record` with full access to the solver state
    /// (field dumps, gap inspection, ...).
    fn sample(&mut self, _stepper: &Stepper, _state: &mut RunState) -> Result<()> {
        Ok(())
    }
}

/// Observer that drops everything (quiet runs for tables).
pub struct Quiet;

impl Observer for Quiet {
    fn record(&mut self, _rec: &DiagnosticsRecord) -> Result<()> {
        Ok(())
    }
}

/// Step the configured scenario to its final time (or an early steady /
/// plateau exit), sampling diagnostics at the configured cadence. When
/// `restart` holds checkpoint text, the state is restored from it first.
pub fn execute(cfg: &RunConfig, restart: Option<&str>, obs: &mut dyn Observer) -> Result<Finished> {
    cfg.validate()?;
    let scene = setup(&cfg.scenario)?;
    let mut stepper = scene.stepper_with(cfg.mg.clone(), cfg.settings())?;
    let mut state = scene.state.clone();
    if let Some(text) = restart {
        state.restore(&scene.grid, text)?;
    }
    let reference = reference_for(&cfg.scenario);

    let dt = scene.params.dt;
    let nsteps = ((cfg.scenario.t_final - state.t) / dt).round().max(0.0) as u64;
    let cadence = cfg.output.cadence as u64;

    let mut record = diagnose(&stepper, &mut state, &cfg.scenario, &reference)?;
    obs.record(&record)?;
    obs.sample(&stepper, &mut state)?;

    let mut steady = SteadyMonitor::new(&scene.grid, !state.structures.is_empty());
    let mut plateau = cfg.plateau_enabled.then(|| PlateauMonitor::new(cfg.plateau));
    let mut stop = StopReason::FinalTime;
    let mut steps_done = 0u64;
    for k in 1..=nsteps {
        let report = stepper.step(&mut state)?;
        steps_done = k;
        if steady.observe(report.max_displacement) {
            stop = StopReason::SteadyState;
            break;
        }
        if let Some(m) = plateau.as_mut() {
            if m.observe(&state) {
                stop = StopReason::Callback;
                break;
            }
        }
        // intermediate samples; the final state is always sampled below
        if cadence > 0 && k % cadence == 0 && k != nsteps {
            record = diagnose(&stepper, &mut state, &cfg.scenario, &reference)?;
            obs.record(&record)?;
            obs.sample(&stepper, &mut state)?;
        }
    }
    if steps_done > 0 {
        record = diagnose(&stepper, &mut state, &cfg.scenario, &reference)?;
        obs.record(&record)?;
        obs.sample(&stepper, &mut state)?;
    }

    Ok(Finished {
        scene,
        stepper,
        state,
        record,
        stop,
    })
}

/// Observer backing `run`/`restart`/`converge`: accumulates the CSV and
/// optionally dumps fields at every sample.
struct DirObserver<'a> {
    dir: &'a Path,
    csv: String,
    fields: bool,
}

impl<'a> DirObserver<'a> {
    fn new(dir: &'a Path, fields: bool) -> Self {
        DirObserver {
            dir,
            csv: format!("{}\n", DiagnosticsRecord::CSV_HEADER),
            fields,
        }
    }
}

impl Observer for DirObserver<'_> {
    fn record(&mut self, rec: &DiagnosticsRecord) -> Result<()> {
        let _ = writeln!(self.csv, "{}", rec.csv_row());
        Ok(())
    }

    fn sample(&mut self, stepper: &Stepper, state: &mut RunState) -> Result<()> {
        if !self.fields {
            return Ok(());
        }
        let tag = format!("{:08}", state.step);
        let grid = &stepper.grid;
        fs::write(
            self.dir.join(format!("u_{tag}.txt")),
            dump_vector(grid, "u", &state.u)?,
        )?;
        fs::write(
            self.dir.join(format!("p_{tag}.txt")),
            dump_scalar(grid, "p", &state.p)?,
        )?;
        for s in &state.structures {
            fs::write(
                self.dir.join(format!("boundary_{}_{tag}.txt", s.boundary.name)),
                ibis_core::boundary::dump_boundary(&s.boundary),
            )?;
        }
        // advection refreshes boundary.u; keep the stepped values so the
        // checkpoint is independent of whether field dumps are enabled
        let saved: Vec<_> = state.structures.iter().map(|s| s.boundary.u.clone()).collect();
        let adv = stepper.advection(state)?;
        for (s, u) in state.structures.iter_mut().zip(saved) {
            s.boundary.u = u;
        }
        for out in &adv.outcomes {
            if out.side != Pass::Lower {
                continue;
            }
            let lower = &state.structures[out.spec.lower].boundary.name;
            let upper = &state.structures[out.spec.upper].boundary.name;
            fs::write(
                self.dir
                    .join(format!("heights_{}_{}_{tag}.txt", out.spec.lower, out.spec.upper)),
                dump_heights(lower, upper, &out.pairings),
            )?;
        }
        Ok(())
    }
}

/// Full artifact treatment for one run directory.
pub fn run_into(cfg: &RunConfig, dir: &Path, restart: Option<&str>) -> Result<Finished> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.echo"), cfg.serialize())?;
    let mut obs = DirObserver::new(dir, cfg.output.fields);
    let fin = execute(cfg, restart, &mut obs)?;
    fs::write(dir.join("diag.csv"), &obs.csv)?;
    fs::write(
        dir.join("checkpoint.txt"),
        fin.state.checkpoint(&fin.scene.grid)?,
    )?;
    Ok(fin)
}

/// Reconstruct the gap profiles of one pairing at the final state and dump
/// them point by point.
pub fn dump_gaps(fin: &mut Finished, pairing: usize, samples: usize) -> Result<String> {
    if pairing >= fin.stepper.pairings.len() {
        return Err(IbisError::Config(format!(
            "pairing index {pairing} out of range ({} configured)",
            fin.stepper.pairings.len()
        )));
    }
    let spec = fin.stepper.pairings[pairing];
    let adv = fin.stepper.advection(&mut fin.state)?;
    let out = adv
        .outcomes
        .iter()
        .find(|o| o.side == Pass::Lower && o.spec.lower == spec.lower && o.spec.upper == spec.upper)
        .ok_or_else(|| {
            IbisError::Config(
                "no gap reconstruction available (standard method runs carry no pairings)".into(),
            )
        })?;
    let mut text = String::new();
    let mut dumped = 0usize;
    for (i, prof) in out.profiles.iter().enumerate() {
        if let Some(prof) = prof {
            text.push_str(&dump_gap_profile(i, prof, samples)?);
            dumped += 1;
        }
    }
    if dumped == 0 {
        return Err(IbisError::Config(
            "no point of the pairing is inside the lubrication cutoff".into(),
        ));
    }
    Ok(text)
}

/// log2(e_k / e_{k+1}) for successive grid errors. A vanishing finer-grid
/// error reports an infinite order; equal errors report order 0.
pub fn observed_order(errors: &[f64]) -> Vec<f64> {
    errors
        .windows(2)
        .map(|w| {
            let (coarse, fine) = (w[0].abs(), w[1].abs());
            if coarse == 0.0 && fine == 0.0 {
                0.0
            } else if fine == 0.0 {
                f64::INFINITY
            } else {
                (coarse / fine).log2()
            }
        })
        .collect()
}

/// Diagnostics columns that measure errors or gap quantities, i.e. the
/// ones whose grid convergence is worth tabulating.
pub const ORDER_COLUMNS: [&str; 12] = [
    "L1_u", "Linf_u", "L1_v", "Linf_v", "L1_p", "Linf_p", "L1_X", "Linf_X", "L1_U", "Linf_U",
    "rel_gamma", "lift_y",
];

pub fn column_value(rec: &DiagnosticsRecord, column: &str) -> f64 {
    match column {
        "L1_u" => rec.l1_u,
        "Linf_u" => rec.linf_u,
        "L1_v" => rec.l1_v,
        "Linf_v" => rec.linf_v,
        "L1_p" => rec.l1_p,
        "Linf_p" => rec.linf_p,
        "L1_X" => rec.l1_x,
        "Linf_X" => rec.linf_x,
        "L1_U" => rec.l1_ub,
        "Linf_U" => rec.linf_ub,
        "rel_gamma" => rec.rel_gamma,
        "lift_y" => rec.lift.y,
        _ => f64::NAN,
    }
}

/// Summary table: one row per grid, `n` plus the full diagnostics row.
pub fn summary_csv(rows: &[(usize, DiagnosticsRecord)]) -> String {
    let mut s = format!("n,{}\n", DiagnosticsRecord::CSV_HEADER);
    for (n, rec) in rows {
        let _ = writeln!(s, "{n},{}", rec.csv_row());
    }
    s
}

/// Observed-order table across a refinement sweep. For the eccentric
/// scenario the lift column is replaced by its error against the thin-gap
/// reference (the raw lift tends to a nonzero constant, so its order is
/// meaningless).
pub fn orders_csv(cfg: &RunConfig, rows: &[(usize, DiagnosticsRecord)]) -> String {
    let lift_ref = match reference_for(&cfg.scenario) {
        Reference::Eccentric(r) => Some(r.lift_tether.y),
        _ => None,
    };
    let mut s = String::from("column");
    for pair in rows.windows(2) {
        let _ = write!(s, ",o_{}_{}", pair[0].0, pair[1].0);
    }
    s.push('\n');
    for column in ORDER_COLUMNS {
        let errors: Vec<f64> = rows
            .iter()
            .map(|(_, rec)| {
                let v = column_value(rec, column);
                match (column, lift_ref) {
                    ("lift_y", Some(fref)) => (v - fref).abs(),
                    _ => v,
                }
            })
            .collect();
        let label = if column == "lift_y" && lift_ref.is_some() {
            "lift_err"
        } else {
            column
        };
        s.push_str(label);
        for order in observed_order(&errors) {
            let _ = write!(s, ",{order}");
        }
        s.push('\n');
    }
    s
}
