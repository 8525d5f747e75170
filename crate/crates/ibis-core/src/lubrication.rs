//! Sharp lubrication corrections to the advection velocities of paired
//! surfaces across thin gaps.
//!
//! The standard IB interpolation resolves the *sum* of two nearby surface
//! velocities well but smears their *difference*. For every active gap
//! pairing we therefore keep the sum constraint
//!
//! ```text
//! U_h + U_0 = U_h^IB + U_0^IB
//! ```
//!
//! and replace the difference with the sharp thin-film relations, written
//! in the lower-surface frame (T0, N0):
//!
//! ```text
//! (U_h − U_0)·T0 = (h/2)[ ((N0·Nh)² Fh∥/Jh − F0∥/J0)/μ
//!                         + (N0·∇)u·T0 |_{0⁻} + (N0·∇)u·T0 |_{h⁺} ]
//! (U_h − U_0)·N0 = ∂T[ (h³/24μ) ∂T Φ ] − ∂T[ h (U_h+U_0)·T0 / 2 ]
//!                  + (U_h·T0) ∂T h,
//! Φ = F0⊥/J0 − Fh⊥/Jh + p|h⁺ + p|0⁻
//! ```
//!
//! where ∂T is the tangential derivative along the lower surface and the
//! shear/pressure samples are *outer* quantities taken a few gridpoints
//! away from the gap, where the fields are well resolved. `(U_h+U_0)·T0`
//! and `U_h·T0` are known from the sum constraint and the tangential
//! difference, so the normal equation is explicit.
//!
//! Each surface is corrected in its own pass over its own pairings (the
//! lower pass via heights above, the upper pass via heights below); only
//! the owner's velocity is consumed from a pass. Corrections switch off —
//! hard by default, optionally via a linear ramp — once the gap exceeds
//! the activation cutoff of one grid spacing. The half-gap-averaged jump
//! pressures also reconstruct the full quadratic tangential velocity
//! profile through the gap, with the normal profile recovered from
//! incompressibility.

use crate::boundary::Boundary;
use crate::error::{IbisError, Result};
use crate::geometry::{CurveGeometry, GapPairing, SpatialBins};
use crate::grid::{Grid, Loc, ScalarField, VectorField};
use crate::kernels;
use crate::vec2::Vec2;

/// How corrections fade out as the gap approaches the activation cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Blend {
    /// Full correction for h ≤ cutoff, none above.
    Hard,
    /// Full correction for h ≤ 0.8·cutoff, linear fade to zero at the cutoff.
    LinearRamp,
}

impl Blend {
    pub fn parse(s: &str) -> Result<Blend> {
        match s {
            "hard" => Ok(Blend::Hard),
            "linear-ramp" => Ok(Blend::LinearRamp),
            other => Err(IbisError::Config(format!(
                "unknown blend '{other}' (expected 'hard' or 'linear-ramp')"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Blend::Hard => "hard",
            Blend::LinearRamp => "linear-ramp",
        }
    }
}

/// Activation and sampling parameters for the lubrication corrections.
#[derive(Debug, Clone, Copy)]
pub struct CorrectionSettings {
    /// Activation cutoff in units of max(Δx, Δy).
    pub cutoff_factor: f64,
    /// Outer-sample offset along the normals, in gridpoints (2–4).
    pub offset_gridpoints: f64,
    pub blend: Blend,
}

impl Default for CorrectionSettings {
    fn default() -> Self {
        CorrectionSettings {
            cutoff_factor: 1.0,
            offset_gridpoints: 2.0,
            blend: Blend::Hard,
        }
    }
}

impl CorrectionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_factor > 0.0) {
            return Err(IbisError::Config(format!(
                "cutoff factor must be positive, got {}",
                self.cutoff_factor
            )));
        }
        if !(2.0..=4.0).contains(&self.offset_gridpoints) {
            return Err(IbisError::Config(format!(
                "outer-sample offset must lie in [2, 4] gridpoints, got {}",
                self.offset_gridpoints
            )));
        }
        Ok(())
    }

    /// Physical activation distance on this grid.
    pub fn cutoff_len(&self, grid: &Grid) -> f64 {
        self.cutoff_factor * grid.dx.max(grid.dy)
    }
}

/// Correction weight at gap height `h`: 1 = fully corrected, 0 = standard IB.
pub fn blend_weight(blend: Blend, cutoff_len: f64, h: f64) -> f64 {
    match blend {
        Blend::Hard => {
            if h <= cutoff_len {
                1.0
            } else {
                0.0
            }
        }
        Blend::LinearRamp => {
            let lo = 0.8 * cutoff_len;
            if h <= lo {
                1.0
            } else if h >= cutoff_len {
                0.0
            } else {
                (cutoff_len - h) / (cutoff_len - lo)
            }
        }
    }
}

/// Which surface of a pairing owns the pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Lower,
    Upper,
}

/// Everything sampled from the environment of one pairing. Force
/// components are stored as Eulerian densities (already divided by the
/// Jacobians) in the lower frame, except the upper tangential/normal
/// components which use the gap-aligned upper frame.
#[derive(Debug, Clone, Copy)]
pub struct LubricationSample {
    /// F0∥/J0
    pub f0_par: f64,
    /// Fh∥/Jh
    pub fh_par: f64,
    /// F0⊥/J0
    pub f0_perp: f64,
    /// Fh⊥/Jh
    pub fh_perp: f64,
    /// (N0·∇)u·T0 at the lower outer offset point
    pub shear_lo: f64,
    /// (N0·∇)u·T0 at the upper outer offset point
    pub shear_hi: f64,
    /// p at the lower outer offset point (p|0⁻)
    pub p_lo: f64,
    /// p at the upper outer offset point (p|h⁺)
    pub p_hi: f64,
    /// (N0·Nh)²
    pub alignment: f64,
}

impl LubricationSample {
    pub fn is_finite(&self) -> bool {
        [
            self.f0_par,
            self.fh_par,
            self.f0_perp,
            self.fh_perp,
            self.shear_lo,
            self.shear_hi,
            self.p_lo,
            self.p_hi,
            self.alignment,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Averaged jump-condition pressure inside the gap,
    /// (p|0⁺ + p|h⁻)/2 = Φ/2.
    pub fn gap_pressure(&self) -> f64 {
        0.5 * self.phi()
    }

    /// Φ = F0⊥/J0 − Fh⊥/Jh + p|h⁺ + p|0⁻.
    pub fn phi(&self) -> f64 {
        self.f0_perp - self.fh_perp + self.p_hi + self.p_lo
    }
}

/// Counters describing how a correction pass went.
#[derive(Debug, Clone, Copy, Default)]
pub struct CorrectionStats {
    /// Points that received the full (tangential + normal) correction.
    pub corrected: usize,
    /// Paired points in arcs too short for tangential derivatives; only
    /// the tangential correction was applied.
    pub tangential_only: usize,
    /// Pairings whose outer sample collided with another boundary; the
    /// point fell back to the standard IB velocity.
    pub rejected_samples: usize,
}

impl CorrectionStats {
    pub fn merge(&mut self, other: &CorrectionStats) {
        self.corrected += other.corrected;
        self.tangential_only += other.tangential_only;
        self.rejected_samples += other.rejected_samples;
    }
}

/// Quadratic-in-height velocity profile through one gap: tangential from
/// the thin-film momentum balance, normal from incompressibility.
#[derive(Debug, Clone, Copy)]
pub struct GapProfile {
    pub h: f64,
    pub mu: f64,
    /// ∂T of the gap pressure Φ/2.
    pub dp_dt: f64,
    /// Boundary tangential velocities U0·T0, Uh·T0 (unblended).
    pub u0_t: f64,
    pub uh_t: f64,
    /// Lower boundary normal velocity U0·N0.
    pub u0_n: f64,
    /// Arc derivatives of the profile coefficients for the normal
    /// component: ∂T(dp), ∂T(h·dp), ∂T((Uh−U0)·T0/h), ∂T(U0·T0).
    pub d_dp: f64,
    pub d_hdp: f64,
    pub d_ratio: f64,
    pub d_u0t: f64,
}

impl GapProfile {
    /// Tangential velocity u·T0 at height w above the lower surface.
    fn tangential(&self, w: f64) -> f64 {
        0.5 / self.mu * w * (w - self.h) * self.dp_dt
            + w * (self.uh_t - self.u0_t) / self.h
            + self.u0_t
    }

    /// ∂T(u·T0) at height w, from the arc derivatives of the coefficients.
    fn tangential_arc_derivative(&self, w: f64) -> f64 {
        0.5 / self.mu * (w * w * self.d_dp - w * self.d_hdp) + w * self.d_ratio + self.d_u0t
    }

    /// Velocity components (u·T0, u·N0) at height `w ∈ [0, h]`; the normal
    /// component integrates −∂T(u·T0) from the lower wall by the
    /// trapezoidal rule.
    pub fn velocity(&self, w: f64) -> Result<(f64, f64)> {
        if !(0.0..=self.h).contains(&w) {
            return Err(IbisError::Config(format!(
                "gap sample height {w} outside [0, {}]",
                self.h
            )));
        }
        let n = 32;
        let dw = w / n as f64;
        let mut int = 0.5 * (self.tangential_arc_derivative(0.0)
            + self.tangential_arc_derivative(w));
        for k in 1..n {
            int += self.tangential_arc_derivative(k as f64 * dw);
        }
        Ok((self.tangential(w), self.u0_n - int * dw))
    }
}

/// Combine the IB sum with the sharp differences; returns (U0, Uh).
/// The sum is preserved exactly: U0 + Uh = sum to round-off.
pub fn corrected_velocities(
    sum: Vec2,
    t0: Vec2,
    n0: Vec2,
    dt: f64,
    dn: Option<f64>,
) -> (Vec2, Vec2) {
    let d = t0 * dt + n0 * dn.unwrap_or(0.0);
    ((sum - d) * 0.5, (sum + d) * 0.5)
}

/// Tangential velocity difference (U_h − U_0)·T0 across one gap.
pub fn tangential_difference(pairing: &GapPairing, sample: &LubricationSample, mu: f64) -> f64 {
    0.5 * pairing.h
        * ((sample.alignment * sample.fh_par - sample.f0_par) / mu
            + sample.shear_lo
            + sample.shear_hi)
}

/// Upper frame of a pairing flipped, if needed, so the normal points out
/// of the gap (same side as N0); keeps (T, perp(T)) consistency.
fn aligned_upper_frame(pairing: &GapPairing) -> (Vec2, Vec2) {
    if pairing.nh.dot(pairing.n0) < 0.0 {
        (-pairing.th, -pairing.nh)
    } else {
        (pairing.th, pairing.nh)
    }
}

/// Is `p` within `dist` of any point of `b` (by its binned segments)?
fn near_boundary(grid: &Grid, b: &Boundary, bins: &SpatialBins, p: Vec2, dist: f64, scratch: &mut Vec<u32>) -> bool {
    bins.candidates(p, dist, scratch);
    scratch.iter().any(|&j| {
        let j = j as isize;
        grid.min_image(p - b.pos(j)).norm() < dist
            || grid.min_image(p - b.pos(j + 1)).norm() < dist
    })
}

/// The two anchor points of a pairing on the lower and upper surfaces, in
/// the owner's periodic image.
fn gap_anchors(pairing: &GapPairing, owner: &Boundary, pass: Pass) -> (Vec2, Vec2) {
    match pass {
        Pass::Lower => (owner.x[pairing.owner], pairing.foot),
        Pass::Upper => (pairing.foot, owner.x[pairing.owner]),
    }
}

/// Sample the outer environment of one pairing. Returns `Ok(None)` when an
/// offset point lands within one gridpoint of a boundary it is not
/// anchored to (the correction then falls back to standard IB for this
/// pairing).
#[allow(clippy::too_many_arguments)]
pub fn sample_environment(
    grid: &Grid,
    settings: &CorrectionSettings,
    pairing: &GapPairing,
    pass: Pass,
    owner: &Boundary,
    owner_jac: &[f64],
    partner_name: &str,
    u: &VectorField,
    p: &ScalarField,
    obstacles: &[(&Boundary, &SpatialBins)],
    scratch: &mut Vec<u32>,
) -> Result<Option<LubricationSample>> {
    debug_assert_eq!(p.loc, Loc::Corner);
    let (th, nh) = aligned_upper_frame(pairing);
    let spacing = grid.dx.max(grid.dy);
    let off = settings.offset_gridpoints * spacing;
    let (x_lo, x_hi) = gap_anchors(pairing, owner, pass);
    let probe_lo = x_lo - pairing.n0 * off;
    let probe_hi = x_hi + nh * off;
    let (lower_name, upper_name) = match pass {
        Pass::Lower => (owner.name.as_str(), partner_name),
        Pass::Upper => (partner_name, owner.name.as_str()),
    };
    for (b, bins) in obstacles {
        if b.name != lower_name && near_boundary(grid, b, bins, probe_lo, spacing, scratch) {
            return Ok(None);
        }
        if b.name != upper_name && near_boundary(grid, b, bins, probe_hi, spacing, scratch) {
            return Ok(None);
        }
    }

    let (f0, j0, fh, jh) = match pass {
        Pass::Lower => (
            owner.f[pairing.owner],
            owner_jac[pairing.owner],
            pairing.f_foot,
            pairing.j_foot,
        ),
        Pass::Upper => (
            pairing.f_foot,
            pairing.j_foot,
            owner.f[pairing.owner],
            owner_jac[pairing.owner],
        ),
    };
    let grad_lo = kernels::interpolate_gradient(grid, u, probe_lo);
    let grad_hi = kernels::interpolate_gradient(grid, u, probe_hi);
    let sample = LubricationSample {
        f0_par: f0.dot(pairing.t0) / j0,
        fh_par: fh.dot(th) / jh,
        f0_perp: f0.dot(pairing.n0) / j0,
        fh_perp: fh.dot(nh) / jh,
        shear_lo: grad_lo.apply(pairing.n0).dot(pairing.t0),
        shear_hi: grad_hi.apply(pairing.n0).dot(pairing.t0),
        p_lo: kernels::interpolate_scalar(grid, p, probe_lo),
        p_hi: kernels::interpolate_scalar(grid, p, probe_hi),
        alignment: pairing.n0.dot(nh).powi(2).min(1.0),
    };
    if !sample.is_finite() {
        return Err(IbisError::NonFinite {
            index: pairing.owner,
        });
    }
    Ok(Some(sample))
}

/// Centered difference in chordal arclength along an arc of points;
/// one-sided at open ends, wrapped when `cyclic`.
fn arc_derivative(v: &[f64], ds: &[f64], cyclic: bool) -> Vec<f64> {
    let m = v.len();
    debug_assert!(m >= 3);
    debug_assert_eq!(ds.len(), if cyclic { m } else { m - 1 });
    (0..m)
        .map(|k| {
            if cyclic {
                let prev = (k + m - 1) % m;
                (v[(k + 1) % m] - v[prev]) / (ds[prev] + ds[k])
            } else if k == 0 {
                (v[1] - v[0]) / ds[0]
            } else if k == m - 1 {
                (v[m - 1] - v[m - 2]) / ds[m - 2]
            } else {
                (v[k + 1] - v[k - 1]) / (ds[k - 1] + ds[k])
            }
        })
        .collect()
}

/// Per-point output of the normal-difference solve along one arc.
#[derive(Debug, Clone, Copy)]
struct NormalData {
    /// (U_h − U_0)·N0
    dn: f64,
    /// ∂T of the gap pressure (for the gap profile).
    dp: f64,
    d_dp: f64,
    d_hdp: f64,
    d_ratio: f64,
    d_u0t: f64,
}

/// Corrected advection velocities for one pass over one boundary.
#[derive(Debug, Clone)]
pub struct PassCorrections {
    /// Advection velocity for every owner point (standard IB where no
    /// correction applies).
    pub velocities: Vec<Vec2>,
    /// Which points this pass actually corrected. Callers merging several
    /// passes over the same boundary should only take flagged entries.
    pub corrected_mask: Vec<bool>,
    /// Gap flow profile wherever the full correction was computed.
    pub profiles: Vec<Option<GapProfile>>,
    pub stats: CorrectionStats,
}

/// Run one correction pass: sample every pairing, form tangential and
/// normal differences, and overwrite the owner's advection velocities at
/// the corrected points (blended per the settings).
///
/// `owner.u` must already hold the standard IB interpolated velocities and
/// `owner.f` the current force densities (likewise for the partner whose
/// interpolated data is frozen inside the pairings). `obstacles` lists
/// every boundary in the scene with point bins for the collision check.
#[allow(clippy::too_many_arguments)]
pub fn correct_pass(
    grid: &Grid,
    settings: &CorrectionSettings,
    mu: f64,
    owner: &Boundary,
    owner_geo: &CurveGeometry,
    partner_name: &str,
    pairings: &[Option<GapPairing>],
    pass: Pass,
    u: &VectorField,
    p: &ScalarField,
    obstacles: &[(&Boundary, &SpatialBins)],
) -> Result<PassCorrections> {
    settings.validate()?;
    let nq = owner.nq;
    debug_assert_eq!(pairings.len(), nq);
    let mut velocities = owner.u.clone();
    let mut profiles: Vec<Option<GapProfile>> = vec![None; nq];
    let mut stats = CorrectionStats::default();
    let cutoff_len = settings.cutoff_len(grid);
    let mut scratch = Vec::new();

    // sample every pairing; collisions of the outer probes with foreign
    // boundaries yield None and fall back to the standard IB velocity
    let mut samples: Vec<Option<LubricationSample>> = vec![None; nq];
    for (i, pairing) in pairings.iter().enumerate() {
        let Some(pairing) = pairing else { continue };
        samples[i] = sample_environment(
            grid,
            settings,
            pairing,
            pass,
            owner,
            &owner_geo.frames.j,
            partner_name,
            u,
            p,
            obstacles,
            &mut scratch,
        )?;
        if samples[i].is_none() {
            stats.rejected_samples += 1;
        }
    }

    // tangential differences and IB sums at every sampled point
    let mut dts = vec![0.0; nq];
    let mut sums = vec![Vec2::ZERO; nq];
    for i in 0..nq {
        let (Some(pairing), Some(sample)) = (&pairings[i], &samples[i]) else {
            continue;
        };
        dts[i] = tangential_difference(pairing, sample, mu);
        sums[i] = owner.u[i] + pairing.u_foot;
    }

    // normal differences along contiguous arcs of sampled points
    let active: Vec<bool> = (0..nq)
        .map(|i| pairings[i].is_some() && samples[i].is_some())
        .collect();
    let mut normals: Vec<Option<NormalData>> = vec![None; nq];
    let arcs = contiguous_arcs(&active);
    for (arc, cyclic) in &arcs {
        if arc.len() < 3 {
            stats.tangential_only += arc.len();
            continue;
        }
        // chordal arclength between consecutive anchor points on the lower
        // surface (owner positions for the lower pass, feet for the upper)
        let anchor = |k: usize| -> Vec2 {
            let pairing = pairings[arc[k]].as_ref().unwrap();
            match pass {
                Pass::Lower => owner.x[arc[k]],
                Pass::Upper => pairing.foot,
            }
        };
        let m = arc.len();
        let nds = if *cyclic { m } else { m - 1 };
        let ds: Vec<f64> = (0..nds)
            .map(|k| grid.min_image(anchor((k + 1) % m) - anchor(k)).norm())
            .collect();
        let h: Vec<f64> = arc.iter().map(|&i| pairings[i].as_ref().unwrap().h).collect();
        let phi: Vec<f64> = arc.iter().map(|&i| samples[i].as_ref().unwrap().phi()).collect();
        let st: Vec<f64> = arc
            .iter()
            .map(|&i| sums[i].dot(pairings[i].as_ref().unwrap().t0))
            .collect();
        let dt_arc: Vec<f64> = arc.iter().map(|&i| dts[i]).collect();

        let dphi = arc_derivative(&phi, &ds, *cyclic);
        let b: Vec<f64> = (0..m)
            .map(|k| h[k].powi(3) / (24.0 * mu) * dphi[k])
            .collect();
        let db = arc_derivative(&b, &ds, *cyclic);
        let c: Vec<f64> = (0..m).map(|k| 0.5 * h[k] * st[k]).collect();
        let dc = arc_derivative(&c, &ds, *cyclic);
        let dh = arc_derivative(&h, &ds, *cyclic);

        // profile coefficients: gap pressure gradient and its arc
        // derivatives
        let dp: Vec<f64> = dphi.iter().map(|g| 0.5 * g).collect();
        let hdp: Vec<f64> = (0..m).map(|k| h[k] * dp[k]).collect();
        let ratio: Vec<f64> = (0..m).map(|k| dt_arc[k] / h[k]).collect();
        let u0t: Vec<f64> = (0..m).map(|k| 0.5 * (st[k] - dt_arc[k])).collect();
        let d_dp = arc_derivative(&dp, &ds, *cyclic);
        let d_hdp = arc_derivative(&hdp, &ds, *cyclic);
        let d_ratio = arc_derivative(&ratio, &ds, *cyclic);
        let d_u0t = arc_derivative(&u0t, &ds, *cyclic);

        for k in 0..m {
            let uh_t = 0.5 * (st[k] + dt_arc[k]);
            normals[arc[k]] = Some(NormalData {
                dn: db[k] - dc[k] + uh_t * dh[k],
                dp: dp[k],
                d_dp: d_dp[k],
                d_hdp: d_hdp[k],
                d_ratio: d_ratio[k],
                d_u0t: d_u0t[k],
            });
        }
    }

    // combine: sum constraint + differences, blended toward standard IB
    for i in 0..nq {
        if !active[i] {
            continue;
        }
        let pairing = pairings[i].as_ref().unwrap();
        let nd = normals[i];
        let (u0, uh) = corrected_velocities(
            sums[i],
            pairing.t0,
            pairing.n0,
            dts[i],
            nd.map(|n| n.dn),
        );
        let own = match pass {
            Pass::Lower => u0,
            Pass::Upper => uh,
        };
        let lam = blend_weight(settings.blend, cutoff_len, pairing.h);
        velocities[i] = own * lam + owner.u[i] * (1.0 - lam);
        if let Some(n) = nd {
            stats.corrected += 1;
            profiles[i] = Some(GapProfile {
                h: pairing.h,
                mu,
                dp_dt: n.dp,
                u0_t: u0.dot(pairing.t0),
                uh_t: uh.dot(pairing.t0),
                u0_n: u0.dot(pairing.n0),
                d_dp: n.d_dp,
                d_hdp: n.d_hdp,
                d_ratio: n.d_ratio,
                d_u0t: n.d_u0t,
            });
        }
    }

    Ok(PassCorrections {
        velocities,
        corrected_mask: active,
        profiles,
        stats,
    })
}

/// Maximal runs of `true` in cyclic index space. Returns (indices, cyclic);
/// a single all-true run is flagged cyclic.
fn contiguous_arcs(active: &[bool]) -> Vec<(Vec<usize>, bool)> {
    let n = active.len();
    if active.iter().all(|&a| a) {
        return vec![((0..n).collect(), true)];
    }
    if active.iter().all(|&a| !a) {
        return Vec::new();
    }
    // start scanning just past some inactive point
    let start = active.iter().position(|&a| !a).unwrap() + 1;
    let mut arcs = Vec::new();
    let mut run: Vec<usize> = Vec::new();
    for k in 0..n {
        let i = (start + k) % n;
        if active[i] {
            run.push(i);
        } else if !run.is_empty() {
            arcs.push((std::mem::take(&mut run), false));
        }
    }
    if !run.is_empty() {
        arcs.push((run, false));
    }
    arcs
}

// ---------------------------------------------------------------------
// gap-profile dump format
// ---------------------------------------------------------------------

/// Serialize one reconstructed through-gap velocity profile:
/// `# gap pairing=<i> h=<h>` followed by `w u_t u_n` rows sampling the
/// profile at `samples` evenly spaced heights from the lower surface (w=0)
/// to the upper (w=h).
pub fn dump_gap_profile(index: usize, prof: &GapProfile, samples: usize) -> Result<String> {
    if samples < 2 {
        return Err(IbisError::Config(format!(
            "need at least 2 profile samples, got {samples}"
        )));
    }
    let mut out = format!(
        "# gap pairing={index} h={}\n",
        crate::textio::fmt17(prof.h)
    );
    for k in 0..samples {
        let w = prof.h * k as f64 / (samples - 1) as f64;
        let (ut, un) = prof.velocity(w)?;
        crate::textio::push_row(&mut out, &[w, ut, un]);
    }
    Ok(out)
}
