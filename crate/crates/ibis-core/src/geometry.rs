//! Piecewise-cubic curve geometry and the thin-gap height queries.
//!
//! Each boundary segment `[X_j, X_{j+1}]` carries a cubic
//! `X(s) = a0 + a1 s + a2 s² + a3 s³`, `s ∈ [0,1]`, interpolating the
//! endpoints with endpoint derivatives equal to the vertex tangents — the
//! edge-length-weighted average of the two incident edge vectors (a
//! deliberately *non-unit* tangent; for uniform spacing it reduces to the
//! centered difference `(X_{j+1} − X_{j−1})/2`).
//!
//! Two height queries are provided:
//!
//! * [`height above`](pair_boundaries) a lower point `X_0`: find `(s, h)`
//!   with `X_0 + h N_0 = X_h(s)` on some upper segment, via Newton on
//!   `g(s) = (X_h(s) − X_0)·T_0` seeded from the piecewise-linear
//!   approximation of the upper curve;
//! * height *below* an upper point `X_h`: find `(s, h)` with
//!   `X_0(s) + h N_0(s) = X_h`, where the frame itself varies with `s`.
//!   Dotting with `T_0(s)` gives a quintic `G(s) = (X_0(s) − X_h)·X_0'(s)`,
//!   solved by Newton seeded from a quadratic obtained by linearising the
//!   curve but keeping the *continuously varying* normal. The seed root is
//!   taken as `c/q` with `q = −(b + sign(b)√(b²−4ac))/2`, the root that
//!   stays finite as the curvature term `a → 0`.
//!
//! Candidate segments come from uniform spatial bins keyed by wrapped
//! segment left-endpoints, so the whole pairing pass is O(N) along the
//! usual refinement path (boundary spacing tied to grid spacing). Periodic
//! images are handled by translating each candidate segment to the query
//! point's image before any dot products.
//!
//! Accepted pairings satisfy `s ∈ [0,1)` (half-open, so a root shared by
//! adjacent segments is counted once), `h > 0`, `h ≤ cutoff`, and the
//! reconstruction residual bound; among multiple eligible segments the
//! minimum height wins.

use crate::boundary::Boundary;
use crate::error::{IbisError, Result};
use crate::grid::Grid;
use crate::vec2::Vec2;

/// Newton stops when |Δs| drops below this.
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 25;
/// Roots this far outside [0,1] are clamped onto the boundary.
const CLAMP_TOL: f64 = 1e-9;
/// Reconstruction residual bound, relative to max(Δx, Δy).
const RESIDUAL_REL: f64 = 1e-10;

/// One cubic segment `a0 + a1 s + a2 s² + a3 s³`.
#[derive(Debug, Clone, Copy)]
pub struct CubicSegment {
    pub a0: Vec2,
    pub a1: Vec2,
    pub a2: Vec2,
    pub a3: Vec2,
}

impl CubicSegment {
    /// Hermite fit: endpoints `xj`, `xj1` with endpoint derivatives `tj`,
    /// `tj1` (vertex tangents, non-unit).
    pub fn fit(xj: Vec2, xj1: Vec2, tj: Vec2, tj1: Vec2) -> Result<CubicSegment> {
        let d = xj1 - xj;
        if !(d.norm() > 0.0) {
            return Err(IbisError::DegenerateTangent { index: usize::MAX });
        }
        Ok(CubicSegment {
            a0: xj,
            a1: tj,
            a2: d * 3.0 - tj * 2.0 - tj1,
            a3: tj + tj1 - d * 2.0,
        })
    }

    #[inline]
    pub fn pos(&self, s: f64) -> Vec2 {
        self.a0 + (self.a1 + (self.a2 + self.a3 * s) * s) * s
    }

    #[inline]
    pub fn deriv(&self, s: f64) -> Vec2 {
        self.a1 + (self.a2 * 2.0 + self.a3 * (3.0 * s)) * s
    }

    #[inline]
    pub fn deriv2(&self, s: f64) -> Vec2 {
        self.a2 * 2.0 + self.a3 * (6.0 * s)
    }
}

/// Vertex tangents for every point: edge-length-weighted average of the two
/// incident edge vectors (non-unit, exactly as used by the cubic fit).
pub fn vertex_tangents(b: &Boundary) -> Vec<Vec2> {
    (0..b.nq as isize)
        .map(|k| {
            let e_prev = b.pos(k) - b.pos(k - 1);
            let e_next = b.pos(k + 1) - b.pos(k);
            let lp = e_prev.norm();
            let ln = e_next.norm();
            (e_next * ln + e_prev * lp) / (ln + lp)
        })
        .collect()
}

/// Everything derived from a boundary's current positions that the height
/// queries need: nodal frames, vertex tangents, fitted segments.
#[derive(Debug, Clone)]
pub struct CurveGeometry {
    pub frames: crate::boundary::Frames,
    pub tangents: Vec<Vec2>,
    pub segments: Vec<CubicSegment>,
    pub max_seg_len: f64,
}

impl CurveGeometry {
    pub fn build(b: &Boundary) -> Result<CurveGeometry> {
        let frames = b.frames()?;
        let tangents = vertex_tangents(b);
        let mut segments = Vec::with_capacity(b.nq);
        let mut max_seg_len = 0.0_f64;
        for j in 0..b.nq as isize {
            let xj = b.pos(j);
            let xj1 = b.pos(j + 1);
            max_seg_len = max_seg_len.max((xj1 - xj).norm());
            let tj = tangents[j as usize];
            let tj1 = tangents[(j + 1) as usize % b.nq];
            segments.push(CubicSegment::fit(xj, xj1, tj, tj1)?);
        }
        Ok(CurveGeometry {
            frames,
            tangents,
            segments,
            max_seg_len,
        })
    }
}

/// Uniform spatial bins over the periodic domain holding segment indices,
/// keyed by each segment's wrapped left endpoint (every segment lands in
/// exactly one bin).
#[derive(Debug, Clone)]
pub struct SpatialBins {
    nbx: usize,
    nby: usize,
    bwx: f64,
    bwy: f64,
    lx: f64,
    ly: f64,
    bins: Vec<Vec<u32>>,
}

impl SpatialBins {
    pub fn build(b: &Boundary, grid: &Grid) -> SpatialBins {
        let w = grid.dx.max(grid.dy);
        let nbx = ((grid.lx / w).floor() as usize).max(1);
        let nby = ((grid.ly / w).floor() as usize).max(1);
        let mut s = SpatialBins {
            nbx,
            nby,
            bwx: grid.lx / nbx as f64,
            bwy: grid.ly / nby as f64,
            lx: grid.lx,
            ly: grid.ly,
            bins: vec![Vec::new(); nbx * nby],
        };
        for j in 0..b.nq {
            let (bx, by) = s.bin_of(b.x[j]);
            s.bins[by * s.nbx + bx].push(j as u32);
        }
        s
    }

    #[inline]
    fn bin_of(&self, p: Vec2) -> (usize, usize) {
        let px = p.x.rem_euclid(self.lx);
        let py = p.y.rem_euclid(self.ly);
        (
            ((px / self.bwx) as usize).min(self.nbx - 1),
            ((py / self.bwy) as usize).min(self.nby - 1),
        )
    }

    /// Collect all segment indices whose left endpoint lies within `reach`
    /// of `p` (by bin distance, over-inclusive).
    pub fn candidates(&self, p: Vec2, reach: f64, out: &mut Vec<u32>) {
        out.clear();
        let rx = ((reach / self.bwx).ceil() as isize).min(self.nbx as isize / 2) + 1;
        let ry = ((reach / self.bwy).ceil() as isize).min(self.nby as isize / 2) + 1;
        let (bx, by) = self.bin_of(p);
        let mut seen_x = vec![false; self.nbx];
        let mut seen_y = vec![false; self.nby];
        for dy in -ry..=ry {
            let jy = (by as isize + dy).rem_euclid(self.nby as isize) as usize;
            if seen_y[jy] {
                continue;
            }
            seen_y[jy] = true;
            seen_x.fill(false);
            for dx in -rx..=rx {
                let jx = (bx as isize + dx).rem_euclid(self.nbx as isize) as usize;
                if seen_x[jx] {
                    continue;
                }
                seen_x[jx] = true;
                out.extend_from_slice(&self.bins[jy * self.nbx + jx]);
            }
        }
    }
}

/// One matched lower/upper point pair across a thin gap.
///
/// `owner` is the index of the point the pairing belongs to (a lower point
/// for the height-above pass, an upper point for the height-below pass);
/// the *partner* quantities are interpolated on the other curve at the
/// matched foot `X(s)` of segment `segment`.
///
/// `t0`/`n0` is always the **lower-surface** frame (at the owner for the
/// lower pass, at the foot for the upper pass) — the lubrication equations
/// are written in this frame. `th`/`nh` is the upper-surface frame at the
/// upper point (foot for the lower pass, owner for the upper pass), with
/// whatever sign the traversal direction gives it.
#[derive(Debug, Clone, Copy)]
pub struct GapPairing {
    pub owner: usize,
    pub segment: usize,
    pub s: f64,
    pub h: f64,
    pub t0: Vec2,
    pub n0: Vec2,
    pub th: Vec2,
    pub nh: Vec2,
    /// Foot position, translated into the owner's periodic image.
    pub foot: Vec2,
    /// Partner force density at the foot.
    pub f_foot: Vec2,
    /// Partner IB velocity at the foot.
    pub u_foot: Vec2,
    /// Partner Jacobian at the foot, `|X'(s)|/Δq`.
    pub j_foot: f64,
}

/// Instrumentation for the O(N) and Newton-efficiency properties.
#[derive(Debug, Clone, Copy, Default)]
pub struct PairStats {
    /// Candidate segments enumerated (before any rejection).
    pub candidate_tests: u64,
    /// Largest Newton iteration count over all converged queries.
    pub max_newton_iters: u32,
    /// Candidates where Newton and the bisection fallback both failed.
    pub newton_failures: u64,
    /// Accepted roots discarded by the reconstruction-residual check.
    pub residual_rejects: u64,
}

/// Both pairing passes over a lower/upper boundary pair.
#[derive(Debug, Clone)]
pub struct PairingSet {
    /// Per lower point: its pairing onto the upper curve, if within cutoff.
    pub lower: Vec<Option<GapPairing>>,
    /// Per upper point: its pairing onto the lower curve, if within cutoff.
    pub upper: Vec<Option<GapPairing>>,
    pub stats: PairStats,
}

/// Newton on a scalar objective over one segment, then bisection fallback
/// on sign change; returns (root, iterations) with |Δs| (or bracket) below
/// `NEWTON_TOL`.
fn solve_on_segment(
    mut f: impl FnMut(f64) -> (f64, f64),
    seed: f64,
) -> Option<(f64, u32)> {
    let mut s = seed.clamp(-0.25, 1.25);
    for it in 0..NEWTON_MAX_ITERS {
        let (g, dg) = f(s);
        if dg == 0.0 {
            break;
        }
        let ds = g / dg;
        s -= ds;
        if ds.abs() < NEWTON_TOL {
            return Some((s, it as u32 + 1));
        }
        if !(-1.0..=2.0).contains(&s) {
            break;
        }
    }
    // fallback: bisection if the objective changes sign across [0,1]
    let (mut ga, _) = f(0.0);
    let (gb, _) = f(1.0);
    if ga == 0.0 {
        return Some((0.0, NEWTON_MAX_ITERS as u32));
    }
    if ga * gb > 0.0 {
        return None;
    }
    let (mut a, mut b) = (0.0_f64, 1.0_f64);
    let mut iters = NEWTON_MAX_ITERS as u32;
    while b - a > NEWTON_TOL {
        let m = 0.5 * (a + b);
        let (gm, _) = f(m);
        iters += 1;
        if gm == 0.0 {
            return Some((m, iters));
        }
        if ga * gm < 0.0 {
            b = m;
        } else {
            a = m;
            ga = gm;
        }
    }
    Some((0.5 * (a + b), iters))
}

/// Clamp a root to [0,1] within tolerance and apply the half-open
/// acceptance rule.
fn accept_s(s: f64) -> Option<f64> {
    let s = if (-CLAMP_TOL..0.0).contains(&s) {
        0.0
    } else if (1.0..1.0 + CLAMP_TOL).contains(&s) {
        1.0
    } else {
        s
    };
    (0.0..1.0).contains(&s).then_some(s)
}

/// Periodic image shift that brings `anchor` closest to `query`.
#[inline]
fn image_shift(grid: &Grid, query: Vec2, anchor: Vec2) -> Vec2 {
    Vec2::new(
        ((query.x - anchor.x) / grid.lx).round() * grid.lx,
        ((query.y - anchor.y) / grid.ly).round() * grid.ly,
    )
}

struct RawHit {
    segment: usize,
    s: f64,
    h: f64,
    foot: Vec2,
    /// Lower-frame at the foot (upper pass only; the lower pass reuses the
    /// owner's nodal frame).
    foot_t: Vec2,
    foot_n: Vec2,
}

/// Height above a lower point: minimum-h eligible root over the candidate
/// upper segments.
#[allow(clippy::too_many_arguments)]
fn height_above_raw(
    grid: &Grid,
    x0: Vec2,
    t0: Vec2,
    n0: Vec2,
    upper_geo: &CurveGeometry,
    candidates: &[u32],
    cutoff: f64,
    stats: &mut PairStats,
) -> Option<RawHit> {
    let mut best: Option<RawHit> = None;
    for &cj in candidates {
        let j = cj as usize;
        let seg = &upper_geo.segments[j];
        stats.candidate_tests += 1;
        let shift = image_shift(grid, x0, seg.a0);
        // cheap reject: the whole segment is out of reach
        if (seg.a0 + shift - x0).norm() > cutoff + upper_geo.max_seg_len {
            continue;
        }
        // local coordinates: segment translated into the query's image
        let a0 = seg.a0 + shift;
        let xj1 = a0 + seg.a1 + seg.a2 + seg.a3;
        // linear-approximation seed
        let denom = (xj1 - a0).dot(t0);
        let seed = if denom != 0.0 {
            (x0 - a0).dot(t0) / denom
        } else {
            0.5
        };
        let obj = |s: f64| {
            let g = (seg.pos(s) + shift - x0).dot(t0);
            let dg = seg.deriv(s).dot(t0);
            (g, dg)
        };
        let Some((root, iters)) = solve_on_segment(obj, seed) else {
            stats.newton_failures += 1;
            continue;
        };
        stats.max_newton_iters = stats.max_newton_iters.max(iters);
        let Some(s) = accept_s(root) else { continue };
        let foot = seg.pos(s) + shift;
        let h = (foot - x0).dot(n0);
        if !(h > 0.0 && h <= cutoff) {
            continue;
        }
        if (x0 + n0 * h - foot).norm() > RESIDUAL_REL * grid.dx.max(grid.dy) {
            stats.residual_rejects += 1;
            continue;
        }
        if best.as_ref().map_or(true, |b| h < b.h) {
            best = Some(RawHit {
                segment: j,
                s,
                h,
                foot,
                foot_t: Vec2::ZERO,
                foot_n: Vec2::ZERO,
            });
        }
    }
    best
}

/// Height below an upper point: Newton on the quintic `G(s) =
/// (X_0(s) − X_h)·X_0'(s)`, seeded by the robust root of the appendix
/// quadratic.
fn height_below_raw(
    grid: &Grid,
    xh: Vec2,
    lower_geo: &CurveGeometry,
    candidates: &[u32],
    cutoff: f64,
    stats: &mut PairStats,
) -> Option<RawHit> {
    let mut best: Option<RawHit> = None;
    for &ci in candidates {
        let i = ci as usize;
        let seg = &lower_geo.segments[i];
        stats.candidate_tests += 1;
        let shift = image_shift(grid, xh, seg.a0);
        if (seg.a0 + shift - xh).norm() > cutoff + lower_geo.max_seg_len {
            continue;
        }
        let a0 = seg.a0 + shift;
        let xi1 = a0 + seg.a1 + seg.a2 + seg.a3;
        let ti = seg.deriv(0.0);
        let ti1 = seg.deriv(1.0);
        // quadratic seed coefficients (linearised curve, varying normal)
        let e = xi1 - a0;
        let dt = ti1 - ti;
        let w = a0 - xh;
        let qa = e.dot(dt);
        let qb = e.dot(ti) + w.dot(dt);
        let qc = w.dot(ti);
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            continue; // complex roots: no foot on this segment's linearisation
        }
        let sgn_b = if qb >= 0.0 { 1.0 } else { -1.0 };
        let q = -0.5 * (qb + sgn_b * disc.sqrt());
        let seed = if q != 0.0 { qc / q } else { 0.5 };
        let obj = |s: f64| {
            let d = seg.pos(s) + shift - xh;
            let dp = seg.deriv(s);
            (d.dot(dp), dp.norm_sq() + d.dot(seg.deriv2(s)))
        };
        let Some((root, iters)) = solve_on_segment(obj, seed) else {
            stats.newton_failures += 1;
            continue;
        };
        stats.max_newton_iters = stats.max_newton_iters.max(iters);
        let Some(s) = accept_s(root) else { continue };
        let Some(t_unit) = seg.deriv(s).normalized() else {
            continue;
        };
        let n_unit = t_unit.perp();
        let foot = seg.pos(s) + shift;
        let h = (xh - foot).dot(n_unit);
        if !(h > 0.0 && h <= cutoff) {
            continue;
        }
        if (foot + n_unit * h - xh).norm() > RESIDUAL_REL * grid.dx.max(grid.dy) {
            stats.residual_rejects += 1;
            continue;
        }
        if best.as_ref().map_or(true, |b| h < b.h) {
            best = Some(RawHit {
                segment: i,
                s,
                h,
                foot,
                foot_t: t_unit,
                foot_n: n_unit,
            });
        }
    }
    best
}

/// Cubic interpolation of nodal values to parameter `s` on segment `j`,
/// using the same Hermite scheme as the positions: endpoint values are the
/// nodal values, endpoint "tangents" are the edge-length-weighted averages
/// of the nodal differences (weights = spatial edge lengths).
fn value_tangent_vec2(b: &Boundary, values: &[Vec2], k: isize) -> Vec2 {
    let lp = (b.pos(k) - b.pos(k - 1)).norm();
    let ln = (b.pos(k + 1) - b.pos(k)).norm();
    let n = b.nq as isize;
    let v = |k: isize| values[k.rem_euclid(n) as usize];
    let d_prev = v(k) - v(k - 1);
    let d_next = v(k + 1) - v(k);
    (d_next * ln + d_prev * lp) / (ln + lp)
}

pub fn interp_nodal_vec2(b: &Boundary, values: &[Vec2], j: usize, s: f64) -> Vec2 {
    debug_assert_eq!(values.len(), b.nq);
    let n = b.nq as isize;
    let jj = j as isize;
    let v0 = values[j];
    let v1 = values[(jj + 1).rem_euclid(n) as usize];
    let w0 = value_tangent_vec2(b, values, jj);
    let w1 = value_tangent_vec2(b, values, jj + 1);
    let d = v1 - v0;
    let c2 = d * 3.0 - w0 * 2.0 - w1;
    let c3 = w0 + w1 - d * 2.0;
    v0 + (w0 + (c2 + c3 * s) * s) * s
}

fn value_tangent_scalar(b: &Boundary, values: &[f64], k: isize) -> f64 {
    let lp = (b.pos(k) - b.pos(k - 1)).norm();
    let ln = (b.pos(k + 1) - b.pos(k)).norm();
    let n = b.nq as isize;
    let v = |k: isize| values[k.rem_euclid(n) as usize];
    ((v(k + 1) - v(k)) * ln + (v(k) - v(k - 1)) * lp) / (ln + lp)
}

pub fn interp_nodal_scalar(b: &Boundary, values: &[f64], j: usize, s: f64) -> f64 {
    debug_assert_eq!(values.len(), b.nq);
    let n = b.nq as isize;
    let jj = j as isize;
    let v0 = values[j];
    let v1 = values[(jj + 1).rem_euclid(n) as usize];
    let w0 = value_tangent_scalar(b, values, jj);
    let w1 = value_tangent_scalar(b, values, jj + 1);
    let d = v1 - v0;
    let c2 = 3.0 * d - 2.0 * w0 - w1;
    let c3 = w0 + w1 - 2.0 * d;
    v0 + (w0 + (c2 + c3 * s) * s) * s
}

/// Run both pairing passes between a lower and an upper boundary.
///
/// Uses each boundary's stored `f` (force densities) and `u` (IB
/// velocities) for the partner interpolations, so callers must populate
/// those before pairing. `cutoff` is the physical activation distance.
pub fn pair_boundaries(
    grid: &Grid,
    lower: &Boundary,
    lower_geo: &CurveGeometry,
    upper: &Boundary,
    upper_geo: &CurveGeometry,
    cutoff: f64,
) -> Result<PairingSet> {
    if lower.name == upper.name {
        return Err(IbisError::Config(format!(
            "self-pairing of boundary '{}' is not supported",
            lower.name
        )));
    }
    let mut stats = PairStats::default();
    let reach = cutoff + lower_geo.max_seg_len.max(upper_geo.max_seg_len);
    let upper_bins = SpatialBins::build(upper, grid);
    let lower_bins = SpatialBins::build(lower, grid);
    let mut cand = Vec::new();

    let mut lower_pairs = Vec::with_capacity(lower.nq);
    for i in 0..lower.nq {
        let x0 = lower.x[i];
        let t0 = lower_geo.frames.t[i];
        let n0 = lower_geo.frames.n[i];
        upper_bins.candidates(x0, reach, &mut cand);
        let hit = height_above_raw(grid, x0, t0, n0, upper_geo, &cand, cutoff, &mut stats);
        lower_pairs.push(hit.map(|r| {
            let th = upper_geo.segments[r.segment]
                .deriv(r.s)
                .normalized()
                .unwrap_or(Vec2::ZERO);
            GapPairing {
                owner: i,
                segment: r.segment,
                s: r.s,
                h: r.h,
                t0,
                n0,
                th,
                nh: th.perp(),
                foot: r.foot,
                f_foot: interp_nodal_vec2(upper, &upper.f, r.segment, r.s),
                u_foot: interp_nodal_vec2(upper, &upper.u, r.segment, r.s),
                j_foot: upper_geo.segments[r.segment].deriv(r.s).norm() / upper.dq,
            }
        }));
    }

    let mut upper_pairs = Vec::with_capacity(upper.nq);
    for j in 0..upper.nq {
        let xh = upper.x[j];
        lower_bins.candidates(xh, reach, &mut cand);
        let hit = height_below_raw(grid, xh, lower_geo, &cand, cutoff, &mut stats);
        upper_pairs.push(hit.map(|r| GapPairing {
            owner: j,
            segment: r.segment,
            s: r.s,
            h: r.h,
            t0: r.foot_t,
            n0: r.foot_n,
            th: upper_geo.frames.t[j],
            nh: upper_geo.frames.n[j],
            foot: r.foot,
            f_foot: interp_nodal_vec2(lower, &lower.f, r.segment, r.s),
            u_foot: interp_nodal_vec2(lower, &lower.u, r.segment, r.s),
            j_foot: lower_geo.segments[r.segment].deriv(r.s).norm() / lower.dq,
        }));
    }

    Ok(PairingSet {
        lower: lower_pairs,
        upper: upper_pairs,
        stats,
    })
}

// ---------------------------------------------------------------------
// height-field dump format
// ---------------------------------------------------------------------

/// Serialize one pass's height field:
/// `# heights lower=<name> upper=<name>` followed by one `i h s j` row per
/// owner point (gap width, foot arclength coordinate, foot segment index),
/// with `h = -1` marking unpaired points.
pub fn dump_heights(
    lower: &str,
    upper: &str,
    pairings: &[Option<GapPairing>],
) -> String {
    let mut out = format!("# heights lower={lower} upper={upper}\n");
    for (i, p) in pairings.iter().enumerate() {
        match p {
            Some(p) => out.push_str(&format!(
                "{i} {} {} {}\n",
                crate::textio::fmt17(p.h),
                crate::textio::fmt17(p.s),
                p.segment
            )),
            None => out.push_str(&format!("{i} -1 0 0\n")),
        }
    }
    out
}
