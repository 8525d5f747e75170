//! Lagrangian boundaries and their force models: stiff tethers to
//! prescribed targets (fixed, translating, or rotating) and free elastic
//! rings with stretching + bending energy.
//!
//! Conventions, used consistently everywhere:
//!
//! * All boundaries are parameterised by `q ∈ [0, L_q)` with `N_q` points
//!   and spacing `Δq`; Lagrangian forces are *densities* per unit `q`,
//!   matching the `Δq` weight in the spreading sum.
//! * Positions are stored unwrapped; a boundary that is topologically open
//!   but periodic in `x` (a wall spanning the domain) carries a
//!   `wrap_offset` so that `pos(k + N_q) = pos(k) + wrap_offset`, and all
//!   index arithmetic uses [`Boundary::pos`] with the periodic image shift.
//! * Frames: `T_k` is the normalised centered difference, the Jacobian
//!   `J_k = ‖(X_{k+1} − X_{k−1})/(2Δq)‖` converts Lagrangian densities to
//!   arclength densities, and `N = (−T_y, T_x)` (90° counter-clockwise
//!   rotation). A circle traversed clockwise therefore has outward
//!   normals; traversed counter-clockwise, inward normals.

use crate::error::{IbisError, Result};
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Closed curve: index k wraps with no positional shift.
    Closed,
    /// Open curve spanning the x-period: index k wraps with a shift of
    /// `wrap_offset` (± the domain length, by traversal direction).
    OpenPeriodicX,
}

/// One Lagrangian structure: positions, most recent advection velocities,
/// and force densities.
#[derive(Debug, Clone)]
pub struct Boundary {
    pub name: String,
    pub topology: Topology,
    pub nq: usize,
    pub dq: f64,
    /// Positional shift applied per index wrap; zero for closed curves.
    pub wrap_offset: Vec2,
    pub x: Vec<Vec2>,
    pub u: Vec<Vec2>,
    pub f: Vec<Vec2>,
}

impl Boundary {
    pub fn new(
        name: impl Into<String>,
        topology: Topology,
        x: Vec<Vec2>,
        dq: f64,
        wrap_offset: Vec2,
    ) -> Result<Boundary> {
        let nq = x.len();
        if nq < 8 {
            return Err(IbisError::Config(format!(
                "boundary needs at least 8 points, got {nq}"
            )));
        }
        if !(dq > 0.0) {
            return Err(IbisError::Config(format!("dq must be positive, got {dq}")));
        }
        if topology == Topology::Closed && wrap_offset != Vec2::ZERO {
            return Err(IbisError::Config(
                "closed boundaries cannot carry a wrap offset".into(),
            ));
        }
        let b = Boundary {
            name: name.into(),
            topology,
            nq,
            dq,
            wrap_offset,
            u: vec![Vec2::ZERO; nq],
            f: vec![Vec2::ZERO; nq],
            x,
        };
        for k in 0..nq {
            let d = b.pos(k as isize + 1) - b.pos(k as isize);
            if !(d.norm() > 0.0) {
                return Err(IbisError::Config(format!(
                    "consecutive boundary points {k} and {} coincide",
                    k + 1
                )));
            }
        }
        Ok(b)
    }

    /// Circle of radius `r`, parameterised over `L_q = 2π`
    /// (`Δq = 2π/N_q`). Counter-clockwise traversal gives inward normals,
    /// clockwise gives outward normals.
    pub fn circle(
        name: impl Into<String>,
        center: Vec2,
        r: f64,
        nq: usize,
        ccw: bool,
    ) -> Result<Boundary> {
        let dq = 2.0 * std::f64::consts::PI / nq as f64;
        let sign = if ccw { 1.0 } else { -1.0 };
        let x = (0..nq)
            .map(|k| {
                let th = sign * k as f64 * dq;
                center + Vec2::new(r * th.cos(), r * th.sin())
            })
            .collect();
        Boundary::new(name, Topology::Closed, x, dq, Vec2::ZERO)
    }

    /// Horizontal line at height `y` spanning `[0, lx)`, parameterised over
    /// `L_q = 2π`. Left-to-right traversal gives upward normals `(0, 1)`;
    /// right-to-left gives downward normals.
    pub fn line_x(
        name: impl Into<String>,
        y: f64,
        lx: f64,
        nq: usize,
        left_to_right: bool,
    ) -> Result<Boundary> {
        let dq = 2.0 * std::f64::consts::PI / nq as f64;
        let h = lx / nq as f64;
        let x = (0..nq)
            .map(|k| {
                let xk = if left_to_right {
                    k as f64 * h
                } else {
                    lx - k as f64 * h
                };
                Vec2::new(xk, y)
            })
            .collect();
        let offset = Vec2::new(if left_to_right { lx } else { -lx }, 0.0);
        Boundary::new(name, Topology::OpenPeriodicX, x, dq, offset)
    }

    /// Position of point `k` with periodic index wrapping; indices outside
    /// `[0, N_q)` return the appropriate periodic image.
    #[inline]
    pub fn pos(&self, k: isize) -> Vec2 {
        let n = self.nq as isize;
        let images = k.div_euclid(n);
        self.x[(k - images * n) as usize] + self.wrap_offset * images as f64
    }

    /// Local frames at every point.
    pub fn frames(&self) -> Result<Frames> {
        let mut t = Vec::with_capacity(self.nq);
        let mut n = Vec::with_capacity(self.nq);
        let mut j = Vec::with_capacity(self.nq);
        for k in 0..self.nq as isize {
            let d = (self.pos(k + 1) - self.pos(k - 1)) / (2.0 * self.dq);
            let jk = d.norm();
            if !(jk > 0.0) {
                return Err(IbisError::DegenerateTangent { index: k as usize });
            }
            let tk = d / jk;
            t.push(tk);
            n.push(tk.perp());
            j.push(jk);
        }
        Ok(Frames { t, n, j })
    }

    /// Centroid of the stored points.
    pub fn centroid(&self) -> Vec2 {
        self.x.iter().fold(Vec2::ZERO, |a, &b| a + b) / self.nq as f64
    }

    /// Signed area enclosed by a closed boundary (shoelace formula);
    /// positive for counter-clockwise traversal.
    pub fn signed_area(&self) -> f64 {
        let mut a = 0.0;
        for k in 0..self.nq as isize {
            let p = self.pos(k);
            let q = self.pos(k + 1);
            a += p.x * q.y - q.x * p.y;
        }
        0.5 * a
    }
}

/// Unit tangents, unit normals, and Jacobians at every boundary point.
#[derive(Debug, Clone)]
pub struct Frames {
    pub t: Vec<Vec2>,
    pub n: Vec<Vec2>,
    pub j: Vec<f64>,
}

/// Prescribed motion of tether target points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetMotion {
    Fixed,
    /// Z_k(t) = Z_k(0) + vel·t.
    Translate { vel: Vec2 },
    /// Rigid rotation about `center` with angular velocity `omega`
    /// (positive = counter-clockwise).
    Rotate { center: Vec2, omega: f64 },
}

/// Stiff-spring tethering of each boundary point to a moving target.
#[derive(Debug, Clone)]
pub struct TetherModel {
    pub k: f64,
    /// Target positions at t = 0.
    pub z0: Vec<Vec2>,
    pub motion: TargetMotion,
}

impl TetherModel {
    pub fn new(k: f64, z0: Vec<Vec2>, motion: TargetMotion) -> Result<TetherModel> {
        if !(k >= 0.0) {
            return Err(IbisError::Config(format!(
                "tether stiffness must be non-negative, got {k}"
            )));
        }
        Ok(TetherModel { k, z0, motion })
    }

    /// Target position of point `k` at time `t`.
    pub fn target(&self, k: usize, t: f64) -> Vec2 {
        let z = self.z0[k];
        match self.motion {
            TargetMotion::Fixed => z,
            TargetMotion::Translate { vel } => z + vel * t,
            TargetMotion::Rotate { center, omega } => {
                let a = omega * t;
                let (s, c) = a.sin_cos();
                let r = z - center;
                center + Vec2::new(c * r.x - s * r.y, s * r.x + c * r.y)
            }
        }
    }

    /// Velocity of the target of point `k` at time `t`.
    pub fn target_velocity(&self, k: usize, t: f64) -> Vec2 {
        match self.motion {
            TargetMotion::Fixed => Vec2::ZERO,
            TargetMotion::Translate { vel } => vel,
            TargetMotion::Rotate { center, omega } => {
                (self.target(k, t) - center).perp() * omega
            }
        }
    }
}

/// Tether force density: `F_k = −k (X_k − Z_k(t))`.
pub fn tether_force(b: &Boundary, m: &TetherModel, t: f64) -> Vec<Vec2> {
    debug_assert_eq!(m.z0.len(), b.nq);
    (0..b.nq)
        .map(|k| (b.x[k] - m.target(k, t)) * -m.k)
        .collect()
}

/// Elastic ring: linear springs between neighbours (no rest length) plus
/// discrete bending, with an optional uniform applied force density.
#[derive(Debug, Clone, Copy)]
pub struct ElasticRingModel {
    pub k_spring: f64,
    pub k_bend: f64,
    /// Uniform applied force density (e.g. a drive through the channel).
    pub g: Vec2,
}

impl ElasticRingModel {
    pub fn new(k_spring: f64, k_bend: f64, g: Vec2) -> Result<ElasticRingModel> {
        if !(k_spring >= 0.0 && k_bend >= 0.0) {
            return Err(IbisError::Config(format!(
                "ring stiffnesses must be non-negative, got k_spring={k_spring} k_bend={k_bend}"
            )));
        }
        Ok(ElasticRingModel {
            k_spring,
            k_bend,
            g,
        })
    }
}

/// Ring force densities `F = −(1/Δq) ∂E/∂X_k + g`:
///
/// ```text
/// F_spring,k = k_spring (X_{k+1} − 2X_k + X_{k−1}) / Δq²
/// F_bend,k  = −k_bend (X_{k−2} − 4X_{k−1} + 6X_k − 4X_{k+1} + X_{k+2}) / Δq⁴
/// ```
pub fn ring_forces(b: &Boundary, m: &ElasticRingModel) -> Vec<Vec2> {
    let dq2 = b.dq * b.dq;
    let dq4 = dq2 * dq2;
    (0..b.nq as isize)
        .map(|k| {
            let xm2 = b.pos(k - 2);
            let xm1 = b.pos(k - 1);
            let x0 = b.pos(k);
            let xp1 = b.pos(k + 1);
            let xp2 = b.pos(k + 2);
            let spring = (xp1 - x0 * 2.0 + xm1) * (m.k_spring / dq2);
            let bend = (xm2 - xm1 * 4.0 + x0 * 6.0 - xp1 * 4.0 + xp2) * (-m.k_bend / dq4);
            spring + bend + m.g
        })
        .collect()
}

/// Ring elastic energy `(E_spring, E_bend)`:
///
/// ```text
/// E_spring = (k_spring/2) Σ_k (‖X_{k+1} − X_k‖/Δq)² Δq
/// E_bend  = (k_bend/2)  Σ_k (‖X_{k+1} − 2X_k + X_{k−1}‖/Δq²)² Δq
/// ```
pub fn ring_energy(b: &Boundary, m: &ElasticRingModel) -> (f64, f64) {
    let mut es = 0.0;
    let mut eb = 0.0;
    for k in 0..b.nq as isize {
        let d1 = b.pos(k + 1) - b.pos(k);
        es += d1.norm_sq();
        let d2 = b.pos(k + 1) - b.pos(k) * 2.0 + b.pos(k - 1);
        eb += d2.norm_sq();
    }
    let dq = b.dq;
    (
        0.5 * m.k_spring * es / dq,
        0.5 * m.k_bend * eb / (dq * dq * dq),
    )
}

// ---------------------------------------------------------------------
// boundary dump format
// ---------------------------------------------------------------------
//
// `# boundary=<name> nq=<N> dq=<Δq>` followed by one
// `k x y u v fx fy` row per Lagrangian point.

use crate::textio;

/// The mutable per-point state of a boundary as stored in a dump; applied
/// back onto a structurally matching [`Boundary`] on restart.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySnapshot {
    pub name: String,
    pub nq: usize,
    pub dq: f64,
    pub x: Vec<Vec2>,
    pub u: Vec<Vec2>,
    pub f: Vec<Vec2>,
}

/// Serialize a boundary in the plain-text dump format.
pub fn dump_boundary(b: &Boundary) -> String {
    let mut out = format!(
        "# boundary={} nq={} dq={}\n",
        b.name,
        b.nq,
        textio::fmt17(b.dq)
    );
    for k in 0..b.nq {
        out.push_str(&format!(
            "{k} {} {} {} {} {} {}\n",
            textio::fmt17(b.x[k].x),
            textio::fmt17(b.x[k].y),
            textio::fmt17(b.u[k].x),
            textio::fmt17(b.u[k].y),
            textio::fmt17(b.f[k].x),
            textio::fmt17(b.f[k].y),
        ));
    }
    out
}

/// Parse a boundary dump; the inverse of [`dump_boundary`].
pub fn parse_boundary(lines: &mut std::str::Lines<'_>) -> Result<BoundarySnapshot> {
    let header = textio::next_line(lines, "a '# boundary=...' header")?;
    let pairs = textio::header_pairs(header, "boundary")?;
    let name: String = textio::header_get(&pairs, "boundary")?;
    let nq: usize = textio::header_get(&pairs, "nq")?;
    let dq: f64 = textio::header_get(&pairs, "dq")?;
    let mut snap = BoundarySnapshot {
        name,
        nq,
        dq,
        x: vec![Vec2::ZERO; nq],
        u: vec![Vec2::ZERO; nq],
        f: vec![Vec2::ZERO; nq],
    };
    for _ in 0..nq {
        let row = textio::parse_row(textio::next_line(lines, "a boundary row")?, 7)?;
        let k = row[0];
        if k.fract() != 0.0 || k < 0.0 || k >= nq as f64 {
            return Err(IbisError::Parse(format!("bad point index {k}")));
        }
        let k = k as usize;
        snap.x[k] = Vec2::new(row[1], row[2]);
        snap.u[k] = Vec2::new(row[3], row[4]);
        snap.f[k] = Vec2::new(row[5], row[6]);
    }
    Ok(snap)
}

impl Boundary {
    /// Overwrite this boundary's point state with a snapshot. The snapshot
    /// must match structurally (same name, point count, and spacing) —
    /// topology and wrap metadata stay with the receiving boundary.
    pub fn apply_snapshot(&mut self, snap: &BoundarySnapshot) -> Result<()> {
        if snap.name != self.name || snap.nq != self.nq || snap.dq != self.dq {
            return Err(IbisError::Config(format!(
                "snapshot '{}' (nq={}, dq={}) does not match boundary '{}' (nq={}, dq={})",
                snap.name, snap.nq, snap.dq, self.name, self.nq, self.dq
            )));
        }
        self.x.clone_from(&snap.x);
        self.u.clone_from(&snap.u);
        self.f.clone_from(&snap.f);
        Ok(())
    }
}
