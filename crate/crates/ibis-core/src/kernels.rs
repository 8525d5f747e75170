//! The 4-point regularised delta kernel and the transfer operators built on
//! it: force spreading (Lagrangian → grid), velocity interpolation
//! (grid → Lagrangian), the interpolated velocity gradient, and scalar
//! interpolation for corner pressures.
//!
//! The 1-D kernel `phi` has support `[-2, 2]` (measured in grid cells), is
//! C¹, even, and satisfies the discrete moment identities
//!
//! ```text
//! sum_j phi(r - j)          = 1      (partition of unity)
//! sum_{j even} phi(r - j)   = 1/2    (and likewise odd)
//! sum_j (r - j) phi(r - j)  = 0      (first moment)
//! sum_j phi(r - j)^2        = 3/8
//! ```
//!
//! for every real `r`. The 2-D delta is the tensor product
//! `delta_h(x, y) = phi(x/dx) phi(y/dy) / (dx dy)`, normalised so that a
//! spread force integrates back to the total Lagrangian force and a constant
//! grid field interpolates exactly to that constant. All operators use this
//! single convention; mixing normalisations between spread and interpolate
//! is the classic IB bug and is locked down by the adjointness test below.
//!
//! Positions may lie outside the primary period (boundary points are stored
//! unwrapped); grid indices wrap modulo `nx`, `ny`.

use crate::error::{IbisError, Result};
use crate::grid::{wrap, Grid, Loc, ScalarField, VectorField};
use crate::vec2::{Mat2, Vec2};

/// 1-D 4-point kernel; piecewise algebraic, zero for `|r| > 2`.
pub fn phi(r: f64) -> f64 {
    if (-2.0..-1.0).contains(&r) {
        0.125 * (5.0 + 2.0 * r - (-7.0 - 12.0 * r - 4.0 * r * r).sqrt())
    } else if (-1.0..0.0).contains(&r) {
        0.125 * (3.0 + 2.0 * r + (1.0 - 4.0 * r - 4.0 * r * r).sqrt())
    } else if (0.0..1.0).contains(&r) {
        0.125 * (3.0 - 2.0 * r + (1.0 + 4.0 * r - 4.0 * r * r).sqrt())
    } else if (1.0..=2.0).contains(&r) {
        0.125 * (5.0 - 2.0 * r - (-7.0 + 12.0 * r - 4.0 * r * r).sqrt())
    } else {
        0.0
    }
}

/// Analytic derivative of [`phi`]; continuous everywhere (including the
/// branch points, where both one-sided values agree).
pub fn phi_prime(r: f64) -> f64 {
    if (-2.0..-1.0).contains(&r) {
        0.125 * (2.0 + (6.0 + 4.0 * r) / (-7.0 - 12.0 * r - 4.0 * r * r).sqrt())
    } else if (-1.0..0.0).contains(&r) {
        0.125 * (2.0 + (-2.0 - 4.0 * r) / (1.0 - 4.0 * r - 4.0 * r * r).sqrt())
    } else if (0.0..1.0).contains(&r) {
        0.125 * (-2.0 + (2.0 - 4.0 * r) / (1.0 + 4.0 * r - 4.0 * r * r).sqrt())
    } else if (1.0..=2.0).contains(&r) {
        0.125 * (-2.0 + (-6.0 + 4.0 * r) / (-7.0 + 12.0 * r - 4.0 * r * r).sqrt())
    } else {
        0.0
    }
}

/// Clamp a fractional coordinate's floor so the subsequent `±1..±2` index
/// arithmetic cannot overflow even for astronomically large inputs (their
/// kernel weights vanish anyway; upstream magnitude checks report such
/// states as blow-ups).
#[inline]
fn safe_base(r: f64) -> isize {
    r.floor().clamp(-1e18, 1e18) as isize
}

/// The 4-cell support window around fractional grid coordinate `r`:
/// returns the leftmost index and the kernel weights at the four nodes
/// `i0, i0+1, i0+2, i0+3` (all other weights vanish).
#[inline]
fn window(r: f64) -> (isize, [f64; 4]) {
    let base = safe_base(r);
    (
        base - 1,
        [
            phi(r - (base - 1) as f64),
            phi(r - base as f64),
            phi(r - (base + 1) as f64),
            phi(r - (base + 2) as f64),
        ],
    )
}

/// Same window, with derivative weights.
#[inline]
fn window_prime(r: f64) -> (isize, [f64; 4]) {
    let base = safe_base(r);
    (
        base - 1,
        [
            phi_prime(r - (base - 1) as f64),
            phi_prime(r - base as f64),
            phi_prime(r - (base + 1) as f64),
            phi_prime(r - (base + 2) as f64),
        ],
    )
}

/// Fractional coordinate of position `x` in units of `dx`, relative to the
/// node lattice of the given staggering (centers sit at `(i+1/2)dx`).
#[inline]
fn frac_coord(x: f64, dx: f64, loc: Loc) -> f64 {
    match loc {
        Loc::Center => x / dx - 0.5,
        Loc::Corner => x / dx,
    }
}

/// Accumulate `F_k * delta_h(x_{ij} - X_k) * dq` into an existing
/// cell-centered force field. `fs[k]` is a force density per unit
/// Lagrangian parameter, so the result is a force per unit area.
pub fn spread_into(
    grid: &Grid,
    xs: &[Vec2],
    fs: &[Vec2],
    dq: f64,
    out: &mut VectorField,
) -> Result<()> {
    debug_assert_eq!(xs.len(), fs.len());
    if out.nx != grid.nx || out.ny != grid.ny {
        return Err(IbisError::ShapeMismatch {
            expected_nx: grid.nx,
            expected_ny: grid.ny,
            got_nx: out.nx,
            got_ny: out.ny,
        });
    }
    let scale = dq / (grid.dx * grid.dy);
    for (k, (&x, &f)) in xs.iter().zip(fs).enumerate() {
        if !x.is_finite() {
            return Err(IbisError::NonFinite { index: k });
        }
        let (i0, wx) = window(frac_coord(x.x, grid.dx, Loc::Center));
        let (j0, wy) = window(frac_coord(x.y, grid.dy, Loc::Center));
        for (b, &wyv) in wy.iter().enumerate() {
            let row = wrap(j0 + b as isize, grid.ny) * grid.nx;
            for (a, &wxv) in wx.iter().enumerate() {
                let i = wrap(i0 + a as isize, grid.nx);
                let w = wxv * wyv * scale;
                out.u[row + i] += f.x * w;
                out.v[row + i] += f.y * w;
            }
        }
    }
    Ok(())
}

/// Spread Lagrangian force densities to a fresh grid field.
pub fn spread(grid: &Grid, xs: &[Vec2], fs: &[Vec2], dq: f64) -> Result<VectorField> {
    let mut out = VectorField::zeros(grid);
    spread_into(grid, xs, fs, dq, &mut out)?;
    Ok(out)
}

/// Interpolate a cell-centered vector field to one point:
/// `U(X) = sum_{ij} u_{ij} delta_h(x_{ij} - X) dx dy`.
pub fn interpolate_at(grid: &Grid, u: &VectorField, x: Vec2) -> Vec2 {
    debug_assert!(x.is_finite());
    let (i0, wx) = window(frac_coord(x.x, grid.dx, Loc::Center));
    let (j0, wy) = window(frac_coord(x.y, grid.dy, Loc::Center));
    let mut acc = Vec2::ZERO;
    for (b, &wyv) in wy.iter().enumerate() {
        let row = wrap(j0 + b as isize, grid.ny) * grid.nx;
        for (a, &wxv) in wx.iter().enumerate() {
            let i = wrap(i0 + a as isize, grid.nx);
            let w = wxv * wyv;
            acc.x += u.u[row + i] * w;
            acc.y += u.v[row + i] * w;
        }
    }
    acc
}

/// Interpolate a vector field to many points.
pub fn interpolate(grid: &Grid, u: &VectorField, xs: &[Vec2]) -> Vec<Vec2> {
    xs.iter().map(|&x| interpolate_at(grid, u, x)).collect()
}

/// Interpolated velocity gradient of the mollified field `u^IB` at `X`:
/// entry `[a][b]` is `du_a/dx_b`. Identical to differentiating
/// [`interpolate_at`] with respect to the evaluation point.
pub fn interpolate_gradient(grid: &Grid, u: &VectorField, x: Vec2) -> Mat2 {
    debug_assert!(x.is_finite());
    let rx = frac_coord(x.x, grid.dx, Loc::Center);
    let ry = frac_coord(x.y, grid.dy, Loc::Center);
    let (i0, wx) = window(rx);
    let (_, dwx) = window_prime(rx);
    let (j0, wy) = window(ry);
    let (_, dwy) = window_prime(ry);
    let mut m = [[0.0_f64; 2]; 2];
    for b in 0..4 {
        let row = wrap(j0 + b as isize, grid.ny) * grid.nx;
        for a in 0..4 {
            let i = wrap(i0 + a as isize, grid.nx);
            let wdx = dwx[a] * wy[b] / grid.dx; // d/dX_x weight
            let wdy = wx[a] * dwy[b] / grid.dy; // d/dX_y weight
            let (uu, vv) = (u.u[row + i], u.v[row + i]);
            m[0][0] += uu * wdx;
            m[0][1] += uu * wdy;
            m[1][0] += vv * wdx;
            m[1][1] += vv * wdy;
        }
    }
    Mat2 { m }
}

/// Interpolate a scalar field (either staggering) to one point with the same
/// kernel; used for sampling corner pressures near the boundary.
pub fn interpolate_scalar(grid: &Grid, p: &ScalarField, x: Vec2) -> f64 {
    debug_assert!(x.is_finite());
    let (i0, wx) = window(frac_coord(x.x, grid.dx, p.loc));
    let (j0, wy) = window(frac_coord(x.y, grid.dy, p.loc));
    let mut acc = 0.0;
    for (b, &wyv) in wy.iter().enumerate() {
        let row = wrap(j0 + b as isize, grid.ny) * grid.nx;
        for (a, &wxv) in wx.iter().enumerate() {
            acc += p.data[row + wrap(i0 + a as isize, grid.nx)] * wxv * wyv;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    /// xorshift-based deterministic pseudo-random stream in [-0.5, 0.5).
    struct Rng(u64);
    impl Rng {
        fn new(seed: u64) -> Rng {
            Rng(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1))
        }
        fn next(&mut self) -> f64 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            (self.0 as f64 / u64::MAX as f64) - 0.5
        }
    }

    #[test]
    fn phi_frozen_values() {
        assert_eq!(phi(0.0), 0.5);
        assert!((phi(1.0) - 0.25).abs() < 1e-15);
        assert!((phi(-1.0) - 0.25).abs() < 1e-15);
        assert_eq!(phi(2.0), 0.0);
        assert_eq!(phi(-2.0), 0.0);
        assert!((phi(0.5) - (2.0 + SQRT2) / 8.0).abs() < 1e-15);
        assert!((phi(-0.5) - (2.0 + SQRT2) / 8.0).abs() < 1e-15);
        assert!((phi(1.5) - (2.0 - SQRT2) / 8.0).abs() < 1e-15);
        assert_eq!(phi(2.0001), 0.0);
        assert_eq!(phi(-7.3), 0.0);
    }

    #[test]
    fn phi_moment_identities() {
        let mut rng = Rng::new(17);
        for _ in 0..200 {
            let r = rng.next() + 0.5; // in [0, 1)
            let mut sum = 0.0;
            let mut even = 0.0;
            let mut first = 0.0;
            let mut sq = 0.0;
            for j in -2_i32..=2 {
                let w = phi(r - j as f64);
                sum += w;
                if j.rem_euclid(2) == 0 {
                    even += w;
                }
                first += (r - j as f64) * w;
                sq += w * w;
            }
            assert!((sum - 1.0).abs() < 1e-14, "sum at r={r}: {sum}");
            assert!((even - 0.5).abs() < 1e-14, "even-sum at r={r}: {even}");
            assert!(first.abs() < 1e-14, "first moment at r={r}: {first}");
            assert!((sq - 3.0 / 8.0).abs() < 1e-14, "square sum at r={r}: {sq}");
        }
    }

    #[test]
    fn phi_prime_frozen_values() {
        assert_eq!(phi_prime(0.0), 0.0);
        // both one-sided branch values at r = 1 equal -1/2
        assert!((phi_prime(1.0) + 0.5).abs() < 1e-15);
        assert!((phi_prime(1.0 - 1e-12) + 0.5).abs() < 1e-9);
        assert!((phi_prime(-1.0) - 0.5).abs() < 1e-15);
        assert!(phi_prime(2.0).abs() < 1e-15);
        assert!(phi_prime(-2.0).abs() < 1e-15);
        assert_eq!(phi_prime(2.5), 0.0);
    }

    #[test]
    fn phi_prime_is_odd_and_sums_vanish() {
        let mut rng = Rng::new(23);
        for _ in 0..100 {
            let r = rng.next() * 3.9;
            assert!((phi_prime(-r) + phi_prime(r)).abs() < 1e-13);
        }
        for _ in 0..100 {
            let r = rng.next() + 0.5;
            let s: f64 = (-2..=2).map(|j| phi_prime(r - j as f64)).sum();
            let m: f64 = (-2..=2)
                .map(|j| (r - j as f64) * phi_prime(r - j as f64))
                .sum();
            assert!(s.abs() < 1e-13);
            assert!((m + 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn phi_prime_matches_finite_difference() {
        let mut rng = Rng::new(31);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 200 {
            let r = rng.next() * 4.4; // cover the support and beyond
            if (r - r.round()).abs() < 1e-3 {
                continue; // skip branch points; phi'' jumps there
            }
            let fd = (phi(r + h) - phi(r - h)) / (2.0 * h);
            assert!(
                (phi_prime(r) - fd).abs() < 1e-6,
                "at r={r}: analytic {} vs fd {fd}",
                phi_prime(r)
            );
            checked += 1;
        }
    }

    #[test]
    fn spread_conserves_total_force() {
        let g = Grid::new(16, 12, 2.0, 1.5).unwrap();
        let dq = 0.37;
        let mut rng = Rng::new(5);
        // positions intentionally outside [0, L) to exercise wrapping
        let xs: Vec<Vec2> = (0..9)
            .map(|_| Vec2::new(rng.next() * 6.0, rng.next() * 6.0))
            .collect();
        let fs: Vec<Vec2> = (0..9)
            .map(|_| Vec2::new(rng.next(), rng.next()))
            .collect();
        let f = spread(&g, &xs, &fs, dq).unwrap();
        let tot_fx: f64 = f.u.iter().sum::<f64>() * g.dx * g.dy;
        let tot_fy: f64 = f.v.iter().sum::<f64>() * g.dx * g.dy;
        let want: Vec2 = fs.iter().fold(Vec2::ZERO, |a, &b| a + b) * dq;
        assert!((tot_fx - want.x).abs() < 1e-13);
        assert!((tot_fy - want.y).abs() < 1e-13);
    }

    #[test]
    fn spread_point_on_cell_center() {
        let g = Grid::new(8, 8, 1.0, 1.0).unwrap();
        let dq = 1.0;
        let x = g.cell_center(3, 4);
        let f = spread(&g, &[x], &[Vec2::new(1.0, 0.0)], dq).unwrap();
        let scale = dq / (g.dx * g.dy);
        // phi(0)^2 = 1/4 at the coincident center, phi(0)phi(1) = 1/8 at the
        // four axial neighbours, phi(1)^2 = 1/16 on the diagonals.
        assert!((f.u[g.idx(3, 4)] - 0.25 * scale).abs() < 1e-13);
        assert!((f.u[g.idx(4, 4)] - 0.125 * scale).abs() < 1e-13);
        assert!((f.u[g.idx(3, 5)] - 0.125 * scale).abs() < 1e-13);
        assert!((f.u[g.idx(2, 3)] - 0.0625 * scale).abs() < 1e-13);
        assert!(f.u[g.idx(3, 6)].abs() < 1e-15); // outside the 4-point window
        assert!(f.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spread_zero_force_and_nonfinite_position() {
        let g = Grid::new(8, 8, 1.0, 1.0).unwrap();
        let f = spread(&g, &[Vec2::new(0.3, 0.4)], &[Vec2::ZERO], 1.0).unwrap();
        assert!(f.u.iter().chain(f.v.iter()).all(|&v| v == 0.0));
        let bad = Vec2::new(f64::NAN, 0.0);
        assert!(matches!(
            spread(&g, &[bad], &[Vec2::ZERO], 1.0),
            Err(IbisError::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn interpolate_constant_and_linear() {
        let g = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let mut u = VectorField::zeros(&g);
        u.u.fill(1.25);
        u.v.fill(-0.5);
        let mut rng = Rng::new(77);
        for _ in 0..50 {
            let x = Vec2::new(rng.next() * 8.0, rng.next() * 8.0);
            let val = interpolate_at(&g, &u, x);
            assert!((val.x - 1.25).abs() < 1e-14);
            assert!((val.y + 0.5).abs() < 1e-14);
        }
        // linear field, interior points at least 2 cells from the wrap seam
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.cell_center(i, j);
                u.set(i, j, Vec2::new(0.7 * c.x - 0.2 * c.y, 1.3 * c.y));
            }
        }
        for _ in 0..50 {
            let x = Vec2::new(
                0.3 + 1.4 * (rng.next() + 0.5),
                0.3 + 1.4 * (rng.next() + 0.5),
            );
            let val = interpolate_at(&g, &u, x);
            assert!((val.x - (0.7 * x.x - 0.2 * x.y)).abs() < 1e-13);
            assert!((val.y - 1.3 * x.y).abs() < 1e-13);
        }
    }

    #[test]
    fn spread_interpolate_adjointness() {
        // <spread(F), u> dx dy = <F, interpolate(u)> dq, to round-off.
        let g = Grid::new(12, 10, 1.7, 2.3).unwrap();
        let dq = 0.21;
        let mut rng = Rng::new(99);
        let xs: Vec<Vec2> = (0..17)
            .map(|_| Vec2::new(rng.next() * 9.0, rng.next() * 9.0))
            .collect();
        let fs: Vec<Vec2> = (0..17)
            .map(|_| Vec2::new(rng.next(), rng.next()))
            .collect();
        let mut u = VectorField::zeros(&g);
        for k in 0..g.ncells() {
            u.u[k] = rng.next();
            u.v[k] = rng.next();
        }
        let f = spread(&g, &xs, &fs, dq).unwrap();
        let lhs: f64 = f
            .u
            .iter()
            .zip(&u.u)
            .chain(f.v.iter().zip(&u.v))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * g.dx
            * g.dy;
        let uk = interpolate(&g, &u, &xs);
        let rhs: f64 = fs.iter().zip(&uk).map(|(a, b)| a.dot(*b)).sum::<f64>() * dq;
        assert!(
            (lhs - rhs).abs() < 1e-13 * lhs.abs().max(1.0),
            "lhs {lhs} rhs {rhs}"
        );
    }

    #[test]
    fn gradient_of_constant_field_is_zero() {
        let g = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let mut u = VectorField::zeros(&g);
        u.u.fill(0.9);
        u.v.fill(-0.1);
        let m = interpolate_gradient(&g, &u, Vec2::new(0.456, 1.234)).m;
        for row in &m {
            for &e in row {
                assert!(e.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gradient_reproduces_linear_shear() {
        // u = (gd * y, 0) sampled on the grid: the interpolated gradient is
        // exact (to round-off) away from the wrap seam because the kernel
        // reproduces linears and d/dX commutes with the window sum.
        let g = Grid::new(32, 32, 2.0, 2.0).unwrap();
        let gd = 0.15;
        let mut u = VectorField::zeros(&g);
        for j in 0..g.ny {
            for i in 0..g.nx {
                u.u[g.idx(i, j)] = gd * g.cell_center(i, j).y;
            }
        }
        let mut rng = Rng::new(3);
        for _ in 0..40 {
            let x = Vec2::new(
                (rng.next() + 0.5) * 2.0,
                0.3 + 1.4 * (rng.next() + 0.5),
            );
            let m = interpolate_gradient(&g, &u, x).m;
            assert!(m[0][0].abs() < 1e-12);
            assert!((m[0][1] - gd).abs() < 1e-12, "du/dy = {}", m[0][1]);
            assert!(m[1][0].abs() < 1e-12);
            assert!(m[1][1].abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_difference_of_interpolate() {
        let g = Grid::new(24, 24, 2.0, 2.0).unwrap();
        let mut u = VectorField::zeros(&g);
        let tau = 2.0 * std::f64::consts::PI;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.cell_center(i, j);
                u.set(
                    i,
                    j,
                    Vec2::new(
                        (tau * c.x / g.lx).sin() * (tau * c.y / g.ly).cos(),
                        (tau * c.x / g.lx).cos(),
                    ),
                );
            }
        }
        let h = 1e-6;
        let mut rng = Rng::new(8);
        for _ in 0..30 {
            let x = Vec2::new((rng.next() + 0.5) * 2.0, (rng.next() + 0.5) * 2.0);
            let m = interpolate_gradient(&g, &u, x).m;
            let fx = (interpolate_at(&g, &u, x + Vec2::new(h, 0.0))
                - interpolate_at(&g, &u, x - Vec2::new(h, 0.0)))
                / (2.0 * h);
            let fy = (interpolate_at(&g, &u, x + Vec2::new(0.0, h))
                - interpolate_at(&g, &u, x - Vec2::new(0.0, h)))
                / (2.0 * h);
            assert!((m[0][0] - fx.x).abs() < 1e-6);
            assert!((m[1][0] - fx.y).abs() < 1e-6);
            assert!((m[0][1] - fy.x).abs() < 1e-6);
            assert!((m[1][1] - fy.y).abs() < 1e-6);
        }
    }

    #[test]
    fn scalar_interpolation_both_staggerings() {
        let g = Grid::new(16, 16, 2.0, 2.0).unwrap();
        // corner field p = x + 2y reproduces exactly in the interior
        let mut p = ScalarField::zeros(&g, Loc::Corner);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.corner(i, j);
                p.data[g.idx(i, j)] = c.x + 2.0 * c.y;
            }
        }
        let x = Vec2::new(0.9, 1.1);
        assert!((interpolate_scalar(&g, &p, x) - (x.x + 2.0 * x.y)).abs() < 1e-13);

        let mut q = ScalarField::zeros(&g, Loc::Center);
        q.data.fill(4.5);
        assert!((interpolate_scalar(&g, &q, Vec2::new(1.99, 0.01)) - 4.5).abs() < 1e-13);
    }
}
