//! Generic geometric multigrid for the periodic constant-coefficient
//! 5-point operator
//!
//! ```text
//! (A u)_{i,j} = sigma u_{i,j} - cx (u_{i+1,j} - 2u_{i,j} + u_{i-1,j})
//!                             - cy (u_{i,j+1} - 2u_{i,j} + u_{i,j-1})
//! ```
//!
//! with `sigma ≥ 0`, `cx, cy ≥ 0`. Both elliptic problems of the time step
//! reduce to this form: the velocity Helmholtz system directly
//! (`sigma = rho/dt`, `cx = mu/(2 dx²)`), and each parity-sublattice block
//! of the pressure operator after the 2:1 cover change of variables
//! (`sigma = 0`, `cx = cy`).
//!
//! Components: red-black Gauss–Seidel smoothing, full-weighting restriction,
//! bilinear prolongation, V-cycles, rediscretized coarse operators
//! (`cx, cy` divide by 4 per level, `sigma` unchanged). The hierarchy stops
//! before any dimension would drop below 4 cells or become non-halvable;
//! the coarsest level is solved by smoothing sweeps alone.
//!
//! When `sigma = 0` the operator is singular with the constants as its
//! kernel; construct with `singular = true` and the solver keeps both the
//! right-hand side and the iterates mean-free.

use crate::elliptic::{MgConfig, SolveStats};
use crate::error::{IbisError, Result};
use crate::grid::linf_norm;

struct Level {
    nx: usize,
    ny: usize,
    cx: f64,
    cy: f64,
    sigma: f64,
    u: Vec<f64>,
    b: Vec<f64>,
    r: Vec<f64>,
}

impl Level {
    fn new(nx: usize, ny: usize, cx: f64, cy: f64, sigma: f64) -> Level {
        Level {
            nx,
            ny,
            cx,
            cy,
            sigma,
            u: vec![0.0; nx * ny],
            b: vec![0.0; nx * ny],
            r: vec![0.0; nx * ny],
        }
    }

    /// One red-black Gauss–Seidel sweep (both colors).
    fn smooth(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        let inv_diag = 1.0 / (self.sigma + 2.0 * self.cx + 2.0 * self.cy);
        let (cx, cy) = (self.cx, self.cy);
        for color in 0..2 {
            for j in 0..ny {
                let rn = (if j + 1 == ny { 0 } else { j + 1 }) * nx;
                let rs = (if j == 0 { ny - 1 } else { j - 1 }) * nx;
                let row = j * nx;
                let mut i = (color + j) % 2;
                while i < nx {
                    let ie = if i + 1 == nx { 0 } else { i + 1 };
                    let iw = if i == 0 { nx - 1 } else { i - 1 };
                    self.u[row + i] = (self.b[row + i]
                        + cx * (self.u[row + ie] + self.u[row + iw])
                        + cy * (self.u[rn + i] + self.u[rs + i]))
                        * inv_diag;
                    i += 2;
                }
            }
        }
    }

    /// r = b − A u.
    fn residual(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        let diag = self.sigma + 2.0 * self.cx + 2.0 * self.cy;
        let (cx, cy) = (self.cx, self.cy);
        for j in 0..ny {
            let rn = (if j + 1 == ny { 0 } else { j + 1 }) * nx;
            let rs = (if j == 0 { ny - 1 } else { j - 1 }) * nx;
            let row = j * nx;
            for i in 0..nx {
                let ie = if i + 1 == nx { 0 } else { i + 1 };
                let iw = if i == 0 { nx - 1 } else { i - 1 };
                self.r[row + i] = self.b[row + i] - diag * self.u[row + i]
                    + cx * (self.u[row + ie] + self.u[row + iw])
                    + cy * (self.u[rn + i] + self.u[rs + i]);
            }
        }
    }

    fn project_mean_u(&mut self) {
        let m = self.u.iter().sum::<f64>() / self.u.len() as f64;
        for v in &mut self.u {
            *v -= m;
        }
    }
}

/// Full-weighting restriction of the fine residual into the coarse rhs.
fn restrict(fine: &Level, coarse: &mut Level) {
    let (nx, ny) = (fine.nx, fine.ny);
    let r = &fine.r;
    for jc in 0..coarse.ny {
        let j = 2 * jc;
        let rn = (if j + 1 == ny { 0 } else { j + 1 }) * nx;
        let rs = (if j == 0 { ny - 1 } else { j - 1 }) * nx;
        let row = j * nx;
        for ic in 0..coarse.nx {
            let i = 2 * ic;
            let ie = if i + 1 == nx { 0 } else { i + 1 };
            let iw = if i == 0 { nx - 1 } else { i - 1 };
            coarse.b[jc * coarse.nx + ic] = (4.0 * r[row + i]
                + 2.0 * (r[row + ie] + r[row + iw] + r[rn + i] + r[rs + i])
                + r[rn + ie]
                + r[rn + iw]
                + r[rs + ie]
                + r[rs + iw])
                / 16.0;
        }
    }
}

/// Bilinear prolongation of the coarse correction, added into the fine
/// iterate.
fn prolong_correct(coarse: &Level, fine: &mut Level) {
    let (nxc, nyc) = (coarse.nx, coarse.ny);
    let e = &coarse.u;
    for j in 0..fine.ny {
        let jc = j / 2;
        let jc1 = if jc + 1 == nyc { 0 } else { jc + 1 };
        let row = j * fine.nx;
        for i in 0..fine.nx {
            let ic = i / 2;
            let ic1 = if ic + 1 == nxc { 0 } else { ic + 1 };
            let corr = match (i % 2, j % 2) {
                (0, 0) => e[jc * nxc + ic],
                (1, 0) => 0.5 * (e[jc * nxc + ic] + e[jc * nxc + ic1]),
                (0, 1) => 0.5 * (e[jc * nxc + ic] + e[jc1 * nxc + ic]),
                _ => {
                    0.25 * (e[jc * nxc + ic]
                        + e[jc * nxc + ic1]
                        + e[jc1 * nxc + ic]
                        + e[jc1 * nxc + ic1])
                }
            };
            fine.u[row + i] += corr;
        }
    }
}

/// Multigrid solver for one fixed operator; owns its level hierarchy and
/// work arrays, so repeated solves allocate nothing.
pub struct Mg5 {
    levels: Vec<Level>,
    pub cfg: MgConfig,
    singular: bool,
}

/// Smoothing sweeps used to solve the coarsest level essentially exactly.
const COARSE_SWEEPS: usize = 60;

impl Mg5 {
    pub fn new(
        nx: usize,
        ny: usize,
        cx: f64,
        cy: f64,
        sigma: f64,
        singular: bool,
        cfg: MgConfig,
    ) -> Result<Mg5> {
        if nx < 4 || ny < 4 {
            return Err(IbisError::InvalidGrid(format!(
                "multigrid needs at least 4 points per direction, got {nx}x{ny}"
            )));
        }
        if !(cx >= 0.0 && cy >= 0.0 && sigma >= 0.0 && sigma + cx + cy > 0.0) {
            return Err(IbisError::InvalidGrid(format!(
                "multigrid coefficients must be non-negative and not all zero \
                 (cx={cx}, cy={cy}, sigma={sigma})"
            )));
        }
        let mut levels = Vec::new();
        let (mut lnx, mut lny, mut lcx, mut lcy) = (nx, ny, cx, cy);
        loop {
            levels.push(Level::new(lnx, lny, lcx, lcy, sigma));
            if lnx % 2 == 0 && lny % 2 == 0 && lnx / 2 >= 4 && lny / 2 >= 4 {
                lnx /= 2;
                lny /= 2;
                lcx *= 0.25;
                lcy *= 0.25;
            } else {
                break;
            }
        }
        Ok(Mg5 {
            levels,
            cfg,
            singular,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.levels[0].nx, self.levels[0].ny)
    }

    fn vcycle(&mut self, l: usize) {
        if l + 1 == self.levels.len() {
            for _ in 0..COARSE_SWEEPS {
                self.levels[l].smooth();
            }
            if self.singular {
                self.levels[l].project_mean_u();
            }
            return;
        }
        for _ in 0..self.cfg.nu_pre {
            self.levels[l].smooth();
        }
        self.levels[l].residual();
        {
            let (fine, coarse) = self.levels.split_at_mut(l + 1);
            restrict(&fine[l], &mut coarse[0]);
            coarse[0].u.fill(0.0);
        }
        self.vcycle(l + 1);
        {
            let (fine, coarse) = self.levels.split_at_mut(l + 1);
            prolong_correct(&coarse[0], &mut fine[l]);
        }
        for _ in 0..self.cfg.nu_post {
            self.levels[l].smooth();
        }
    }

    /// Solve `A u = b` to the absolute residual target `‖b − Au‖∞ ≤ target`,
    /// starting from (and overwriting) the supplied `u` as a warm start.
    pub fn solve(&mut self, b: &[f64], u: &mut [f64], target: f64) -> Result<SolveStats> {
        let n = self.levels[0].u.len();
        debug_assert_eq!(b.len(), n);
        debug_assert_eq!(u.len(), n);
        self.levels[0].b.copy_from_slice(b);
        self.levels[0].u.copy_from_slice(u);
        if self.singular {
            let m = b.iter().sum::<f64>() / n as f64;
            for v in &mut self.levels[0].b {
                *v -= m;
            }
        }
        self.levels[0].residual();
        let res0 = linf_norm(&self.levels[0].r);
        let mut stats = SolveStats::new(res0);
        if res0 <= target {
            u.copy_from_slice(&self.levels[0].u);
            return Ok(stats);
        }
        for _ in 0..self.cfg.max_cycles {
            self.vcycle(0);
            if self.singular {
                self.levels[0].project_mean_u();
            }
            self.levels[0].residual();
            let res = linf_norm(&self.levels[0].r);
            stats.cycles += 1;
            stats.history.push(res);
            stats.final_residual = res;
            if res <= target {
                u.copy_from_slice(&self.levels[0].u);
                return Ok(stats);
            }
        }
        Err(IbisError::SolverDiverged {
            solver: "mg5",
            cycles: stats.cycles,
            residual: stats.final_residual,
            target,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

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

    fn apply(nx: usize, ny: usize, cx: f64, cy: f64, sigma: f64, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            let jn = (j + 1) % ny;
            let js = (j + ny - 1) % ny;
            for i in 0..nx {
                let ie = (i + 1) % nx;
                let iw = (i + nx - 1) % nx;
                out[j * nx + i] = (sigma + 2.0 * cx + 2.0 * cy) * u[j * nx + i]
                    - cx * (u[j * nx + ie] + u[j * nx + iw])
                    - cy * (u[jn * nx + i] + u[js * nx + i]);
            }
        }
        out
    }

    #[test]
    fn manufactured_helmholtz() {
        let (nx, ny) = (32, 32);
        let (cx, cy, sigma) = (80.0, 80.0, 100.0);
        let mut rng = Rng::new(1);
        let exact: Vec<f64> = (0..nx * ny).map(|_| rng.next()).collect();
        let b = apply(nx, ny, cx, cy, sigma, &exact);
        let mut mg = Mg5::new(nx, ny, cx, cy, sigma, false, MgConfig::default()).unwrap();
        let mut u = vec![0.0; nx * ny];
        let target = 1e-10 * linf_norm(&b);
        let stats = mg.solve(&b, &mut u, target).unwrap();
        assert!(stats.final_residual <= target);
        let err: f64 = u
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // sigma bounds the operator below, so ‖err‖ ≤ residual / sigma
        assert!(err <= 10.0 * target / sigma, "err {err}");
    }

    #[test]
    fn diagonal_operator_solved_in_one_cycle() {
        // cx = cy = 0 (inviscid Helmholtz): one smoothing sweep is exact.
        let (nx, ny) = (8, 8);
        let sigma = 50.0;
        let mut rng = Rng::new(2);
        let b: Vec<f64> = (0..nx * ny).map(|_| rng.next()).collect();
        let mut mg = Mg5::new(nx, ny, 0.0, 0.0, sigma, false, MgConfig::default()).unwrap();
        let mut u = vec![0.0; nx * ny];
        let stats = mg.solve(&b, &mut u, 1e-14 * linf_norm(&b)).unwrap();
        assert_eq!(stats.cycles, 1);
        for k in 0..nx * ny {
            assert!((u[k] - b[k] / sigma).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_poisson_recovers_manufactured_solution() {
        let (nx, ny) = (64, 64);
        let (cx, cy) = (1.0, 1.0);
        let mut rng = Rng::new(3);
        let mut exact: Vec<f64> = (0..nx * ny).map(|_| rng.next()).collect();
        let m = exact.iter().sum::<f64>() / exact.len() as f64;
        for v in &mut exact {
            *v -= m;
        }
        let b = apply(nx, ny, cx, cy, 0.0, &exact);
        let mut mg = Mg5::new(nx, ny, cx, cy, 0.0, true, MgConfig::default()).unwrap();
        let mut u = vec![0.0; nx * ny];
        let target = 1e-10 * linf_norm(&b);
        let stats = mg.solve(&b, &mut u, target).unwrap();
        assert!(stats.final_residual <= target);
        // iterates are kept mean-free, so the comparison is direct
        let err: f64 = u
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn vcycle_contraction_below_half() {
        // measured on the isotropic Poisson problem, the configuration the
        // pressure sublattice solves use
        let (nx, ny) = (64, 64);
        let mut rng = Rng::new(4);
        let mut b: Vec<f64> = (0..nx * ny).map(|_| rng.next()).collect();
        let m = b.iter().sum::<f64>() / b.len() as f64;
        for v in &mut b {
            *v -= m;
        }
        let mut mg = Mg5::new(nx, ny, 1.0, 1.0, 0.0, true, MgConfig::default()).unwrap();
        let mut u = vec![0.0; nx * ny];
        let stats = mg.solve(&b, &mut u, 1e-9 * linf_norm(&b)).unwrap();
        let worst = stats.worst_contraction();
        assert!(worst < 0.5, "contraction {worst}");
        assert!(stats.cycles >= 3, "want a few cycles to measure");
    }

    #[test]
    fn solution_independent_of_initial_guess() {
        let (nx, ny) = (32, 16);
        let (cx, cy, sigma) = (4.0, 16.0, 3.0);
        let mut rng = Rng::new(5);
        let b: Vec<f64> = (0..nx * ny).map(|_| rng.next()).collect();
        let target = 1e-12 * linf_norm(&b);
        let mut mg = Mg5::new(nx, ny, cx, cy, sigma, false, MgConfig::default()).unwrap();
        let mut u1 = vec![0.0; nx * ny];
        mg.solve(&b, &mut u1, target).unwrap();
        let mut u2: Vec<f64> = (0..nx * ny).map(|_| rng.next() * 10.0).collect();
        mg.solve(&b, &mut u2, target).unwrap();
        for k in 0..nx * ny {
            // operator floor sigma=3 turns residual targets into u agreement
            assert!((u1[k] - u2[k]).abs() < 1e-11);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let (nx, ny) = (16, 16);
        let mut rng = Rng::new(6);
        let b: Vec<f64> = (0..nx * ny).map(|_| rng.next()).collect();
        let cfg = MgConfig {
            max_cycles: 0,
            ..MgConfig::default()
        };
        let mut mg = Mg5::new(nx, ny, 1.0, 1.0, 5.0, false, cfg).unwrap();
        let mut u = vec![0.0; nx * ny];
        assert!(matches!(
            mg.solve(&b, &mut u, 1e-12),
            Err(IbisError::SolverDiverged { .. })
        ));
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(Mg5::new(2, 8, 1.0, 1.0, 0.0, true, MgConfig::default()).is_err());
    }
}
