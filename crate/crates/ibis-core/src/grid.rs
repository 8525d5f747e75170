//! Periodic Eulerian grid, field storage, and the centered 2nd-order
//! discrete operators `G` (gradient), `L` (Laplacian) and `D` (divergence).
//!
//! Staggering convention, fixed project-wide:
//!
//! * cell `(i, j)` has its center at `((i + 1/2) dx, (j + 1/2) dy)`;
//!   velocities `u`, `v` and body/spread forces live there;
//! * the corner node `(i, j)` sits at `(i dx, j dy)`; pressures live there.
//!
//! With these positions the printed stencils below are the natural centered
//! ones: `G` differences the four corners of cell `(i, j)` to produce a
//! cell-centered gradient, and `D` differences the four cells sharing corner
//! `(i, j)` to produce a corner divergence. `G` and `D` are negative
//! adjoints of each other under the natural inner products, which makes
//! `D∘G` a symmetric (negative semi-definite) operator for the pressure.
//!
//! All index arithmetic wraps modulo `nx`/`ny`.

use crate::error::{IbisError, Result};
use crate::vec2::Vec2;

/// Staggering location of a scalar field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loc {
    /// Cell centers `((i + 1/2) dx, (j + 1/2) dy)`.
    Center,
    /// Cell corners `(i dx, j dy)`.
    Corner,
}

impl Loc {
    pub fn name(self) -> &'static str {
        match self {
            Loc::Center => "center",
            Loc::Corner => "corner",
        }
    }
}

/// Periodic rectangular grid: `nx * ny` cells covering `lx * ly`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid> {
        if nx < 4 || ny < 4 {
            return Err(IbisError::InvalidGrid(format!(
                "need at least 4 cells per direction, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(IbisError::InvalidGrid(format!(
                "domain lengths must be positive, got {lx} x {ly}"
            )));
        }
        Ok(Grid {
            nx,
            ny,
            lx,
            ly,
            dx: lx / nx as f64,
            dy: ly / ny as f64,
        })
    }

    #[inline]
    pub fn ncells(&self) -> usize {
        self.nx * self.ny
    }

    /// Row-major flat index; callers pass in-range `i`, `j`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// Position of the center of cell `(i, j)`.
    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }

    /// Position of corner node `(i, j)`.
    #[inline]
    pub fn corner(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(i as f64 * self.dx, j as f64 * self.dy)
    }

    /// Reduce a displacement to its nearest periodic image.
    #[inline]
    pub fn min_image(&self, mut d: Vec2) -> Vec2 {
        d.x -= self.lx * (d.x / self.lx).round();
        d.y -= self.ly * (d.y / self.ly).round();
        d
    }

    /// Wrap a position into `[0, lx) x [0, ly)`.
    #[inline]
    pub fn wrap_point(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.rem_euclid(self.lx), p.y.rem_euclid(self.ly))
    }
}

/// Wrap a signed index into `[0, n)`.
#[inline]
pub fn wrap(i: isize, n: usize) -> usize {
    let n = n as isize;
    (i.rem_euclid(n)) as usize
}

/// Scalar field on the grid, tagged with its staggering location.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub nx: usize,
    pub ny: usize,
    pub loc: Loc,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid, loc: Loc) -> ScalarField {
        ScalarField {
            nx: grid.nx,
            ny: grid.ny,
            loc,
            data: vec![0.0; grid.ncells()],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.nx && j < self.ny);
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i < self.nx && j < self.ny);
        &mut self.data[j * self.nx + i]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    fn check_shape(&self, grid: &Grid) -> Result<()> {
        if self.nx != grid.nx || self.ny != grid.ny {
            return Err(IbisError::ShapeMismatch {
                expected_nx: grid.nx,
                expected_ny: grid.ny,
                got_nx: self.nx,
                got_ny: self.ny,
            });
        }
        Ok(())
    }
}

/// Vector field with both components stored at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> VectorField {
        VectorField {
            nx: grid.nx,
            ny: grid.ny,
            u: vec![0.0; grid.ncells()],
            v: vec![0.0; grid.ncells()],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Vec2 {
        debug_assert!(i < self.nx && j < self.ny);
        let k = j * self.nx + i;
        Vec2::new(self.u[k], self.v[k])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, val: Vec2) {
        debug_assert!(i < self.nx && j < self.ny);
        let k = j * self.nx + i;
        self.u[k] = val.x;
        self.v[k] = val.y;
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    fn check_shape(&self, grid: &Grid) -> Result<()> {
        if self.nx != grid.nx || self.ny != grid.ny {
            return Err(IbisError::ShapeMismatch {
                expected_nx: grid.nx,
                expected_ny: grid.ny,
                got_nx: self.nx,
                got_ny: self.ny,
            });
        }
        Ok(())
    }
}

/// Centered gradient of a corner pressure field, evaluated at cell centers:
///
/// ```text
/// (Gp)_{i,j} = 1/2 * ( (p_{i+1,j} - p_{i,j} + p_{i+1,j+1} - p_{i,j+1}) / dx ,
///                      (p_{i,j+1} - p_{i,j} + p_{i+1,j+1} - p_{i+1,j}) / dy )
/// ```
pub fn gradient(grid: &Grid, p: &ScalarField) -> Result<VectorField> {
    p.check_shape(grid)?;
    if p.loc != Loc::Corner {
        return Err(IbisError::LocationMismatch {
            expected: "corner",
            got: p.loc.name(),
        });
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = VectorField::zeros(grid);
    for j in 0..ny {
        let jp = if j + 1 == ny { 0 } else { j + 1 };
        for i in 0..nx {
            let ip = if i + 1 == nx { 0 } else { i + 1 };
            let p00 = p.data[j * nx + i];
            let p10 = p.data[j * nx + ip];
            let p01 = p.data[jp * nx + i];
            let p11 = p.data[jp * nx + ip];
            let k = j * nx + i;
            out.u[k] = 0.5 * (p10 - p00 + p11 - p01) / grid.dx;
            out.v[k] = 0.5 * (p01 - p00 + p11 - p10) / grid.dy;
        }
    }
    Ok(out)
}

/// Centered divergence of a cell-centered vector field, evaluated at corners:
///
/// ```text
/// (D.u)_{i,j} = 1/2 * ( (u_{i,j} - u_{i-1,j} + u_{i,j-1} - u_{i-1,j-1}) / dx
///                     + (v_{i,j} - v_{i,j-1} + v_{i-1,j} - v_{i-1,j-1}) / dy )
/// ```
pub fn divergence(grid: &Grid, w: &VectorField) -> Result<ScalarField> {
    w.check_shape(grid)?;
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = ScalarField::zeros(grid, Loc::Corner);
    for j in 0..ny {
        let jm = if j == 0 { ny - 1 } else { j - 1 };
        for i in 0..nx {
            let im = if i == 0 { nx - 1 } else { i - 1 };
            let u00 = w.u[j * nx + i];
            let um0 = w.u[j * nx + im];
            let u0m = w.u[jm * nx + i];
            let umm = w.u[jm * nx + im];
            let v00 = w.v[j * nx + i];
            let v0m = w.v[jm * nx + i];
            let vm0 = w.v[j * nx + im];
            let vmm = w.v[jm * nx + im];
            out.data[j * nx + i] = 0.5
                * ((u00 - um0 + u0m - umm) / grid.dx + (v00 - v0m + vm0 - vmm) / grid.dy);
        }
    }
    Ok(out)
}

/// Standard periodic 5-point Laplacian of one scalar component.
pub fn laplacian_scalar(grid: &Grid, f: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    debug_assert_eq!(f.len(), nx * ny);
    debug_assert_eq!(out.len(), nx * ny);
    let idx2 = 1.0 / (grid.dx * grid.dx);
    let idy2 = 1.0 / (grid.dy * grid.dy);
    for j in 0..ny {
        let jp = if j + 1 == ny { 0 } else { j + 1 };
        let jm = if j == 0 { ny - 1 } else { j - 1 };
        for i in 0..nx {
            let ip = if i + 1 == nx { 0 } else { i + 1 };
            let im = if i == 0 { nx - 1 } else { i - 1 };
            let c = f[j * nx + i];
            out[j * nx + i] = (f[j * nx + ip] - 2.0 * c + f[j * nx + im]) * idx2
                + (f[jp * nx + i] - 2.0 * c + f[jm * nx + i]) * idy2;
        }
    }
}

/// Standard 5-point Laplacian applied to each component of a cell-centered
/// vector field, periodic in both directions.
pub fn laplacian(grid: &Grid, w: &VectorField) -> Result<VectorField> {
    w.check_shape(grid)?;
    let mut out = VectorField::zeros(grid);
    laplacian_scalar(grid, &w.u, &mut out.u);
    laplacian_scalar(grid, &w.v, &mut out.v);
    Ok(out)
}

/// Area-weighted L1 norm of a grid field: `sum |e| dx dy`.
pub fn l1_norm(grid: &Grid, data: &[f64]) -> f64 {
    data.iter().map(|e| e.abs()).sum::<f64>() * grid.dx * grid.dy
}

/// Max norm of a grid field.
pub fn linf_norm(data: &[f64]) -> f64 {
    data.iter().fold(0.0_f64, |m, e| m.max(e.abs()))
}

// ---------------------------------------------------------------------
// field dump format
// ---------------------------------------------------------------------
//
// `# field=<name> nx=<Nx> ny=<Ny> lx=<Lx> ly=<Ly> loc=<center|corner>`
// followed by one `i j value` (scalar) or `i j u v` (vector) row per
// point, row-major, 17-significant-digit decimals.

use crate::textio;

fn field_header(name: &str, grid: &Grid, loc: Loc) -> String {
    format!(
        "# field={name} nx={} ny={} lx={} ly={} loc={}\n",
        grid.nx,
        grid.ny,
        textio::fmt17(grid.lx),
        textio::fmt17(grid.ly),
        loc.name()
    )
}

/// Serialize a scalar field in the plain-text dump format.
pub fn dump_scalar(grid: &Grid, name: &str, f: &ScalarField) -> Result<String> {
    f.check_shape(grid)?;
    let mut out = field_header(name, grid, f.loc);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            out.push_str(&format!(
                "{i} {j} {}\n",
                textio::fmt17(f.data[grid.idx(i, j)])
            ));
        }
    }
    Ok(out)
}

/// Serialize a (cell-centered) vector field in the plain-text dump format.
pub fn dump_vector(grid: &Grid, name: &str, f: &VectorField) -> Result<String> {
    f.check_shape(grid)?;
    let mut out = field_header(name, grid, Loc::Center);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let idx = grid.idx(i, j);
            out.push_str(&format!(
                "{i} {j} {} {}\n",
                textio::fmt17(f.u[idx]),
                textio::fmt17(f.v[idx])
            ));
        }
    }
    Ok(out)
}

fn parse_field_header(lines: &mut std::str::Lines<'_>) -> Result<(String, Grid, Loc)> {
    let header = textio::next_line(lines, "a '# field=...' header")?;
    let pairs = textio::header_pairs(header, "field")?;
    let name: String = textio::header_get(&pairs, "field")?;
    let nx: usize = textio::header_get(&pairs, "nx")?;
    let ny: usize = textio::header_get(&pairs, "ny")?;
    let lx: f64 = textio::header_get(&pairs, "lx")?;
    let ly: f64 = textio::header_get(&pairs, "ly")?;
    let loc: String = textio::header_get(&pairs, "loc")?;
    let loc = match loc.as_str() {
        "center" => Loc::Center,
        "corner" => Loc::Corner,
        other => {
            return Err(IbisError::Parse(format!(
                "loc must be center or corner, got '{other}'"
            )))
        }
    };
    Ok((name, Grid::new(nx, ny, lx, ly)?, loc))
}

fn parse_indices(grid: &Grid, row: &[f64]) -> Result<usize> {
    let (i, j) = (row[0], row[1]);
    if i.fract() != 0.0 || j.fract() != 0.0 {
        return Err(IbisError::Parse(format!("non-integer indices {i} {j}")));
    }
    let (i, j) = (i as usize, j as usize);
    if i >= grid.nx || j >= grid.ny {
        return Err(IbisError::Parse(format!(
            "indices {i} {j} outside {}x{} grid",
            grid.nx, grid.ny
        )));
    }
    Ok(grid.idx(i, j))
}

/// Parse a scalar field dump; the inverse of [`dump_scalar`].
pub fn parse_scalar(lines: &mut std::str::Lines<'_>) -> Result<(String, Grid, ScalarField)> {
    let (name, grid, loc) = parse_field_header(lines)?;
    let mut f = ScalarField::zeros(&grid, loc);
    for _ in 0..grid.nx * grid.ny {
        let row = textio::parse_row(textio::next_line(lines, "a field row")?, 3)?;
        f.data[parse_indices(&grid, &row)?] = row[2];
    }
    Ok((name, grid, f))
}

/// Parse a vector field dump; the inverse of [`dump_vector`].
pub fn parse_vector(lines: &mut std::str::Lines<'_>) -> Result<(String, Grid, VectorField)> {
    let (name, grid, loc) = parse_field_header(lines)?;
    if loc != Loc::Center {
        return Err(IbisError::Parse(
            "vector fields are cell-centered, got loc=corner".into(),
        ));
    }
    let mut f = VectorField::zeros(&grid);
    for _ in 0..grid.nx * grid.ny {
        let row = textio::parse_row(textio::next_line(lines, "a field row")?, 4)?;
        let idx = parse_indices(&grid, &row)?;
        f.u[idx] = row[2];
        f.v[idx] = row[3];
    }
    Ok((name, grid, f))
}
