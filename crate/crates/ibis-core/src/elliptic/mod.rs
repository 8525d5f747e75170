//! Geometric multigrid solvers for the two periodic, constant-coefficient
//! linear systems arising in each time step:
//!
//! * the corner-pressure Poisson problem with operator `D∘G` (the exact
//!   composition of the module's divergence and gradient stencils), and
//! * the cell-centered velocity Helmholtz problem
//!   `(rho/dt − (mu/2) L) u = rhs`.
//!
//! The Helmholtz operator is a standard positive-definite 5-point stencil
//! and is handled directly by the generic solver in [`mg5`].
//!
//! `D∘G` expands to a 9-point stencil whose axial couplings vanish when
//! `dx == dy`; its kernel is two-dimensional (one additive constant per
//! corner parity class, equivalently constants plus the `(-1)^{i+j}`
//! checkerboard). The solver in [`pressure`] exploits this structure: it
//! iterates block Gauss–Seidel over the two parity sublattices, and each
//! sublattice system — a rotated, isotropic 5-point Laplacian — is solved
//! by pulling it back to an ordinary square torus (a 2:1 cover) where the
//! generic solver applies unchanged.

pub mod helmholtz;
pub mod mg5;
pub mod pressure;

pub use helmholtz::HelmholtzSolver;
pub use mg5::Mg5;
pub use pressure::PressureSolver;

/// Multigrid settings shared by all solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct MgConfig {
    /// Relative residual tolerance: stop when `‖b − Au‖∞ ≤ tol·‖b‖∞`.
    pub tol: f64,
    /// Abort the solve with an error after this many V-cycles.
    pub max_cycles: usize,
    /// Red-black Gauss–Seidel sweeps before coarse-grid correction.
    pub nu_pre: usize,
    /// Sweeps after coarse-grid correction.
    pub nu_post: usize,
}

impl Default for MgConfig {
    fn default() -> MgConfig {
        MgConfig {
            tol: 1e-10,
            max_cycles: 60,
            nu_pre: 2,
            nu_post: 2,
        }
    }
}

/// Outcome of one linear solve.
#[derive(Debug, Clone)]
pub struct SolveStats {
    /// Total V-cycles spent (summed over inner solves where applicable).
    pub cycles: usize,
    /// `‖b − Au₀‖∞` for the supplied initial guess.
    pub initial_residual: f64,
    /// Final `‖b − Au‖∞`.
    pub final_residual: f64,
    /// Residual after each cycle (outer iteration for the pressure solver);
    /// used to measure the contraction factor.
    pub history: Vec<f64>,
}

impl SolveStats {
    pub fn new(initial_residual: f64) -> SolveStats {
        SolveStats {
            cycles: 0,
            initial_residual,
            final_residual: initial_residual,
            history: Vec::new(),
        }
    }

    /// Worst per-cycle residual reduction factor observed during the solve.
    pub fn worst_contraction(&self) -> f64 {
        let mut prev = self.initial_residual;
        let mut worst = 0.0_f64;
        for &r in &self.history {
            if prev > 0.0 {
                worst = worst.max(r / prev);
            }
            prev = r;
        }
        worst
    }
}
