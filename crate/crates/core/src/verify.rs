//! Manufactured solutions, error norms and convergence studies.

use std::fmt;

use thiserror::Error;

use crate::expr::{Expr, ExprError, Var};
use crate::fem::{
    apply_dirichlet, assemble_load, assemble_stiffness, solve_dirichlet, solve_reduced, CoefficientField, FeSpace,
    FemError, LinearSolver, QuadratureRule, SolutionField,
};
use crate::linalg::{norm_inf, BicgstabOptions};
use crate::mesh::{build_disc_mesh, mesh_size, Mesh, MeshError};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("linear solve did not converge for n_boundary = {n_boundary} (relative residual {residual:e})")]
    NotConverged { n_boundary: usize, residual: f64 },
    #[error("boundary counts must be strictly increasing")]
    BadCounts,
}

/// `f₁ = −(u_xx + x u_xy + u_yy)`, the weak right-hand side whose discrete
/// solution approximates `u_exact`. The strong source is `f = −f₁`.
pub fn mms_source(u_exact: &Expr) -> Result<Expr, ExprError> {
    let ux = u_exact.differentiate(Var::X)?;
    let uxx = ux.differentiate(Var::X)?;
    let uxy = ux.differentiate(Var::Y)?;
    let uyy = u_exact.differentiate(Var::Y)?.differentiate(Var::Y)?;
    let sum = Expr::sum(Expr::sum(uxx, Expr::product(Expr::X, uxy)), uyy);
    Ok(Expr::negated(sum))
}

/// `‖u_h − u_exact‖_{L²}` by quadrature over the mesh.
pub fn l2_error(u: &SolutionField<'_>, u_exact: &Expr, quad: &QuadratureRule) -> Result<f64, ExprError> {
    let space = u.space();
    let mut sum = 0.0;
    for t in 0..space.mesh().n_triangles() {
        let area = space.element(t).area;
        for &(bary, w) in quad.points() {
            let p = space.map_point(t, bary);
            let d = u.value_at(t, bary) - u_exact.eval(p.x, p.y)?;
            sum += w * area * d * d;
        }
    }
    Ok(sum.sqrt())
}

/// `‖∇u_h − ∇u_exact‖_{L²}`, the exact gradient given componentwise.
pub fn h1_semi_error(
    u: &SolutionField<'_>,
    u_exact_dx: &Expr,
    u_exact_dy: &Expr,
    quad: &QuadratureRule,
) -> Result<f64, ExprError> {
    let space = u.space();
    let mut sum = 0.0;
    for t in 0..space.mesh().n_triangles() {
        let area = space.element(t).area;
        let g = u.gradient(t);
        for &(bary, w) in quad.points() {
            let p = space.map_point(t, bary);
            let dx = g[0] - u_exact_dx.eval(p.x, p.y)?;
            let dy = g[1] - u_exact_dy.eval(p.x, p.y)?;
            sum += w * area * (dx * dx + dy * dy);
        }
    }
    Ok(sum.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n_boundary: usize,
    pub h: f64,
    pub n_nodes: usize,
    pub error_l2: f64,
    pub error_h1_semi: f64,
    pub rate_l2: Option<f64>,
    pub rate_h1: Option<f64>,
}

/// Rows ordered by decreasing `h`; rates compare each row with the previous.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    rows: Vec<ConvergenceRow>,
}

fn rate(e_prev: f64, e: f64, h_prev: f64, h: f64) -> Option<f64> {
    let r = (e_prev / e).ln() / (h_prev / h).ln();
    (e_prev > 0.0 && e > 0.0 && r.is_finite()).then_some(r)
}

impl ConvergenceTable {
    /// Sorts by decreasing `h` and fills in the rates.
    pub fn new(mut rows: Vec<ConvergenceRow>) -> Self {
        rows.sort_by(|a, b| b.h.total_cmp(&a.h));
        for k in 0..rows.len() {
            if k == 0 {
                rows[k].rate_l2 = None;
                rows[k].rate_h1 = None;
            } else {
                let (p, c) = (rows[k - 1], rows[k]);
                rows[k].rate_l2 = rate(p.error_l2, c.error_l2, p.h, c.h);
                rows[k].rate_h1 = rate(p.error_h1_semi, c.error_h1_semi, p.h, c.h);
            }
        }
        ConvergenceTable { rows }
    }

    pub fn rows(&self) -> &[ConvergenceRow] {
        &self.rows
    }

    /// Rates of the finest pair.
    pub fn final_rates(&self) -> (Option<f64>, Option<f64>) {
        self.rows.last().map_or((None, None), |r| (r.rate_l2, r.rate_h1))
    }

    pub fn to_csv(&self) -> String {
        let opt = |r: Option<f64>| r.map_or(String::new(), |v| format!("{v:.6}"));
        let mut out = String::from("h,n_nodes,e_l2,e_h1,rate_l2,rate_h1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.10e},{},{:.10e},{:.10e},{},{}\n",
                r.h,
                r.n_nodes,
                r.error_l2,
                r.error_h1_semi,
                opt(r.rate_l2),
                opt(r.rate_h1)
            ));
        }
        out
    }
}

impl fmt::Display for ConvergenceTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.3}"));
        writeln!(
            f,
            "{:>6} {:>10} {:>8} {:>12} {:>12} {:>8} {:>8}",
            "n", "h", "nodes", "e_L2", "e_H1", "rate_L2", "rate_H1"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>6} {:>10.6} {:>8} {:>12.4e} {:>12.4e} {:>8} {:>8}",
                r.n_boundary,
                r.h,
                r.n_nodes,
                r.error_l2,
                r.error_h1_semi,
                opt(r.rate_l2),
                opt(r.rate_h1)
            )?;
        }
        Ok(())
    }
}

fn study_solver() -> LinearSolver {
    LinearSolver::Bicgstab(BicgstabOptions {
        tol: 1e-12,
        ..Default::default()
    })
}

/// Solves the manufactured problem on `mesh` and measures both errors.
pub fn measure(
    mesh: Mesh,
    coeff: &CoefficientField,
    u_exact: &Expr,
    solver: &LinearSolver,
) -> Result<ConvergenceRow, VerifyError> {
    let n_boundary = mesh.boundary_edges().len();
    let h = mesh_size(&mesh);
    let space = FeSpace::new(mesh)?;
    let f1 = mms_source(u_exact)?;
    let sol = solve_dirichlet(&space, coeff, &f1, solver)?;
    if !sol.stats.converged {
        return Err(VerifyError::NotConverged {
            n_boundary,
            residual: sol.stats.relative_residual,
        });
    }
    let quad = QuadratureRule::degree5();
    let error_l2 = l2_error(&sol.field, u_exact, &quad)?;
    let dx = u_exact.differentiate(Var::X)?;
    let dy = u_exact.differentiate(Var::Y)?;
    let error_h1_semi = h1_semi_error(&sol.field, &dx, &dy, &quad)?;
    Ok(ConvergenceRow {
        n_boundary,
        h,
        n_nodes: space.n_total(),
        error_l2,
        error_h1_semi,
        rate_l2: None,
        rate_h1: None,
    })
}

/// One disc mesh per boundary count, solved with BiCGSTAB at tolerance
/// 1e-12 for the model operator.
pub fn convergence_study(boundary_counts: &[usize], u_exact: &Expr) -> Result<ConvergenceTable, VerifyError> {
    convergence_study_with(boundary_counts, u_exact, Execution::default())
}

pub fn convergence_study_with(
    boundary_counts: &[usize],
    u_exact: &Expr,
    exec: Execution,
) -> Result<ConvergenceTable, VerifyError> {
    if boundary_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(VerifyError::BadCounts);
    }
    let coeff = CoefficientField::model_problem();
    let solver = study_solver();
    let rows = exec.try_map_range(boundary_counts.len(), |k| {
        let mesh = build_disc_mesh(boundary_counts[k])?;
        measure(mesh, &coeff, u_exact, &solver)
    })?;
    Ok(ConvergenceTable::new(rows))
}

/// Max-norm relative difference between the BiCGSTAB and dense LU solutions
/// of the same reduced system.
pub fn oracle_compare(mesh: Mesh, f1: &Expr) -> Result<f64, VerifyError> {
    let space = FeSpace::new(mesh)?;
    let a = assemble_stiffness(&space, &CoefficientField::model_problem(), &QuadratureRule::centroid())?;
    let b = assemble_load(&space, f1, &QuadratureRule::edge_midpoints())?;
    let system = apply_dirichlet(&a, &b, &space)?;
    let (dense, _) = solve_reduced(&system, &LinearSolver::DenseLu)?;
    let (iter, stats) = solve_reduced(&system, &study_solver())?;
    if !stats.converged {
        return Err(VerifyError::NotConverged {
            n_boundary: space.mesh().boundary_edges().len(),
            residual: stats.relative_residual,
        });
    }
    let scale = norm_inf(&dense);
    if scale == 0.0 {
        return Ok(norm_inf(&iter));
    }
    let diff: Vec<f64> = dense.iter().zip(&iter).map(|(a, b)| a - b).collect();
    Ok(norm_inf(&diff) / scale)
}
