//! P1 finite elements: the nodal space, quadrature, assembly of the
//! bilinear form `B[u, v] = ∫ Σ c_kl ∂_k u ∂_l v` and the load vector, and
//! Dirichlet elimination.
//!
//! Matrix rows index test functions and columns index trial functions, so the
//! assembled system reads `b_i = Σ_j A_ij ξ_j`.

use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::linalg::{self, BicgstabOptions, DenseLu, LinalgError, SolveStats, SparseCsr};
use crate::mesh::{Mesh, Point2};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FemError {
    #[error("triangle {triangle} is degenerate (area {area:e})")]
    DegenerateTriangle { triangle: usize, area: f64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("no interior degrees of freedom")]
    EmptySystem,
    #[error("point ({x}, {y}) is outside the triangulated domain")]
    OutsideDomain { x: f64, y: f64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("boundary node {node} carries value {value:e}; the field must vanish on the boundary")]
    NonZeroTrace { node: usize, value: f64 },
    #[error("invalid quadrature rule: {0}")]
    InvalidQuadrature(String),
}

/// Area and the three constant gradients of the barycentric basis on one
/// triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

impl ElementGeometry {
    fn new(t: usize, [p1, p2, p3]: [Point2; 3]) -> Result<Self, FemError> {
        let area = 0.5 * crate::mesh::orient(p1, p2, p3);
        if area.abs() < 1e-14 {
            return Err(FemError::DegenerateTriangle { triangle: t, area });
        }
        let two_a = 2.0 * area;
        let grad = |pj: Point2, pk: Point2| [(pj.y - pk.y) / two_a, (pk.x - pj.x) / two_a];
        Ok(ElementGeometry {
            area,
            grads: [grad(p2, p3), grad(p3, p1), grad(p1, p2)],
        })
    }
}

/// Continuous piecewise-linear space on a mesh. Interior nodes are the free
/// degrees of freedom; boundary nodes carry the homogeneous Dirichlet value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeSpace {
    mesh: Mesh,
    free_dofs: Vec<usize>,
    dof_of_node: Vec<Option<usize>>,
    elements: Vec<ElementGeometry>,
}

impl FeSpace {
    pub fn new(mesh: Mesh) -> Result<Self, FemError> {
        let elements = (0..mesh.n_triangles())
            .map(|t| ElementGeometry::new(t, mesh.vertices(t)))
            .collect::<Result<Vec<_>, _>>()?;
        let free_dofs: Vec<usize> = (0..mesh.n_nodes()).filter(|&i| !mesh.node_is_boundary()[i]).collect();
        let mut dof_of_node = vec![None; mesh.n_nodes()];
        for (k, &i) in free_dofs.iter().enumerate() {
            dof_of_node[i] = Some(k);
        }
        Ok(FeSpace {
            mesh,
            free_dofs,
            dof_of_node,
            elements,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn n_total(&self) -> usize {
        self.mesh.n_nodes()
    }

    /// Number of interior nodes, `n_p`.
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn elements(&self) -> &[ElementGeometry] {
        &self.elements
    }

    pub fn element(&self, t: usize) -> &ElementGeometry {
        &self.elements[t]
    }

    /// Value of the hat function of `node` at `p` (0 outside the domain).
    pub fn basis_value(&self, node: usize, p: Point2) -> f64 {
        match self.mesh.locate_point(p) {
            Some((t, bary)) => self.mesh.triangles()[t]
                .nodes
                .iter()
                .position(|&i| i == node)
                .map_or(0.0, |k| bary[k]),
            None => 0.0,
        }
    }

    /// Physical coordinates of a barycentric point in triangle `t`.
    pub fn map_point(&self, t: usize, bary: [f64; 3]) -> Point2 {
        let v = self.mesh.vertices(t);
        Point2::new(
            bary[0] * v[0].x + bary[1] * v[1].x + bary[2] * v[2].x,
            bary[0] * v[0].y + bary[1] * v[1].y + bary[2] * v[2].y,
        )
    }
}

pub fn build_fespace(mesh: Mesh) -> Result<FeSpace, FemError> {
    FeSpace::new(mesh)
}

/// `c[k][l]` multiplies `∂_k u ∂_l v` (u trial, v test; index 0 is x).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub entries: [[Expr; 2]; 2],
}

impl CoefficientField {
    pub fn new(entries: [[Expr; 2]; 2]) -> Self {
        CoefficientField { entries }
    }

    pub fn parse(entries: [[&str; 2]; 2]) -> Result<Self, ExprError> {
        let [[a, b], [c, d]] = entries;
        Ok(CoefficientField::new([
            [a.parse()?, b.parse()?],
            [c.parse()?, d.parse()?],
        ]))
    }

    /// The Laplacian, `∫ ∇u · ∇v`.
    pub fn identity() -> Self {
        CoefficientField::new([
            [Expr::Const(1.0), Expr::Const(0.0)],
            [Expr::Const(0.0), Expr::Const(1.0)],
        ])
    }

    /// `∫ u_x v_x + x u_x v_y + u_y v_y`.
    pub fn model_problem() -> Self {
        CoefficientField::new([[Expr::Const(1.0), Expr::X], [Expr::Const(0.0), Expr::Const(1.0)]])
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<[[f64; 2]; 2], ExprError> {
        let e = &self.entries;
        Ok([
            [e[0][0].eval(x, y)?, e[0][1].eval(x, y)?],
            [e[1][0].eval(x, y)?, e[1][1].eval(x, y)?],
        ])
    }
}

/// Quadrature on a triangle in barycentric coordinates; weights are
/// normalized to sum to one (multiply by the triangle area).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Vec<([f64; 3], f64)>,
    degree: u32,
}

impl QuadratureRule {
    pub fn new(points: Vec<([f64; 3], f64)>, degree: u32) -> Result<Self, FemError> {
        let total: f64 = points.iter().map(|(_, w)| w).sum();
        if points.is_empty() || (total - 1.0).abs() > 1e-12 {
            return Err(FemError::InvalidQuadrature(format!("weights sum to {total}")));
        }
        if points.iter().any(|(b, _)| (b.iter().sum::<f64>() - 1.0).abs() > 1e-12) {
            return Err(FemError::InvalidQuadrature(
                "barycentric coordinates must sum to 1".into(),
            ));
        }
        Ok(QuadratureRule { points, degree })
    }

    /// One point, exact for degree 1.
    pub fn centroid() -> Self {
        let third = 1.0 / 3.0;
        QuadratureRule {
            points: vec![([third, third, third], 1.0)],
            degree: 1,
        }
    }

    /// Three edge midpoints, exact for degree 2.
    pub fn edge_midpoints() -> Self {
        let w = 1.0 / 3.0;
        QuadratureRule {
            points: vec![([0.5, 0.5, 0.0], w), ([0.0, 0.5, 0.5], w), ([0.5, 0.0, 0.5], w)],
            degree: 2,
        }
    }

    /// Seven-point rule exact for degree 5.
    pub fn degree5() -> Self {
        let s15 = 15f64.sqrt();
        let (a1, b1) = ((6.0 - s15) / 21.0, (9.0 + 2.0 * s15) / 21.0);
        let (a2, b2) = ((6.0 + s15) / 21.0, (9.0 - 2.0 * s15) / 21.0);
        let (w1, w2) = ((155.0 - s15) / 1200.0, (155.0 + s15) / 1200.0);
        let third = 1.0 / 3.0;
        QuadratureRule {
            points: vec![
                ([third, third, third], 9.0 / 40.0),
                ([a1, a1, b1], w1),
                ([a1, b1, a1], w1),
                ([b1, a1, a1], w1),
                ([a2, a2, b2], w2),
                ([a2, b2, a2], w2),
                ([b2, a2, a2], w2),
            ],
            degree: 5,
        }
    }

    pub fn points(&self) -> &[([f64; 3], f64)] {
        &self.points
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }
}

/// Local 3x3 stiffness matrix of triangle `t` (row = test, column = trial).
pub fn element_stiffness(
    space: &FeSpace,
    t: usize,
    coeff: &CoefficientField,
    quad: &QuadratureRule,
) -> Result<[[f64; 3]; 3], ExprError> {
    let el = space.element(t);
    let g = &el.grads;
    let mut local = [[0.0; 3]; 3];
    for &(bary, w) in quad.points() {
        let p = space.map_point(t, bary);
        let c = coeff.eval(p.x, p.y)?;
        let scale = w * el.area;
        for (row, gi) in g.iter().enumerate() {
            for (col, gj) in g.iter().enumerate() {
                let mut s = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        s += c[k][l] * gj[k] * gi[l];
                    }
                }
                local[row][col] += scale * s;
            }
        }
    }
    Ok(local)
}

/// Exact P1 element mass matrix, `|T|/12 [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn element_mass(space: &FeSpace, t: usize) -> [[f64; 3]; 3] {
    let a = space.element(t).area / 12.0;
    let mut m = [[a; 3]; 3];
    for (k, row) in m.iter_mut().enumerate() {
        row[k] = 2.0 * a;
    }
    m
}

fn scatter(space: &FeSpace, locals: &[[[f64; 3]; 3]]) -> SparseCsr {
    let n = space.n_total();
    let mut trip = Vec::with_capacity(9 * locals.len());
    for (tri, local) in space.mesh().triangles().iter().zip(locals) {
        for (a, &i) in tri.nodes.iter().enumerate() {
            for (b, &j) in tri.nodes.iter().enumerate() {
                trip.push((i, j, local[a][b]));
            }
        }
    }
    SparseCsr::from_triplets(n, n, &trip).expect("mesh indices are in range")
}

pub fn assemble_stiffness(
    space: &FeSpace,
    coeff: &CoefficientField,
    quad: &QuadratureRule,
) -> Result<SparseCsr, FemError> {
    assemble_stiffness_with(space, coeff, quad, Execution::default())
}

/// Element matrices are computed under `exec` and accumulated in triangle
/// order, so the result does not depend on the policy.
pub fn assemble_stiffness_with(
    space: &FeSpace,
    coeff: &CoefficientField,
    quad: &QuadratureRule,
    exec: Execution,
) -> Result<SparseCsr, FemError> {
    let locals = exec.try_map_range(space.mesh().n_triangles(), |t| element_stiffness(space, t, coeff, quad))?;
    Ok(scatter(space, &locals))
}

pub fn assemble_mass(space: &FeSpace) -> SparseCsr {
    let locals: Vec<_> = (0..space.mesh().n_triangles())
        .map(|t| element_mass(space, t))
        .collect();
    scatter(space, &locals)
}

pub fn assemble_load(space: &FeSpace, f1: &Expr, quad: &QuadratureRule) -> Result<Vec<f64>, FemError> {
    assemble_load_with(space, f1, quad, Execution::default())
}

pub fn assemble_load_with(
    space: &FeSpace,
    f1: &Expr,
    quad: &QuadratureRule,
    exec: Execution,
) -> Result<Vec<f64>, FemError> {
    let locals = exec.try_map_range(space.mesh().n_triangles(), |t| -> Result<[f64; 3], ExprError> {
        let area = space.element(t).area;
        let mut local = [0.0; 3];
        for &(bary, w) in quad.points() {
            let p = space.map_point(t, bary);
            let f = f1.eval(p.x, p.y)?;
            for k in 0..3 {
                local[k] += w * area * f * bary[k];
            }
        }
        Ok(local)
    })?;
    let mut b = vec![0.0; space.n_total()];
    for (tri, local) in space.mesh().triangles().iter().zip(&locals) {
        for (k, &i) in tri.nodes.iter().enumerate() {
            b[i] += local[k];
        }
    }
    Ok(b)
}

/// System restricted to the interior nodes. `free_dofs[k]` is the global
/// node of reduced index `k`.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub matrix: SparseCsr,
    pub rhs: Vec<f64>,
    pub free_dofs: Vec<usize>,
}

/// Eliminates the boundary rows and columns. The boundary data is zero, so
/// the right-hand side needs no correction.
pub fn apply_dirichlet(a: &SparseCsr, b: &[f64], space: &FeSpace) -> Result<ReducedSystem, FemError> {
    let n = space.n_total();
    if a.n_rows() != n || a.n_cols() != n {
        return Err(FemError::LengthMismatch {
            expected: n,
            got: a.n_rows(),
        });
    }
    if b.len() != n {
        return Err(FemError::LengthMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if space.n_free() == 0 {
        return Err(FemError::EmptySystem);
    }
    let free = space.free_dofs().to_vec();
    Ok(ReducedSystem {
        matrix: a.restrict(&free),
        rhs: free.iter().map(|&i| b[i]).collect(),
        free_dofs: free,
    })
}

/// Boundary values with magnitude up to this are treated as zero.
pub const TRACE_TOL: f64 = 1e-10;

/// Nodal coefficients of a P1 function on a [`FeSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField<'s> {
    space: &'s FeSpace,
    values: Vec<f64>,
    clamped: Vec<usize>,
}

impl<'s> SolutionField<'s> {
    /// Checks the zero-trace invariant.
    pub fn new(space: &'s FeSpace, values: Vec<f64>) -> Result<Self, FemError> {
        let field = Self::with_trace(space, values)?;
        let flags = space.mesh().node_is_boundary();
        if let Some(node) = (0..flags.len()).find(|&i| flags[i] && field.values[i].abs() > TRACE_TOL) {
            return Err(FemError::NonZeroTrace {
                node,
                value: field.values[node],
            });
        }
        Ok(field)
    }

    /// A P1 function with arbitrary boundary values. Used for interpolants of
    /// functions that do not vanish on the boundary (error measurement,
    /// affine-reproduction checks).
    pub fn with_trace(space: &'s FeSpace, values: Vec<f64>) -> Result<Self, FemError> {
        if values.len() != space.n_total() {
            return Err(FemError::LengthMismatch {
                expected: space.n_total(),
                got: values.len(),
            });
        }
        Ok(SolutionField {
            space,
            values,
            clamped: Vec::new(),
        })
    }

    pub fn zero(space: &'s FeSpace) -> Self {
        SolutionField {
            space,
            values: vec![0.0; space.n_total()],
            clamped: Vec::new(),
        }
    }

    /// Scatters reduced (interior) values into a full field with zero trace.
    pub fn from_free(space: &'s FeSpace, free_values: &[f64]) -> Result<Self, FemError> {
        if free_values.len() != space.n_free() {
            return Err(FemError::LengthMismatch {
                expected: space.n_free(),
                got: free_values.len(),
            });
        }
        let mut values = vec![0.0; space.n_total()];
        for (&i, &v) in space.free_dofs().iter().zip(free_values) {
            values[i] = v;
        }
        Ok(SolutionField {
            space,
            values,
            clamped: Vec::new(),
        })
    }

    pub fn space(&self) -> &'s FeSpace {
        self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn free_values(&self) -> Vec<f64> {
        self.space.free_dofs().iter().map(|&i| self.values[i]).collect()
    }

    /// Boundary nodes whose interpolated value was clamped to zero.
    pub fn clamped_nodes(&self) -> &[usize] {
        &self.clamped
    }

    /// Constant gradient on triangle `t`.
    pub fn gradient(&self, t: usize) -> [f64; 2] {
        let el = self.space.element(t);
        let nodes = self.space.mesh().triangles()[t].nodes;
        let mut g = [0.0; 2];
        for (k, &i) in nodes.iter().enumerate() {
            g[0] += self.values[i] * el.grads[k][0];
            g[1] += self.values[i] * el.grads[k][1];
        }
        g
    }

    pub fn value_at(&self, t: usize, bary: [f64; 3]) -> f64 {
        let nodes = self.space.mesh().triangles()[t].nodes;
        (0..3).map(|k| bary[k] * self.values[nodes[k]]).sum()
    }

    /// Barycentric interpolation inside the containing triangle.
    pub fn evaluate(&self, p: Point2) -> Result<f64, FemError> {
        let (t, bary) = self
            .space
            .mesh()
            .locate_point(p)
            .ok_or(FemError::OutsideDomain { x: p.x, y: p.y })?;
        Ok(self.value_at(t, bary))
    }
}

pub fn evaluate(u: &SolutionField<'_>, p: Point2) -> Result<f64, FemError> {
    u.evaluate(p)
}

/// Nodal interpolant of `e`. Boundary values above [`TRACE_TOL`] are clamped
/// to zero and reported through [`SolutionField::clamped_nodes`].
pub fn interpolate<'s>(e: &Expr, space: &'s FeSpace) -> Result<SolutionField<'s>, FemError> {
    let mesh = space.mesh();
    let mut values = Vec::with_capacity(space.n_total());
    let mut clamped = Vec::new();
    for (i, p) in mesh.nodes().iter().enumerate() {
        let v = e.eval(p.x, p.y)?;
        if mesh.node_is_boundary()[i] && v.abs() > TRACE_TOL {
            clamped.push(i);
            values.push(0.0);
        } else {
            values.push(v);
        }
    }
    if !clamped.is_empty() {
        log::warn!(
            "interpolant of `{e}` is nonzero on {} boundary nodes; clamped to 0",
            clamped.len()
        );
    }
    Ok(SolutionField { space, values, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearSolver {
    Bicgstab(BicgstabOptions),
    DenseLu,
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::Bicgstab(BicgstabOptions::default())
    }
}

pub fn solve_reduced(system: &ReducedSystem, solver: &LinearSolver) -> Result<(Vec<f64>, SolveStats), FemError> {
    match solver {
        LinearSolver::Bicgstab(opts) => Ok(linalg::bicgstab(&system.matrix, &system.rhs, opts)?),
        LinearSolver::DenseLu => {
            let x = DenseLu::factor(&system.matrix.to_dense())?.solve(&system.rhs)?;
            let ax = system.matrix.matvec(&x)?;
            let r: Vec<f64> = system.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let bnorm = linalg::norm2(&system.rhs);
            let rel = if bnorm > 0.0 {
                linalg::norm2(&r) / bnorm
            } else {
                linalg::norm2(&r)
            };
            Ok((
                x,
                SolveStats {
                    iterations: 0,
                    relative_residual: rel,
                    converged: true,
                },
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution<'s> {
    pub field: SolutionField<'s>,
    pub stats: SolveStats,
    pub system: ReducedSystem,
}

/// Assembles `B` with `coeff` (centroid rule) and the load from `f1`
/// (edge-midpoint rule), eliminates the boundary and solves. A solve that
/// does not converge is returned with `stats.converged == false`.
pub fn solve_dirichlet<'s>(
    space: &'s FeSpace,
    coeff: &CoefficientField,
    f1: &Expr,
    solver: &LinearSolver,
) -> Result<Solution<'s>, FemError> {
    let a = assemble_stiffness(space, coeff, &QuadratureRule::centroid())?;
    let b = assemble_load(space, f1, &QuadratureRule::edge_midpoints())?;
    let system = apply_dirichlet(&a, &b, space)?;
    let (xi, stats) = solve_reduced(&system, solver)?;
    let field = SolutionField::from_free(space, &xi)?;
    Ok(Solution { field, stats, system })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::mesh::build_disc_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_triangle_space() -> FeSpace {
        let nodes = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];
        FeSpace::new(Mesh::from_triangulation(nodes, vec![[0, 1, 2]]).unwrap()).unwrap()
    }

    fn disc(n: usize) -> FeSpace {
        FeSpace::new(build_disc_mesh(n).unwrap()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn unit_triangle_gradients() {
        let s = unit_triangle_space();
        assert_eq!(s.element(0).grads, [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(s.element(0).area, 0.5);
    }

    #[test]
    fn gradients_partition_unity_and_hat_property() {
        let s = disc(25);
        for el in s.elements() {
            let sx: f64 = el.grads.iter().map(|g| g[0]).sum();
            let sy: f64 = el.grads.iter().map(|g| g[1]).sum();
            assert!(sx.abs() < 1e-12 && sy.abs() < 1e-12);
        }
        let nodes = s.mesh().nodes();
        for i in [0, 5, 17] {
            for (j, &p) in nodes.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(close(s.basis_value(i, p), expected, 1e-12));
            }
        }
        assert_eq!(s.n_free(), s.mesh().node_is_boundary().iter().filter(|b| !**b).count());
        assert!(s.free_dofs().iter().all(|&i| !s.mesh().node_is_boundary()[i]));
    }

    #[test]
    fn hexagon_has_one_free_dof() {
        assert_eq!(disc(6).n_free(), 1);
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let el = ElementGeometry::new(
            0,
            [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(2.0, 1e-15)],
        );
        assert!(matches!(el, Err(FemError::DegenerateTriangle { .. })));
    }

    fn reference_monomial(a: u32, b: u32) -> f64 {
        // ∫_ref x^a y^b = a! b! / (a + b + 2)!, normalized by the area 1/2.
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        2.0 * fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn quadrature_exactness() {
        for rule in [
            QuadratureRule::centroid(),
            QuadratureRule::edge_midpoints(),
            QuadratureRule::degree5(),
        ] {
            let total: f64 = rule.points().iter().map(|p| p.1).sum();
            assert!(close(total, 1.0, 1e-14));
            for a in 0..=rule.degree() {
                for b in 0..=rule.degree() - a {
                    let q: f64 = rule
                        .points()
                        .iter()
                        .map(|&(l, w)| w * l[1].powi(a as i32) * l[2].powi(b as i32))
                        .sum();
                    assert!(
                        close(q, reference_monomial(a, b), 1e-12),
                        "deg {} x^{a} y^{b}",
                        rule.degree()
                    );
                }
            }
        }
        assert!(QuadratureRule::new(vec![([1.0, 0.0, 0.0], 0.5)], 0).is_err());
    }

    #[test]
    fn element_stiffness_identity_unit_triangle() {
        let s = unit_triangle_space();
        let k = element_stiffness(&s, 0, &CoefficientField::identity(), &QuadratureRule::centroid()).unwrap();
        let hand = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(k[i][j], hand[i][j], 1e-14));
            }
        }
    }

    #[test]
    fn model_problem_cross_term_placement() {
        let s = unit_triangle_space();
        let coeff = CoefficientField::model_problem();
        let k = element_stiffness(&s, 0, &coeff, &QuadratureRule::centroid()).unwrap();
        let lap = element_stiffness(&s, 0, &CoefficientField::identity(), &QuadratureRule::centroid()).unwrap();
        // Row = test φ3, column = trial φ2: ∫ x ∂xφ2 ∂yφ3 = 1/6.
        assert!(close(k[2][1] - lap[2][1], 1.0 / 6.0, 1e-15));
        assert!(close(k[1][2] - lap[1][2], 0.0, 1e-15));
    }

    #[test]
    fn element_mass_unit_triangle() {
        let m = element_mass(&unit_triangle_space(), 0);
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expected = if i == j { 2.0 } else { 1.0 } / 24.0;
                assert!(close(v, expected, 1e-15));
            }
        }
    }

    #[test]
    fn global_matrix_properties() {
        let s = disc(25);
        let q = QuadratureRule::centroid();
        let k = assemble_stiffness(&s, &CoefficientField::identity(), &q).unwrap();
        for i in 0..k.n_rows() {
            assert!(k.row(i).map(|(_, v)| v).sum::<f64>().abs() < 1e-12);
        }
        assert!(k.asymmetry() <= 1e-13);
        let a = assemble_stiffness(&s, &CoefficientField::model_problem(), &q).unwrap();
        assert!(a.asymmetry() > 1e-3);
        let a5 = assemble_stiffness(&s, &CoefficientField::model_problem(), &QuadratureRule::degree5()).unwrap();
        assert!(a.max_abs_diff(&a5).unwrap() <= 1e-12);

        let m = assemble_mass(&s);
        let total: f64 = m.values().iter().sum();
        assert!(close(total, s.mesh().area(), 1e-12));
        assert!(m.asymmetry() == 0.0);
    }

    fn cholesky_succeeds(a: &DenseMatrix) -> bool {
        let n = a.n_rows();
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
            if d <= 0.0 {
                return false;
            }
            l[(j, j)] = d.sqrt();
            for i in j + 1..n {
                l[(i, j)] = (a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>()) / l[(j, j)];
            }
        }
        true
    }

    #[test]
    fn mass_matrix_is_spd() {
        for n in [6, 12, 25] {
            assert!(cholesky_succeeds(&assemble_mass(&disc(n)).to_dense()));
        }
    }

    #[test]
    fn load_vector_cases() {
        let s = disc(25);
        let q = QuadratureRule::edge_midpoints();
        let b = assemble_load(&s, &Expr::Const(1.0), &q).unwrap();
        let mut patch = vec![0.0; s.n_total()];
        for (t, tri) in s.mesh().triangles().iter().enumerate() {
            for &i in &tri.nodes {
                patch[i] += s.element(t).area / 3.0;
            }
        }
        for i in 0..s.n_total() {
            assert!(close(b[i], patch[i], 1e-14));
        }
        assert!(close(b.iter().sum(), s.mesh().area(), 1e-12));
        assert!(assemble_load(&s, &Expr::Const(0.0), &q)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let s50 = disc(50);
        let b = assemble_load(&s50, &"x*y".parse().unwrap(), &q).unwrap();
        assert!(b.iter().sum::<f64>().abs() <= 1e-10);
    }

    #[test]
    fn dirichlet_elimination() {
        let s = disc(6);
        let a = assemble_stiffness(&s, &CoefficientField::model_problem(), &QuadratureRule::centroid()).unwrap();
        let b = assemble_load(&s, &Expr::Const(4.0), &QuadratureRule::edge_midpoints()).unwrap();
        let red = apply_dirichlet(&a, &b, &s).unwrap();
        assert_eq!(red.matrix.n_rows(), 1);
        assert_eq!(red.free_dofs, vec![0]);

        let s = disc(25);
        let a = assemble_stiffness(&s, &CoefficientField::model_problem(), &QuadratureRule::centroid()).unwrap();
        let b = assemble_load(&s, &"x*y".parse().unwrap(), &QuadratureRule::edge_midpoints()).unwrap();
        let red = apply_dirichlet(&a, &b, &s).unwrap();
        for (r, &gi) in red.free_dofs.iter().enumerate() {
            assert_eq!(red.rhs[r], b[gi]);
            for (c, &gj) in red.free_dofs.iter().enumerate() {
                assert_eq!(red.matrix.get(r, c), a.get(gi, gj));
            }
        }
        let u = SolutionField::from_free(&s, &vec![1.0; s.n_free()]).unwrap();
        for (i, &bnd) in s.mesh().node_is_boundary().iter().enumerate() {
            if bnd {
                assert_eq!(u.values()[i], 0.0);
            }
        }

        let tri = unit_triangle_space();
        let a = assemble_mass(&tri);
        assert_eq!(apply_dirichlet(&a, &[0.0; 3], &tri).unwrap_err(), FemError::EmptySystem);
    }

    #[test]
    fn evaluation_and_interpolation() {
        let s = disc(25);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..s.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = SolutionField::from_free(&s, &vals).unwrap();
        for (i, &p) in s.mesh().nodes().iter().enumerate() {
            assert!(close(u.evaluate(p).unwrap(), u.values()[i], 1e-12));
        }
        assert!(matches!(
            u.evaluate(Point2::new(2.0, 0.0)),
            Err(FemError::OutsideDomain { .. })
        ));

        let affine: Vec<f64> = s.mesh().nodes().iter().map(|p| p.x + p.y).collect();
        let lin = SolutionField::with_trace(&s, affine).unwrap();
        for _ in 0..50 {
            let r = rng.gen_range(0.0..0.95);
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = Point2::new(r * f64::cos(t), r * f64::sin(t));
            assert!(close(lin.evaluate(p).unwrap(), p.x + p.y, 1e-12));
        }

        let zero = interpolate(&Expr::Const(0.0), &s).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let bubble = interpolate(&"1 - x*x - y*y".parse().unwrap(), &s).unwrap();
        assert!(bubble.clamped_nodes().is_empty());
        for (i, &b) in s.mesh().node_is_boundary().iter().enumerate() {
            if b {
                assert!(bubble.values()[i].abs() < 1e-12);
            }
        }
        let xy: Expr = "x*y".parse().unwrap();
        let ixy = interpolate(&xy, &s).unwrap();
        for &i in s.free_dofs() {
            let p = s.mesh().nodes()[i];
            assert_eq!(ixy.values()[i], xy.eval(p.x, p.y).unwrap());
        }
        let trace = interpolate(&"x".parse().unwrap(), &s).unwrap();
        assert!(!trace.clamped_nodes().is_empty());
        assert!(SolutionField::new(&s, trace.values().to_vec()).is_ok());
        let raw: Vec<f64> = s.mesh().nodes().iter().map(|p| p.x).collect();
        assert!(matches!(
            SolutionField::new(&s, raw),
            Err(FemError::NonZeroTrace { .. })
        ));
    }

    /// Independent dense assembly: hat-function coefficients from a 3x3
    /// Vandermonde solve, exact integrals for affine integrands.
    fn brute_force(space: &FeSpace, f1_affine: impl Fn(f64, f64) -> f64) -> (DenseMatrix, Vec<f64>) {
        let mesh = space.mesh();
        let n = mesh.n_nodes();
        let mut a = DenseMatrix::zeros(n, n);
        let mut b = vec![0.0; n];
        for t in 0..mesh.n_triangles() {
            let v = mesh.vertices(t);
            let ids = mesh.triangles()[t].nodes;
            let area = 0.5 * ((v[1].x - v[0].x) * (v[2].y - v[0].y) - (v[2].x - v[0].x) * (v[1].y - v[0].y));
            let vander = DenseMatrix::from_rows(&v.iter().map(|p| vec![1.0, p.x, p.y]).collect::<Vec<_>>());
            let lu = DenseLu::factor(&vander).unwrap();
            let coef: Vec<Vec<f64>> = (0..3)
                .map(|k| {
                    lu.solve(&(0..3).map(|m| if m == k { 1.0 } else { 0.0 }).collect::<Vec<_>>())
                        .unwrap()
                })
                .collect();
            let xbar = (v[0].x + v[1].x + v[2].x) / 3.0;
            for i in 0..3 {
                for j in 0..3 {
                    let (gix, giy) = (coef[i][1], coef[i][2]);
                    let (gjx, gjy) = (coef[j][1], coef[j][2]);
                    a[(ids[i], ids[j])] += area * (gjx * gix + gjy * giy) + area * xbar * gjx * giy;
                    let mass = area * if i == j { 2.0 } else { 1.0 } / 12.0;
                    b[ids[i]] += mass * f1_affine(v[j].x, v[j].y);
                }
            }
        }
        (a, b)
    }

    #[test]
    fn galerkin_consistency_against_brute_force() {
        for n in [6, 8, 12] {
            let s = disc(n);
            let f1: Expr = "2*x - y + 1".parse().unwrap();
            let a = assemble_stiffness(&s, &CoefficientField::model_problem(), &QuadratureRule::centroid()).unwrap();
            let b = assemble_load(&s, &f1, &QuadratureRule::edge_midpoints()).unwrap();
            let red = apply_dirichlet(&a, &b, &s).unwrap();
            let (dense, db) = brute_force(&s, |x, y| 2.0 * x - y + 1.0);
            for (r, &gi) in red.free_dofs.iter().enumerate() {
                assert!(close(red.rhs[r], db[gi], 1e-12));
                for (c, &gj) in red.free_dofs.iter().enumerate() {
                    assert!(close(red.matrix.get(r, c), dense[(gi, gj)], 1e-12));
                }
            }
        }
    }

    #[test]
    fn bilinear_form_matches_quadrature() {
        let s = disc(25);
        let a = assemble_stiffness(&s, &CoefficientField::model_problem(), &QuadratureRule::centroid()).unwrap();
        let q = QuadratureRule::degree5();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let xu: Vec<f64> = (0..s.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xv: Vec<f64> = (0..s.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = SolutionField::from_free(&s, &xu).unwrap();
            let v = SolutionField::from_free(&s, &xv).unwrap();
            let matrix_form = a.bilinear(u.values(), v.values()).unwrap();
            let mut integral = 0.0;
            for t in 0..s.mesh().n_triangles() {
                let (gu, gv) = (u.gradient(t), v.gradient(t));
                for &(bary, w) in q.points() {
                    let p = s.map_point(t, bary);
                    integral += w * s.element(t).area * (gu[0] * gv[0] + p.x * gu[0] * gv[1] + gu[1] * gv[1]);
                }
            }
            assert!(close(matrix_form, integral, 1e-10));
        }
    }

    #[test]
    fn assembly_policies_agree() {
        let s = disc(50);
        let c = CoefficientField::model_problem();
        let q = QuadratureRule::centroid();
        let seq = assemble_stiffness_with(&s, &c, &q, Execution::Sequential).unwrap();
        let par = assemble_stiffness_with(&s, &c, &q, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn coefficient_errors_propagate() {
        let s = disc(12);
        let c = CoefficientField::parse([["1", "log(x)"], ["0", "1"]]).unwrap();
        let err = assemble_stiffness(&s, &c, &QuadratureRule::centroid()).unwrap_err();
        assert!(matches!(err, FemError::Expr(ExprError::Domain { .. })));
    }
}
