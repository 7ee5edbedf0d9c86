//! Numerical constants behind the Lax–Milgram argument for the model
//! operator: ellipticity θ, the discrete Poincaré constant C_p, coercivity
//! β = θ/(C_p + 1), continuity C, and the a-priori stability bound.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::fem::{
    apply_dirichlet, assemble_mass, assemble_stiffness_with, CoefficientField, FeSpace, FemError, QuadratureRule,
    SolutionField,
};
use crate::linalg::{generalized_eig_smallest, LinalgError, SparseCsr};
use crate::mesh::Mesh;
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WellPosedError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Default continuity constant for the model operator: |x| ≤ 1 on the disc
/// gives |B[u,v]| ≤ 2‖∇u‖‖∇v‖.
pub const MODEL_CONTINUITY: f64 = 2.0;

const EIG_TOL: f64 = 1e-12;
const BOUND_SLACK: f64 = 1e-12;

/// `(S₁₁, det S)` for the symmetric part `S` of the coefficient matrix at
/// `(x, y)`.
pub fn discriminants(coeff: &CoefficientField, x: f64, y: f64) -> Result<(f64, f64), ExprError> {
    let s = symmetric_part(coeff.eval(x, y)?);
    Ok((s[0][0], s[0][0] * s[1][1] - s[0][1] * s[1][0]))
}

fn symmetric_part(c: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let off = 0.5 * (c[0][1] + c[1][0]);
    [[c[0][0], off], [off, c[1][1]]]
}

fn min_eigenvalue(s: [[f64; 2]; 2]) -> f64 {
    let mean = 0.5 * (s[0][0] + s[1][1]);
    let half_diff = 0.5 * (s[0][0] - s[1][1]);
    mean - half_diff.hypot(s[0][1])
}

/// Smallest eigenvalue of the symmetric coefficient part, minimized over all
/// nodes and triangle centroids. A value ≤ 0 means the operator is not
/// uniformly elliptic on the sampled set.
pub fn ellipticity_theta(coeff: &CoefficientField, mesh: &Mesh) -> Result<f64, ExprError> {
    let centroids = (0..mesh.n_triangles()).map(|t| mesh.centroid(t));
    let mut theta = f64::INFINITY;
    for p in mesh.nodes().iter().copied().chain(centroids) {
        theta = theta.min(min_eigenvalue(symmetric_part(coeff.eval(p.x, p.y)?)));
    }
    Ok(theta)
}

/// Reduced Laplacian stiffness and mass matrices over the interior nodes.
pub fn reduced_laplace_and_mass(space: &FeSpace) -> Result<(SparseCsr, SparseCsr), WellPosedError> {
    let k = assemble_stiffness_with(
        space,
        &CoefficientField::identity(),
        &QuadratureRule::centroid(),
        Execution::default(),
    )?;
    let m = assemble_mass(space);
    let zero = vec![0.0; space.n_total()];
    let k = apply_dirichlet(&k, &zero, space)?.matrix;
    let m = apply_dirichlet(&m, &zero, space)?.matrix;
    Ok((k, m))
}

/// `C_p = 1/λ_min` of the discrete Dirichlet Laplacian `K v = λ M v`.
pub fn poincare_constant(space: &FeSpace) -> Result<f64, WellPosedError> {
    let (k, m) = reduced_laplace_and_mass(space)?;
    poincare_from_matrices(&k, &m)
}

pub fn poincare_from_matrices(k_lap: &SparseCsr, m: &SparseCsr) -> Result<f64, WellPosedError> {
    let pair = generalized_eig_smallest(k_lap, m, EIG_TOL)?;
    Ok(1.0 / pair.lambda)
}

pub fn coercivity_beta(theta: f64, c_p: f64) -> Result<f64, WellPosedError> {
    if theta.is_nan() || theta <= 0.0 || c_p.is_nan() || c_p < 0.0 || !theta.is_finite() || !c_p.is_finite() {
        return Err(WellPosedError::Argument(format!(
            "coercivity needs theta > 0 and c_p >= 0 (got theta = {theta}, c_p = {c_p})"
        )));
    }
    Ok(theta / (c_p + 1.0))
}

/// Outcome of the sampled coercivity and continuity checks.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub trials: usize,
    pub seed: u64,
    pub coercive_ok: bool,
    pub continuity_ok: bool,
    /// Smallest observed `B[u,u] / ‖u‖²_{H¹}`.
    pub min_coercive_ratio: f64,
    /// Largest observed `|B[u,v]| / (‖u‖_{H¹}‖v‖_{H¹})`.
    pub max_continuity_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCheck {
    pub coercive_ok: bool,
    pub continuity_ok: bool,
    pub coercive_ratio: f64,
    pub continuity_ratio: f64,
}

fn check_dims(a_b: &SparseCsr, k_lap: &SparseCsr, m: &SparseCsr) -> Result<usize, WellPosedError> {
    let n = a_b.n_rows();
    for (name, mat) in [("A_B", a_b), ("K", k_lap), ("M", m)] {
        if mat.n_rows() != n || mat.n_cols() != n {
            return Err(WellPosedError::DimensionMismatch(format!(
                "{name} is {}x{}, expected {n}x{n}",
                mat.n_rows(),
                mat.n_cols()
            )));
        }
    }
    Ok(n)
}

/// Coercivity for `u` and continuity for the pair `(u, v)`.
pub fn check_pair(
    a_b: &SparseCsr,
    k_lap: &SparseCsr,
    m: &SparseCsr,
    beta: f64,
    continuity_c: f64,
    u: &[f64],
    v: &[f64],
) -> Result<PairCheck, WellPosedError> {
    let h1 = |w: &[f64]| -> Result<f64, LinalgError> { Ok(k_lap.bilinear(w, w)? + m.bilinear(w, w)?) };
    let buu = a_b.bilinear(u, u)?;
    let buv = a_b.bilinear(u, v)?;
    let (nu, nv) = (h1(u)?, h1(v)?);
    let coercive_scale = buu.abs().max(beta * nu);
    let coercive_ok = buu >= beta * nu - BOUND_SLACK * coercive_scale;
    let bound = continuity_c * nu.sqrt() * nv.sqrt();
    let continuity_ok = buv.abs() <= bound + BOUND_SLACK * buv.abs().max(bound);
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::NAN };
    Ok(PairCheck {
        coercive_ok,
        continuity_ok,
        coercive_ratio: ratio(buu, nu),
        continuity_ratio: ratio(buv.abs(), (nu * nv).sqrt()),
    })
}

/// Random-field check of `B[u,u] ≥ β‖u‖²_{H¹}` and
/// `|B[u,v]| ≤ C‖u‖_{H¹}‖v‖_{H¹}` over reduced coefficient vectors. Trial
/// `i` draws from its own ChaCha stream, so results do not depend on the
/// execution policy.
#[allow(clippy::too_many_arguments)]
pub fn check_bilinear_bounds(
    a_b: &SparseCsr,
    k_lap: &SparseCsr,
    m: &SparseCsr,
    beta: f64,
    continuity_c: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundsReport, WellPosedError> {
    check_bilinear_bounds_with(a_b, k_lap, m, beta, continuity_c, trials, seed, Execution::default())
}

#[allow(clippy::too_many_arguments)]
pub fn check_bilinear_bounds_with(
    a_b: &SparseCsr,
    k_lap: &SparseCsr,
    m: &SparseCsr,
    beta: f64,
    continuity_c: f64,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<BoundsReport, WellPosedError> {
    let n = check_dims(a_b, k_lap, m)?;
    let results = exec.try_map_range(trials, |trial| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        check_pair(a_b, k_lap, m, beta, continuity_c, &u, &v)
    })?;
    let mut report = BoundsReport {
        trials,
        seed,
        coercive_ok: true,
        continuity_ok: true,
        min_coercive_ratio: f64::INFINITY,
        max_continuity_ratio: 0.0,
    };
    for r in results {
        report.coercive_ok &= r.coercive_ok;
        report.continuity_ok &= r.continuity_ok;
        if !r.coercive_ratio.is_nan() {
            report.min_coercive_ratio = report.min_coercive_ratio.min(r.coercive_ratio);
        }
        if !r.continuity_ratio.is_nan() {
            report.max_continuity_ratio = report.max_continuity_ratio.max(r.continuity_ratio);
        }
    }
    Ok(report)
}

/// `‖f‖_{L²}` over the mesh by quadrature.
pub fn l2_norm(space: &FeSpace, f: &Expr, quad: &QuadratureRule) -> Result<f64, ExprError> {
    let mut sum = 0.0;
    for t in 0..space.mesh().n_triangles() {
        let area = space.element(t).area;
        for &(bary, w) in quad.points() {
            let p = space.map_point(t, bary);
            let v = f.eval(p.x, p.y)?;
            sum += w * area * v * v;
        }
    }
    Ok(sum.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub bound_ok: bool,
    /// `‖u_h‖_{H¹}` (full norm).
    pub lhs: f64,
    /// `(C_p/β)‖f₁‖_{L²}`.
    pub rhs: f64,
    /// `(√C_p/β)‖f₁‖_{L²}`, from the Cauchy–Schwarz/Poincaré chain.
    pub rhs_sqrt_cp: f64,
    pub sqrt_cp_ok: bool,
    /// `‖∇u_h‖_{L²}`.
    pub seminorm: f64,
}

/// Compares `‖u_h‖_{H¹}` with `(C_p/β)‖f₁‖_{L²}`, where `‖f₁‖_{L²}` uses
/// the degree-5 rule. `k_lap` and `m` are the reduced matrices of `u`'s space.
pub fn stability_check(
    u: &SolutionField<'_>,
    f1: &Expr,
    c_p: f64,
    beta: f64,
    k_lap: &SparseCsr,
    m: &SparseCsr,
) -> Result<StabilityReport, WellPosedError> {
    let space = u.space();
    let n = space.n_free();
    if k_lap.n_rows() != n || m.n_rows() != n {
        return Err(WellPosedError::DimensionMismatch(format!(
            "matrices have {} rows but the field's space has {n} interior nodes",
            k_lap.n_rows()
        )));
    }
    let xi = u.free_values();
    let semi_sq = k_lap.bilinear(&xi, &xi)?.max(0.0);
    let lhs = (semi_sq + m.bilinear(&xi, &xi)?.max(0.0)).sqrt();
    let f_norm = l2_norm(space, f1, &QuadratureRule::degree5())?;
    let rhs = c_p / beta * f_norm;
    let rhs_sqrt_cp = c_p.sqrt() / beta * f_norm;
    Ok(StabilityReport {
        bound_ok: lhs <= rhs * (1.0 + 1e-10),
        lhs,
        rhs,
        rhs_sqrt_cp,
        sqrt_cp_ok: lhs <= rhs_sqrt_cp * (1.0 + 1e-10),
        seminorm: semi_sq.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub continuity_c: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            continuity_c: MODEL_CONTINUITY,
            trials: 100,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WellPosednessReport {
    pub theta: f64,
    pub c_p: f64,
    pub beta: f64,
    pub continuity_c: f64,
    pub elliptic: bool,
    pub coercive_check_passed: bool,
    pub continuity_check_passed: bool,
    pub bounds: Option<BoundsReport>,
    pub stability: Option<StabilityReport>,
}

impl WellPosednessReport {
    /// Derives `beta` and `elliptic` from `theta` and `c_p`.
    pub fn new(theta: f64, c_p: f64, continuity_c: f64) -> Self {
        WellPosednessReport {
            theta,
            c_p,
            beta: theta / (c_p + 1.0),
            continuity_c,
            elliptic: theta > 0.0,
            coercive_check_passed: false,
            continuity_check_passed: false,
            bounds: None,
            stability: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.elliptic
            && self.coercive_check_passed
            && self.continuity_check_passed
            && self.stability.is_none_or(|s| s.bound_ok)
    }

    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        let mut kv = vec![
            ("theta", format!("{:.12}", self.theta)),
            ("c_p", format!("{:.12}", self.c_p)),
            ("beta", format!("{:.12}", self.beta)),
            ("continuity_c", format!("{}", self.continuity_c)),
            ("elliptic", self.elliptic.to_string()),
            ("coercive_check_passed", self.coercive_check_passed.to_string()),
            ("continuity_check_passed", self.continuity_check_passed.to_string()),
        ];
        if let Some(b) = &self.bounds {
            kv.push(("trials", b.trials.to_string()));
            kv.push(("seed", b.seed.to_string()));
            kv.push(("min_coercive_ratio", format!("{:.12}", b.min_coercive_ratio)));
            kv.push(("max_continuity_ratio", format!("{:.12}", b.max_continuity_ratio)));
        }
        if let Some(s) = &self.stability {
            kv.push(("stability_lhs", format!("{:.12e}", s.lhs)));
            kv.push(("stability_rhs", format!("{:.12e}", s.rhs)));
            kv.push(("stability_bound_ok", s.bound_ok.to_string()));
            kv.push(("stability_rhs_sqrt_cp", format!("{:.12e}", s.rhs_sqrt_cp)));
            kv.push(("stability_sqrt_cp_ok", s.sqrt_cp_ok.to_string()));
            kv.push(("stability_seminorm", format!("{:.12e}", s.seminorm)));
        }
        kv.push(("passed", self.passed().to_string()));
        kv
    }

    pub fn to_key_values(&self) -> String {
        self.key_values().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

impl fmt::Display for WellPosednessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yn = |b: bool| if b { "yes" } else { "NO" };
        writeln!(
            f,
            "ellipticity theta     {:.6}  (elliptic: {})",
            self.theta,
            yn(self.elliptic)
        )?;
        writeln!(f, "Poincare constant C_p {:.6}", self.c_p)?;
        writeln!(f, "coercivity beta       {:.6}", self.beta)?;
        writeln!(f, "continuity C          {}", self.continuity_c)?;
        if let Some(b) = &self.bounds {
            writeln!(
                f,
                "coercivity check      {}  (min B[u,u]/|u|^2 = {:.6} over {} trials, seed {})",
                yn(b.coercive_ok),
                b.min_coercive_ratio,
                b.trials,
                b.seed
            )?;
            writeln!(
                f,
                "continuity check      {}  (max |B[u,v]|/(|u||v|) = {:.6})",
                yn(b.continuity_ok),
                b.max_continuity_ratio
            )?;
        }
        if let Some(s) = &self.stability {
            writeln!(
                f,
                "stability             {}  (|u|_H1 = {:.6e} <= {:.6e}; with sqrt(C_p): {:.6e}, {}; seminorm {:.6e})",
                yn(s.bound_ok),
                s.lhs,
                s.rhs,
                s.rhs_sqrt_cp,
                yn(s.sqrt_cp_ok),
                s.seminorm
            )?;
        }
        write!(
            f,
            "verdict               {}",
            if self.passed() { "well-posed" } else { "FAILED" }
        )
    }
}

/// Full analysis of `coeff` on `space`. When `solved` is given as
/// `(u_h, f1)` the stability bound is checked too.
pub fn analyze(
    space: &FeSpace,
    coeff: &CoefficientField,
    solved: Option<(&SolutionField<'_>, &Expr)>,
    opts: &AnalysisOptions,
) -> Result<WellPosednessReport, WellPosedError> {
    let theta = ellipticity_theta(coeff, space.mesh())?;
    let (k, m) = reduced_laplace_and_mass(space)?;
    let c_p = poincare_from_matrices(&k, &m)?;
    let mut report = WellPosednessReport::new(theta, c_p, opts.continuity_c);
    if !report.elliptic {
        log::warn!("coefficients are not elliptic on the mesh (theta = {theta})");
        return Ok(report);
    }
    let a = assemble_stiffness_with(space, coeff, &QuadratureRule::centroid(), Execution::default())?;
    let a = apply_dirichlet(&a, &vec![0.0; space.n_total()], space)?.matrix;
    let bounds = check_bilinear_bounds(&a, &k, &m, report.beta, opts.continuity_c, opts.trials, opts.seed)?;
    report.coercive_check_passed = bounds.coercive_ok;
    report.continuity_check_passed = bounds.continuity_ok;
    report.bounds = Some(bounds);
    if let Some((u, f1)) = solved {
        report.stability = Some(stability_check(u, f1, c_p, report.beta, &k, &m)?);
    }
    Ok(report)
}
