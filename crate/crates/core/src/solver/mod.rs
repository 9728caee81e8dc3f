//! Primal-dual interior-point solver for the two nonnegative programs used by
//! the inverse filter:
//!
//! * NNLS: minimize `‖C s − z‖²` subject to `s ⪰ 0`;
//! * L1 ball: minimize `1ᵀs` subject to `s ⪰ 0` and `‖C s − z‖² ≤ δ`.
//!
//! Each Newton step eliminates the dual direction and solves the reduced
//! system `(∇²f₀ + Σ λᵢ∇²fᵢ + Σ (λᵢ/−fᵢ) ∇fᵢ∇fᵢᵀ) Δs = −∇f₀ − (1/t) Σ ∇fᵢ/(−fᵢ)`.
//! The bound constraints contribute a diagonal, the ball constraint a scaled
//! Gram matrix plus a rank-one term handled by Sherman–Morrison, so a step
//! costs one banded Cholesky factorization of `CᵀC`'s band.

mod banded;
mod fit;

pub use banded::{BandedCholesky, BandedSym};
pub use fit::{FitMatrix, StackedToeplitz};

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Barrier growth factor.
    pub mu: f64,
    /// Surrogate duality gap tolerance.
    pub eps: f64,
    /// Dual residual tolerance.
    pub eps_feas: f64,
    pub max_iter: usize,
    /// Armijo factor of the backtracking search.
    pub alpha: f64,
    /// Backtracking shrink factor.
    pub beta: f64,
    /// Re-solve ball steps with the constraint's curvature accounted for.
    /// Without it the iterates crawl along the ball boundary.
    pub curvature_correction: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            mu: 20.0,
            eps: 1e-6,
            eps_feas: 1e-6,
            max_iter: 200,
            alpha: 0.01,
            beta: 0.5,
            curvature_correction: true,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 1.0) {
            return crate::error::config("mu must exceed 1");
        }
        if !(self.eps > 0.0 && self.eps_feas > 0.0) {
            return crate::error::config("tolerances must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) || !(self.beta > 0.0 && self.beta < 1.0) {
            return crate::error::config("backtracking constants out of range");
        }
        if self.max_iter == 0 {
            return crate::error::config("max_iter must be positive");
        }
        Ok(())
    }
}

/// Safety factor of the ratio tests.
const RATIO_SAFETY: f64 = 0.99;
const MIN_STEP: f64 = 1e-12;
const CENTRALITY_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Shape {
    Nnls,
    L1Ball { delta: f64 },
}

/// A fit matrix, target and problem shape, with the Gram band precomputed.
#[derive(Debug, Clone)]
pub struct ConvexProblem {
    fit: FitMatrix,
    target: Vec<f64>,
    gram: BandedSym,
    shape: Shape,
}

impl ConvexProblem {
    pub fn nnls(fit: FitMatrix, target: Vec<f64>) -> Result<Self> {
        if fit.rows() != target.len() {
            return input(format!(
                "fit matrix has {} rows but target has {} entries",
                fit.rows(),
                target.len()
            ));
        }
        if fit.cols() == 0 {
            return input("fit matrix has no columns");
        }
        if !fit.is_nonnegative() || target.iter().any(|&v| !(v >= 0.0)) {
            return input("fit matrix and target must be nonnegative");
        }
        let gram = fit.gram();
        Ok(ConvexProblem {
            fit,
            target,
            gram,
            shape: Shape::Nnls,
        })
    }

    pub fn l1_ball(fit: FitMatrix, target: Vec<f64>, delta: f64) -> Result<Self> {
        Self::nnls(fit, target)?.with_ball(delta)
    }

    /// Same data with the ℓ1/ball shape, sharing the Gram band.
    pub fn with_ball(&self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return input(format!("ball radius {delta} must be finite and nonnegative"));
        }
        Ok(ConvexProblem {
            shape: Shape::L1Ball { delta },
            ..self.clone()
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn fit(&self) -> &FitMatrix {
        &self.fit
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.fit.cols()
    }

    /// Number of inequality constraints.
    pub fn constraints(&self) -> usize {
        match self.shape {
            Shape::Nnls => self.dim(),
            Shape::L1Ball { .. } => self.dim() + 1,
        }
    }

    pub fn residual(&self, s: &[f64]) -> Vec<f64> {
        let mut r = self.fit.apply(s);
        for (ri, zi) in r.iter_mut().zip(&self.target) {
            *ri -= zi;
        }
        r
    }

    pub fn misfit(&self, s: &[f64]) -> f64 {
        self.residual(s).iter().map(|v| v * v).sum()
    }

    pub fn objective(&self, s: &[f64]) -> f64 {
        match self.shape {
            Shape::Nnls => self.misfit(s),
            Shape::L1Ball { .. } => s.iter().sum(),
        }
    }

    /// Constraint values `f_i(s)`; feasible points have all entries < 0.
    pub fn constraint_values(&self, s: &[f64]) -> Vec<f64> {
        let mut f: Vec<f64> = s.iter().map(|v| -v).collect();
        if let Shape::L1Ball { delta } = self.shape {
            f.push(self.misfit(s) - delta);
        }
        f
    }

    fn eval(&self, s: &[f64]) -> Eval {
        let r = self.residual(s);
        let misfit: f64 = r.iter().map(|v| v * v).sum();
        // 2 Cᵀ(Cs − z)
        let fit_grad: Vec<f64> = self.fit.apply_t(&r).iter().map(|v| 2.0 * v).collect();
        let mut f: Vec<f64> = s.iter().map(|v| -v).collect();
        if let Shape::L1Ball { delta } = self.shape {
            f.push(misfit - delta);
        }
        Eval { fit_grad, f }
    }

    fn residuals(&self, s: &[f64], lambda: &[f64], t: f64) -> Option<Residuals> {
        let ev = self.eval(s);
        if ev.f.iter().any(|&v| !(v < 0.0)) {
            return None;
        }
        let p = self.dim();
        let dual: Vec<f64> = match self.shape {
            Shape::Nnls => (0..p).map(|i| ev.fit_grad[i] - lambda[i]).collect(),
            Shape::L1Ball { .. } => (0..p)
                .map(|i| 1.0 - lambda[i] + lambda[p] * ev.fit_grad[i])
                .collect(),
        };
        let cent: Vec<f64> = ev
            .f
            .iter()
            .zip(lambda)
            .map(|(fi, li)| -li * fi - 1.0 / t)
            .collect();
        Some(Residuals { dual, cent, eval: ev })
    }
}

struct Eval {
    fit_grad: Vec<f64>,
    f: Vec<f64>,
}

struct Residuals {
    dual: Vec<f64>,
    cent: Vec<f64>,
    eval: Eval,
}

impl Residuals {
    fn norm(&self) -> f64 {
        self.dual
            .iter()
            .chain(&self.cent)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn dual_norm(&self) -> f64 {
        norm(&self.dual)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Primal/dual iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub ds: Vec<f64>,
    pub dlambda: Vec<f64>,
}

impl Direction {
    pub fn norm(&self) -> f64 {
        norm(&self.ds).hypot(norm(&self.dlambda))
    }
}

/// `η̂ = −f(s)ᵀλ`.
pub fn surrogate_gap(f: &[f64], lambda: &[f64]) -> f64 {
    -f.iter().zip(lambda).map(|(a, b)| a * b).sum::<f64>()
}

/// Newton direction of the perturbed KKT system at barrier parameter `t`.
pub fn pdipm_step(problem: &ConvexProblem, state: &IterateState, t: f64) -> Result<Direction> {
    check_state(problem, state)?;
    let Some(res) = problem.residuals(&state.s, &state.lambda, t) else {
        return input("pdipm_step needs a strictly feasible point");
    };
    newton_direction(problem, state, &res, t)
}

fn newton_direction(
    problem: &ConvexProblem,
    state: &IterateState,
    res: &Residuals,
    t: f64,
) -> Result<Direction> {
    newton_with_normal(problem, state, res, t).map(|(d, _)| d)
}

/// Newton direction plus, for the ball shape, `(B + ρggᵀ)⁻¹g` (the response
/// of `Δs` to a change of the ball's centrality residual).
fn newton_with_normal(
    problem: &ConvexProblem,
    state: &IterateState,
    res: &Residuals,
    t: f64,
) -> Result<(Direction, Option<Vec<f64>>)> {
    let p = problem.dim();
    let s = &state.s;
    let lam = &state.lambda;
    let f = &res.eval.f;

    // bound constraints: f_i = −s_i, ∇f_i = −e_i
    let bound_diag: Vec<f64> = (0..p).map(|i| lam[i] / s[i]).collect();
    let mut rhs: Vec<f64> = (0..p).map(|i| 1.0 / (t * s[i])).collect();

    let (mut system, ball) = match problem.shape {
        Shape::Nnls => {
            for (r, g) in rhs.iter_mut().zip(&res.eval.fit_grad) {
                *r -= g;
            }
            (problem.gram.scaled(2.0), None)
        }
        Shape::L1Ball { .. } => {
            let lb = lam[p];
            let slack = -f[p];
            let g = &res.eval.fit_grad;
            for (r, gi) in rhs.iter_mut().zip(g) {
                *r -= 1.0 + gi / (t * slack);
            }
            (problem.gram.scaled(2.0 * lb), Some((lb / slack, g)))
        }
    };
    system.add_diagonal(&bound_diag);

    let chol = match system.cholesky() {
        Some(c) => c,
        None => {
            let bump = 1e-12 * system.max_diagonal().max(1.0);
            system.add_diagonal(&vec![bump; p]);
            system.cholesky().ok_or_else(|| {
                Error::Solver(format!(
                    "singular KKT system (max diagonal {:.3e})",
                    system.max_diagonal()
                ))
            })?
        }
    };

    // (B + ρ g gᵀ)⁻¹ r = B⁻¹r − ρ B⁻¹g (gᵀB⁻¹r) / (1 + ρ gᵀB⁻¹g)
    let normal: Option<(f64, &[f64], Vec<f64>)> = ball.map(|(rho, g)| {
        let bi_g = chol.solve(g);
        let g_bi_g = dot(g, &bi_g);
        let normal = bi_g.iter().map(|b| b / (1.0 + rho * g_bi_g)).collect();
        (rho, g.as_slice(), normal)
    });
    let full_solve = |r: &[f64]| -> Vec<f64> {
        let mut x = chol.solve(r);
        if let Some((rho, g, normal)) = &normal {
            let coef = rho * dot(g, &x);
            for (xi, ni) in x.iter_mut().zip(normal) {
                *xi -= coef * ni;
            }
        }
        x
    };
    let mut ds = full_solve(&rhs);
    // one refinement pass; the diagonal spans many decades near the optimum
    let mut back = system.mul_vec(&ds);
    if let Some((rho, g, _)) = &normal {
        let c = rho * dot(g, &ds);
        for (bi, gi) in back.iter_mut().zip(g.iter()) {
            *bi += c * gi;
        }
    }
    let resid: Vec<f64> = rhs.iter().zip(&back).map(|(r, b)| r - b).collect();
    for (d, e) in ds.iter_mut().zip(full_solve(&resid)) {
        *d += e;
    }
    let normal = normal.map(|(_, _, n)| n);

    // Δλ_i = (r_cent,i − λ_i ∇f_iᵀΔs) / f_i
    let mut dlambda: Vec<f64> = (0..p)
        .map(|i| (res.cent[i] + lam[i] * ds[i]) / f[i])
        .collect();
    if let Shape::L1Ball { .. } = problem.shape {
        let g_ds: f64 = res.eval.fit_grad.iter().zip(&ds).map(|(a, b)| a * b).sum();
        dlambda.push((res.cent[p] - lam[p] * g_ds) / f[p]);
    }
    if ds.iter().chain(&dlambda).any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite Newton direction".into()));
    }
    Ok((Direction { ds, dlambda }, normal))
}

/// Newton direction with the ball constraint's curvature folded back in:
/// the linearized ball value misses `ΔsᵀCᵀCΔs`, which is charged to its
/// centrality residual and the step re-solved along the stored normal.
fn corrected_direction(
    problem: &ConvexProblem,
    state: &IterateState,
    res: &Residuals,
    t: f64,
) -> Result<Direction> {
    let (dir, normal) = newton_with_normal(problem, state, res, t)?;
    let Some(normal) = normal else {
        return Ok(dir);
    };
    let p = problem.dim();
    let lam = &state.lambda;
    let f = &res.eval.f;
    let q: f64 = dir.ds.iter().zip(problem.gram.mul_vec(&dir.ds)).map(|(a, b)| a * b).sum();
    let slack = -f[p];
    let shift = lam[p] * q / slack;
    let ds: Vec<f64> = dir.ds.iter().zip(&normal).map(|(d, n)| d - shift * n).collect();
    let mut dlambda: Vec<f64> = (0..p)
        .map(|i| (res.cent[i] + lam[i] * ds[i]) / f[i])
        .collect();
    let g_ds: f64 = res.eval.fit_grad.iter().zip(&ds).map(|(a, b)| a * b).sum();
    dlambda.push((res.cent[p] - lam[p] * (g_ds + q)) / f[p]);
    if ds.iter().chain(&dlambda).any(|v| !v.is_finite()) {
        return Ok(dir);
    }
    Ok(Direction { ds, dlambda })
}

/// Largest step in (0, 1] keeping λ ⪰ 0 and all constraints strictly
/// satisfied, backtracked until the KKT residual norm shrinks by `1 − αζ`.
pub fn line_search(
    problem: &ConvexProblem,
    state: &IterateState,
    dir: &Direction,
    t: f64,
    params: &SolverParams,
) -> Result<f64> {
    check_state(problem, state)?;
    let Some(res) = problem.residuals(&state.s, &state.lambda, t) else {
        return input("line search needs a strictly feasible point");
    };
    search(problem, state, dir, &res, t, params).map(|(z, _)| z)
}

fn step_cap(state: &IterateState, dir: &Direction) -> f64 {
    let mut cap: f64 = 1.0;
    for (l, dl) in state.lambda.iter().zip(&dir.dlambda) {
        if *dl < 0.0 {
            cap = cap.min(RATIO_SAFETY * -l / dl);
        }
    }
    for (s, ds) in state.s.iter().zip(&dir.ds) {
        if *ds < 0.0 {
            cap = cap.min(RATIO_SAFETY * -s / ds);
        }
    }
    cap
}

fn search(
    problem: &ConvexProblem,
    state: &IterateState,
    dir: &Direction,
    res: &Residuals,
    t: f64,
    params: &SolverParams,
) -> Result<(f64, Option<Residuals>)> {
    if dir.ds.iter().chain(&dir.dlambda).all(|&v| v == 0.0) {
        return Ok((1.0, None));
    }
    let base = res.norm();
    let mut zeta = step_cap(state, dir);
    loop {
        if zeta < MIN_STEP {
            return Err(Error::Solver(format!(
                "line search step underflow (residual {base:.3e}, t = {t:.3e})"
            )));
        }
        let s: Vec<f64> = axpy(&state.s, zeta, &dir.ds);
        let lam: Vec<f64> = axpy(&state.lambda, zeta, &dir.dlambda);
        if let Some(new_res) = problem.residuals(&s, &lam, t) {
            if new_res.norm() <= (1.0 - params.alpha * zeta) * base {
                return Ok((zeta, Some(new_res)));
            }
        }
        zeta *= params.beta;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

fn check_state(problem: &ConvexProblem, state: &IterateState) -> Result<()> {
    if state.s.len() != problem.dim() || state.lambda.len() != problem.constraints() {
        return input(format!(
            "iterate has {}/{} entries, problem needs {}/{}",
            state.s.len(),
            state.lambda.len(),
            problem.dim(),
            problem.constraints()
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIter,
    InfeasibleStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gap: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolverStatus,
}

/// Runs the primal-dual interior-point iteration from a strictly feasible
/// start.
pub fn solve(
    problem: &ConvexProblem,
    params: &SolverParams,
    s0: &[f64],
    lambda0: &[f64],
) -> Result<SolverResult> {
    params.validate()?;
    let mut state = IterateState {
        s: s0.to_vec(),
        lambda: lambda0.to_vec(),
    };
    check_state(problem, &state)?;
    if state.lambda.iter().any(|&l| !(l > 0.0)) {
        return input("initial dual variables must be strictly positive");
    }
    if state.s.iter().any(|&v| !(v > 0.0)) {
        return input("initial point must be strictly positive");
    }
    let m = problem.constraints() as f64;
    let f0 = problem.constraint_values(&state.s);
    if f0.iter().any(|&v| !(v < 0.0)) {
        return Ok(SolverResult {
            objective: problem.objective(&state.s),
            gap: f64::NAN,
            dual_residual: f64::NAN,
            s: state.s,
            lambda: state.lambda,
            iterations: 0,
            status: SolverStatus::InfeasibleStart,
        });
    }

    let mut best: Option<(f64, SolverResult)> = None;
    for iter in 0..=params.max_iter {
        let f = problem.constraint_values(&state.s);
        let gap = surrogate_gap(&f, &state.lambda);
        let t = params.mu * m / gap.max(f64::MIN_POSITIVE);
        let res = problem
            .residuals(&state.s, &state.lambda, t)
            .ok_or_else(|| Error::Solver("iterate left the feasible region".into()))?;
        let dual = res.dual_norm();

        let snapshot = |status| SolverResult {
            s: state.s.clone(),
            lambda: state.lambda.clone(),
            gap,
            dual_residual: dual,
            objective: problem.objective(&state.s),
            iterations: iter,
            status,
        };
        if gap <= params.eps && dual <= params.eps_feas && centered(&f, &state.lambda, gap) {
            return Ok(snapshot(SolverStatus::Converged));
        }
        let score = (gap / params.eps).max(dual / params.eps_feas);
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, snapshot(SolverStatus::MaxIter)));
        }
        if iter == params.max_iter {
            break;
        }

        let dir = if params.curvature_correction {
            corrected_direction(problem, &state, &res, t)?
        } else {
            newton_direction(problem, &state, &res, t)?
        };
        let zeta = match search(problem, &state, &dir, &res, t, params) {
            Ok((z, _)) => z,
            // Stalling at the floating-point floor: report the best iterate.
            Err(_) if best.is_some() => break,
            Err(e) => return Err(e),
        };
        state.s = axpy(&state.s, zeta, &dir.ds);
        state.lambda = axpy(&state.lambda, zeta, &dir.dlambda);
    }
    Ok(best.expect("at least one iterate evaluated").1)
}

// Every complementarity product within the average share of the gap.
fn centered(f: &[f64], lambda: &[f64], gap: f64) -> bool {
    let share = gap / f.len() as f64 + CENTRALITY_SLACK;
    f.iter().zip(lambda).all(|(a, b)| (a * b).abs() <= share)
}

/// Nonnegative least squares `min ‖C s − z‖², s ⪰ 0`.
pub fn solve_nnls(
    problem: &ConvexProblem,
    params: &SolverParams,
    s0: &[f64],
    lambda0: &[f64],
) -> Result<SolverResult> {
    if problem.shape != Shape::Nnls {
        return input("solve_nnls needs an NNLS problem");
    }
    solve(problem, params, s0, lambda0)
}

/// `min 1ᵀs` subject to `s ⪰ 0`, `‖C s − z‖² ≤ δ`.
pub fn solve_l1_ball(
    problem: &ConvexProblem,
    params: &SolverParams,
    s0: &[f64],
    lambda0: &[f64],
) -> Result<SolverResult> {
    if !matches!(problem.shape, Shape::L1Ball { .. }) {
        return input("solve_l1_ball needs an ℓ1-ball problem");
    }
    solve(problem, params, s0, lambda0)
}

/// Dual residual `∇f₀ + Df(s)ᵀλ` at a point.
pub fn dual_residual(problem: &ConvexProblem, s: &[f64], lambda: &[f64]) -> Vec<f64> {
    let ev = problem.eval(s);
    let p = problem.dim();
    match problem.shape {
        Shape::Nnls => (0..p).map(|i| ev.fit_grad[i] - lambda[i]).collect(),
        Shape::L1Ball { .. } => (0..p)
            .map(|i| 1.0 - lambda[i] + lambda[p] * ev.fit_grad[i])
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: Vec<Vec<f64>>) -> FitMatrix {
        FitMatrix::dense(rows).unwrap()
    }

    fn eye(n: usize) -> FitMatrix {
        dense((0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect())
    }

    fn run_nnls(fit: FitMatrix, z: Vec<f64>) -> SolverResult {
        let p = fit.cols();
        let prob = ConvexProblem::nnls(fit, z).unwrap();
        solve_nnls(&prob, &SolverParams::default(), &vec![1.0; p], &vec![10.0; p]).unwrap()
    }

    #[test]
    fn nnls_small_cases() {
        let r = run_nnls(eye(2), vec![2.0, 3.0]);
        assert_eq!(r.status, SolverStatus::Converged);
        assert!((r.s[0] - 2.0).abs() < 1e-6 && (r.s[1] - 3.0).abs() < 1e-6);

        let r = run_nnls(dense(vec![vec![1.0], vec![1.0]]), vec![1.0, 3.0]);
        assert!((r.s[0] - 2.0).abs() < 1e-6);

        let r = run_nnls(dense(vec![vec![2.0, 0.0], vec![0.0, 1.0]]), vec![4.0, 3.0]);
        assert!((r.s[0] - 2.0).abs() < 1e-6 && (r.s[1] - 3.0).abs() < 1e-6);
        assert!(r.gap <= 1e-6 && r.dual_residual <= 1e-6);
    }

    #[test]
    fn l1_ball_small_cases() {
        let params = SolverParams::default();
        let prob = ConvexProblem::l1_ball(eye(2), vec![1.0, 1.0], 1.0).unwrap();
        let r = solve_l1_ball(&prob, &params, &[0.9, 0.9], &[1.0; 3]).unwrap();
        let expect = 1.0 - 0.5f64.sqrt();
        assert_eq!(r.status, SolverStatus::Converged);
        assert!((r.s[0] - expect).abs() < 1e-5 && (r.s[1] - expect).abs() < 1e-5);

        let prob = ConvexProblem::l1_ball(eye(2), vec![1.0, 1.0], 2.5).unwrap();
        let r = solve_l1_ball(&prob, &params, &[0.9, 0.9], &[1.0; 3]).unwrap();
        assert!(r.s.iter().all(|&v| v.abs() < 1e-5));

        let prob = ConvexProblem::l1_ball(eye(1), vec![3.0], 1.0).unwrap();
        let r = solve_l1_ball(&prob, &params, &[3.0], &[1.0; 2]).unwrap();
        assert!((r.s[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn infeasible_start_is_reported() {
        let prob = ConvexProblem::l1_ball(eye(2), vec![1.0, 1.0], 0.1).unwrap();
        let r = solve_l1_ball(&prob, &SolverParams::default(), &[0.1, 0.1], &[1.0; 3]).unwrap();
        assert_eq!(r.status, SolverStatus::InfeasibleStart);
    }

    #[test]
    fn dimension_errors() {
        assert!(ConvexProblem::nnls(eye(2), vec![1.0]).is_err());
        let prob = ConvexProblem::nnls(eye(2), vec![1.0, 1.0]).unwrap();
        let p = SolverParams::default();
        assert!(matches!(solve_nnls(&prob, &p, &[1.0], &[1.0, 1.0]), Err(Error::Input(_))));
        assert!(solve_nnls(&prob, &p, &[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(solve_l1_ball(&prob, &p, &[1.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(ConvexProblem::nnls(dense(vec![vec![-1.0]]), vec![1.0]).is_err());
    }

    #[test]
    fn surrogate_gap_and_barrier_parameter() {
        let gap = surrogate_gap(&[-1.0, -1.0], &[1.0, 1.0]);
        assert_eq!(gap, 2.0);
        assert_eq!(20.0 * 2.0 / gap, 20.0);
        assert_eq!(surrogate_gap(&[-1.0, -3.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn line_search_ratio_tests() {
        let params = SolverParams::default();
        let prob = ConvexProblem::nnls(eye(1), vec![1.0]).unwrap();
        let state = IterateState { s: vec![1.0], lambda: vec![1.0] };
        let zero = Direction { ds: vec![0.0], dlambda: vec![0.0] };
        assert_eq!(line_search(&prob, &state, &zero, 1.0, &params).unwrap(), 1.0);

        let dual_cap = Direction { ds: vec![0.0], dlambda: vec![-2.0] };
        assert!(step_cap(&state, &dual_cap) <= 0.99 * 0.5 + 1e-15);

        let near = IterateState { s: vec![0.1], lambda: vec![1.0] };
        let primal = Direction { ds: vec![-1.0], dlambda: vec![0.0] };
        assert!(step_cap(&near, &primal) < 0.1);
    }

    #[test]
    fn step_vanishes_at_l1_optimum() {
        let prob = ConvexProblem::l1_ball(eye(2), vec![1.0, 1.0], 1.0).unwrap();
        let t = 1e12;
        // central-path point: fixed-point iteration on the perturbed KKT system
        let (mut s, mut lb, mut lball) = (1.0 - 0.5f64.sqrt(), 0.0, 1.0);
        for _ in 0..50 {
            lb = 1.0 / (t * s);
            lball = (1.0 - lb) / (2.0 * (1.0 - s));
            let slack = 1.0 / (t * lball);
            s = 1.0 - ((1.0 - slack) / 2.0).sqrt();
        }
        let state = IterateState { s: vec![s, s], lambda: vec![lb, lb, lball] };
        let dir = pdipm_step(&prob, &state, t).unwrap();
        assert!(dir.norm() <= 1e-8, "step norm {}", dir.norm());
    }

    fn newton_full(prob: &ConvexProblem, st: &IterateState, t: f64) -> IterateState {
        let d = pdipm_step(prob, st, t).unwrap();
        IterateState { s: axpy(&st.s, 1.0, &d.ds), lambda: axpy(&st.lambda, 1.0, &d.dlambda) }
    }

    fn distance(a: &IterateState, b: &IterateState) -> f64 {
        let ds: Vec<f64> = a.s.iter().zip(&b.s).map(|(x, y)| x - y).collect();
        let dl: Vec<f64> = a.lambda.iter().zip(&b.lambda).map(|(x, y)| x - y).collect();
        norm(&ds).hypot(norm(&dl))
    }

    fn central_point(prob: &ConvexProblem, t: f64) -> IterateState {
        let p = prob.dim();
        let mut st = IterateState { s: vec![1.0; p], lambda: vec![1.0; prob.constraints()] };
        let params = SolverParams::default();
        for _ in 0..200 {
            let res = prob.residuals(&st.s, &st.lambda, t).unwrap();
            let dir = newton_direction(prob, &st, &res, t).unwrap();
            let Ok((z, _)) = search(prob, &st, &dir, &res, t, &params) else { break };
            st.s = axpy(&st.s, z, &dir.ds);
            st.lambda = axpy(&st.lambda, z, &dir.dlambda);
        }
        st
    }

    #[test]
    fn newton_converges_quadratically_near_interior_optimum() {
        let fit = dense(vec![vec![2.0, 1.0], vec![1.0, 3.0]]);
        let prob = ConvexProblem::nnls(fit, vec![3.0, 4.0]).unwrap();
        let t = 1e3;
        let center = central_point(&prob, t);
        let mut st = IterateState {
            s: center.s.iter().map(|v| v + 0.02).collect(),
            lambda: center.lambda.iter().map(|v| v * 1.02).collect(),
        };
        let mut errs = vec![distance(&st, &center)];
        for _ in 0..3 {
            st = newton_full(&prob, &st, t);
            errs.push(distance(&st, &center));
        }
        for w in errs.windows(2) {
            assert!(w[1] <= 10.0 * w[0] * w[0] + 1e-13, "errors {errs:?}");
        }
        assert!(errs[2] < 1e-5, "errors {errs:?}");
    }

    #[test]
    fn central_path_gap_bound() {
        let prob = ConvexProblem::nnls(eye(2), vec![2.0, 3.0]).unwrap();
        let t = 1e8;
        let c = central_point(&prob, t);
        // optimum value is 0; the central point is within m/t of it
        assert!(prob.objective(&c.s) <= 2.0 / t + 1e-15);
        assert!((c.s[0] - 2.0).abs() < 1e-6 && (c.s[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn l1_converged_gap_and_kkt_certificate() {
        let prob = ConvexProblem::l1_ball(eye(2), vec![1.0, 1.0], 1.0).unwrap();
        let params = SolverParams::default();
        let r = solve_l1_ball(&prob, &params, &[0.9, 0.9], &[1.0; 3]).unwrap();
        assert!(r.gap <= 1e-6);
        let f = prob.constraint_values(&r.s);
        let m = f.len() as f64;
        for (fi, li) in f.iter().zip(&r.lambda) {
            assert!((li * fi).abs() <= r.gap / m + 1e-8);
        }
        assert!(norm(&dual_residual(&prob, &r.s, &r.lambda)) <= 1e-6);
    }

    #[test]
    fn solves_are_deterministic() {
        let fit = FitMatrix::toeplitz(vec![vec![1.0, 0.6, 0.2], vec![0.8, 0.4]], 12).unwrap();
        let z: Vec<f64> = (0..24).map(|i| ((i * 7 % 5) as f64) * 0.3).collect();
        let prob = ConvexProblem::nnls(fit, z).unwrap();
        let p = SolverParams::default();
        let a = solve_nnls(&prob, &p, &[1.0; 12], &[10.0; 12]).unwrap();
        let b = solve_nnls(&prob, &p, &[1.0; 12], &[10.0; 12]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.status, SolverStatus::Converged);
    }
}
