use ctf_dereverb::solver::FitMatrix;
use ctf_dereverb::solver::{
    dual_residual, solve_l1_ball, solve_nnls, ConvexProblem, SolverParams, SolverResult,
    SolverStatus,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn misfit(c: &[Vec<f64>], z: &[f64], s: &[f64]) -> f64 {
    c.iter()
        .zip(z)
        .map(|(row, zi)| (row.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() - zi).powi(2))
        .sum()
}

/// Dense grid over `[0, hi]^P`, then projected coordinate descent from the best cell.
fn nnls_oracle(c: &[Vec<f64>], z: &[f64]) -> (Vec<f64>, f64) {
    let p = c[0].len();
    let hi = z.iter().cloned().fold(0.0, f64::max)
        / c.iter().flatten().cloned().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min).max(1e-3);
    let steps = 24usize;
    let mut best = (vec![0.0; p], f64::INFINITY);
    let mut idx = vec![0usize; p];
    loop {
        let s: Vec<f64> = idx.iter().map(|&i| hi * i as f64 / steps as f64).collect();
        let f = misfit(c, z, &s);
        if f < best.1 {
            best = (s, f);
        }
        let mut d = 0;
        while d < p && idx[d] == steps {
            idx[d] = 0;
            d += 1;
        }
        if d == p {
            break;
        }
        idx[d] += 1;
    }
    let mut s = best.0;
    for _ in 0..20_000 {
        let mut moved = 0.0f64;
        for j in 0..p {
            // exact minimizer along coordinate j, clipped at zero
            let (mut num, mut den) = (0.0, 0.0);
            for (row, zi) in c.iter().zip(z) {
                let others: f64 = row.iter().zip(&s).enumerate().filter(|(i, _)| *i != j).map(|(_, (a, b))| a * b).sum();
                num += row[j] * (zi - others);
                den += row[j] * row[j];
            }
            let next = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
            moved = moved.max((next - s[j]).abs());
            s[j] = next;
        }
        if moved < 1e-15 {
            break;
        }
    }
    let f = misfit(c, z, &s);
    (s, f)
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = rng.gen_range(1..=4);
    let rows = rng.gen_range(p..=p + 4);
    let c: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..p).map(|_| rng.gen_range(0.05..2.0)).collect())
        .collect();
    let z: Vec<f64> = (0..rows).map(|_| rng.gen_range(0.0..3.0)).collect();
    (c, z)
}

fn check_certificate(problem: &ConvexProblem, res: &SolverResult, params: &SolverParams) {
    assert_eq!(res.status, SolverStatus::Converged);
    assert!(res.gap <= params.eps);
    let r = dual_residual(problem, &res.s, &res.lambda);
    assert!(r.iter().map(|v| v * v).sum::<f64>().sqrt() <= params.eps_feas);
    let f = problem.constraint_values(&res.s);
    let m = f.len() as f64;
    for (fi, li) in f.iter().zip(&res.lambda) {
        assert!(*fi < 0.0 && *li >= 0.0);
        assert!((li * fi).abs() <= res.gap / m + 1e-8, "{} {} {:?}", (li * fi).abs(), res.gap / m, res);
    }
}

#[test]
fn nnls_matches_grid_and_coordinate_descent_oracle() {
    let params = SolverParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let (c, z) = random_instance(&mut rng);
        let p = c[0].len();
        let problem = ConvexProblem::nnls(FitMatrix::dense(c.clone()).unwrap(), z.clone()).unwrap();
        let res = solve_nnls(&problem, &params, &vec![1.0; p], &vec![10.0; p]).unwrap();
        check_certificate(&problem, &res, &params);
        let (_, oracle) = nnls_oracle(&c, &z);
        assert!(
            (res.objective - oracle).abs() <= 1e-5,
            "case {case}: solver {} oracle {oracle}",
            res.objective
        );
    }
}

#[test]
fn l1_ball_examples() {
    let params = SolverParams::default();
    let eye = || FitMatrix::dense(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();

    let problem = ConvexProblem::l1_ball(eye(), vec![1.0, 1.0], 1.0).unwrap();
    let res = solve_l1_ball(&problem, &params, &[0.9, 0.9], &[1.0, 1.0, 1.0]).unwrap();
    check_certificate(&problem, &res, &params);
    let want = 1.0 - 0.5f64.sqrt();
    assert!(res.s.iter().all(|v| (v - want).abs() <= 1e-5), "{:?}", res.s);

    let problem = ConvexProblem::l1_ball(eye(), vec![1.0, 1.0], 2.5).unwrap();
    let res = solve_l1_ball(&problem, &params, &[0.5, 0.5], &[1.0, 1.0, 1.0]).unwrap();
    assert!(res.s.iter().all(|v| v.abs() <= 1e-5));

    let one = FitMatrix::dense(vec![vec![1.0]]).unwrap();
    let problem = ConvexProblem::l1_ball(one, vec![3.0], 1.0).unwrap();
    let res = solve_l1_ball(&problem, &params, &[3.0], &[1.0, 1.0]).unwrap();
    assert!((res.s[0] - 2.0).abs() <= 1e-5);
}

#[test]
fn l1_ball_reports_infeasible_start() {
    let fit = FitMatrix::dense(vec![vec![1.0]]).unwrap();
    let problem = ConvexProblem::l1_ball(fit, vec![3.0], 1.0).unwrap();
    let res = solve_l1_ball(&problem, &SolverParams::default(), &[0.5], &[1.0, 1.0]).unwrap();
    assert_eq!(res.status, SolverStatus::InfeasibleStart);
}

#[test]
fn repeated_solves_are_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (c, z) = random_instance(&mut rng);
    let p = c[0].len();
    let problem = ConvexProblem::nnls(FitMatrix::dense(c).unwrap(), z).unwrap();
    let params = SolverParams::default();
    let a = solve_nnls(&problem, &params, &vec![1.0; p], &vec![10.0; p]).unwrap();
    let b = solve_nnls(&problem, &params, &vec![1.0; p], &vec![10.0; p]).unwrap();
    assert_eq!(a, b);
}

/// Random Toeplitz fits of the size the inverse filter produces.
fn toeplitz_instance(seed: u64, frames: usize) -> (FitMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let mut t: Vec<f64> = (0..9).map(|q| rng.gen_range(0.0..1.0) * 0.8f64.powi(q)).collect();
            t[0] = 1.0;
            t
        })
        .collect();
    let z: Vec<f64> = (0..2 * frames).map(|_| rng.gen_range(0.0..2.0)).collect();
    (FitMatrix::toeplitz(taps, frames).unwrap(), z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn l1_stage_is_feasible_sparse_and_certified(seed in 0u64..10_000, slack in 1.05f64..3.0) {
        let frames = 60;
        let (fit, z) = toeplitz_instance(seed, frames);
        let params = SolverParams::default();
        let nnls_problem = ConvexProblem::nnls(fit, z.clone()).unwrap();
        let nnls = solve_nnls(&nnls_problem, &params, &z[..frames], &vec![10.0; frames]).unwrap();
        prop_assert!(nnls.s.iter().all(|v| *v >= 0.0));
        let minfit = nnls_problem.misfit(&nnls.s);
        let delta = (slack * minfit).max(minfit + 1e-6);
        let problem = nnls_problem.with_ball(delta).unwrap();
        let mut lambda0: Vec<f64> = nnls.lambda.iter().map(|l| 1.0 + l).collect();
        lambda0.push(1.0);
        let l1 = solve_l1_ball(&problem, &params, &nnls.s, &lambda0).unwrap();
        prop_assert!(l1.s.iter().all(|v| *v >= 0.0));
        prop_assert!(problem.misfit(&l1.s) <= delta * (1.0 + 1e-6));
        prop_assert!(l1.s.iter().sum::<f64>() <= nnls.s.iter().sum::<f64>() + 1e-6);
        if l1.status == SolverStatus::Converged {
            prop_assert!(l1.gap <= params.eps && l1.dual_residual <= params.eps_feas);
        }
    }

    #[test]
    fn curvature_correction_does_not_change_the_optimum(seed in 0u64..10_000) {
        let frames = 30;
        let (fit, z) = toeplitz_instance(seed, frames);
        let base = SolverParams::default();
        let plain = SolverParams { curvature_correction: false, max_iter: 2000, ..base };
        let nnls_problem = ConvexProblem::nnls(fit, z.clone()).unwrap();
        let nnls = solve_nnls(&nnls_problem, &base, &z[..frames], &vec![10.0; frames]).unwrap();
        let problem = nnls_problem.with_ball(1.5 * nnls_problem.misfit(&nnls.s)).unwrap();
        let mut lambda0: Vec<f64> = nnls.lambda.iter().map(|l| 1.0 + l).collect();
        lambda0.push(1.0);
        let a = solve_l1_ball(&problem, &base, &nnls.s, &lambda0).unwrap();
        let b = solve_l1_ball(&problem, &plain, &nnls.s, &lambda0).unwrap();
        prop_assert_eq!(a.status, SolverStatus::Converged);
        prop_assume!(b.status == SolverStatus::Converged);
        prop_assert!((a.objective - b.objective).abs() <= 1e-5 * (1.0 + a.objective));
    }
}
