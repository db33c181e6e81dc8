use super::fixtures::analytic_fixtures;
use super::*;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn analytic_fixtures_reach_their_optima() {
    for f in analytic_fixtures() {
        let sol = solve(&f.program, &SolveOptions::tight()).unwrap();
        assert_eq!(sol.status, Status::Optimal, "{}", f.name);
        assert!(rel_close(sol.objective, f.optimum, 1e-6), "{}: {} vs {}", f.name, sol.objective, f.optimum);
        for (e, want) in &f.values {
            let got = sol.eval(e);
            assert!((got - want).abs() < 1e-5, "{}: {got} vs {want}", f.name);
        }
    }
}

#[test]
fn trace_min_block_is_diag_one_zero() {
    let mut p = ConicProgram::new();
    let w = p.add_hermitian_psd(2, "W");
    p.add_eq(w.re(0, 0), 1.0);
    p.add_objective(&w.trace(), 1.0);
    let sol = solve(&p, &SolveOptions::default()).unwrap();
    let m = sol.hermitian(&w);
    assert!((m[(0, 0)].re - 1.0).abs() < 1e-6);
    assert!(m[(1, 1)].re.abs() < 1e-6);
    assert!(m[(1, 0)].norm() < 1e-6);
}

#[test]
fn infeasible_program_is_certified() {
    let mut p = ConicProgram::new();
    let x = p.add_var("x", Some(1.0), None);
    p.add_le(x.into(), 0.0);
    p.add_objective(&x.into(), 1.0);
    let sol = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::PrimalInfeasible);
    assert!(sol.x.is_empty());
}

#[test]
fn unbounded_program_is_certified() {
    let mut p = ConicProgram::new();
    let x = p.add_var("x", None, Some(5.0));
    p.add_objective(&x.into(), 1.0);
    let sol = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::DualInfeasible);
}

#[test]
fn infeasible_lmi_is_certified() {
    // [[x, 1], [1, -1]] ⪰ 0 has no solution.
    let mut p = ConicProgram::new();
    let x = p.add_var("x", None, None);
    p.add_lmi(
        2,
        vec![((0, 0), x.into()), ((1, 0), LinExpr::constant(1.0)), ((1, 1), LinExpr::constant(-1.0))],
    );
    p.add_objective(&x.into(), 1.0);
    let sol = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::PrimalInfeasible);
}

#[test]
fn iteration_cap_returns_best_iterate() {
    let f = &analytic_fixtures()[9];
    let opts = SolveOptions { max_iter: 2, ..SolveOptions::default() };
    let sol = solve(&f.program, &opts).unwrap();
    assert_eq!(sol.status, Status::MaxIter);
    assert_eq!(sol.x.len(), f.program.num_vars());
    assert!(sol.iterations <= 2);
}

#[test]
fn solves_are_deterministic() {
    for f in analytic_fixtures() {
        let a = solve(&f.program, &SolveOptions::default()).unwrap();
        let b = solve(&f.program, &SolveOptions::default()).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits(), "{}", f.name);
        assert_eq!(a.x, b.x);
    }
}

#[test]
fn gap_is_nonnegative_and_duality_closes() {
    for f in analytic_fixtures() {
        let sol = solve(&f.program, &SolveOptions::tight()).unwrap();
        for it in &sol.trace {
            assert!(it.gap >= 0.0, "{}: {:?}", f.name, it);
        }
        assert!(sol.objective - sol.dual_objective >= -1e-7 * sol.objective.abs().max(1.0));
        assert!(sol.objective - sol.dual_objective <= 1e-6 * sol.objective.abs().max(1.0));
    }
}

#[test]
fn lin_expr_compacts_and_evaluates() {
    let e = LinExpr::term(VarId(1), 2.0) + LinExpr::term(VarId(0), 1.0) + LinExpr::term(VarId(1), -2.0) + LinExpr::constant(3.0);
    let c = e.clone().compact();
    assert_eq!(c.terms, vec![(VarId(0), 1.0)]);
    assert_eq!(e.eval(&[2.0, 7.0]), 5.0);
}

#[test]
fn hermitian_accessors_are_conjugate_symmetric() {
    let mut p = ConicProgram::new();
    let w = p.add_hermitian_psd(3, "W");
    let x: Vec<f64> = (0..p.num_vars()).map(|i| i as f64 + 0.5).collect();
    for k in 0..3 {
        for m in 0..3 {
            assert_eq!(w.re(k, m).eval(&x), w.re(m, k).eval(&x));
            assert_eq!(w.im(k, m).eval(&x), -w.im(m, k).eval(&x));
        }
    }
    assert_eq!(p.num_hermitian_blocks(), 1);
    assert_eq!(p.lmis[0].dim, 6);
}

#[test]
fn quadratic_form_matches_dense_evaluation() {
    use crate::grid::Complex64;
    let mut p = ConicProgram::new();
    let w = p.add_hermitian_psd(3, "W");
    let x: Vec<f64> = (0..p.num_vars()).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
    let sol = ConicSolution {
        status: Status::Optimal,
        x: x.clone(),
        objective: 0.0,
        dual_objective: 0.0,
        gap: 0.0,
        primal_residual: 0.0,
        dual_residual: 0.0,
        iterations: 0,
        eq_duals: vec![],
        trace: vec![],
    };
    let m = sol.hermitian(&w);
    let v = [Complex64::new(0.3, -0.2), Complex64::new(-1.0, 0.5), Complex64::new(0.1, 0.9)];
    let mut dense = Complex64::new(0.0, 0.0);
    for k in 0..3 {
        for j in 0..3 {
            dense += v[k].conj() * m[(k, j)] * v[j];
        }
    }
    assert!((w.quadratic_form(&v).eval(&x) - dense.re).abs() < 1e-12);
    assert!(dense.im.abs() < 1e-12);
}

#[test]
fn sdpa_dump_lists_blocks() {
    let f = &analytic_fixtures()[1];
    let text = dump_program(&f.program);
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('"')).collect();
    assert_eq!(lines[0], "2");
    assert_eq!(lines[1], "1");
    assert_eq!(lines[2], "-5");
}

#[test]
fn rejects_negative_quadratic_weight() {
    let mut p = ConicProgram::new();
    let x = p.add_var("x", None, None);
    assert!(p.add_quadratic_cost(x.into(), -1.0).is_err());
}
