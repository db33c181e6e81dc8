//! Small conic programs with known optima, shared by tests and examples.

use super::{ConicProgram, LinExpr};

pub struct Fixture {
    pub name: &'static str,
    pub program: ConicProgram,
    pub optimum: f64,
    /// Expressions whose optimal value is unique and known.
    pub values: Vec<(LinExpr, f64)>,
}

fn trace_min() -> Fixture {
    // min Tr W  s.t.  W ⪰ 0, W₀₀ = 1
    let mut p = ConicProgram::new();
    let w = p.add_hermitian_psd(2, "W");
    p.add_eq(w.re(0, 0), 1.0);
    p.add_objective(&w.trace(), 1.0);
    Fixture {
        name: "trace minimisation",
        values: vec![(w.re(0, 0), 1.0), (w.re(1, 1), 0.0), (w.re(1, 0), 0.0), (w.im(1, 0), 0.0)],
        program: p,
        optimum: 1.0,
    }
}

fn lp_corner() -> Fixture {
    // min -x - 2y  s.t.  x, y ∈ [0, 1], x + y ≤ 1.5
    let mut p = ConicProgram::new();
    let x = p.add_var("x", Some(0.0), Some(1.0));
    let y = p.add_var("y", Some(0.0), Some(1.0));
    p.add_le(LinExpr::from(x) + y.into(), 1.5);
    p.add_objective(&(LinExpr::term(x, -1.0) + LinExpr::term(y, -2.0)), 1.0);
    Fixture {
        name: "lp corner",
        program: p,
        optimum: -2.5,
        values: vec![(x.into(), 0.5), (y.into(), 1.0)],
    }
}

fn max_eigenvalue() -> Fixture {
    // min t  s.t.  tI − A ⪰ 0, A tridiagonal(−1, 2, −1) of size 3
    let mut p = ConicProgram::new();
    let t = p.add_var("t", None, None);
    let mut entries = Vec::new();
    for i in 0..3 {
        entries.push(((i, i), LinExpr::from(t) - LinExpr::constant(2.0)));
        if i > 0 {
            entries.push(((i, i - 1), LinExpr::constant(1.0)));
        }
    }
    p.add_lmi(3, entries);
    p.add_objective(&t.into(), 1.0);
    Fixture {
        name: "largest eigenvalue",
        program: p,
        optimum: 2.0 + 2f64.sqrt(),
        values: vec![(t.into(), 2.0 + 2f64.sqrt())],
    }
}

fn quadratic_cost() -> Fixture {
    // min (y − 3)² + y
    let mut p = ConicProgram::new();
    let y = p.add_var("y", None, None);
    p.add_quadratic_cost(LinExpr::from(y) - LinExpr::constant(3.0), 1.0)
        .expect("nonnegative weight");
    p.add_objective(&y.into(), 1.0);
    Fixture {
        name: "quadratic epigraph",
        program: p,
        optimum: 2.75,
        values: vec![(y.into(), 2.5)],
    }
}

fn bounded_quadratic() -> Fixture {
    // min (x − 2)²  s.t.  x ≤ 1
    let mut p = ConicProgram::new();
    let x = p.add_var("x", None, Some(1.0));
    p.add_quadratic_cost(LinExpr::from(x) - LinExpr::constant(2.0), 1.0)
        .expect("nonnegative weight");
    Fixture {
        name: "bounded quadratic",
        program: p,
        optimum: 1.0,
        values: vec![(x.into(), 1.0)],
    }
}

fn hyperbolic() -> Fixture {
    // min x + y  s.t.  xy ≥ 1, x, y ≥ 0
    let mut p = ConicProgram::new();
    let x = p.add_var("x", None, None);
    let y = p.add_var("y", None, None);
    p.add_rotated_cone(x.into(), y.into(), LinExpr::constant(1.0));
    p.add_objective(&(LinExpr::from(x) + y.into()), 1.0);
    Fixture {
        name: "rotated cone",
        program: p,
        optimum: 2.0,
        values: vec![(x.into(), 1.0), (y.into(), 1.0)],
    }
}

fn correlation_corner() -> Fixture {
    // min X₁₀  s.t.  X ⪰ 0 (real 2×2), X₀₀ = X₁₁ = 1
    let mut p = ConicProgram::new();
    let a = p.add_var("x00", None, None);
    let b = p.add_var("x10", None, None);
    let c = p.add_var("x11", None, None);
    p.add_lmi(2, vec![((0, 0), a.into()), ((1, 0), b.into()), ((1, 1), c.into())]);
    p.add_eq(a.into(), 1.0);
    p.add_eq(c.into(), 1.0);
    p.add_objective(&b.into(), 1.0);
    Fixture {
        name: "correlation corner",
        program: p,
        optimum: -1.0,
        values: vec![(b.into(), -1.0)],
    }
}

fn hermitian_phase() -> Fixture {
    // min Re W₁₀ + Im W₁₀  s.t.  W ⪰ 0 Hermitian 2×2, W₀₀ = W₁₁ = 1
    let mut p = ConicProgram::new();
    let w = p.add_hermitian_psd(2, "W");
    p.add_eq(w.re(0, 0), 1.0);
    p.add_eq(w.re(1, 1), 1.0);
    p.add_objective(&(w.re(1, 0) + w.im(1, 0)), 1.0);
    let h = -std::f64::consts::FRAC_1_SQRT_2;
    Fixture {
        name: "hermitian phase",
        program: p,
        optimum: -2f64.sqrt(),
        values: vec![(w.re(1, 0), h), (w.im(1, 0), h)],
    }
}

fn hermitian_coupling() -> Fixture {
    // min Tr W  s.t.  Re W₁₀ = 1
    let mut p = ConicProgram::new();
    let w = p.add_hermitian_psd(2, "W");
    p.add_eq(w.re(1, 0), 1.0);
    p.add_objective(&w.trace(), 1.0);
    Fixture {
        name: "hermitian coupling",
        program: p,
        optimum: 2.0,
        values: vec![(w.re(0, 0), 1.0), (w.re(1, 1), 1.0), (w.im(1, 0), 0.0)],
    }
}

fn pentagon_theta() -> Fixture {
    // Lovász theta of the 5-cycle: max ⟨J, X⟩ s.t. Tr X = 1, X_ij = 0 on edges, X ⪰ 0.
    let mut p = ConicProgram::new();
    let n = 5;
    let mut var = vec![vec![None; n]; n];
    let mut entries = Vec::new();
    let mut sum = LinExpr::zero();
    let mut trace = LinExpr::zero();
    for i in 0..n {
        for j in 0..=i {
            let v = p.add_var(format!("x{i}{j}"), None, None);
            var[i][j] = Some(v);
            entries.push(((i, j), v.into()));
            let w = if i == j { 1.0 } else { 2.0 };
            sum.add_term(v, w);
            if i == j {
                trace.add_term(v, 1.0);
            }
        }
    }
    p.add_lmi(n, entries);
    p.add_eq(trace, 1.0);
    for i in 0..n {
        let j = (i + 1) % n;
        let (a, b) = if i > j { (i, j) } else { (j, i) };
        p.add_eq(var[a][b].expect("declared").into(), 0.0);
    }
    p.add_objective(&sum, -1.0);
    Fixture {
        name: "pentagon theta",
        program: p,
        optimum: -(5f64.sqrt()),
        values: vec![],
    }
}

fn all_ones() -> Fixture {
    // min ⟨J, X⟩  s.t.  X ⪰ 0, X_ii = 1 (3×3): optimum 0 since 1ᵀX1 ≥ 0 and
    // X = (3I − J)/2 attains it.
    let mut p = ConicProgram::new();
    let n = 3;
    let mut entries = Vec::new();
    let mut obj = LinExpr::zero();
    for i in 0..n {
        for j in 0..=i {
            let v = p.add_var(format!("x{i}{j}"), None, None);
            entries.push(((i, j), v.into()));
            if i == j {
                p.add_eq(v.into(), 1.0);
                obj.add_term(v, 1.0);
            } else {
                obj.add_term(v, 2.0);
            }
        }
    }
    p.add_lmi(n, entries);
    p.add_objective(&obj, 1.0);
    Fixture {
        name: "all-ones cut",
        program: p,
        optimum: 0.0,
        values: vec![],
    }
}

fn offset_objective() -> Fixture {
    // min 5 + 2t  s.t.  [[t, 1], [1, t]] ⪰ 0 ⇒ t ≥ 1
    let mut p = ConicProgram::new();
    let t = p.add_var("t", None, None);
    p.add_lmi(
        2,
        vec![((0, 0), t.into()), ((1, 0), LinExpr::constant(1.0)), ((1, 1), t.into())],
    );
    p.add_objective(&(LinExpr::term(t, 2.0) + LinExpr::constant(5.0)), 1.0);
    Fixture {
        name: "objective constant",
        program: p,
        optimum: 7.0,
        values: vec![(t.into(), 1.0)],
    }
}

pub fn analytic_fixtures() -> Vec<Fixture> {
    vec![
        trace_min(),
        lp_corner(),
        max_eigenvalue(),
        quadratic_cost(),
        bounded_quadratic(),
        hyperbolic(),
        correlation_corner(),
        hermitian_phase(),
        hermitian_coupling(),
        pentagon_theta(),
        all_ones(),
        offset_objective(),
    ]
}
