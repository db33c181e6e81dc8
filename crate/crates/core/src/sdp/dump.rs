//! Text dump of a [`ConicProgram`] in SDPA sparse format (`.dat-s`).
//!
//! SDPA reads `minimize Σ cᵢxᵢ  s.t.  Σ Fᵢxᵢ − F₀ ⪰ 0`. The mapping is:
//!
//! * each LMI `F0 + Σ x_v F_v ⪰ 0` becomes one block with `Fᵥ` as given and
//!   SDPA's `F₀ = −F0`;
//! * all `≤` rows and both directions of every equality row share one
//!   diagonal block (negative size in the block structure line);
//! * the objective constant is written in a comment, since SDPA has no slot
//!   for it.
//!
//! Indices in the file are 1-based and only the upper triangle is listed.

use std::fmt::Write;

use super::ConicProgram;

pub fn dump_program(prog: &ConicProgram) -> String {
    let mut out = String::new();
    let n = prog.num_vars();
    let diag_len = prog.ineqs.len() + 2 * prog.eqs.len();
    let mut blocks: Vec<i64> = prog.lmis.iter().map(|l| l.dim as i64).collect();
    if diag_len > 0 {
        blocks.push(-(diag_len as i64));
    }

    let _ = writeln!(out, "\"pevgrid conic program: {n} vars, {} eqs, {} ineqs, {} lmis", prog.eqs.len(), prog.ineqs.len(), prog.lmis.len());
    let _ = writeln!(out, "\"objective constant {:e}", prog.objective_constant);
    let _ = writeln!(out, "{n}");
    let _ = writeln!(out, "{}", blocks.len());
    let _ = writeln!(out, "{}", blocks.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(" "));
    let _ = writeln!(out, "{}", prog.objective.iter().map(|c| format!("{c:e}")).collect::<Vec<_>>().join(" "));

    let mut line = |mat: usize, blk: usize, i: usize, j: usize, v: f64| {
        if v != 0.0 {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            let _ = writeln!(out, "{mat} {blk} {} {} {v:e}", a + 1, b + 1);
        }
    };

    for (k, lmi) in prog.lmis.iter().enumerate() {
        for &(i, j, v) in &lmi.constant {
            line(0, k + 1, i, j, -v);
        }
        for (var, entries) in &lmi.terms {
            for &(i, j, v) in entries {
                line(var + 1, k + 1, i, j, v);
            }
        }
    }

    if diag_len > 0 {
        let blk = prog.lmis.len() + 1;
        let mut pos = 0;
        // h - g·x >= 0
        for row in &prog.ineqs {
            line(0, blk, pos, pos, -row.rhs);
            for &(v, c) in &row.terms {
                line(v + 1, blk, pos, pos, -c);
            }
            pos += 1;
        }
        // a·x - b >= 0 and b - a·x >= 0
        for row in &prog.eqs {
            for sign in [1.0, -1.0] {
                line(0, blk, pos, pos, sign * row.rhs);
                for &(v, c) in &row.terms {
                    line(v + 1, blk, pos, pos, sign * c);
                }
                pos += 1;
            }
        }
    }
    out
}
