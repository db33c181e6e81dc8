//! Conic programs over the nonnegative orthant and real PSD cones, with
//! Hermitian PSD blocks carried through their real embedding.
//!
//! A [`ConicProgram`] is assembled with a small builder API: scalar variables,
//! affine expressions, equality and `≤` rows, linear matrix inequalities and a
//! few convenience cones (Hermitian PSD blocks, quadratic-cost epigraphs and
//! the rotated cone `u·v ≥ w²`). [`solve`] runs a homogeneous primal-dual
//! interior-point method with Nesterov-Todd scaling; see [`ipm`] for details.

mod dump;
pub mod fixtures;
pub mod ipm;

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Complex64;

pub use dump::dump_program;
pub use ipm::{solve, IterStats, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Affine expression `Σ coef·var + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        LinExpr::default()
    }

    pub fn constant(value: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn term(var: VarId, coef: f64) -> Self {
        LinExpr {
            terms: vec![(var, coef)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, var: VarId, coef: f64) {
        if coef != 0.0 {
            self.terms.push((var, coef));
        }
    }

    /// Merge repeated variables and drop zero coefficients.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|(v, _)| *v);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for (v, c) in self.terms {
            match out.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|(_, c)| *c != 0.0);
        LinExpr {
            terms: out,
            constant: self.constant,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * x[v.0]).sum::<f64>()
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self += rhs;
        self
    }
}

impl AddAssign for LinExpr {
    fn add_assign(&mut self, rhs: LinExpr) {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + (-rhs)
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, k: f64) -> LinExpr {
        for (_, c) in &mut self.terms {
            *c *= k;
        }
        self.constant *= k;
        self
    }
}

/// Sparse row `Σ coef·x[var] (= or ≤) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Row {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    fn from_expr(expr: LinExpr, rhs: f64) -> Self {
        let expr = expr.compact();
        Row {
            terms: expr.terms.iter().map(|(v, c)| (v.0, *c)).collect(),
            rhs: rhs - expr.constant,
        }
    }
}

/// `F0 + Σ x_v F_v ⪰ 0`, with every `F` stored as lower-triangle entries of a
/// symmetric `dim × dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Lmi {
    pub dim: usize,
    pub constant: Vec<(usize, usize, f64)>,
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
    /// Set for Hermitian embeddings, whose range is closed under structured
    /// congruence.
    pub structured: bool,
}

/// Hermitian PSD matrix variable. Stored as `n` real diagonal variables and a
/// real/imaginary pair for every strictly-lower entry.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianBlock {
    pub n: usize,
    diag: Vec<VarId>,
    /// `(re, im)` of entry `(k, m)`, `k > m`, at `k (k - 1) / 2 + m`.
    lower: Vec<(VarId, VarId)>,
}

impl HermitianBlock {
    fn lower_pos(k: usize, m: usize) -> usize {
        k * (k - 1) / 2 + m
    }

    pub fn diag_var(&self, k: usize) -> VarId {
        self.diag[k]
    }

    /// Real part of `W[k, m]`.
    pub fn re(&self, k: usize, m: usize) -> LinExpr {
        match k.cmp(&m) {
            std::cmp::Ordering::Equal => self.diag[k].into(),
            std::cmp::Ordering::Greater => self.lower[Self::lower_pos(k, m)].0.into(),
            std::cmp::Ordering::Less => self.lower[Self::lower_pos(m, k)].0.into(),
        }
    }

    /// Imaginary part of `W[k, m]`.
    pub fn im(&self, k: usize, m: usize) -> LinExpr {
        match k.cmp(&m) {
            std::cmp::Ordering::Equal => LinExpr::zero(),
            std::cmp::Ordering::Greater => self.lower[Self::lower_pos(k, m)].1.into(),
            std::cmp::Ordering::Less => -LinExpr::from(self.lower[Self::lower_pos(m, k)].1),
        }
    }

    pub fn trace(&self) -> LinExpr {
        let mut e = LinExpr::zero();
        for &d in &self.diag {
            e.add_term(d, 1.0);
        }
        e
    }

    /// `Re(wᴴ W w)` as a linear expression in the block's variables.
    pub fn quadratic_form(&self, w: &[Complex64]) -> LinExpr {
        let mut e = LinExpr::zero();
        for k in 0..self.n {
            e.add_term(self.diag[k], w[k].norm_sqr());
            for m in 0..k {
                // conj(w_k) W_km w_m + conj(w_m) W_mk w_k = 2 Re(conj(w_k) w_m W_km)
                let c = w[k].conj() * w[m];
                let (re, im) = self.lower[Self::lower_pos(k, m)];
                e.add_term(re, 2.0 * c.re);
                e.add_term(im, -2.0 * c.im);
            }
        }
        e
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.diag
            .iter()
            .copied()
            .chain(self.lower.iter().flat_map(|&(a, b)| [a, b]))
    }
}

/// A conic program in minimization form.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub(crate) names: Vec<String>,
    pub(crate) objective: Vec<f64>,
    pub(crate) objective_constant: f64,
    pub(crate) eqs: Vec<Row>,
    pub(crate) ineqs: Vec<Row>,
    pub(crate) lmis: Vec<Lmi>,
    hermitian_count: usize,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn num_eqs(&self) -> usize {
        self.eqs.len()
    }

    pub fn num_ineqs(&self) -> usize {
        self.ineqs.len()
    }

    pub fn num_lmis(&self) -> usize {
        self.lmis.len()
    }

    pub fn num_hermitian_blocks(&self) -> usize {
        self.hermitian_count
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.names[v.0]
    }

    /// Add a scalar variable with optional bounds.
    pub fn add_var(&mut self, name: impl Into<String>, lower: Option<f64>, upper: Option<f64>) -> VarId {
        let v = VarId(self.names.len());
        self.names.push(name.into());
        self.objective.push(0.0);
        match (lower, upper) {
            (Some(lo), Some(hi)) if lo == hi => self.add_eq(v.into(), lo),
            _ => {
                if let Some(lo) = lower {
                    self.add_ge(v.into(), lo);
                }
                if let Some(hi) = upper {
                    self.add_le(v.into(), hi);
                }
            }
        }
        v
    }

    pub fn add_eq(&mut self, expr: LinExpr, rhs: f64) {
        self.eqs.push(Row::from_expr(expr, rhs));
    }

    pub fn add_le(&mut self, expr: LinExpr, rhs: f64) {
        self.ineqs.push(Row::from_expr(expr, rhs));
    }

    pub fn add_ge(&mut self, expr: LinExpr, rhs: f64) {
        self.ineqs.push(Row::from_expr(-expr, -rhs));
    }

    /// Add `coef · expr` to the objective.
    pub fn add_objective(&mut self, expr: &LinExpr, coef: f64) {
        for (v, c) in &expr.terms {
            self.objective[v.0] += coef * c;
        }
        self.objective_constant += coef * expr.constant;
    }

    /// Add the convex term `coef · expr²` (`coef ≥ 0`) through an epigraph variable.
    pub fn add_quadratic_cost(&mut self, expr: LinExpr, coef: f64) -> Result<()> {
        if coef < 0.0 {
            return Err(Error::Domain("quadratic cost coefficient must be >= 0".into()));
        }
        if coef == 0.0 {
            return Ok(());
        }
        let name = format!("epi{}", self.names.len());
        let e = self.add_var(name, None, None);
        self.add_rotated_cone(e.into(), LinExpr::constant(1.0), expr);
        self.objective[e.0] += coef;
        Ok(())
    }

    /// `u · v ≥ w²`, `u, v ≥ 0`, as the 2×2 LMI `[[u, w], [w, v]] ⪰ 0`.
    pub fn add_rotated_cone(&mut self, u: LinExpr, v: LinExpr, w: LinExpr) {
        self.add_lmi(2, vec![((0, 0), u), ((1, 0), w), ((1, 1), v)]);
    }

    /// Symmetric LMI given by its lower-triangle entries `((i, j), expr)`, `i ≥ j`.
    pub fn add_lmi(&mut self, dim: usize, entries: Vec<((usize, usize), LinExpr)>) {
        let mut constant = Vec::new();
        let mut per_var: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> =
            Default::default();
        for ((i, j), expr) in entries {
            assert!(i < dim && j <= i, "LMI entry ({i}, {j}) outside the lower triangle");
            let expr = expr.compact();
            if expr.constant != 0.0 {
                constant.push((i, j, expr.constant));
            }
            for (v, c) in expr.terms {
                per_var.entry(v.0).or_default().push((i, j, c));
            }
        }
        self.lmis.push(Lmi {
            dim,
            constant,
            terms: per_var.into_iter().collect(),
            structured: false,
        });
    }

    /// Add an `n × n` Hermitian PSD matrix variable.
    pub fn add_hermitian_psd(&mut self, n: usize, name: &str) -> HermitianBlock {
        let diag: Vec<VarId> = (0..n)
            .map(|k| self.add_var(format!("{name}.d{k}"), None, None))
            .collect();
        let mut lower = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for k in 1..n {
            for m in 0..k {
                let re = self.add_var(format!("{name}.re{k}_{m}"), None, None);
                let im = self.add_var(format!("{name}.im{k}_{m}"), None, None);
                lower.push((re, im));
            }
        }
        let block = HermitianBlock { n, diag, lower };

        // Embedding [[Re W, -Im W], [Im W, Re W]], lower triangle only.
        let mut entries = Vec::new();
        for k in 0..n {
            entries.push(((k, k), block.diag[k].into()));
            entries.push(((n + k, n + k), block.diag[k].into()));
        }
        for k in 1..n {
            for m in 0..k {
                let (re, im) = block.lower[HermitianBlock::lower_pos(k, m)];
                entries.push(((k, m), re.into()));
                entries.push(((n + k, n + m), re.into()));
                // E[n+k, m] = Im W[k, m]; E[n+m, k] = Im W[m, k] = -Im W[k, m]
                entries.push(((n + k, m), im.into()));
                entries.push(((n + m, k), -LinExpr::from(im)));
            }
        }
        self.add_lmi(2 * n, entries);
        if let Some(l) = self.lmis.last_mut() {
            l.structured = true;
        }
        self.hermitian_count += 1;
        block
    }

    pub(crate) fn check(&self) -> Result<()> {
        let n = self.num_vars();
        let bad_row = |r: &Row| r.terms.iter().any(|(v, c)| *v >= n || !c.is_finite()) || !r.rhs.is_finite();
        if self.eqs.iter().any(bad_row) || self.ineqs.iter().any(bad_row) {
            return Err(Error::Domain("constraint row references an unknown variable or is non-finite".into()));
        }
        for lmi in &self.lmis {
            for (v, entries) in &lmi.terms {
                if *v >= n || entries.iter().any(|e| !e.2.is_finite()) {
                    return Err(Error::Domain("LMI references an unknown variable".into()));
                }
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("objective has non-finite coefficients".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: Status,
    pub x: Vec<f64>,
    /// Objective value including constant terms.
    pub objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Multipliers of the equality rows (in insertion order).
    pub eq_duals: Vec<f64>,
    pub trace: Vec<IterStats>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.x[v.0]
    }

    pub fn eval(&self, e: &LinExpr) -> f64 {
        e.eval(&self.x)
    }

    pub fn hermitian(&self, block: &HermitianBlock) -> DMatrix<Complex64> {
        let n = block.n;
        let mut w = DMatrix::zeros(n, n);
        for k in 0..n {
            w[(k, k)] = Complex64::new(self.x[block.diag[k].0], 0.0);
            for m in 0..k {
                let (re, im) = block.lower[HermitianBlock::lower_pos(k, m)];
                let z = Complex64::new(self.x[re.0], self.x[im.0]);
                w[(k, m)] = z;
                w[(m, k)] = z.conj();
            }
        }
        w
    }
}

#[cfg(test)]
mod tests;
