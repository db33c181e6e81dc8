//! Homogeneous self-dual interior-point method for
//!
//! ```text
//! minimize    cᵀx
//! subject to  Gx + s = h,  Ax = b,  s ∈ K
//! ```
//!
//! where `K` is a product of one nonnegative orthant (the `≤` rows) and real
//! PSD cones (one per LMI, `s = F0 + Σ x_v F_v`). The dual is
//! `maximize −hᵀz − bᵀy  s.t.  Gᵀz + Aᵀy + c = 0,  z ∈ K`.
//!
//! Iterates follow the Mehrotra predictor-corrector scheme with
//! Nesterov-Todd scaling. The scaling matrices are updated in factored form
//! (`R`, `R⁻ᵀ`) so that ill-conditioned late iterates never need to be
//! re-factored from scratch. Newton systems are reduced to
//!
//! ```text
//! H = Gᵀ (WᵀW)⁻¹ G,   M = A H⁻¹ Aᵀ
//! ```
//!
//! where `H` is block diagonal over clusters of variables that share a cone
//! block, and `M` is dense. One step of iterative refinement against the
//! unreduced system follows every solve.
//!
//! Start point: least-squares primal and dual points of the identity-scaled
//! system, shifted into the cone interior when needed; `τ = κ = 1`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::Serialize;

use super::{ConicProgram, ConicSolution, Status};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Duality gap tolerance, relative to `max(1, |objective|)`.
    pub tol_gap: f64,
    /// Relative primal and dual residual tolerance.
    pub tol_feas: f64,
    pub max_iter: usize,
    /// Refinement passes per linear solve.
    pub refinement: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol_gap: 1e-7,
            tol_feas: 1e-7,
            max_iter: 100,
            refinement: 1,
        }
    }
}

impl SolveOptions {
    /// Small programs reach this; large OPF relaxations usually stall near
    /// 1e-7, where the scaling's condition number eats the remaining digits.
    pub fn tight() -> Self {
        SolveOptions {
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterStats {
    pub iter: usize,
    pub pcost: f64,
    pub dcost: f64,
    /// `sᵀz / τ²`, nonnegative at every iterate.
    pub gap: f64,
    pub pres: f64,
    pub dres: f64,
    pub tau: f64,
    pub kappa: f64,
    pub step: f64,
}

// ---------------------------------------------------------------------------
// problem data

struct Data {
    n: usize,
    p: usize,
    dims: Vec<usize>,
    c: DVector<f64>,
    cscale: f64,
    constant: f64,
    b: DVector<f64>,
    a_rows: Vec<Vec<(usize, f64)>>,
    g_rows: Vec<Vec<(usize, f64)>>,
    h: ConeVec,
    /// Per block: (var, directed entries (i, j, coef) of F_var).
    lmi: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>>,
    clusters: Vec<Cluster>,
    /// LMIs holding a Hermitian embedding `[[A, -B], [B, A]]`.
    structured: Vec<bool>,
    /// var -> (cluster, position in cluster)
    var_pos: Vec<(usize, usize)>,
}

struct Cluster {
    vars: Vec<usize>,
    /// Equality rows touching the cluster, with (row, local var, coef) entries.
    rows: Vec<usize>,
    entries: Vec<(usize, usize, f64)>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

impl Data {
    fn new(prog: &ConicProgram) -> Self {
        let n = prog.num_vars();
        let cinf = prog.objective.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let cscale = cinf.max(1.0);
        let c = DVector::from_iterator(n, prog.objective.iter().map(|v| v / cscale));

        let a_rows: Vec<Vec<(usize, f64)>> = prog.eqs.iter().map(|r| r.terms.clone()).collect();
        let b = DVector::from_iterator(prog.eqs.len(), prog.eqs.iter().map(|r| r.rhs));
        let g_rows: Vec<Vec<(usize, f64)>> = prog.ineqs.iter().map(|r| r.terms.clone()).collect();
        let h_lin = DVector::from_iterator(prog.ineqs.len(), prog.ineqs.iter().map(|r| r.rhs));

        let dims: Vec<usize> = prog.lmis.iter().map(|l| l.dim).collect();
        let mut h_mats = Vec::with_capacity(dims.len());
        let mut lmi = Vec::with_capacity(dims.len());
        for l in &prog.lmis {
            let mut f0 = DMatrix::zeros(l.dim, l.dim);
            for &(i, j, v) in &l.constant {
                f0[(i, j)] += v;
                if i != j {
                    f0[(j, i)] += v;
                }
            }
            h_mats.push(f0);
            let terms: Vec<(usize, Vec<(usize, usize, f64)>)> = l
                .terms
                .iter()
                .map(|(v, entries)| {
                    let mut full = Vec::with_capacity(entries.len() * 2);
                    for &(i, j, c) in entries {
                        full.push((i, j, c));
                        if i != j {
                            full.push((j, i, c));
                        }
                    }
                    (*v, full)
                })
                .collect();
            lmi.push(terms);
        }

        // Variables sharing any cone block end up in one cluster.
        let mut parent: Vec<usize> = (0..n).collect();
        for row in &g_rows {
            for w in row.windows(2) {
                union(&mut parent, w[0].0, w[1].0);
            }
        }
        for block in &lmi {
            for w in block.windows(2) {
                union(&mut parent, w[0].0, w[1].0);
            }
        }
        let mut root_cluster = vec![usize::MAX; n];
        let mut clusters: Vec<Cluster> = Vec::new();
        let mut var_pos = vec![(0, 0); n];
        for v in 0..n {
            let r = find(&mut parent, v);
            if root_cluster[r] == usize::MAX {
                root_cluster[r] = clusters.len();
                clusters.push(Cluster {
                    vars: Vec::new(),
                    rows: Vec::new(),
                    entries: Vec::new(),
                });
            }
            let ci = root_cluster[r];
            var_pos[v] = (ci, clusters[ci].vars.len());
            clusters[ci].vars.push(v);
        }
        for (row, terms) in a_rows.iter().enumerate() {
            for &(v, coef) in terms {
                let (ci, local) = var_pos[v];
                let cl = &mut clusters[ci];
                if cl.rows.last() != Some(&row) {
                    cl.rows.push(row);
                }
                cl.entries.push((cl.rows.len() - 1, local, coef));
            }
        }

        Data {
            n,
            p: prog.eqs.len(),
            dims,
            c,
            cscale,
            constant: prog.objective_constant,
            b,
            a_rows,
            g_rows,
            h: ConeVec {
                lin: h_lin,
                mats: h_mats,
            },
            lmi,
            clusters,
            structured: prog.lmis.iter().map(|l| l.structured).collect(),
            var_pos,
        }
    }

    /// Orthogonal projection of the Hermitian-embedding blocks onto their
    /// structured subspace. Components outside it never enter the problem,
    /// so rounding there would otherwise accumulate in the dual iterate.
    fn project(&self, u: &mut ConeVec) {
        for (m, &st) in u.mats.iter_mut().zip(&self.structured) {
            if !st {
                continue;
            }
            let h = m.nrows() / 2;
            for i in 0..h {
                for j in 0..h {
                    let a = 0.5 * (m[(i, j)] + m[(h + i, h + j)]);
                    m[(i, j)] = a;
                    m[(h + i, h + j)] = a;
                }
            }
            for i in 0..h {
                for j in 0..=i {
                    let b = 0.5 * (m[(h + i, j)] - m[(h + j, i)]);
                    m[(h + i, j)] = b;
                    m[(j, h + i)] = b;
                    m[(h + j, i)] = -b;
                    m[(i, h + j)] = -b;
                }
            }
        }
    }

    fn degree(&self) -> usize {
        self.h.lin.len() + self.dims.iter().sum::<usize>()
    }

    fn ax(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.p,
            self.a_rows
                .iter()
                .map(|r| r.iter().map(|&(v, c)| c * x[v]).sum::<f64>()),
        )
    }

    fn aty(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (row, terms) in self.a_rows.iter().enumerate() {
            for &(v, c) in terms {
                out[v] += c * y[row];
            }
        }
        out
    }

    fn gx(&self, x: &DVector<f64>) -> ConeVec {
        let lin = DVector::from_iterator(
            self.g_rows.len(),
            self.g_rows
                .iter()
                .map(|r| r.iter().map(|&(v, c)| c * x[v]).sum::<f64>()),
        );
        let mats = self
            .lmi
            .iter()
            .zip(&self.dims)
            .map(|(block, &d)| {
                let mut m = DMatrix::zeros(d, d);
                for (v, entries) in block {
                    let xv = x[*v];
                    if xv != 0.0 {
                        for &(i, j, c) in entries {
                            m[(i, j)] -= c * xv;
                        }
                    }
                }
                m
            })
            .collect();
        ConeVec { lin, mats }
    }

    fn gtz(&self, z: &ConeVec) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (row, terms) in self.g_rows.iter().enumerate() {
            for &(v, c) in terms {
                out[v] += c * z.lin[row];
            }
        }
        for (k, block) in self.lmi.iter().enumerate() {
            let zm = &z.mats[k];
            for (v, entries) in block {
                out[*v] -= entries.iter().map(|&(i, j, c)| c * zm[(i, j)]).sum::<f64>();
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// cone vectors

#[derive(Debug, Clone)]
struct ConeVec {
    lin: DVector<f64>,
    mats: Vec<DMatrix<f64>>,
}

impl ConeVec {
    fn zeros(data: &Data) -> Self {
        ConeVec {
            lin: DVector::zeros(data.h.lin.len()),
            mats: data.dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
        }
    }

    fn dot(&self, o: &ConeVec) -> f64 {
        self.lin.dot(&o.lin) + self.mats.iter().zip(&o.mats).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn axpy(&mut self, a: f64, o: &ConeVec) {
        self.lin.axpy(a, &o.lin, 1.0);
        for (m, om) in self.mats.iter_mut().zip(&o.mats) {
            m.zip_apply(om, |u, v| *u += a * v);
        }
    }

    fn scaled(mut self, a: f64) -> Self {
        self.lin *= a;
        for m in &mut self.mats {
            *m *= a;
        }
        self
    }

    fn add_identity(&mut self, a: f64) {
        self.lin.add_scalar_mut(a);
        for m in &mut self.mats {
            for i in 0..m.nrows() {
                m[(i, i)] += a;
            }
        }
    }

    fn min_eig(&self) -> f64 {
        let mut e = self.lin.iter().copied().fold(f64::INFINITY, f64::min);
        for m in &self.mats {
            if m.nrows() > 0 {
                let ev = SymmetricEigen::new(m.clone()).eigenvalues;
                e = e.min(ev.iter().copied().fold(f64::INFINITY, f64::min));
            }
        }
        e
    }

    fn is_finite(&self) -> bool {
        self.lin.iter().all(|v| v.is_finite()) && self.mats.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }
}

fn sym_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let ab = a * b;
    (&ab + ab.transpose()) * 0.5
}

// ---------------------------------------------------------------------------
// Nesterov-Todd scaling

#[derive(Debug, Clone)]
struct Scaling {
    d: DVector<f64>,
    r: Vec<DMatrix<f64>>,
    rti: Vec<DMatrix<f64>>,
    lam_lin: DVector<f64>,
    lam_mat: Vec<DVector<f64>>,
}

impl Scaling {
    fn identity(data: &Data) -> Self {
        let eye: Vec<DMatrix<f64>> = data.dims.iter().map(|&d| DMatrix::identity(d, d)).collect();
        Scaling {
            d: DVector::from_element(data.h.lin.len(), 1.0),
            r: eye.clone(),
            rti: eye,
            lam_lin: DVector::from_element(data.h.lin.len(), 1.0),
            lam_mat: data.dims.iter().map(|&d| DVector::from_element(d, 1.0)).collect(),
        }
    }

    /// Fold scaled iterates `s̃ = W⁻ᵀs`, `z̃ = Wz` into the scaling.
    fn update(&mut self, s: &ConeVec, z: &ConeVec) -> bool {
        for i in 0..self.d.len() {
            let (si, zi) = (s.lin[i], z.lin[i]);
            if !(si > 0.0 && zi > 0.0) {
                return false;
            }
            self.d[i] *= (si / zi).sqrt();
            self.lam_lin[i] = (si * zi).sqrt();
        }
        for k in 0..self.r.len() {
            let Some(l1) = s.mats[k].clone().cholesky() else { return false };
            let Some(l2) = z.mats[k].clone().cholesky() else { return false };
            let (l1, l2) = (l1.unpack(), l2.unpack());
            let svd = (l2.transpose() * &l1).svd(true, true);
            let (Some(u), Some(vt)) = (svd.u, svd.v_t) else { return false };
            let sv = svd.singular_values;
            if sv.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return false;
            }
            let isq = sv.map(|v| 1.0 / v.sqrt());
            let mut rv = &self.r[k] * l1 * vt.transpose();
            let mut tu = &self.rti[k] * l2 * u;
            for j in 0..sv.len() {
                rv.column_mut(j).scale_mut(isq[j]);
                tu.column_mut(j).scale_mut(isq[j]);
            }
            self.r[k] = rv;
            self.rti[k] = tu;
            self.lam_mat[k] = sv;
        }
        true
    }

    fn lambda(&self) -> ConeVec {
        ConeVec {
            lin: self.lam_lin.clone(),
            mats: self.lam_mat.iter().map(|l| DMatrix::from_diagonal(l)).collect(),
        }
    }

    /// `Wᵀ u`
    fn wt(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: u.lin.component_mul(&self.d),
            mats: u
                .mats
                .iter()
                .zip(&self.r)
                .map(|(m, r)| r * m * r.transpose())
                .collect(),
        }
    }

    /// `W⁻¹ u`
    fn winv(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: u.lin.component_div(&self.d),
            mats: u
                .mats
                .iter()
                .zip(&self.rti)
                .map(|(m, t)| t * m * t.transpose())
                .collect(),
        }
    }

    /// `W⁻ᵀ u`
    fn wt_inv(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: u.lin.component_div(&self.d),
            mats: u
                .mats
                .iter()
                .zip(&self.rti)
                .map(|(m, t)| t.transpose() * m * t)
                .collect(),
        }
    }

    /// Solve `λ ∘ u = r` for `u`.
    fn lambda_div(&self, r: &ConeVec) -> ConeVec {
        ConeVec {
            lin: r.lin.component_div(&self.lam_lin),
            mats: r
                .mats
                .iter()
                .zip(&self.lam_mat)
                .map(|(m, l)| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| 2.0 * m[(i, j)] / (l[i] + l[j])))
                .collect(),
        }
    }

    /// Largest `α` with `λ + α·dir` in the cone (may be infinite).
    fn max_step(&self, dir: &ConeVec) -> f64 {
        let mut a = f64::INFINITY;
        for i in 0..dir.lin.len() {
            if dir.lin[i] < 0.0 {
                a = a.min(-self.lam_lin[i] / dir.lin[i]);
            }
        }
        for (m, l) in dir.mats.iter().zip(&self.lam_mat) {
            if m.nrows() == 0 {
                continue;
            }
            let isq = l.map(|v| 1.0 / v.sqrt());
            let t = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * isq[i] * isq[j]);
            let e = SymmetricEigen::new(t)
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if e < 0.0 {
                a = a.min(-1.0 / e);
            }
        }
        a
    }
}

// ---------------------------------------------------------------------------
// reduced KKT system

fn robust_cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c);
    }
    let scale = m.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut delta = 1e-13 * scale;
    while delta <= 1e-3 * scale {
        let mut reg = m.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += delta;
        }
        if let Some(c) = reg.cholesky() {
            return Some(c);
        }
        delta *= 100.0;
    }
    None
}

struct Kkt<'a> {
    data: &'a Data,
    scaling: &'a Scaling,
    h: Vec<Cholesky<f64, Dyn>>,
    m: Option<Cholesky<f64, Dyn>>,
}

impl<'a> Kkt<'a> {
    /// Factor `H = Gᵀ(WᵀW)⁻¹G` per cluster and the Schur complement
    /// `M = A H⁻¹ Aᵀ`. `H` is formed as a Gram matrix of the scaled columns
    /// `W⁻ᵀG`, which keeps it symmetric positive semidefinite in floating point.
    fn factor(data: &'a Data, scaling: &'a Scaling) -> Option<Self> {
        let mut hs: Vec<DMatrix<f64>> = data
            .clusters
            .iter()
            .map(|c| DMatrix::zeros(c.vars.len(), c.vars.len()))
            .collect();

        for (row, terms) in data.g_rows.iter().enumerate() {
            let w = 1.0 / (scaling.d[row] * scaling.d[row]);
            for &(u, cu) in terms {
                let (ci, pu) = data.var_pos[u];
                for &(v, cv) in terms {
                    let pv = data.var_pos[v].1;
                    hs[ci][(pu, pv)] += w * cu * cv;
                }
            }
        }

        for (k, block) in data.lmi.iter().enumerate() {
            let Some((first, _)) = block.first() else { continue };
            let ci = data.var_pos[*first].0;
            let t = &scaling.rti[k];
            let d = t.nrows();
            let packed = d * (d + 1) / 2;
            let nnz: usize = block.iter().map(|(_, fu)| fu.len() * fu.len()).sum();
            if packed * block.len() > 8 * nnz {
                // Sparse coefficients: ⟨tᵀF_u t, tᵀF_v t⟩ = tr(F_u P F_v P) with P = t tᵀ.
                let pm = t * t.transpose();
                for (iu, (u, fu)) in block.iter().enumerate() {
                    let pu = data.var_pos[*u].1;
                    for (v, fv) in &block[iu..] {
                        let mut acc = 0.0;
                        for &(a, b, c) in fu {
                            for &(e, f, g) in fv {
                                acc += c * g * pm[(b, e)] * pm[(f, a)];
                            }
                        }
                        let pv = data.var_pos[*v].1;
                        hs[ci][(pu, pv)] += acc;
                        if pu != pv {
                            hs[ci][(pv, pu)] += acc;
                        }
                    }
                }
                continue;
            }
            // Columns are R⁻¹ F_u R⁻ᵀ packed as lower triangles, with the
            // off-diagonal entries weighted by √2 so that dot products match
            // the trace inner product.
            let mut phi = DMatrix::zeros(packed, block.len());
            let mut f = DMatrix::zeros(d, d);
            for (iu, (_, fu)) in block.iter().enumerate() {
                f.fill(0.0);
                for &(a, b, c) in fu {
                    f.ger(c, &t.row(a).transpose(), &t.row(b).transpose(), 1.0);
                }
                let mut col = phi.column_mut(iu);
                let mut pos = 0;
                for j in 0..d {
                    col[pos] = f[(j, j)];
                    pos += 1;
                    for i in j + 1..d {
                        col[pos] = std::f64::consts::SQRT_2 * 0.5 * (f[(i, j)] + f[(j, i)]);
                        pos += 1;
                    }
                }
            }
            let gram = phi.tr_mul(&phi);
            for (iu, (u, _)) in block.iter().enumerate() {
                let pu = data.var_pos[*u].1;
                for (iv, (v, _)) in block.iter().enumerate() {
                    hs[ci][(pu, data.var_pos[*v].1)] += gram[(iu, iv)];
                }
            }
        }

        let mut h = Vec::with_capacity(hs.len());
        for hm in hs {
            h.push(robust_cholesky(hm)?);
        }

        let m = if data.p > 0 {
            let mut m = DMatrix::zeros(data.p, data.p);
            for (cl, chol) in data.clusters.iter().zip(&h) {
                if cl.rows.is_empty() {
                    continue;
                }
                let mut bmat = DMatrix::zeros(cl.vars.len(), cl.rows.len());
                for &(r, v, c) in &cl.entries {
                    bmat[(v, r)] += c;
                }
                let y = chol.l_dirty().solve_lower_triangular(&bmat)?;
                let mc = y.tr_mul(&y);
                for (i, &ri) in cl.rows.iter().enumerate() {
                    for (j, &rj) in cl.rows.iter().enumerate() {
                        m[(ri, rj)] += mc[(i, j)];
                    }
                }
            }
            Some(robust_cholesky(m)?)
        } else {
            None
        };

        Some(Kkt { data, scaling, h, m })
    }

    fn h_solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.data.n);
        for (cl, chol) in self.data.clusters.iter().zip(&self.h) {
            let local = DVector::from_iterator(cl.vars.len(), cl.vars.iter().map(|&v| r[v]));
            let sol = chol.solve(&local);
            for (i, &v) in cl.vars.iter().enumerate() {
                out[v] = sol[i];
            }
        }
        out
    }

    /// Solve the KKT system with the cone right-hand side and unknown in
    /// scaled form: `bz̃ = W⁻ᵀ bz`, returning `z̃ = W z`.
    fn solve_once(
        &self,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bzt: &ConeVec,
    ) -> (DVector<f64>, DVector<f64>, ConeVec) {
        let data = self.data;
        let r = bx + data.gtz(&self.scaling.winv(bzt));
        let t = self.h_solve(&r);
        let (ux, uy) = match &self.m {
            Some(m) => {
                let rhs = data.ax(&t) - by;
                let uy = m.solve(&rhs);
                let ux = &t - self.h_solve(&data.aty(&uy));
                (ux, uy)
            }
            None => (t, DVector::zeros(0)),
        };
        let mut uzt = self.scaling.wt_inv(&data.gx(&ux));
        uzt.axpy(-1.0, bzt);
        (ux, uy, uzt)
    }

    fn solve(
        &self,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bzt: &ConeVec,
        refinement: usize,
    ) -> (DVector<f64>, DVector<f64>, ConeVec) {
        let data = self.data;
        let (mut ux, mut uy, mut uzt) = self.solve_once(bx, by, bzt);
        for _ in 0..refinement {
            let rx = bx - data.aty(&uy) - data.gtz(&self.scaling.winv(&uzt));
            let ry = by - data.ax(&ux);
            let mut rz = bzt.clone();
            rz.axpy(-1.0, &self.scaling.wt_inv(&data.gx(&ux)));
            rz.axpy(1.0, &uzt);
            log::trace!(
                "kkt residual {:.2e} {:.2e} {:.2e} (rhs {:.2e} {:.2e} {:.2e})",
                rx.norm(), ry.norm(), rz.norm(), bx.norm(), by.norm(), bzt.norm()
            );
            let (cx, cy, cz) = self.solve_once(&rx, &ry, &rz);
            ux += cx;
            uy += cy;
            uzt.axpy(1.0, &cz);
        }
        (ux, uy, uzt)
    }
}

// ---------------------------------------------------------------------------
// driver

struct Best {
    score: f64,
    x: DVector<f64>,
    y: DVector<f64>,
    stats: IterStats,
}

/// Solve a conic program. Errors only on malformed programs or when the very
/// first linear system cannot be factored; all other outcomes are reported
/// through [`Status`].
pub fn solve(prog: &ConicProgram, opts: &SolveOptions) -> Result<ConicSolution> {
    prog.check()?;
    let data = Data::new(prog);
    let n = data.n;
    let p = data.p;
    let nu = data.degree() as f64;

    let resx0 = data.c.norm().max(1.0);
    let resy0 = data.b.norm().max(1.0);
    let resz0 = data.h.norm().max(1.0);

    // Start point.
    let ident = Scaling::identity(&data);
    let kkt = Kkt::factor(&data, &ident)
        .ok_or_else(|| Error::Solver("cannot factor the initial KKT system".into()))?;
    // With the identity scaling, scaled and unscaled cone vectors coincide.
    let (mut x, _, uz) = kkt.solve(&DVector::zeros(n), &data.b, &data.h, opts.refinement);
    let mut s = uz.scaled(-1.0);
    let (_, mut y, mut z) = kkt.solve(&-&data.c, &DVector::zeros(p), &ConeVec::zeros(&data), opts.refinement);
    drop(kkt);
    let ts = -s.min_eig();
    if ts.is_finite() && ts >= -1e-8 * s.norm().max(1.0) {
        s.add_identity(1.0 + ts);
    }
    let tz = -z.min_eig();
    if tz.is_finite() && tz >= -1e-8 * z.norm().max(1.0) {
        z.add_identity(1.0 + tz);
    }
    data.project(&mut s);
    data.project(&mut z);
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let mut scaling = Scaling::identity(&data);
    if !scaling.update(&s, &z) {
        return Err(Error::Solver("initial point is not interior".into()));
    }

    let mut trace: Vec<IterStats> = Vec::new();
    let mut best: Option<Best> = None;
    let mut last_step = 0.0;
    let mut status = Status::MaxIter;
    let mut final_xy: Option<(DVector<f64>, DVector<f64>)> = None;

    for iter in 0..=opts.max_iter {
        // Residuals.
        let hrx = data.aty(&y) + data.gtz(&z);
        let rx = &hrx + &data.c * tau;
        let hry = data.ax(&x);
        let ry = &hry - &data.b * tau;
        let mut hrz = data.gx(&x);
        hrz.axpy(1.0, &s);
        let mut rz = hrz.clone();
        rz.axpy(-tau, &data.h);
        let cx = data.c.dot(&x);
        let by = data.b.dot(&y);
        let hz = data.h.dot(&z);
        let rt = kappa + cx + by + hz;
        let sz = s.dot(&z);

        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let gap = sz / (tau * tau);
        let pres = (ry.norm() / tau / resy0).max(rz.norm() / tau / resz0);
        let dres = rx.norm() / tau / resx0;
        let stats = IterStats {
            iter,
            pcost: pcost * data.cscale + data.constant,
            dcost: dcost * data.cscale + data.constant,
            gap: gap * data.cscale,
            pres,
            dres,
            tau,
            kappa,
            step: last_step,
        };
        log::trace!("ipm {stats:?}");
        trace.push(stats);

        let relgap = gap / pcost.abs().max(1.0);
        let score = pres.max(dres).max(relgap);
        if score.is_finite() && best.as_ref().map_or(true, |b| score < b.score) {
            best = Some(Best {
                score,
                x: &x / tau,
                y: &y / tau,
                stats,
            });
        }

        // Past the attainable accuracy the iterates drift; stop once they have
        // clearly left the best point instead of running to max_iter.
        let near = 1e3 * opts.tol_feas.max(opts.tol_gap);
        if let Some(b) = best.as_ref().filter(|b| b.score <= near) {
            if iter >= b.stats.iter + 5 || score > 1e3 * b.score {
                log::debug!("ipm: stalled at iteration {iter}, best was {}", b.stats.iter);
                break;
            }
        }
        if pres <= opts.tol_feas && dres <= opts.tol_feas && relgap <= opts.tol_gap {
            status = Status::Optimal;
            final_xy = Some((&x / tau, &y / tau));
            break;
        }
        if by + hz < 0.0 {
            let pinf = hrx.norm() / resx0 / -(by + hz);
            if pinf <= opts.tol_feas {
                status = Status::PrimalInfeasible;
                break;
            }
        }
        if cx < 0.0 {
            let dinf = (hry.norm() / resy0).max(hrz.norm() / resz0) / -cx;
            if dinf <= opts.tol_feas {
                status = Status::DualInfeasible;
                break;
            }
        }
        if iter == opts.max_iter {
            break;
        }

        let Some(kkt) = Kkt::factor(&data, &scaling) else {
            log::debug!("ipm: KKT factorization failed at iteration {iter}");
            break;
        };
        let mu = (sz + tau * kappa) / (nu + 1.0);
        let lam = scaling.lambda();
        let lam_sq = ConeVec {
            lin: lam.lin.component_mul(&lam.lin),
            mats: lam.mats.iter().map(|m| m * m).collect(),
        };

        // Direction along which τ moves.
        let ht = scaling.wt_inv(&data.h);
        let (qx, qy, qzt) = kkt.solve(&-&data.c, &data.b, &ht, opts.refinement);
        let q_dot = data.c.dot(&qx) + data.b.dot(&qy) + ht.dot(&qzt) - kappa / tau;
        let rzt = scaling.wt_inv(&rz);

        let direction = |eta: f64, rhs_s: &ConeVec, rhs_k: f64| {
            let u = scaling.lambda_div(rhs_s);
            let mut bzt = rzt.clone().scaled(-eta);
            bzt.axpy(-1.0, &u);
            let (px, py, pzt) = kkt.solve(&(&rx * -eta), &(&ry * -eta), &bzt, opts.refinement);
            let p_dot = data.c.dot(&px) + data.b.dot(&py) + ht.dot(&pzt);
            let dtau = (-eta * rt - rhs_k / tau - p_dot) / q_dot;
            let dx = px + &qx * dtau;
            let dy = py + &qy * dtau;
            let mut dzt = pzt;
            dzt.axpy(dtau, &qzt);
            let dkappa = (rhs_k - kappa * dtau) / tau;
            let mut dst = u;
            dst.axpy(-1.0, &dzt);
            (dx, dy, dtau, dkappa, dst, dzt)
        };

        let step_bound = |dst: &ConeVec, dzt: &ConeVec, dtau: f64, dkappa: f64| {
            let mut a = scaling.max_step(dst).min(scaling.max_step(dzt));
            if dtau < 0.0 {
                a = a.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-kappa / dkappa);
            }
            a
        };

        // Predictor.
        let rhs_aff = lam_sq.clone().scaled(-1.0);
        let (_, _, dtau_a, dkappa_a, dst_a, dzt_a) = direction(1.0, &rhs_aff, -tau * kappa);
        let alpha_aff = step_bound(&dst_a, &dzt_a, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // Corrector.
        let mut rhs_s = lam_sq.scaled(-1.0);
        rhs_s.add_identity(sigma * mu);
        let corr = ConeVec {
            lin: dst_a.lin.component_mul(&dzt_a.lin),
            mats: dst_a
                .mats
                .iter()
                .zip(&dzt_a.mats)
                .map(|(a, b)| sym_product(a, b))
                .collect(),
        };
        rhs_s.axpy(-1.0, &corr);
        let rhs_k = -tau * kappa + sigma * mu - dtau_a * dkappa_a;
        let (dx, dy, dtau, dkappa, dst, dzt) = direction(1.0 - sigma, &rhs_s, rhs_k);
        let amax = step_bound(&dst, &dzt, dtau, dkappa);
        let step = (0.99 * amax).min(1.0);
        if !(step.is_finite() && step > 1e-12) || !dst.is_finite() || !dzt.is_finite() {
            log::debug!("ipm: step collapsed at iteration {iter}");
            break;
        }
        drop(kkt);

        let mut s_sc = lam.clone();
        s_sc.axpy(step, &dst);
        let mut z_sc = lam;
        z_sc.axpy(step, &dzt);
        if !scaling.update(&s_sc, &z_sc) {
            log::debug!("ipm: scaling update failed at iteration {iter}");
            break;
        }
        let lam = scaling.lambda();
        s = scaling.wt(&lam);
        z = scaling.winv(&lam);
        if data.structured.iter().any(|&st| st) {
            // Rounding pushes embedded Hermitian blocks off their structured
            // subspace and nothing in the Newton system pulls them back, so
            // project and rebuild the scaling from the projected iterates.
            data.project(&mut s);
            data.project(&mut z);
            let mut fresh = Scaling::identity(&data);
            if fresh.update(&s, &z) {
                scaling = fresh;
            } else {
                log::trace!("ipm: structured rebuild of the scaling failed at iteration {iter}");
            }
        }
        x.axpy(step, &dx, 1.0);
        y.axpy(step, &dy, 1.0);
        tau += step * dtau;
        kappa += step * dkappa;
        last_step = step;
    }

    let iterations = trace.len().saturating_sub(1);
    let (x_out, y_out, stats) = match status {
        Status::Optimal => {
            let (xo, yo) = final_xy.expect("optimal iterate recorded");
            (xo, yo, *trace.last().expect("trace nonempty"))
        }
        Status::PrimalInfeasible | Status::DualInfeasible => {
            (DVector::zeros(0), DVector::zeros(0), *trace.last().expect("trace nonempty"))
        }
        Status::MaxIter => match best {
            Some(b) => (b.x, b.y, b.stats),
            None => return Err(Error::Solver("no finite iterate".into())),
        },
    };
    Ok(ConicSolution {
        status,
        x: x_out.iter().copied().collect(),
        objective: stats.pcost,
        dual_objective: stats.dcost,
        gap: stats.gap,
        primal_residual: stats.pres,
        dual_residual: stats.dres,
        iterations,
        eq_duals: y_out.iter().map(|v| v * data.cscale).collect(),
        trace,
    })
}
