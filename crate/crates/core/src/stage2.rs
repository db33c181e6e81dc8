//! Rank-one voltages for a fixed charging schedule.
//!
//! `Trace(W) − λmax(W)` vanishes exactly on rank-one `W ⪰ 0`. Its concave
//! part is linearized at the current top eigenvector `w`: since
//! `λmax(W) ≥ wᴴ W w`, the surrogate `Trace(W) − wᴴ W w` bounds the residual
//! from above and every pass can only lower `F + μ₂ (Trace − λmax)`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Complex64;
use crate::linalg::{hermitian_eigen, top_eigen};
use crate::relaxation::{accept, build_sdr, extract, recover_voltage, HorizonProblem, HorizonSolution, SdrOptions, TauMode};
use crate::scenario::ChargingSchedule;
use crate::sdp::{self, LinExpr, SolveOptions};

/// Eigenvalues below `-PSD_TOL · max(1, λmax)` mean the matrix is not PSD.
pub const PSD_TOL: f64 = 1e-8;

/// Which slots carry the rank penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalized {
    /// Only the slot about to be applied.
    Slot(usize),
    /// Every slot of the horizon.
    All,
}

#[derive(Debug, Clone)]
pub struct Stage2Options {
    pub mu2: f64,
    /// Stop once `Trace − λmax ≤ epsilon · Trace` on every penalized slot.
    pub epsilon: f64,
    pub max_iter: usize,
    pub penalized: Penalized,
    pub angle_limits: bool,
    pub solver: SolveOptions,
}

impl Default for Stage2Options {
    fn default() -> Self {
        Stage2Options {
            mu2: 10.0,
            epsilon: 1e-4,
            max_iter: 50,
            penalized: Penalized::All,
            angle_limits: true,
            solver: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage2Iter {
    pub kappa: usize,
    /// `F + μ₂ Σ (Trace − λmax)` over the penalized slots.
    pub objective: f64,
    /// `Trace − λmax` per penalized slot.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Stage2Result {
    pub solution: HorizonSolution,
    /// Absolute slots that carried the penalty.
    pub penalized_slots: Vec<usize>,
    /// `√λmax · w_max` per horizon slot, phase zero at the first bus.
    pub voltages: Vec<Vec<Complex64>>,
    pub trace: Vec<Stage2Iter>,
    /// Every penalized slot met the residual tolerance.
    pub rank_one: bool,
    /// Passes whose objective came out above the previous one and were dropped.
    pub rejected_passes: usize,
}

impl Stage2Result {
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }

    /// Generation cost plus the (fixed) charging cost.
    pub fn total_cost(&self) -> f64 {
        self.solution.total_cost()
    }

    pub fn voltage_at(&self, slot: usize) -> &[Complex64] {
        &self.voltages[slot - self.solution.first_slot]
    }

    /// `(Trace − λmax) / Trace` at `slot`.
    pub fn relative_residual(&self, slot: usize) -> f64 {
        let w = self.solution.w_at(slot);
        let tr = trace_re(w);
        rank_residual(w).map_or(f64::INFINITY, |r| r / tr.max(f64::MIN_POSITIVE))
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.trace
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective + slack * w[0].objective.abs().max(1.0))
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("kappa,objective");
        for s in &self.penalized_slots {
            out.push_str(&format!(",residual_{s}"));
        }
        out.push('\n');
        for r in &self.trace {
            out.push_str(&format!("{},{}", r.kappa, r.objective));
            for x in &r.residuals {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }
}

fn trace_re(w: &DMatrix<Complex64>) -> f64 {
    (0..w.nrows()).map(|k| w[(k, k)].re).sum()
}

/// `Trace(W) − λmax(W)`, the sum of all eigenvalues but the largest.
pub fn rank_residual(w: &DMatrix<Complex64>) -> Result<f64> {
    if w.nrows() != w.ncols() {
        return Err(Error::Domain("rank residual of a non-square matrix".into()));
    }
    if w.nrows() == 0 {
        return Ok(0.0);
    }
    let (values, _) = hermitian_eigen(w);
    let n = values.len();
    let top = values[n - 1];
    let min = values[0];
    if min < -PSD_TOL * top.abs().max(1.0) {
        return Err(Error::Domain(format!("matrix is not PSD (eigenvalue {min:.3e})")));
    }
    Ok((trace_re(w) - top).max(0.0))
}

fn merit(sol: &HorizonSolution, slots: &[usize], mu2: f64) -> Result<(f64, Vec<f64>)> {
    let residuals = slots
        .iter()
        .map(|&s| rank_residual(sol.w_at(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok((sol.total_cost() + mu2 * residuals.iter().sum::<f64>(), residuals))
}

fn done(sol: &HorizonSolution, slots: &[usize], residuals: &[f64], eps: f64) -> bool {
    slots
        .iter()
        .zip(residuals)
        .all(|(&s, &r)| r <= eps * trace_re(sol.w_at(s)))
}

/// Run the second stage on `hp` with the charging schedule fixed to `tau`.
pub fn stage2_solve(hp: &HorizonProblem<'_>, tau: &ChargingSchedule, opts: &Stage2Options) -> Result<Stage2Result> {
    if !(opts.mu2 >= 0.0) || !(opts.epsilon > 0.0) {
        return Err(Error::Config("mu2 must be >= 0 and epsilon > 0".into()));
    }
    let slots: Vec<usize> = match opts.penalized {
        Penalized::Slot(s) if hp.slots().contains(&s) => vec![s],
        Penalized::Slot(s) => {
            return Err(Error::Domain(format!(
                "penalized slot {s} outside horizon [{}, {}]",
                hp.first_slot,
                hp.last_slot()
            )))
        }
        Penalized::All => hp.slots().collect(),
    };
    let sdr_opts = SdrOptions {
        tau: TauMode::Fixed(tau),
        angle_limits: opts.angle_limits,
    };
    let (prog, layout) = build_sdr(hp, &sdr_opts)?;
    let sol = sdp::solve(&prog, &opts.solver)?;
    accept(&sol, &opts.solver, "fixed-schedule relaxation")?;
    let mut current = extract(hp, &layout, &sol);
    let (objective, residuals) = merit(&current, &slots, opts.mu2)?;
    let mut converged = done(&current, &slots, &residuals, opts.epsilon);
    let mut trace = vec![Stage2Iter {
        kappa: 0,
        objective,
        residuals,
    }];

    let mut rejected = 0;
    let mut kappa = 0;
    while !converged && kappa < opts.max_iter {
        kappa += 1;
        let (mut prog, layout) = build_sdr(hp, &sdr_opts)?;
        let mut tops = Vec::with_capacity(slots.len());
        for &s in &slots {
            let off = s - hp.first_slot;
            let top = top_eigen(current.w_at(s));
            if top.gap <= 1e-9 * top.value.abs().max(1.0) {
                log::debug!("stage 2: slot {s} has a repeated top eigenvalue; direction is not unique");
            }
            let w: Vec<Complex64> = top.vector.iter().copied().collect();
            let block = &layout.blocks[off];
            let penalty: LinExpr = block.trace() - block.quadratic_form(&w);
            prog.add_objective(&penalty, opts.mu2);
            tops.push(w);
        }
        let sol = sdp::solve(&prog, &opts.solver)?;
        accept(&sol, &opts.solver, "stage-2 penalty pass")?;
        let next = extract(hp, &layout, &sol);
        let (objective, residuals) = merit(&next, &slots, opts.mu2)?;

        for ((&s, w), &r) in slots.iter().zip(&tops).zip(&residuals) {
            let wm = next.w_at(s);
            let wv = nalgebra::DVector::from_column_slice(w);
            let surrogate = trace_re(wm) - (wv.adjoint() * wm * &wv)[(0, 0)].re;
            let tol = 1e-8 * trace_re(wm).max(1.0);
            if r > surrogate + tol {
                return Err(Error::Solver(format!(
                    "slot {s}: rank residual {r:.3e} exceeds its surrogate {surrogate:.3e}"
                )));
            }
        }

        let prev = trace.last().expect("trace starts with the relaxation");
        if objective > prev.objective + 1e-8 * prev.objective.abs().max(1.0) {
            log::debug!(
                "stage 2: pass {kappa} rose from {} to {objective}; keeping the previous iterate",
                prev.objective
            );
            rejected += 1;
            break;
        }
        log::trace!("stage 2: κ={kappa} objective {objective} residuals {residuals:?}");
        converged = done(&next, &slots, &residuals, opts.epsilon);
        trace.push(Stage2Iter {
            kappa,
            objective,
            residuals,
        });
        current = next;
    }
    if !converged {
        log::info!(
            "stage 2: residuals {:?} above tolerance after {kappa} passes",
            trace.last().map(|r| &r.residuals)
        );
    }

    let voltages = current.w.iter().map(recover_voltage).collect();
    Ok(Stage2Result {
        solution: current,
        penalized_slots: slots,
        voltages,
        trace,
        rank_one: converged,
        rejected_passes: rejected,
    })
}

#[cfg(test)]
mod tests;
