//! Binary charging decisions from the relaxed horizon program.
//!
//! With the slot counts `Σ_t τ(t) = τ̄` in place, a schedule in `[0, 1]` is
//! binary exactly when `g(τ) = Σ Σ τ^L` reaches `τ̄ = Σ τ̄_k`. The penalty
//! `μ₁ (1/g(τ) − 1/τ̄)` is handled by successive linearization: `x^L` is
//! convex, so the tangent `g⁽ᵏ⁾` minorizes `g` and `1/g⁽ᵏ⁾` majorizes the
//! penalty. Each pass is then a convex program whose optimum cannot be worse
//! than the current iterate.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::relaxation::{accept, build_sdr, extract, HorizonProblem, HorizonSolution, SdrLayout, SdrOptions, TauMode};
use crate::scenario::{ChargingSchedule, ScheduleMode};
use crate::sdp::{self, LinExpr, SolveOptions};

#[derive(Debug, Clone)]
pub struct Stage1Options {
    pub mu1: f64,
    /// Exponent `L > 1` of `g`.
    pub exponent: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    /// Entries closer than this to `{0, 1}` count as binary.
    pub binary_tol: f64,
    pub angle_limits: bool,
    pub solver: SolveOptions,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Stage1Options {
            mu1: 1.0,
            exponent: 1.5,
            epsilon: 1e-4,
            max_iter: 50,
            binary_tol: 1e-3,
            angle_limits: true,
            solver: SolveOptions::default(),
        }
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stage1Iter {
    pub kappa: usize,
    /// `F + μ₁ (1/g(τ) − 1/τ̄)` at the iterate.
    pub objective: f64,
    /// `F` alone (generation plus charging cost).
    pub cost: f64,
    /// `1/g⁽ᵏ⁻¹⁾(τ) − 1/τ̄`, the stopping quantity; `1/g − 1/τ̄` at κ = 0.
    pub penalty: f64,
    pub g: f64,
    pub max_binary_violation: f64,
}

#[derive(Debug, Clone)]
pub struct Stage1Result {
    /// Rounded and repaired schedule.
    pub schedule: ChargingSchedule,
    /// Final relaxed iterate, before rounding.
    pub relaxed: HorizonSolution,
    /// Value of the initial relaxation.
    pub sdr_value: f64,
    pub trace: Vec<Stage1Iter>,
    /// False when the iteration stopped on `max_iter` or left entries
    /// farther than `binary_tol` from `{0, 1}`.
    pub binary: bool,
}

impl Stage1Result {
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }

    /// Relaxed cost `F` of the final iterate.
    pub fn relaxed_value(&self) -> f64 {
        self.relaxed.total_cost()
    }

    /// Whether the penalized objective never rose by more than `slack`
    /// relative to its magnitude.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.trace
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective + slack * w[0].objective.abs().max(1.0))
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("kappa,objective,penalty,g,max_binary_violation\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.kappa, r.objective, r.penalty, r.g, r.max_binary_violation
            ));
        }
        out
    }
}

fn check_exponent(l: f64) -> Result<()> {
    if !(l > 1.0 && l.is_finite()) {
        return Err(Error::Domain(format!("exponent L must be > 1, got {l}")));
    }
    Ok(())
}

/// `g(τ) = Σ_tasks Σ_slots τ^L`.
pub fn g_value(tau: &ChargingSchedule, l: f64) -> Result<f64> {
    check_exponent(l)?;
    let mut g = 0.0;
    for &v in tau.values() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("charging value {v} outside [0, 1]")));
        }
        g += v.powf(l);
    }
    Ok(g)
}

/// Value at `tau` of the tangent of `g` taken at `tau_k`:
/// `L Σ (τᵏ)^{L−1} τ − (L−1) Σ (τᵏ)^L`.
pub fn g_linearized(tau: &ChargingSchedule, tau_k: &ChargingSchedule, l: f64) -> f64 {
    tau.values()
        .iter()
        .zip(tau_k.values())
        .map(|(&x, &xk)| {
            let xk = xk.clamp(0.0, 1.0);
            l * xk.powf(l - 1.0) * x - (l - 1.0) * xk.powf(l)
        })
        .sum()
}

/// The tangent as an affine expression over the layout's charging variables.
pub fn g_linearized_expr(layout: &SdrLayout, tau_k: &ChargingSchedule, l: f64) -> LinExpr {
    let mut e = LinExpr::zero();
    for (row, slot, v) in layout.tau_vars() {
        let xk = tau_k.get(row, slot).clamp(0.0, 1.0);
        if xk > 0.0 {
            e.add_term(v, l * xk.powf(l - 1.0));
            e.constant -= (l - 1.0) * xk.powf(l);
        }
    }
    e
}

/// Round at 0.5, then fix each task's count to `required[row]` inside its
/// window. Missing slots go to the largest remaining values first, surplus
/// slots leave from the smallest; ties favour charging earlier.
pub fn round_and_repair(tau: &ChargingSchedule, windows: &[(usize, usize)], required: &[usize]) -> Result<ChargingSchedule> {
    let mut out = ChargingSchedule::zeros(tau.task_ids.clone(), tau.first_slot, tau.num_slots, ScheduleMode::Binary);
    for row in 0..tau.num_tasks() {
        let (lo, hi) = windows[row];
        let mut slots: Vec<usize> = (lo..=hi).filter(|s| tau.slots().contains(s)).collect();
        if slots.len() < required[row] {
            return Err(Error::Infeasible(format!(
                "task {} needs {} slots, window has {}",
                tau.task_ids[row],
                required[row],
                slots.len()
            )));
        }
        // Descending value, earlier slot first on ties.
        slots.sort_by(|&a, &b| tau.get(row, b).total_cmp(&tau.get(row, a)).then(a.cmp(&b)));
        let mut on: Vec<bool> = slots.iter().map(|&s| tau.get(row, s) >= 0.5).collect();
        let mut count = on.iter().filter(|&&b| b).count();
        let mut i = 0;
        while count < required[row] {
            if !on[i] {
                on[i] = true;
                count += 1;
            }
            i += 1;
        }
        let mut j = slots.len();
        while count > required[row] {
            j -= 1;
            if on[j] {
                on[j] = false;
                count -= 1;
            }
        }
        for (k, &s) in slots.iter().enumerate() {
            if on[k] {
                out.set(row, s, 1.0);
            }
        }
    }
    Ok(out)
}

fn record(kappa: usize, sol: &HorizonSolution, penalty: f64, opts: &Stage1Options, total: f64) -> Result<Stage1Iter> {
    let g = g_value(&sol.tau, opts.exponent)?;
    let cost = sol.total_cost();
    Ok(Stage1Iter {
        kappa,
        objective: cost + opts.mu1 * (1.0 / g - 1.0 / total),
        cost,
        penalty,
        g,
        max_binary_violation: sol.tau.max_binary_violation(),
    })
}

/// Run the first stage on `hp`: the relaxation with slot counts, then the
/// linearized penalty passes until `1/g⁽ᵏ⁾ − 1/τ̄ < ε`.
pub fn stage1_solve(hp: &HorizonProblem<'_>, opts: &Stage1Options) -> Result<Stage1Result> {
    check_exponent(opts.exponent)?;
    if !(opts.mu1 >= 0.0) || !(opts.epsilon > 0.0) {
        return Err(Error::Config("mu1 must be >= 0 and epsilon > 0".into()));
    }
    let sdr_opts = SdrOptions {
        tau: TauMode::SlotCount,
        angle_limits: opts.angle_limits,
    };
    let (prog, layout) = build_sdr(hp, &sdr_opts)?;
    let sol = sdp::solve(&prog, &opts.solver)?;
    accept(&sol, &opts.solver, "stage-1 relaxation")?;
    let mut current = extract(hp, &layout, &sol);
    let sdr_value = current.total_cost();
    let total = hp.total_required() as f64;

    let windows = hp.windows();
    let required = hp.required();
    if total == 0.0 {
        let schedule = round_and_repair(&current.tau, &windows, &required)?;
        let row = Stage1Iter {
            kappa: 0,
            objective: sdr_value,
            cost: sdr_value,
            penalty: 0.0,
            g: 0.0,
            max_binary_violation: 0.0,
        };
        return Ok(Stage1Result {
            schedule,
            relaxed: current,
            sdr_value,
            trace: vec![row],
            binary: true,
        });
    }

    let g0 = g_value(&current.tau, opts.exponent)?;
    let mut trace = vec![record(0, &current, 1.0 / g0 - 1.0 / total, opts, total)?];
    let mut converged = trace[0].penalty < opts.epsilon;

    let mut kappa = 0;
    while !converged && kappa < opts.max_iter {
        kappa += 1;
        let tau_k = current.tau.clone();
        let (mut prog, layout) = build_sdr(hp, &sdr_opts)?;
        let g_lin = g_linearized_expr(&layout, &tau_k, opts.exponent);
        let s = prog.add_var(format!("pen{kappa}"), Some(0.0), None);
        // g_lin · s ≥ 1
        prog.add_rotated_cone(g_lin, s.into(), LinExpr::constant(1.0));
        prog.add_objective(&s.into(), opts.mu1);
        prog.add_objective(&LinExpr::constant(-1.0 / total), opts.mu1);
        for (row, slot, v) in layout.tau_vars() {
            let xk = tau_k.get(row, slot);
            if xk > 0.0 {
                prog.add_ge(LinExpr::term(v, opts.exponent), (opts.exponent - 1.0) * xk);
            }
        }
        let sol = sdp::solve(&prog, &opts.solver)?;
        accept(&sol, &opts.solver, "stage-1 penalty pass")?;
        let next = extract(hp, &layout, &sol);
        let gl = g_linearized(&next.tau, &tau_k, opts.exponent);
        let penalty = if gl > 0.0 { 1.0 / gl - 1.0 / total } else { f64::INFINITY };
        let row = record(kappa, &next, penalty, opts, total)?;
        let prev = trace.last().expect("trace starts with the relaxation");
        if row.objective > prev.objective + 1e-8 * prev.objective.abs().max(1.0) {
            // The previous iterate is feasible for this pass, so a worse
            // point can only come from solver inaccuracy.
            log::debug!(
                "stage 1: pass {kappa} rose from {} to {}; keeping the previous iterate",
                prev.objective,
                row.objective
            );
            break;
        }
        log::trace!("stage 1: κ={kappa} objective {} penalty {penalty:.3e} g {}", row.objective, row.g);
        converged = penalty < opts.epsilon;
        trace.push(row);
        current = next;
    }

    let violation = current.tau.max_binary_violation();
    let binary = converged && violation <= opts.binary_tol;
    if !binary {
        log::info!(
            "stage 1: stopped after {kappa} passes with penalty {:.3e}, binary violation {violation:.2e}",
            trace.last().map_or(f64::NAN, |r| r.penalty)
        );
    }
    let schedule = round_and_repair(&current.tau, &windows, &required)?;
    Ok(Stage1Result {
        schedule,
        relaxed: current,
        sdr_value,
        trace,
        binary,
    })
}
