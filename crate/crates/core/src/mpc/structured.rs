//! Exact dynamic programming over the stored energy.
//!
//! With `0 ≤ c_exp ≤ c_imp` and `c_deg ≥ 0` the one-step cost as a function
//! of the energy change is convex piecewise linear, so every cost-to-go
//! function is too and the backward recursion reduces to slope merges.
//! Idle losses from simultaneous charge and discharge or import and export
//! never pay under those prices, so this recursion yields the optimum of the
//! split-variable linear program.

use super::pwl::ConvexPwl;
use super::ScheduleProblem;

/// Ties within this many euros count as equal when picking a step.
const TIE_TOLERANCE: f64 = 1e-10;

/// Stage cost over the energy change `Δ = e(k+1) − e(k)` of step `k`.
fn stage_cost(problem: &ScheduleProblem, k: usize) -> ConvexPwl {
    let s = problem.spec();
    let dt = problem.dt();
    let load = problem.load()[k];
    let (c_imp, c_exp) = problem.prices()[k];
    let lo = -dt * s.p_max / s.eta_dis;
    let hi = -s.eta_ch * dt * s.p_min;

    let dis_imp = c_imp * s.eta_dis - s.c_deg;
    let dis_exp = c_exp * s.eta_dis - s.c_deg;
    let chg_imp = c_imp / s.eta_ch;
    let chg_exp = c_exp / s.eta_ch;

    let mut raw = Vec::with_capacity(4);
    if load >= s.p_max {
        raw.push((-lo, dis_imp));
    } else if load <= 0.0 {
        raw.push((-lo, dis_exp));
    } else {
        let d = -dt * load / s.eta_dis;
        raw.push((d - lo, dis_exp));
        raw.push((-d, dis_imp));
    }
    if load >= 0.0 {
        raw.push((hi, chg_imp));
    } else if load <= s.p_min {
        raw.push((hi, chg_exp));
    } else {
        let d = -s.eta_ch * dt * load;
        raw.push((d, chg_exp));
        raw.push((hi - d, chg_imp));
    }

    let mut segments: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
    for (len, slope) in raw {
        if len <= 0.0 {
            continue;
        }
        match segments.last_mut() {
            Some(last) if last.1 == slope => last.0 += len,
            _ => segments.push((len, slope)),
        }
    }
    if segments.is_empty() {
        segments.push((0.0, 0.0));
    }
    let start_value = problem.cost_at_power(k, s.p_max);
    ConvexPwl::new(lo, start_value, segments)
}

fn merge_sorted(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>, lo: f64, hi: f64) -> Vec<f64> {
    let mut a = a.peekable();
    let mut b = b.peekable();
    let mut out = vec![lo];
    loop {
        let next = match (a.peek(), b.peek()) {
            (Some(&x), Some(&y)) => {
                if x <= y {
                    a.next()
                } else {
                    b.next()
                }
            }
            (Some(_), None) => a.next(),
            (None, Some(_)) => b.next(),
            (None, None) => None,
        };
        let Some(x) = next else { break };
        if x > lo && x < hi && x > *out.last().unwrap() {
            out.push(x);
        }
    }
    if hi > *out.last().unwrap() {
        out.push(hi);
    }
    out
}

/// Optimal battery power per step, choosing among equally cheap steps the
/// one with the smallest battery power, earliest step first.
pub(crate) fn solve(problem: &ScheduleProblem) -> Vec<f64> {
    let s = problem.spec();
    let dt = problem.dt();
    let steps = problem.load().len();

    let stages: Vec<ConvexPwl> = (0..steps).map(|k| stage_cost(problem, k)).collect();
    let mut values = vec![ConvexPwl::zero_on(s.e_min, s.e_max); steps + 1];
    for k in (0..steps).rev() {
        let reached = stages[k].reflect().inf_convolve(&values[k + 1]);
        values[k] = reached
            .restrict(s.e_min, s.e_max)
            .expect("holding the battery idle keeps every SoE reachable");
    }

    let mut e = problem.e0();
    let mut powers = Vec::with_capacity(steps);
    for k in 0..steps {
        let f = &stages[k];
        let v = &values[k + 1];
        let lo = f.start().max(s.e_min - e);
        let hi = f.end().min(s.e_max - e).max(lo);
        let with_zero = [0.0];
        let candidates = merge_sorted(
            merge_sorted(f.breakpoints(), with_zero.iter().copied(), lo, hi).into_iter(),
            v.breakpoints().map(|x| x - e),
            lo,
            hi,
        );
        let shifted: Vec<f64> = candidates.iter().map(|d| e + d).collect();
        let stage_values = f.eval_sorted(&candidates);
        let future_values = v.eval_sorted(&shifted);
        let totals: Vec<f64> = stage_values.iter().zip(&future_values).map(|(a, b)| a + b).collect();
        let best = totals.iter().copied().fold(f64::INFINITY, f64::min);
        let cutoff = best + TIE_TOLERANCE.max(best.abs() * 1e-12);
        let first = totals.iter().position(|&g| g <= cutoff).unwrap_or(0);
        let last = totals.iter().rposition(|&g| g <= cutoff).unwrap_or(first);
        let delta = 0.0_f64.clamp(candidates[first], candidates[last]);

        let p = if delta < 0.0 {
            -delta * s.eta_dis / dt
        } else if delta > 0.0 {
            -delta / (s.eta_ch * dt)
        } else {
            0.0
        };
        let p = p.clamp(s.p_min, s.p_max);
        e = (e + crate::battery::soe_delta(s, p, dt)).clamp(s.e_min, s.e_max);
        powers.push(p);
    }
    powers
}

/// Optimal objective of the relaxed program, read off the first value
/// function. Used to cross-check the forward pass.
#[cfg(test)]
pub(crate) fn optimal_value(problem: &ScheduleProblem) -> f64 {
    let s = problem.spec();
    let steps = problem.load().len();
    let mut value = ConvexPwl::zero_on(s.e_min, s.e_max);
    for k in (0..steps).rev() {
        let reached = stage_cost(problem, k).reflect().inf_convolve(&value);
        value = reached.restrict(s.e_min, s.e_max).unwrap();
    }
    value.eval(problem.e0())
}
