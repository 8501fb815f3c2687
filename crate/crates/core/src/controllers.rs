//! Per-step control policies. Each takes the measured state and the actual
//! net load of one control step and returns the battery and grid powers.

use crate::battery::{feasible_power_bounds, step_soe, BatterySpec, BatteryState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlStepResult {
    pub p_b: f64,
    pub p_g: f64,
    pub new_state: BatteryState,
}

fn apply(spec: &BatterySpec, state: BatteryState, desired_p_b: f64, p_l: f64, dt: f64) -> ControlStepResult {
    let (lo, hi) = feasible_power_bounds(spec, state, dt);
    let p_b = desired_p_b.clamp(lo, hi);
    ControlStepResult {
        p_b,
        p_g: p_l - p_b,
        new_state: step_soe(spec, state, p_b, dt),
    }
}

/// Rule-based control: the battery absorbs the whole net load as far as
/// its limits allow, the grid takes the remainder.
pub fn rbc_step(spec: &BatterySpec, state: BatteryState, p_l: f64, dt: f64) -> ControlStepResult {
    apply(spec, state, p_l, p_l, dt)
}

/// Holds the grid exchange at the planned value, letting the battery take
/// the deviations.
pub fn const_grid_step(
    planned_p_g: f64,
    spec: &BatterySpec,
    state: BatteryState,
    p_l_actual: f64,
    dt: f64,
) -> ControlStepResult {
    apply(spec, state, p_l_actual - planned_p_g, p_l_actual, dt)
}

/// Holds the battery at the planned setpoint; the grid takes the deviations.
pub fn const_bat_step(
    planned_p_b: f64,
    spec: &BatterySpec,
    state: BatteryState,
    p_l_actual: f64,
    dt: f64,
) -> ControlStepResult {
    apply(spec, state, planned_p_b, p_l_actual, dt)
}
