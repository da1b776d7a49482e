use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::motion::rotation::wrap_angle;

/// Damping coefficients in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringParams {
    pub c_pos: f64,
    pub c_heading: f64,
}

impl Default for SpringParams {
    fn default() -> Self {
        Self { c_pos: 5.0 * LN_2, c_heading: 20.0 * LN_2 }
    }
}

impl SpringParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.c_pos > 0.0 && self.c_heading > 0.0 {
            Ok(())
        } else {
            Err(format!("damping must be positive, got {} / {}", self.c_pos, self.c_heading))
        }
    }
}

/// Remaining offset to the target of a critically damped spring.
///
/// `v0` is the initial rate of change of the gap. For a body at `p` chasing a
/// fixed target, the gap is `xT - p`, so `v0 = -p'(0)`.
pub fn spring_gap(x0: f64, xt: f64, v0: f64, c: f64, t: f64) -> f64 {
    (xt - x0 + (v0 + c / 2.0 * (xt - x0)) * t) * (-c / 2.0 * t).exp()
}

/// Time for the gap envelope to halve when `v0 = 0`.
pub fn half_life(c: f64) -> f64 {
    2.0 * LN_2 / c
}

/// Planar root state used as the spring's starting point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RootState {
    pub pos: [f64; 2],
    pub heading: f64,
    pub vel: [f64; 2],
    pub yaw_rate: f64,
}

/// Goal the spring chases and the keyframe placement after `horizon` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringTarget {
    pub goal_pos: [f64; 2],
    pub goal_heading: f64,
    pub pos: [f64; 2],
    pub heading: f64,
}

/// Target keyframe placement for a desired planar velocity and facing.
///
/// The goal is where the root would be after `horizon` seconds at the desired
/// velocity; the keyframe is the goal minus the spring gap left at that time.
/// Headings take the shortest arc and the result is wrapped to (-pi, pi].
pub fn spring_targets(current: &RootState, vel_des: [f64; 2], heading_des: f64, params: &SpringParams, horizon: f64) -> SpringTarget {
    let mut goal_pos = [0.0; 2];
    let mut pos = [0.0; 2];
    for k in 0..2 {
        let x0 = current.pos[k];
        let xt = x0 + vel_des[k] * horizon;
        goal_pos[k] = xt;
        pos[k] = xt - spring_gap(x0, xt, -current.vel[k], params.c_pos, horizon);
    }
    let h0 = current.heading;
    let ht = h0 + wrap_angle(heading_des - h0);
    let heading = wrap_angle(ht - spring_gap(h0, ht, -current.yaw_rate, params.c_heading, horizon));
    SpringTarget { goal_pos, goal_heading: wrap_angle(ht), pos, heading }
}

/// Planar velocity for a speed along a compass direction in degrees.
pub fn velocity_from_direction(speed: f64, direction_deg: f64) -> [f64; 2] {
    let a = direction_deg * PI / 180.0;
    [speed * a.cos(), speed * a.sin()]
}
