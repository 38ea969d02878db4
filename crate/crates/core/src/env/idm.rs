//! Car-following (IDM) acceleration.

use serde::{Deserialize, Serialize};

use super::vehicle::VehicleState;

/// Per-vehicle driver parameters: IDM car following plus MOBIL lane changing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpcParams {
    /// Desired speed v0 (m/s).
    pub desired_speed: f64,
    /// Time headway T (s).
    pub time_headway: f64,
    /// Minimum jam distance s0 (m).
    pub min_gap: f64,
    /// Maximum acceleration a_max (m/s²).
    pub max_accel: f64,
    /// Comfortable deceleration b (m/s²).
    pub comfort_decel: f64,
    /// Free-road exponent δ.
    pub delta: f64,
    /// Emergency braking bound; accelerations are clipped to `[-hard_brake, max_accel]`.
    pub hard_brake: f64,
    /// MOBIL politeness factor in [0, 1].
    pub politeness: f64,
    /// MOBIL incentive threshold (m/s²).
    pub lane_change_threshold: f64,
    /// MOBIL safety limit: largest braking a lane change may impose on the new follower (m/s²).
    pub safe_braking: f64,
}

impl Default for NpcParams {
    fn default() -> Self {
        NpcParams {
            desired_speed: 25.0,
            time_headway: 1.5,
            min_gap: 10.0,
            max_accel: 3.0,
            comfort_decel: 5.0,
            delta: 4.0,
            hard_brake: 9.0,
            politeness: 0.1,
            lane_change_threshold: 0.2,
            safe_braking: 2.0,
        }
    }
}

impl NpcParams {
    pub fn is_valid(&self) -> bool {
        let positive = [
            self.desired_speed,
            self.time_headway,
            self.min_gap,
            self.max_accel,
            self.comfort_decel,
            self.delta,
            self.hard_brake,
            self.lane_change_threshold,
            self.safe_braking,
        ];
        positive.iter().all(|v| v.is_finite() && *v > 0.0) && (0.0..=1.0).contains(&self.politeness)
    }
}

/// IDM acceleration of `follower` behind `leader` (or on a free road).
///
/// `a = a_max [1 - (v/v0)^δ - (s*/s)²]` with `s* = s0 + vT + vΔv / (2 sqrt(a_max b))`,
/// clipped to `[-hard_brake, a_max]`. A non-positive gap yields full emergency braking.
pub fn idm_acceleration(follower: &VehicleState, leader: Option<&VehicleState>, p: &NpcParams) -> f64 {
    let v = follower.speed;
    let mut accel = p.max_accel * (1.0 - (v / p.desired_speed).powf(p.delta));
    if let Some(leader) = leader {
        let gap = follower.gap_to(leader);
        if gap <= 0.0 {
            return -p.hard_brake;
        }
        let dv = v - leader.speed;
        let desired = p.min_gap + v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
        accel -= p.max_accel * (desired / gap).powi(2);
    }
    accel.clamp(-p.hard_brake, p.max_accel)
}
