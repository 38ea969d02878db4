use serde::{Deserialize, Serialize};

use super::vehicle::VehicleState;

/// Per-step reward split into its three terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// -1 on collision, else 0.
    pub collision: f64,
    /// 0.4 · clip((v - 20) / 10, 0, 1).
    pub speed: f64,
    /// 0.1 · lane / (lanes - 1).
    pub lane: f64,
    pub total: f64,
    /// (total + 1) / 1.5, in [0, 1].
    pub normalized: f64,
}

pub const COLLISION_WEIGHT: f64 = -1.0;
pub const SPEED_WEIGHT: f64 = 0.4;
pub const LANE_WEIGHT: f64 = 0.1;
pub const SPEED_RANGE: (f64, f64) = (20.0, 30.0);

impl RewardBreakdown {
    pub fn compute(ego: &VehicleState, collided: bool, lane_count: usize) -> Self {
        let forward_speed = ego.speed * ego.heading.cos();
        let (lo, hi) = SPEED_RANGE;
        let speed_frac = ((forward_speed - lo) / (hi - lo)).clamp(0.0, 1.0);
        let lane_frac = if lane_count > 1 {
            ego.lane_index as f64 / (lane_count - 1) as f64
        } else {
            0.0
        };
        let collision = if collided { COLLISION_WEIGHT } else { 0.0 };
        let speed = SPEED_WEIGHT * speed_frac;
        let lane = LANE_WEIGHT * lane_frac;
        let total = collision + speed + lane;
        RewardBreakdown {
            collision,
            speed,
            lane,
            total,
            normalized: (total + 1.0) / 1.5,
        }
    }
}
