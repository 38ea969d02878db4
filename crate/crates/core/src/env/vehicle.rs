use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Kinematic record of one vehicle on the road.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal position of the center (m).
    pub x: f64,
    /// Lateral position of the center (m); lane `i` is centered at `i * lane_width`.
    pub y: f64,
    pub heading: f64,
    /// Speed along the heading (m/s), never negative.
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    /// Nearest lane, 0 is leftmost.
    pub lane_index: usize,
    pub alive: bool,
}

impl VehicleState {
    pub fn in_lane(lane: usize, x: f64, speed: f64, lane_width: f64, length: f64, width: f64) -> Self {
        VehicleState {
            x,
            y: lane as f64 * lane_width,
            heading: 0.0,
            speed,
            length,
            width,
            lane_index: lane,
            alive: true,
        }
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.speed * self.heading.cos(), self.speed * self.heading.sin())
    }

    /// Bumper-to-bumper distance to a vehicle ahead. Negative when the boxes overlap.
    pub fn gap_to(&self, leader: &VehicleState) -> f64 {
        leader.x - self.x - 0.5 * (leader.length + self.length)
    }

    /// Advances the kinematic bicycle model by `dt` seconds.
    pub(crate) fn integrate(&mut self, acceleration: f64, steering: f64, dt: f64, max_speed: f64) {
        let beta = (0.5 * steering.tan()).atan();
        self.x += self.speed * (self.heading + beta).cos() * dt;
        self.y += self.speed * (self.heading + beta).sin() * dt;
        self.heading = wrap_angle(self.heading + self.speed * beta.sin() / (0.5 * self.length) * dt);
        self.speed = (self.speed + acceleration * dt).clamp(0.0, max_speed);
    }
}

/// Gains of the two proportional controllers that turn a target lane and speed
/// into acceleration and steering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub speed: f64,
    pub lateral: f64,
    pub heading: f64,
    pub max_steering: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            speed: 1.0 / 0.6,
            lateral: 1.0 / 3.0,
            heading: 1.0 / 0.25,
            max_steering: PI / 4.0,
        }
    }
}

impl ControllerGains {
    pub fn speed_control(&self, vehicle: &VehicleState, target_speed: f64) -> f64 {
        self.speed * (target_speed - vehicle.speed)
    }

    /// Lane-position controller cascaded into a heading controller.
    pub fn steering_control(&self, vehicle: &VehicleState, target_y: f64) -> f64 {
        let speed = not_zero(vehicle.speed);
        let lateral_speed = -self.lateral * (vehicle.y - target_y);
        let heading_ref = (lateral_speed / speed)
            .clamp(-1.0, 1.0)
            .asin()
            .clamp(-PI / 4.0, PI / 4.0);
        let heading_rate = self.heading * wrap_angle(heading_ref - vehicle.heading);
        let slip = (0.5 * vehicle.length / speed * heading_rate).clamp(-1.0, 1.0).asin();
        (2.0 * slip.tan()).atan().clamp(-self.max_steering, self.max_steering)
    }
}

fn not_zero(v: f64) -> f64 {
    const EPS: f64 = 1e-2;
    if v.abs() > EPS {
        v
    } else if v >= 0.0 {
        EPS
    } else {
        -EPS
    }
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}
