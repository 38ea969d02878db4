//! Oriented-rectangle overlap by the separating axis theorem.

use super::vehicle::VehicleState;

type Vec2 = [f64; 2];

fn corners(v: &VehicleState) -> [Vec2; 4] {
    let (c, s) = (v.heading.cos(), v.heading.sin());
    let (hl, hw) = (0.5 * v.length, 0.5 * v.width);
    let ax = [c * hl, s * hl];
    let ay = [-s * hw, c * hw];
    [
        [v.x + ax[0] + ay[0], v.y + ax[1] + ay[1]],
        [v.x + ax[0] - ay[0], v.y + ax[1] - ay[1]],
        [v.x - ax[0] - ay[0], v.y - ax[1] - ay[1]],
        [v.x - ax[0] + ay[0], v.y - ax[1] + ay[1]],
    ]
}

fn project(points: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p[0] * axis[0] + p[1] * axis[1];
        (lo.min(d), hi.max(d))
    })
}

/// True iff the two vehicles' oriented bounding boxes intersect (touching counts).
pub fn sat_overlap(a: &VehicleState, b: &VehicleState) -> bool {
    let (ca, cb) = (corners(a), corners(b));
    let axes = [
        [a.heading.cos(), a.heading.sin()],
        [-a.heading.sin(), a.heading.cos()],
        [b.heading.cos(), b.heading.sin()],
        [-b.heading.sin(), b.heading.cos()],
    ];
    axes.iter().all(|&axis| {
        let (amin, amax) = project(&ca, axis);
        let (bmin, bmax) = project(&cb, axis);
        amax >= bmin && bmax >= amin
    })
}
