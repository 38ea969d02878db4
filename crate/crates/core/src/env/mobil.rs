//! Lane-change decisions (MOBIL) and per-lane neighbour queries.

use serde::{Deserialize, Serialize};

use super::idm::{idm_acceleration, NpcParams};
use super::vehicle::VehicleState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneChange {
    Keep,
    Left,
    Right,
}

/// Snapshot of the road with vehicles bucketed by lane and sorted by `x`.
pub struct Road<'a> {
    vehicles: &'a [VehicleState],
    lanes: Vec<Vec<usize>>,
}

impl<'a> Road<'a> {
    pub fn new(vehicles: &'a [VehicleState], lane_count: usize) -> Self {
        let mut lanes = vec![Vec::new(); lane_count];
        for (i, v) in vehicles.iter().enumerate() {
            if v.alive && v.lane_index < lane_count {
                lanes[v.lane_index].push(i);
            }
        }
        for lane in &mut lanes {
            lane.sort_by(|&a, &b| vehicles[a].x.total_cmp(&vehicles[b].x).then(a.cmp(&b)));
        }
        Road { vehicles, lanes }
    }

    pub fn vehicle(&self, i: usize) -> &VehicleState {
        &self.vehicles[i]
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    /// Nearest vehicles ahead of and behind longitudinal position `x` in `lane`,
    /// skipping `exclude`. A vehicle at exactly `x` counts as ahead.
    pub fn neighbours(&self, lane: usize, x: f64, exclude: usize) -> (Option<usize>, Option<usize>) {
        let lane = &self.lanes[lane];
        let split = lane.partition_point(|&i| self.vehicles[i].x < x);
        let leader = lane[split..].iter().copied().find(|&i| i != exclude);
        let follower = lane[..split].iter().rev().copied().find(|&i| i != exclude);
        (leader, follower)
    }

    fn accel(&self, follower: Option<usize>, leader: Option<&VehicleState>, p: &NpcParams) -> f64 {
        follower.map_or(0.0, |f| idm_acceleration(&self.vehicles[f], leader, p))
    }
}

/// MOBIL decision for vehicle `me`.
///
/// All accelerations are evaluated with the deciding vehicle's parameters. A candidate
/// lane is accepted only when the new follower would brake no harder than
/// `safe_braking` and the politeness-weighted gain exceeds `lane_change_threshold`.
/// The best strictly-positive candidate wins; equal gains keep the current lane.
pub fn mobil_decision(road: &Road<'_>, me: usize, p: &NpcParams) -> LaneChange {
    let vehicle = road.vehicle(me);
    let lane = vehicle.lane_index;
    let (old_leader, old_follower) = road.neighbours(lane, vehicle.x, me);
    let old_leader = old_leader.map(|i| road.vehicle(i));
    let self_accel = idm_acceleration(vehicle, old_leader, p);
    let old_follower_accel = road.accel(old_follower, Some(vehicle), p);
    let old_follower_after = road.accel(old_follower, old_leader, p);

    let mut best = (LaneChange::Keep, 0.0);
    let candidates = [
        (LaneChange::Left, lane.checked_sub(1)),
        (LaneChange::Right, (lane + 1 < road.lane_count()).then_some(lane + 1)),
    ];
    for (choice, target) in candidates {
        let Some(target) = target else { continue };
        let (new_leader, new_follower) = road.neighbours(target, vehicle.x, me);
        let new_leader = new_leader.map(|i| road.vehicle(i));
        if let Some(f) = new_follower {
            if road.vehicle(f).x + 0.5 * (road.vehicle(f).length + vehicle.length) > vehicle.x {
                // would overlap the new follower
                continue;
            }
        }
        if let Some(l) = new_leader {
            if vehicle.gap_to(l) <= 0.0 {
                continue;
            }
        }
        let new_follower_accel = road.accel(new_follower, new_leader, p);
        let new_follower_after = road.accel(new_follower, Some(vehicle), p);
        if new_follower_after < -p.safe_braking {
            continue;
        }
        let self_after = idm_acceleration(vehicle, new_leader, p);
        let gain = self_after - self_accel
            + p.politeness * (new_follower_after - new_follower_accel + old_follower_after - old_follower_accel);
        if gain > p.lane_change_threshold && gain > best.1 {
            best = (choice, gain);
        }
    }
    best.0
}
