use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idm::{idm_acceleration, NpcParams};
use super::mobil::{mobil_decision, LaneChange, Road};
use super::observation::{self, Observation, ObservationScale};
use super::reward::RewardBreakdown;
use super::sat::sat_overlap;
use super::vehicle::{ControllerGains, VehicleState};
use crate::error::{Error, Result};

/// Discrete meta-actions. The discriminant is the action id used by the policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Left = 0,
    Idle = 1,
    Right = 2,
    Faster = 3,
    Slower = 4,
}

pub const NUM_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Left,
        Action::Idle,
        Action::Right,
        Action::Faster,
        Action::Slower,
    ];

    pub fn from_id(id: usize) -> Option<Action> {
        Action::ALL.get(id).copied()
    }

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "LEFT",
            Action::Idle => "IDLE",
            Action::Right => "RIGHT",
            Action::Faster => "FASTER",
            Action::Slower => "SLOWER",
        }
    }

    pub fn from_name(name: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(name))
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ego target speeds (m/s).
pub const TARGET_SPEEDS: [f64; 3] = [20.0, 25.0, 30.0];

/// Discrete targets tracked by the ego's controllers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgoControl {
    pub target_lane: usize,
    /// Index into [`TARGET_SPEEDS`].
    pub speed_index: usize,
}

impl EgoControl {
    pub fn target_speed(&self) -> f64 {
        TARGET_SPEEDS[self.speed_index]
    }
}

/// Applies one meta-action to the ego targets, saturating at the bounds.
pub fn apply_action(control: EgoControl, action: Action, lane_count: usize) -> EgoControl {
    let mut next = control;
    match action {
        Action::Left => next.target_lane = control.target_lane.saturating_sub(1),
        Action::Right => next.target_lane = (control.target_lane + 1).min(lane_count.saturating_sub(1)),
        Action::Faster => next.speed_index = (control.speed_index + 1).min(TARGET_SPEEDS.len() - 1),
        Action::Slower => next.speed_index = control.speed_index.saturating_sub(1),
        Action::Idle => {}
    }
    next
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub lane_count: usize,
    pub lane_width: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub npc_count: usize,
    /// Outer steps per episode.
    pub horizon: u32,
    /// Controller sub-steps per outer step.
    pub substeps: u32,
    /// Duration of one outer step (s).
    pub step_duration: f64,
    pub max_speed: f64,
    pub ego_initial_speed: f64,
    /// Gap between the ego and the first NPC (m).
    pub first_npc_gap: f64,
    /// Mean longitudinal spacing between consecutive NPCs (m).
    pub npc_spacing: f64,
    /// Spacing is multiplied by `exp(u)`, `u ~ U(-jitter, jitter)`.
    pub spacing_jitter: f64,
    pub npc_speed_range: (f64, f64),
    pub npc_defaults: NpcParams,
    /// Relative jitter applied to every IDM and MOBIL parameter at spawn.
    pub npc_param_jitter: f64,
    pub gains: ControllerGains,
    pub observation: ObservationScale,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            lane_count: 4,
            lane_width: 4.0,
            vehicle_length: 5.0,
            vehicle_width: 2.0,
            npc_count: 50,
            horizon: 80,
            substeps: 15,
            step_duration: 1.0,
            max_speed: 40.0,
            ego_initial_speed: 25.0,
            first_npc_gap: 30.0,
            npc_spacing: 25.0,
            spacing_jitter: 0.3,
            npc_speed_range: (21.0, 26.0),
            npc_defaults: NpcParams::default(),
            npc_param_jitter: 0.15,
            gains: ControllerGains::default(),
            observation: ObservationScale::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.lane_count == 0 {
            return fail("lane_count must be positive");
        }
        if !(self.lane_width > 0.0 && self.vehicle_length > 0.0 && self.vehicle_width > 0.0) {
            return fail("lane and vehicle dimensions must be positive");
        }
        if self.vehicle_width >= self.lane_width {
            return fail("vehicle_width must be smaller than lane_width");
        }
        if self.horizon == 0 || self.substeps == 0 || !(self.step_duration > 0.0) {
            return fail("horizon, substeps and step_duration must be positive");
        }
        if self.npc_spacing * (-self.spacing_jitter).exp() <= self.vehicle_length
            || self.first_npc_gap <= self.vehicle_length
        {
            return fail("NPC spacing must exceed the vehicle length");
        }
        let (lo, hi) = self.npc_speed_range;
        if !(0.0 <= lo && lo <= hi && hi <= self.max_speed) {
            return fail("npc_speed_range must lie within [0, max_speed]");
        }
        if !(0.0..1.0).contains(&self.npc_param_jitter) || !self.npc_defaults.is_valid() {
            return fail("invalid NPC parameters");
        }
        Ok(())
    }

    /// Short stable digest of the configuration.
    pub fn hash(&self) -> String {
        crate::util::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())[..16].to_string()
    }

    fn lane_of(&self, y: f64) -> usize {
        (y / self.lane_width).round().clamp(0.0, (self.lane_count - 1) as f64) as usize
    }

    fn lane_center(&self, lane: usize) -> f64 {
        lane as f64 * self.lane_width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Npc {
    pub vehicle: VehicleState,
    pub params: NpcParams,
    pub target_lane: usize,
}

/// Complete simulator state. Stepping is a pure function of this value and an action.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub config: EnvConfig,
    pub ego: VehicleState,
    pub ego_control: EgoControl,
    pub npcs: Vec<Npc>,
    pub t: u32,
    /// Spawn stream; left positioned after the draws made by `reset`.
    pub rng: ChaCha8Rng,
    pub collided: bool,
}

impl EnvState {
    pub fn is_terminal(&self) -> bool {
        self.collided || self.t >= self.config.horizon
    }

    pub fn observe(&self) -> Observation {
        observe(self)
    }
}

/// Outcome of one outer step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub done: bool,
}

pub fn reset(seed: u64, config: &EnvConfig) -> Result<(EnvState, Observation)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = config;
    let ego_lane = rng.random_range(0..c.lane_count);
    let ego = VehicleState::in_lane(
        ego_lane,
        0.0,
        c.ego_initial_speed,
        c.lane_width,
        c.vehicle_length,
        c.vehicle_width,
    );
    let ego_control = EgoControl {
        target_lane: ego_lane,
        speed_index: TARGET_SPEEDS
            .iter()
            .position(|s| *s >= c.ego_initial_speed)
            .unwrap_or(TARGET_SPEEDS.len() - 1),
    };

    let mut cursor = ego.x + c.first_npc_gap;
    let mut npcs = Vec::with_capacity(c.npc_count);
    for _ in 0..c.npc_count {
        let lane = rng.random_range(0..c.lane_count);
        let (lo, hi) = c.npc_speed_range;
        let speed = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let vehicle = VehicleState::in_lane(lane, cursor, speed, c.lane_width, c.vehicle_length, c.vehicle_width);
        let params = jitter_params(&c.npc_defaults, c.npc_param_jitter, &mut rng);
        npcs.push(Npc {
            vehicle,
            params,
            target_lane: lane,
        });
        let u = if c.spacing_jitter > 0.0 {
            rng.random_range(-c.spacing_jitter..c.spacing_jitter)
        } else {
            0.0
        };
        cursor += c.npc_spacing * u.exp();
    }

    let state = EnvState {
        config: *config,
        ego,
        ego_control,
        npcs,
        t: 0,
        rng,
        collided: false,
    };
    let obs = observe(&state);
    Ok((state, obs))
}

fn jitter_params(base: &NpcParams, jitter: f64, rng: &mut ChaCha8Rng) -> NpcParams {
    let mut scale = |v: f64| {
        if jitter > 0.0 {
            v * (1.0 + rng.random_range(-jitter..jitter))
        } else {
            v
        }
    };
    NpcParams {
        desired_speed: scale(base.desired_speed),
        time_headway: scale(base.time_headway),
        min_gap: scale(base.min_gap),
        max_accel: scale(base.max_accel),
        comfort_decel: scale(base.comfort_decel),
        delta: base.delta,
        hard_brake: base.hard_brake,
        politeness: scale(base.politeness).clamp(0.0, 1.0),
        lane_change_threshold: scale(base.lane_change_threshold),
        safe_braking: scale(base.safe_braking),
    }
}

pub fn observe(state: &EnvState) -> Observation {
    let others: Vec<VehicleState> = state.npcs.iter().map(|n| n.vehicle).collect();
    observation::build(&state.ego, &others, &state.config.observation)
}

/// Reward of the current state.
pub fn reward(state: &EnvState) -> RewardBreakdown {
    RewardBreakdown::compute(&state.ego, state.collided, state.config.lane_count)
}

/// Advances one outer step: updates the ego targets, lets every NPC make a
/// lane decision, then integrates all vehicles over `substeps` controller ticks,
/// checking collisions after each tick.
pub fn step(state: &EnvState, action: Action) -> Result<(EnvState, Transition)> {
    if state.is_terminal() {
        return Err(Error::Contract(format!(
            "step called on a terminal state (t = {})",
            state.t
        )));
    }
    let mut next = state.clone();
    let c = next.config;
    next.ego_control = apply_action(next.ego_control, action, c.lane_count);

    // vehicles[0] is the ego, vehicles[i + 1] is npcs[i]
    let mut vehicles: Vec<VehicleState> = std::iter::once(next.ego)
        .chain(next.npcs.iter().map(|n| n.vehicle))
        .collect();

    {
        let road = Road::new(&vehicles, c.lane_count);
        for (i, npc) in next.npcs.iter_mut().enumerate() {
            if !npc.vehicle.alive || npc.target_lane != npc.vehicle.lane_index {
                continue;
            }
            match mobil_decision(&road, i + 1, &npc.params) {
                LaneChange::Keep => {}
                LaneChange::Left => npc.target_lane -= 1,
                LaneChange::Right => npc.target_lane += 1,
            }
        }
    }

    let dt = c.step_duration / c.substeps as f64;
    let mut order: Vec<usize> = (0..vehicles.len()).collect();
    for _ in 0..c.substeps {
        let controls: Vec<(f64, f64)> = {
            let road = Road::new(&vehicles, c.lane_count);
            let ego_ctl = (
                c.gains.speed_control(&vehicles[0], next.ego_control.target_speed()),
                c.gains
                    .steering_control(&vehicles[0], c.lane_center(next.ego_control.target_lane)),
            );
            std::iter::once(ego_ctl)
                .chain(next.npcs.iter().enumerate().map(|(i, npc)| {
                    let v = &vehicles[i + 1];
                    if !v.alive {
                        return (0.0, 0.0);
                    }
                    let mut accel = npc_acceleration(&road, i + 1, v.lane_index, &npc.params);
                    if npc.target_lane != v.lane_index {
                        accel = accel.min(npc_acceleration(&road, i + 1, npc.target_lane, &npc.params));
                    }
                    (accel, c.gains.steering_control(v, c.lane_center(npc.target_lane)))
                }))
                .collect()
        };

        for (v, (accel, steer)) in vehicles.iter_mut().zip(controls) {
            if v.alive {
                v.integrate(accel, steer, dt, c.max_speed);
                v.lane_index = c.lane_of(v.y);
            }
        }
        let ego = &mut vehicles[0];
        let y_max = c.lane_center(c.lane_count - 1) + 0.5 * c.lane_width;
        ego.y = ego.y.clamp(-0.5 * c.lane_width, y_max);

        if detect_collisions(&mut vehicles, &mut order) {
            next.collided = true;
            break;
        }
    }

    next.ego = vehicles[0];
    for (npc, v) in next.npcs.iter_mut().zip(&vehicles[1..]) {
        npc.vehicle = *v;
    }
    next.t += 1;
    let transition = Transition {
        observation: observe(&next),
        reward: reward(&next),
        done: next.is_terminal(),
    };
    Ok((next, transition))
}

fn npc_acceleration(road: &Road<'_>, me: usize, lane: usize, p: &NpcParams) -> f64 {
    let v = road.vehicle(me);
    let (leader, _) = road.neighbours(lane, v.x, me);
    idm_acceleration(v, leader.map(|i| road.vehicle(i)), p)
}

/// Sweep-and-prune over `x` followed by exact SAT tests. NPC–NPC crashes
/// remove both NPCs; returns whether the ego (index 0) was hit.
fn detect_collisions(vehicles: &mut [VehicleState], order: &mut [usize]) -> bool {
    order.sort_by(|&a, &b| vehicles[a].x.total_cmp(&vehicles[b].x).then(a.cmp(&b)));
    let reach = vehicles.iter().map(|v| v.length.hypot(v.width)).fold(0.0, f64::max);
    let mut ego_hit = false;
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if vehicles[j].x - vehicles[i].x > reach {
                break;
            }
            if !(vehicles[i].alive && vehicles[j].alive) || !sat_overlap(&vehicles[i], &vehicles[j]) {
                continue;
            }
            if i == 0 || j == 0 {
                ego_hit = true;
            } else {
                vehicles[i].alive = false;
                vehicles[j].alive = false;
            }
        }
    }
    ego_hit
}
