//! Four-lane highway simulator.
//!
//! The ego vehicle is driven by discrete meta-actions that move a target lane and
//! target speed; two proportional controllers track those targets. Fifty NPCs
//! follow IDM for acceleration and MOBIL for lane changes. Collisions are exact
//! oriented-box tests.

mod idm;
mod mobil;
mod observation;
mod reward;
mod sat;
mod sim;
mod vehicle;

pub use idm::{idm_acceleration, NpcParams};
pub use mobil::{mobil_decision, LaneChange, Road};
pub use observation::{Observation, ObservationScale, COLUMNS, OBS_COLS, OBS_LEN, OBS_ROWS};
pub use reward::RewardBreakdown;
pub use sat::sat_overlap;
pub use sim::{
    apply_action, observe, reset, reward, step, Action, EgoControl, EnvConfig, EnvState, Npc, Transition, NUM_ACTIONS,
    TARGET_SPEEDS,
};
pub use vehicle::{ControllerGains, VehicleState};
