//! Episode statistics and stand-alone rollouts of a fixed policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveRecord, RolloutArchive};
use crate::env::{self, Action, EnvConfig, RewardBreakdown};
use crate::error::Result;
use crate::policy::{sample, PolicyParams};
use crate::util::mix_seed;

/// Accumulated rewards of one episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub length: u32,
    pub collided: bool,
    pub normalized_sum: f64,
    pub collision_sum: f64,
    pub speed_sum: f64,
    pub lane_sum: f64,
}

impl EpisodeStats {
    pub fn push(&mut self, r: &RewardBreakdown) {
        self.length += 1;
        self.normalized_sum += r.normalized;
        self.collision_sum += r.collision;
        self.speed_sum += r.speed;
        self.lane_sum += r.lane;
        self.collided |= r.collision != 0.0;
    }

    pub fn raw_return(&self) -> f64 {
        self.collision_sum + self.speed_sum + self.lane_sum
    }
}

/// Means over completed episodes. The normalized return of an episode is its
/// summed normalized reward divided by the horizon, so it lies in [0, 1].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episodes: usize,
    pub mean_norm_return: f64,
    pub survival: f64,
    pub collision_comp: f64,
    pub speed_comp: f64,
    pub lane_comp: f64,
    pub mean_raw_return: f64,
}

impl EpisodeSummary {
    pub fn from_episodes(episodes: &[EpisodeStats], horizon: u32) -> Self {
        if episodes.is_empty() {
            return EpisodeSummary::default();
        }
        let n = episodes.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeStats) -> f64| episodes.iter().map(f).sum::<f64>() / n;
        EpisodeSummary {
            episodes: episodes.len(),
            mean_norm_return: mean(&|e| e.normalized_sum / horizon as f64),
            survival: mean(&|e| if e.collided { 0.0 } else { 1.0 }),
            collision_comp: mean(&|e| e.collision_sum),
            speed_comp: mean(&|e| e.speed_sum),
            lane_comp: mean(&|e| e.lane_sum),
            mean_raw_return: mean(&|e| e.raw_return()),
        }
    }
}

/// Runs `episodes` complete episodes with actions sampled from `params`.
///
/// Episode `i` resets the environment with `mix_seed(seed, i, 0)` and samples
/// actions from a stream seeded with `mix_seed(seed, i, 1)`. In the archive,
/// `epoch` is the episode index and `t` the step within the episode.
pub fn run_episodes(
    params: &PolicyParams,
    config: &EnvConfig,
    seed: u64,
    episodes: u64,
) -> Result<(RolloutArchive, Vec<EpisodeStats>)> {
    let mut archive = RolloutArchive::new(config.hash(), seed, params.snapshot_id());
    let mut stats = Vec::with_capacity(episodes as usize);
    for i in 0..episodes {
        let (mut state, mut obs) = env::reset(mix_seed(seed, i, 0), config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i, 1));
        let mut ep = EpisodeStats::default();
        let mut t = 0;
        loop {
            let (a, _) = sample(&params.forward(&obs), &mut rng);
            let (next, tr) = env::step(&state, Action::from_id(a).expect("policy emits valid ids"))?;
            ep.push(&tr.reward);
            archive.records.push(ArchiveRecord {
                epoch: i,
                t,
                obs,
                action: a,
                reward: tr.reward,
                done: tr.done,
            });
            t += 1;
            state = next;
            obs = tr.observation;
            if tr.done {
                break;
            }
        }
        stats.push(ep);
    }
    Ok((archive, stats))
}
