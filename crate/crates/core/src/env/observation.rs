use serde::{Deserialize, Serialize};

use super::vehicle::VehicleState;

pub const OBS_ROWS: usize = 5;
pub const OBS_COLS: usize = 5;
pub const OBS_LEN: usize = OBS_ROWS * OBS_COLS;

/// Column order of every observation row.
pub const COLUMNS: [&str; OBS_COLS] = ["presence", "x", "y", "vx", "vy"];

/// The 5×5 matrix fed to the policy: row 0 is the ego vehicle in absolute
/// coordinates, rows 1–4 the nearest vehicles ahead relative to the ego.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Observation {
    pub rows: [[f64; OBS_COLS]; OBS_ROWS],
}

impl Observation {
    pub fn from_flat(values: &[f64]) -> Option<Self> {
        if values.len() != OBS_LEN {
            return None;
        }
        let mut rows = [[0.0; OBS_COLS]; OBS_ROWS];
        for (i, v) in values.iter().enumerate() {
            rows[i / OBS_COLS][i % OBS_COLS] = *v;
        }
        Some(Observation { rows })
    }

    /// Row-major flattening.
    pub fn flat(&self) -> [f64; OBS_LEN] {
        let mut out = [0.0; OBS_LEN];
        for (i, row) in self.rows.iter().enumerate() {
            out[i * OBS_COLS..(i + 1) * OBS_COLS].copy_from_slice(row);
        }
        out
    }

    /// Checks presence flags, the [-1, 1] range and that absent rows are zero.
    pub fn is_valid(&self) -> bool {
        self.rows.iter().all(|row| {
            let presence_ok = row[0] == 0.0 || row[0] == 1.0;
            let range_ok = row.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v));
            let absent_ok = row[0] == 1.0 || row.iter().all(|v| *v == 0.0);
            presence_ok && range_ok && absent_ok
        })
    }
}

impl TryFrom<Vec<f64>> for Observation {
    type Error = String;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Observation::from_flat(&values).ok_or_else(|| format!("expected {OBS_LEN} values, got {}", values.len()))
    }
}

impl From<Observation> for Vec<f64> {
    fn from(o: Observation) -> Self {
        o.flat().to_vec()
    }
}

/// Scales applied before clipping to [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationScale {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    /// Vehicles further ahead than this (m) are not sensed.
    pub sensing_range: f64,
}

impl Default for ObservationScale {
    fn default() -> Self {
        ObservationScale {
            x: 100.0,
            y: 16.0,
            v: 80.0,
            sensing_range: 100.0,
        }
    }
}

/// Builds the observation from the ego and the other vehicles.
///
/// A vehicle is sensed when alive, within `sensing_range` ahead, and not fully
/// behind the ego (its center is less than one ego length behind). Sensed
/// vehicles are ordered by longitudinal distance `|Δx|`.
pub(crate) fn build(ego: &VehicleState, others: &[VehicleState], scale: &ObservationScale) -> Observation {
    let clip = |v: f64| v.clamp(-1.0, 1.0);
    let (evx, evy) = ego.velocity();
    let mut rows = [[0.0; OBS_COLS]; OBS_ROWS];
    rows[0] = [
        1.0,
        clip(ego.x / scale.x),
        clip(ego.y / scale.y),
        clip(evx / scale.v),
        clip(evy / scale.v),
    ];

    let mut sensed: Vec<&VehicleState> = others
        .iter()
        .filter(|v| {
            let dx = v.x - ego.x;
            v.alive && dx > -ego.length && dx <= scale.sensing_range
        })
        .collect();
    sensed.sort_by(|a, b| (a.x - ego.x).abs().total_cmp(&(b.x - ego.x).abs()));

    for (row, v) in rows[1..].iter_mut().zip(sensed) {
        let (vx, vy) = v.velocity();
        *row = [
            1.0,
            clip((v.x - ego.x) / scale.x),
            clip((v.y - ego.y) / scale.y),
            clip((vx - evx) / scale.v),
            clip((vy - evy) / scale.v),
        ];
    }
    Observation { rows }
}
