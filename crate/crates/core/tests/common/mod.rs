#![allow(dead_code, clippy::needless_range_loop)]
//! Independent oracles shared by the integration tests and the acceptance harness.

use bxrl::env::{sat_overlap, Observation, VehicleState, OBS_LEN};
use bxrl::explain::{TabularPolicy, ToyMdp, TOY_ACTIONS, TOY_STATES};
use bxrl::measure::BehaviorMeasure;
use bxrl::policy::{NetworkShape, PolicyParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_obs(rng: &mut ChaCha8Rng) -> Observation {
    let v: Vec<f64> = (0..OBS_LEN)
        .map(|i| {
            if i % 5 == 0 {
                1.0
            } else {
                (rng.random_range(-4..=4) as f64) * 0.25
            }
        })
        .collect();
    Observation::from_flat(&v).unwrap()
}

pub fn scaled_params(seed: u64, scale: f64) -> PolicyParams {
    let p = PolicyParams::init(NetworkShape::default(), seed).unwrap();
    let v = p.values().iter().map(|x| x * scale).collect();
    p.with_values(v).unwrap()
}

// ---------------------------------------------------------------------------
// Central finite differences on a measure.

/// Largest relative error between the analytic gradient and central differences over `coords`.
pub fn max_fd_error(m: &BehaviorMeasure, p: &PolicyParams, coords: &[usize], h: f64) -> f64 {
    let g = m.gradient(p).unwrap();
    coords
        .iter()
        .map(|&i| {
            let mut plus = p.values().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = m.evaluate(&p.with_values(plus).unwrap()).unwrap();
            let fm = m.evaluate(&p.with_values(minus).unwrap()).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let a = g.as_slice()[i];
            (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}

pub fn random_coords(n: usize, len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..len)).collect()
}

// ---------------------------------------------------------------------------
// Shapley oracle: power-series occupancy, value iteration, permutation average.

pub fn oracle_marginalized(mdp: &ToyMdp, pi: &TabularPolicy, coalition: &[usize]) -> TabularPolicy {
    let mut dist = mdp.initial.to_vec();
    let mut occ = [0.0; TOY_STATES];
    let mut discount = 1.0;
    for _ in 0..3000 {
        for s in 0..TOY_STATES {
            occ[s] += (1.0 - mdp.gamma) * discount * dist[s];
        }
        let mut next = vec![0.0; TOY_STATES];
        for s in 0..TOY_STATES {
            for a in 0..TOY_ACTIONS {
                for s2 in 0..TOY_STATES {
                    next[s2] += dist[s] * pi[s][a] * mdp.transitions[s][a][s2];
                }
            }
        }
        dist = next;
        discount *= mdp.gamma;
    }
    (0..TOY_STATES)
        .map(|s| {
            let agree = |s2: usize| coalition.iter().all(|&f| mdp.features[s][f] == mdp.features[s2][f]);
            let z: f64 = (0..TOY_STATES).filter(|&s2| agree(s2)).map(|s2| occ[s2]).sum();
            let mut row = [0.0; TOY_ACTIONS];
            for a in 0..TOY_ACTIONS {
                row[a] = (0..TOY_STATES)
                    .filter(|&s2| agree(s2))
                    .map(|s2| occ[s2] * pi[s2][a])
                    .sum::<f64>()
                    / z;
            }
            row
        })
        .collect()
}

pub fn oracle_return(mdp: &ToyMdp, pi: &TabularPolicy) -> f64 {
    let mut v = vec![0.0; TOY_STATES];
    for _ in 0..3000 {
        v = (0..TOY_STATES)
            .map(|s| {
                (0..TOY_ACTIONS)
                    .map(|a| {
                        let cont: f64 = (0..TOY_STATES).map(|s2| mdp.transitions[s][a][s2] * v[s2]).sum();
                        pi[s][a] * (mdp.rewards[s][a] + mdp.gamma * cont)
                    })
                    .sum()
            })
            .collect();
    }
    v.iter().zip(&mdp.initial).map(|(a, b)| a * b).sum()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

pub fn oracle_shapley(v: impl Fn(&[usize]) -> f64, n: usize) -> Vec<f64> {
    let perms = permutations(&(0..n).collect::<Vec<_>>());
    let mut phi = vec![0.0; n];
    for p in &perms {
        let mut coalition = Vec::new();
        for &f in p {
            let before = v(&coalition);
            coalition.push(f);
            phi[f] += v(&coalition) - before;
        }
    }
    phi.iter().map(|x| x / perms.len() as f64).collect()
}

// ---------------------------------------------------------------------------
// Rasterized overlap of oriented rectangles.

pub const RASTER_STEP: f64 = 0.01;

fn inside(v: &VehicleState, px: f64, py: f64, pad: f64) -> bool {
    let (c, s) = (v.heading.cos(), v.heading.sin());
    let (dx, dy) = (px - v.x, py - v.y);
    let u = dx * c + dy * s;
    let w = -dx * s + dy * c;
    u.abs() <= 0.5 * v.length + pad && w.abs() <= 0.5 * v.width + pad
}

fn extent(v: &VehicleState, pad: f64) -> (f64, f64, f64, f64) {
    let (c, s) = (v.heading.cos().abs(), v.heading.sin().abs());
    let (hl, hw) = (0.5 * v.length + pad, 0.5 * v.width + pad);
    let ex = hl * c + hw * s;
    let ey = hl * s + hw * c;
    (v.x - ex, v.x + ex, v.y - ey, v.y + ey)
}

/// True iff some point of the 1 cm grid lies in both rectangles, each grown by `pad` metres.
pub fn raster_overlap(a: &VehicleState, b: &VehicleState, pad: f64) -> bool {
    let (ax0, ax1, ay0, ay1) = extent(a, pad);
    let (bx0, bx1, by0, by1) = extent(b, pad);
    let (x0, x1, y0, y1) = (ax0.max(bx0), ax1.min(bx1), ay0.max(by0), ay1.min(by1));
    if x0 > x1 || y0 > y1 {
        return false;
    }
    let (i0, i1) = ((x0 / RASTER_STEP).floor() as i64, (x1 / RASTER_STEP).ceil() as i64);
    let (j0, j1) = ((y0 / RASTER_STEP).floor() as i64, (y1 / RASTER_STEP).ceil() as i64);
    (i0..=i1).any(|i| {
        let px = i as f64 * RASTER_STEP;
        (j0..=j1).any(|j| {
            let py = j as f64 * RASTER_STEP;
            inside(a, px, py, pad) && inside(b, px, py, pad)
        })
    })
}

pub fn random_rect(rng: &mut ChaCha8Rng, near: (f64, f64)) -> VehicleState {
    let mut v = VehicleState::in_lane(0, 0.0, 0.0, 4.0, rng.random_range(3.0..6.0), rng.random_range(1.5..2.5));
    v.x = near.0 + rng.random_range(-4.0..4.0);
    v.y = near.1 + rng.random_range(-2.5..2.5);
    v.heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    v
}

#[derive(Debug, Default)]
pub struct SatTally {
    pub pairs: usize,
    pub agree: usize,
    /// Pairs whose rasterized verdict flips between shrinking and growing by one grid step.
    pub tangent: usize,
    /// Disagreements outside the tangency band.
    pub hard_failures: usize,
}

pub fn sat_vs_raster(pairs: usize, seed: u64) -> SatTally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = SatTally::default();
    for _ in 0..pairs {
        let a = random_rect(&mut rng, (0.0, 0.0));
        let b = random_rect(&mut rng, (a.x, a.y));
        let sat = sat_overlap(&a, &b);
        assert_eq!(sat, sat_overlap(&b, &a));
        let exact = raster_overlap(&a, &b, 0.0);
        let near = raster_overlap(&a, &b, -RASTER_STEP) != raster_overlap(&a, &b, RASTER_STEP);
        t.pairs += 1;
        if sat == exact {
            t.agree += 1;
        }
        if near {
            t.tangent += 1;
        } else if sat != exact {
            t.hard_failures += 1;
        }
    }
    t
}
