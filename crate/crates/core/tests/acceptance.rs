//! Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Run with `cargo test -p bxrl --test acceptance`.

use std::path::Path;
use std::time::Instant;

use bxrl::archive::RolloutArchive;
use bxrl::env::{Observation, RewardBreakdown, VehicleState};
use bxrl::explain::{
    counterfactual, influence, prepared_records, tabular_shapley, CounterfactualConfig, TabularMeasure, TabularPolicy,
    TabularTarget, ToyMdp, TOY_FEATURES, TOY_STATES,
};
use bxrl::measure::{collision_measure_fixture, collision_scenarios, BehaviorMeasure};
use bxrl::policy::{Checkpoint, NetworkShape, PolicyParams};
use bxrl::ppo::{
    ppo_loss_grad, read_metrics_csv, train, LossConfig, OptimizerMode, RecordDump, RunLayout, TrainerConfig,
    METRICS_COLUMNS,
};
use bxrl::rollout::{run_episodes, EpisodeSummary};

mod common;
use common::{max_fd_error, oracle_marginalized, oracle_return, oracle_shapley, random_coords, sat_vs_raster};

const REWARD_TOL: f64 = 1e-12;
const UNIFORM_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-5;
const FD_COORDS: usize = 50;
const FD_MAX_REL: f64 = 1e-5;
const SHAPLEY_TOL: f64 = 1e-12;
const EFFICIENCY_TOL: f64 = 1e-9;
const INFLUENCE_RECORDS: usize = 200;
const INFLUENCE_REL: f64 = 0.05;
const INFLUENCE_PASS_FRACTION: f64 = 0.95;
const INFLUENCE_ETA: f64 = 1e-5;
const CF_TARGET: f64 = 0.1;
const CF_TOL: f64 = 0.05;
const CF_STIFF_RATIO: f64 = 1e-3;
const TREND_MARGIN: f64 = 0.15;
const TREND_TIMESTEPS: u64 = 200_000;
const TREND_SEED: u64 = 7;
const BASELINE_EPISODES: u64 = 200;
const BASELINE_SEED: u64 = 1_000;
const SAT_PAIRS: usize = 500;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------

fn reward_exactness() -> Outcome {
    let ego = |lane: usize, v: f64| VehicleState::in_lane(lane, 0.0, v, 4.0, 5.0, 2.0);
    let slow = RewardBreakdown::compute(&ego(0, 20.0), false, 4);
    let fast = RewardBreakdown::compute(&ego(3, 30.0), false, 4);
    let crash = RewardBreakdown::compute(&ego(3, 30.0), true, 4);
    let checks = [
        (slow.total, 0.0),
        (fast.total, 0.5),
        (crash.total - fast.total, -1.0),
        (slow.normalized, 2.0 / 3.0),
        (fast.normalized, 1.0),
    ];
    let worst = checks.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        worst <= REWARD_TOL,
        format!(
            "totals {} / {} / crash delta {}, normalized {:.6} / {}, max error {worst:.1e}",
            slow.total,
            fast.total,
            crash.total - fast.total,
            slow.normalized,
            fast.normalized
        ),
    )
}

// ---------------------------------------------------------------------------

/// Expected observation matrices, typed independently of the fixture file.
#[rustfmt::skip]
const TABLE: [(&str, [[f64; 5]; 5]); 6] = [
    ("LEFT", [
        [1.000, 1.000, 0.750, 0.373, 0.0],
        [1.000, 0.057, -0.500, -0.089, 0.0],
        [1.000, 0.086, -0.250, -0.091, 0.0],
        [1.000, 0.133, 0.0, -0.074, 0.0],
        [1.000, 0.636, -0.500, -0.088, 0.0],
    ]),
    ("LEFT", [
        [1.000, 1.000, 0.750, 0.375, 0.0],
        [1.000, -0.024, -0.750, -0.107, 0.0],
        [1.000, 0.047, -0.500, -0.113, 0.0],
        [1.000, 0.072, -0.250, -0.102, 0.0],
        [1.000, 0.336, -0.750, -0.106, 0.0],
    ]),
    ("RIGHT", [
        [1.000, 1.000, 0.0, 0.311, 0.0],
        [1.000, -0.003, 0.750, -0.036, 0.0],
        [1.000, 0.063, 0.500, -0.061, 0.0],
        [1.000, 0.189, 0.0, -0.057, 0.0],
        [1.000, 0.326, 0.250, -0.048, 0.0],
    ]),
    ("RIGHT", [
        [1.000, 1.000, 0.003, 0.323, -0.002],
        [1.000, 0.053, 0.497, -0.063, 0.002],
        [1.000, 0.121, -0.003, -0.066, 0.002],
        [1.000, 0.182, 0.247, -0.055, 0.002],
        [1.000, 0.335, 0.747, -0.073, 0.002],
    ]),
    ("FASTER", [
        [1.000, 1.000, 0.750, 0.259, 0.0],
        [1.000, 0.010, -0.500, 0.001, 0.0],
        [1.000, -0.026, -0.250, 0.013, 0.0],
        [1.000, 0.066, 0.0, 0.005, 0.0],
        [1.000, 0.131, -0.750, -0.003, 0.0],
    ]),
    ("FASTER", [
        [1.000, 1.000, 0.750, 0.321, 0.0],
        [1.000, -0.021, -0.750, -0.066, 0.0],
        [1.000, -0.023, -0.250, -0.067, 0.0],
        [1.000, 0.088, 0.0, -0.066, 0.0],
        [1.000, 0.191, -0.500, -0.053, 0.0],
    ]),
];

fn fixture_fidelity() -> Outcome {
    let set = collision_scenarios();
    let mut mismatches = 0;
    for ((action, rows), e) in TABLE.iter().zip(&set.entries) {
        let flat: Vec<u64> = rows.iter().flatten().map(|v| v.to_bits()).collect();
        let got: Vec<u64> = e.obs.flat().iter().map(|v| v.to_bits()).collect();
        if flat != got || e.action.name() != *action {
            mismatches += 1;
        }
    }
    let uniform = PolicyParams::init(NetworkShape::default(), 0)
        .unwrap()
        .with_zero_policy_head();
    let value = collision_measure_fixture().evaluate(&uniform).unwrap();
    let pass = set.entries.len() == TABLE.len() && mismatches == 0 && (value - 0.2).abs() <= UNIFORM_TOL;
    outcome(
        pass,
        format!(
            "{} entries, {mismatches} bit mismatches, m_c(uniform) = {value}",
            set.entries.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn gradient_correctness(run: &Path, epochs: u64) -> Outcome {
    let layout = RunLayout::new(run);
    let m = collision_measure_fixture();
    let mut worst: f64 = 0.0;
    let picks = [0, epochs / 2, epochs];
    for (i, &k) in picks.iter().enumerate() {
        let p = Checkpoint::load(&layout.checkpoint(k)).unwrap().params;
        let coords = random_coords(FD_COORDS, p.len(), 100 + i as u64);
        worst = worst.max(max_fd_error(&m, &p, &coords, FD_STEP));
    }
    outcome(
        worst < FD_MAX_REL,
        format!("checkpoints {picks:?}, {FD_COORDS} coords each, max relative error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------

fn shapley_oracle() -> Outcome {
    let mdp = ToyMdp::chain();
    let pi: TabularPolicy = [0.9, 0.7, 0.6, 0.8, 0.3].iter().map(|&r| [1.0 - r, r]).collect();
    let m1 = TabularMeasure {
        terms: vec![(0, 1, 0.5), (3, 1, 0.5)],
    };
    let m2 = TabularMeasure {
        terms: vec![(4, 0, 1.0), (2, 0, 0.25)],
    };
    let both = TabularMeasure {
        terms: m1.terms.iter().chain(&m2.terms).copied().collect(),
    };

    let ret = tabular_shapley(&mdp, &pi, &TabularTarget::ExpectedReturn).unwrap();
    let r1 = tabular_shapley(&mdp, &pi, &TabularTarget::Measure(m1.clone())).unwrap();
    let r2 = tabular_shapley(&mdp, &pi, &TabularTarget::Measure(m2)).unwrap();
    let r12 = tabular_shapley(&mdp, &pi, &TabularTarget::Measure(both)).unwrap();
    let o_ret = oracle_shapley(
        |c| oracle_return(&mdp, &oracle_marginalized(&mdp, &pi, c)),
        TOY_FEATURES,
    );
    let o_m1 = oracle_shapley(|c| m1.evaluate(&oracle_marginalized(&mdp, &pi, c)), TOY_FEATURES);
    let oracle_err = (0..TOY_FEATURES)
        .map(|i| (ret.phi[i] - o_ret[i]).abs().max((r1.phi[i] - o_m1[i]).abs()))
        .fold(0.0, f64::max);

    let efficiency = [&ret, &r1, &r2, &r12]
        .iter()
        .map(|r| r.efficiency_gap().abs())
        .fold(0.0, f64::max);

    let flat: TabularPolicy = vec![[0.35, 0.65]; TOY_STATES];
    let null = tabular_shapley(&mdp, &flat, &TabularTarget::ExpectedReturn).unwrap();
    let null_err = null.phi.iter().map(|p| p.abs()).fold(0.0, f64::max);

    let mut twin = ToyMdp::chain();
    for f in &mut twin.features {
        f[2] = f[1];
    }
    let sym = tabular_shapley(&twin, &pi, &TabularTarget::ExpectedReturn).unwrap();
    let sym_err = (sym.phi[1] - sym.phi[2]).abs();

    let add_err = (0..TOY_FEATURES)
        .map(|i| (r12.phi[i] - r1.phi[i] - r2.phi[i]).abs())
        .fold(0.0, f64::max);

    let pass = oracle_err <= SHAPLEY_TOL
        && efficiency <= EFFICIENCY_TOL
        && null_err <= SHAPLEY_TOL
        && sym_err <= SHAPLEY_TOL
        && add_err <= SHAPLEY_TOL;
    outcome(
        pass,
        format!(
            "oracle {oracle_err:.1e}, efficiency {efficiency:.1e}, null {null_err:.1e}, symmetry {sym_err:.1e}, additivity {add_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn influence_first_order() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig {
        optimizer: OptimizerMode::Sgd,
        learning_rate: 1e-2,
        total_timesteps: 3 * 2048,
        archive_every: 0,
        ..TrainerConfig::default()
    };
    train(&cfg, 21, &[], dir.path()).unwrap();
    let layout = RunLayout::new(dir.path());
    let epoch = 2;
    let dump = RecordDump::load(&layout.records(epoch)).unwrap();
    let params = Checkpoint::load(&layout.checkpoint(epoch)).unwrap().params;
    let loss = cfg.loss_config();
    let m = collision_measure_fixture();
    let report = influence(&dump, &m, &params, &loss).unwrap();
    let prepared = prepared_records(&dump.records, &loss);
    let single = LossConfig {
        normalize_advantages: false,
        ..loss
    };
    let m0 = m.evaluate(&params).unwrap();
    let stride = dump.records.len() / INFLUENCE_RECORDS;
    let mut ok = 0;
    for i in (0..INFLUENCE_RECORDS).map(|j| j * stride) {
        let g = ppo_loss_grad(&params, std::slice::from_ref(&prepared[i]), &single, false)
            .unwrap()
            .grad;
        let dm = m.evaluate(&params.offset_by(&g, -INFLUENCE_ETA).unwrap()).unwrap() - m0;
        let predicted = -INFLUENCE_ETA * report.scores[i].score;
        if (dm - predicted).abs() <= INFLUENCE_REL * predicted.abs() {
            ok += 1;
        }
    }
    let frac = ok as f64 / INFLUENCE_RECORDS as f64;
    outcome(
        frac >= INFLUENCE_PASS_FRACTION,
        format!(
            "{ok}/{INFLUENCE_RECORDS} records within {}% (eta {INFLUENCE_ETA:e}, SGD run, epoch {epoch})",
            INFLUENCE_REL * 100.0
        ),
    )
}

// ---------------------------------------------------------------------------

fn eval_observations(run: &Path, epochs: u64, measure: &BehaviorMeasure) -> Vec<Observation> {
    let layout = RunLayout::new(run);
    let last_archived = (epochs - 1) / 10 * 10;
    let archive = RolloutArchive::load(&layout.rollouts(last_archived)).unwrap();
    let mut obs = measure.observations().unwrap();
    let stride = archive.records.len() / 256;
    obs.extend(archive.records.iter().step_by(stride.max(1)).take(256).map(|r| r.obs));
    obs
}

fn counterfactual_reachability(run: &Path, epochs: u64) -> Outcome {
    let layout = RunLayout::new(run);
    let theta = Checkpoint::load(&layout.checkpoint(epochs)).unwrap().params;
    let m = collision_measure_fixture();
    let eval = eval_observations(run, epochs, &m);
    let cf = |k: f64| {
        let cfg = CounterfactualConfig {
            target: CF_TARGET,
            k,
            ..CounterfactualConfig::default()
        };
        counterfactual(&theta, &m, &eval, &cfg).unwrap()
    };
    let reach = cf(1.0);
    let stiff = cf(1e6);
    let loose = cf(0.1);
    let ratio = stiff.displacement / loose.displacement;
    let pass = (reach.achieved - CF_TARGET).abs() <= CF_TOL && loose.displacement > 0.0 && ratio <= CF_STIFF_RATIO;
    outcome(
        pass,
        format!(
            "m {:.4} -> {:.4} at k=1 ({} steps), displacement k=1e6 {:.2e} / k=0.1 {:.2e} = {ratio:.2e}",
            reach.initial_measure, reach.achieved, reach.steps_taken, stiff.displacement, loose.displacement
        ),
    )
}

// ---------------------------------------------------------------------------

fn training_trend(run: &Path, cfg: &TrainerConfig) -> Outcome {
    let layout = RunLayout::new(run);
    let (header, rows) = read_metrics_csv(&layout.metrics()).unwrap();
    let n = rows.len();
    let survival = METRICS_COLUMNS.iter().position(|c| *c == "survival").unwrap();
    let m_col = header.iter().position(|c| c == "m_c").unwrap();
    let quarter = (n / 4).max(1);
    let mean = |rs: &[Vec<f64>]| rs.iter().map(|r| r[survival]).sum::<f64>() / rs.len() as f64;
    let (first_q, last_q) = (mean(&rows[..quarter]), mean(&rows[n - quarter..]));

    let env = &cfg.env;
    let random = PolicyParams::init(cfg.network.clone(), TREND_SEED)
        .unwrap()
        .with_zero_policy_head();
    let trained = Checkpoint::load(&layout.checkpoint(n as u64)).unwrap().params;
    let score = |p: &PolicyParams| {
        let (_, stats) = run_episodes(p, env, BASELINE_SEED, BASELINE_EPISODES).unwrap();
        EpisodeSummary::from_episodes(&stats, env.horizon)
    };
    let (base, fin) = (score(&random), score(&trained));
    let gain = fin.mean_norm_return - base.mean_norm_return;

    let m = collision_measure_fixture();
    let mut reproduced = 0;
    for (k, row) in rows.iter().enumerate() {
        let p = Checkpoint::load(&layout.checkpoint(k as u64 + 1)).unwrap().params;
        if m.evaluate(&p).unwrap() == row[m_col] {
            reproduced += 1;
        }
    }
    let pass = gain >= TREND_MARGIN && last_q > first_q && reproduced == n;
    outcome(
        pass,
        format!(
            "return {:.3} vs random {:.3} (gain {gain:.3}); survival quartiles {first_q:.3} -> {last_q:.3}; m_c reproduced {reproduced}/{n}",
            fin.mean_norm_return, base.mean_norm_return
        ),
    )
}

// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let cfg = TrainerConfig {
        total_timesteps: 4 * 2048,
        archive_every: 1,
        ..TrainerConfig::default()
    };
    let snapshot = |dir: &Path| {
        let layout = RunLayout::new(dir);
        let mut files = vec![layout.metrics()];
        files.extend((0..4).map(|e| layout.rollouts(e)));
        files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let measures = [collision_measure_fixture()];
    train(&cfg, 5, &measures, a.path()).unwrap();
    train(&cfg, 5, &measures, b.path()).unwrap();
    let (x, y) = (snapshot(a.path()), snapshot(b.path()));
    let same = x.iter().zip(&y).filter(|(p, q)| p == q).count();
    outcome(
        same == x.len(),
        format!("{same}/{} files byte-identical (metrics CSV + 4 archives)", x.len()),
    )
}

// ---------------------------------------------------------------------------

fn sat_oracle() -> Outcome {
    let t = sat_vs_raster(SAT_PAIRS, 2024);
    outcome(
        t.hard_failures == 0,
        format!(
            "{} pairs, {} agree with 1 cm raster, {} within tangency band, {} disagreements outside it",
            t.pairs, t.agree, t.tangent, t.hard_failures
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, started: Instant, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failures += 1;
        }
        println!(
            "{tag} [{id}] {name}: {} ({:.1}s)",
            o.detail,
            started.elapsed().as_secs_f64()
        );
    };

    let t = Instant::now();
    report(1, "reward formula exactness", t, reward_exactness());
    let t = Instant::now();
    report(2, "collision fixture fidelity", t, fixture_fidelity());

    let started = Instant::now();
    let run = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig {
        total_timesteps: TREND_TIMESTEPS,
        ..TrainerConfig::default()
    };
    let trained = train(&cfg, TREND_SEED, &[collision_measure_fixture()], run.path());
    let train_secs = started.elapsed().as_secs_f64();
    let epochs = match &trained {
        Ok(o) => o.metrics.len() as u64,
        Err(e) => {
            println!("FAIL [3,6,7] shared training run failed: {e}");
            std::process::exit(1);
        }
    };
    println!("info: {TREND_TIMESTEPS}-step training run, {epochs} epochs in {train_secs:.1}s");

    let t = Instant::now();
    report(
        3,
        "measure gradient vs finite differences",
        t,
        gradient_correctness(run.path(), epochs),
    );
    let t = Instant::now();
    report(4, "Shapley oracle equivalence and axioms", t, shapley_oracle());
    let t = Instant::now();
    report(5, "influence first-order property", t, influence_first_order());
    let t = Instant::now();
    report(
        6,
        "counterfactual reachability",
        t,
        counterfactual_reachability(run.path(), epochs),
    );
    let t = Instant::now();
    report(7, "training trend", t, training_trend(run.path(), &cfg));
    let t = Instant::now();
    report(8, "determinism", t, determinism());
    let t = Instant::now();
    report(9, "SAT vs rasterization oracle", t, sat_oracle());

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
