use bxrl::env::Action;
use bxrl::manifest::RunManifest;
use bxrl::measure::{collision_measure_fixture, BehaviorMeasure};
use bxrl::policy::Checkpoint;
use bxrl::ppo::{read_metrics_csv, train, OptimizerMode, RunLayout, TrainerConfig, METRICS_COLUMNS};
use bxrl::Error;

fn small(total: u64) -> TrainerConfig {
    TrainerConfig {
        n_envs: 4,
        steps_per_env: 64,
        total_timesteps: total,
        minibatch_size: 64,
        archive_every: 1,
        ..TrainerConfig::default()
    }
}

fn measures() -> Vec<BehaviorMeasure> {
    let o = bxrl::measure::collision_scenarios().entries[0].obs;
    vec![
        collision_measure_fixture(),
        BehaviorMeasure::action_contrast("left_vs_right", o, Action::Left, Action::Right),
    ]
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig {
        learning_rate: 0.0,
        ..small(768)
    };
    let out = train(&cfg, 5, &[], dir.path()).unwrap();
    let layout = RunLayout::new(dir.path());
    let first = std::fs::read(layout.checkpoint(0)).unwrap();
    let id0 = Checkpoint::from_bytes(&first).unwrap().params.snapshot_id();
    for k in 1..=3 {
        let ck = Checkpoint::load(&layout.checkpoint(k)).unwrap();
        assert_eq!(ck.params.snapshot_id(), id0);
    }
    assert!(out.metrics.iter().all(|m| m.kl == 0.0));
}

#[test]
fn same_seed_and_config_reproduce_bytes() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        train(&small(512), 11, &measures(), dir.path()).unwrap();
        let l = RunLayout::new(dir.path());
        let files = [
            l.metrics(),
            l.rollouts(0),
            l.rollouts(1),
            l.records(1),
            l.checkpoint(2),
            l.config(),
        ];
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        (dir, bytes)
    };
    let (_a, x) = run();
    let (_b, y) = run();
    assert_eq!(x, y);
}

#[test]
fn different_seeds_diverge() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    train(&small(256), 1, &[], d1.path()).unwrap();
    train(&small(256), 2, &[], d2.path()).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read(RunLayout::new(d.path()).rollouts(0)).unwrap();
    assert_ne!(read(&d1), read(&d2));
}

#[test]
fn metrics_are_consistent_and_measures_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ms = measures();
    let out = train(&small(1024), 3, &ms, dir.path()).unwrap();
    let layout = RunLayout::new(dir.path());
    let (header, rows) = read_metrics_csv(&layout.metrics()).unwrap();
    let mut expected: Vec<String> = METRICS_COLUMNS.iter().map(|s| s.to_string()).collect();
    expected.extend(ms.iter().map(|m| m.name.clone()));
    assert_eq!(header, expected);
    assert_eq!(rows.len(), 4);
    for (k, (row, m)) in rows.iter().zip(&out.metrics).enumerate() {
        assert!((0.0..=1.0).contains(&m.survival));
        let comps = m.collision_comp + m.speed_comp + m.lane_comp;
        assert!((comps - m.mean_raw_return).abs() < 1e-9);
        let ck = Checkpoint::load(&layout.checkpoint(k as u64 + 1)).unwrap();
        for (j, measure) in ms.iter().enumerate() {
            assert_eq!(row[METRICS_COLUMNS.len() + j], measure.evaluate(&ck.params).unwrap());
        }
    }
    assert_eq!(
        out.final_params,
        Checkpoint::load(&layout.checkpoint(4)).unwrap().params
    );
}

#[test]
fn manifest_covers_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    train(&small(256), 4, &[], dir.path()).unwrap();
    let layout = RunLayout::new(dir.path());
    let manifest = RunManifest::load(&layout.manifest()).unwrap();
    manifest.verify(dir.path()).unwrap();
    assert_eq!(manifest.checkpoints.len(), 2);
    assert!(manifest.artifacts.iter().any(|a| a.path.ends_with("metrics.csv")));
    std::fs::write(layout.metrics(), b"tampered").unwrap();
    assert!(manifest.verify(dir.path()).is_err());
}

#[test]
fn kl_budget_bounds_logged_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let budget = 5e-4;
    let cfg = TrainerConfig {
        kl_budget: Some(budget),
        learning_rate: 1e-3,
        ..small(2560)
    };
    let out = train(&cfg, 6, &[], dir.path()).unwrap();
    let within = out.metrics.iter().filter(|m| m.kl <= 2.0 * budget).count();
    assert!(within as f64 >= 0.95 * out.metrics.len() as f64);
    assert!(out.metrics.iter().any(|m| m.kl > 0.0));
}

#[test]
fn runaway_learning_rate_aborts_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig {
        optimizer: OptimizerMode::Sgd,
        learning_rate: 1e300,
        max_grad_norm: None,
        ..small(512)
    };
    let err = train(&cfg, 7, &[], dir.path()).unwrap_err();
    assert!(matches!(err, Error::Diverged(_)), "{err}");
    let layout = RunLayout::new(dir.path());
    assert!(layout.diagnostic().exists());
    assert!(dir.path().join("checkpoints").join("diverged").exists());
}

#[test]
fn invalid_config_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let cfg = TrainerConfig {
        gamma: 1.5,
        ..small(256)
    };
    assert!(matches!(train(&cfg, 0, &[], &run_dir), Err(Error::Config(_))));
    assert!(!run_dir.exists());
}
