use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bxrl::archive::RolloutArchive;
use bxrl::env::{EnvConfig, Observation};
use bxrl::explain::{
    counterfactual, empirical_shapley, influence, tabular_shapley, CounterfactualConfig, FeatureGrouping,
    ShapleyReport, TabularMeasure, TabularPolicy, TabularTarget, ToyMdp, TOY_STATES,
};
use bxrl::measure::{BehaviorMeasure, COLLISION_FIXTURE_JSON};
use bxrl::policy::{Checkpoint, NetworkShape, PolicyParams};
use bxrl::ppo::{train, OptimizerMode, RecordDump, RunConfig, RunLayout, TrainerConfig};
use bxrl::rollout::{run_episodes, EpisodeSummary};

use crate::{
    ArchiveFormat, Cli, Command, CounterfactualArgs, ExplainCommand, FixtureArgs, GroupingArg, InfluenceArgs, InitArgs,
    MeasureArgs, OptimizerArg, RolloutArgs, ShapleyArgs, ToyTarget, TrainArgs, RUN_ROOT_ENV,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Rollout(a) => cmd_rollout(a),
        Command::Measure(a) => cmd_measure(a),
        Command::Explain(ExplainCommand::Influence(a)) => cmd_influence(a),
        Command::Explain(ExplainCommand::Shapley(a)) => cmd_shapley(a),
        Command::Explain(ExplainCommand::Counterfactual(a)) => cmd_counterfactual(a),
        Command::Fixture(a) => cmd_fixture(a),
        Command::InitCheckpoint(a) => cmd_init(a),
        Command::Reference => {
            print!("{}", crate::reference::markdown());
            Ok(())
        }
    }
}

fn load_measure(path: &Path) -> Result<BehaviorMeasure> {
    BehaviorMeasure::load(path).with_context(|| format!("loading measure {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn default_run_dir(seed: u64) -> PathBuf {
    let root = std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("seed_{seed}"))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<TrainerConfig>(&text)
                .map_err(|e| bxrl::Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainerConfig::default(),
    };
    if let Some(v) = a.timesteps {
        cfg.total_timesteps = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.optimizer {
        cfg.optimizer = match v {
            OptimizerArg::Adam => OptimizerMode::Adam,
            OptimizerArg::Sgd => OptimizerMode::Sgd,
        };
    }
    if a.kl_budget.is_some() {
        cfg.kl_budget = a.kl_budget;
    }
    if let Some(v) = a.envs {
        cfg.n_envs = v;
    }
    if let Some(v) = a.steps_per_env {
        cfg.steps_per_env = v;
    }
    if let Some(v) = a.minibatch {
        cfg.minibatch_size = v;
    }
    if let Some(v) = a.update_epochs {
        cfg.update_epochs = v;
    }
    if let Some(v) = a.archive_every {
        cfg.archive_every = v;
    }
    if a.no_records {
        cfg.dump_records = false;
    }
    cfg.validate()?;
    let measures = a.measures.iter().map(|p| load_measure(p)).collect::<Result<Vec<_>>>()?;
    let out = a.out.unwrap_or_else(|| default_run_dir(a.seed));
    let outcome = train(&cfg, a.seed, &measures, &out)?;
    println!("run directory: {}", out.display());
    println!(
        "epochs: {}  timesteps: {}",
        outcome.metrics.len(),
        outcome.metrics.last().map_or(0, |m| m.timesteps)
    );
    if let (Some(first), Some(last)) = (outcome.metrics.first(), outcome.metrics.last()) {
        println!("{:<8} {:>10} {:>10} {:>10}", "epoch", "return", "survival", "kl");
        for m in [first, last] {
            println!(
                "{:<8} {:>10.4} {:>10.4} {:>10.2e}",
                m.epoch, m.mean_norm_return, m.survival, m.kl
            );
        }
        for (name, v) in &last.measures {
            println!("{name} = {v}");
        }
    }
    Ok(())
}

fn cmd_rollout(a: RolloutArgs) -> Result<()> {
    let params = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?.params,
        None => PolicyParams::init(NetworkShape::default(), a.seed)?.with_zero_policy_head(),
    };
    let env = EnvConfig::default();
    let (archive, stats) = run_episodes(&params, &env, a.seed, a.episodes)?;
    match a.format {
        ArchiveFormat::Jsonl => archive.write_jsonl(&a.out)?,
        ArchiveFormat::Binary => archive.write_binary(&a.out)?,
    }
    let summary = EpisodeSummary::from_episodes(&stats, env.horizon);
    println!("episodes: {}  steps: {}", summary.episodes, archive.records.len());
    println!("survival: {}", summary.survival);
    println!("mean normalized return: {}", summary.mean_norm_return);
    println!("archive: {}", a.out.display());
    Ok(())
}

fn cmd_measure(a: MeasureArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let measure = load_measure(&a.scenarios)?;
    let value = measure.evaluate(&ckpt.params)?;
    if a.json {
        let report = serde_json::json!({
            "measure": measure.name,
            "value": value,
            "checkpoint": a.checkpoint.display().to_string(),
            "snapshot_id": ckpt.params.snapshot_id(),
            "step": ckpt.step,
        });
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{value}");
    }
    Ok(())
}

fn cmd_influence(a: InfluenceArgs) -> Result<()> {
    let layout = RunLayout::new(&a.run);
    let text = fs::read_to_string(layout.config()).with_context(|| format!("reading {}", layout.config().display()))?;
    let run_cfg: RunConfig = serde_json::from_str(&text)?;
    let dump = RecordDump::load(&layout.records(a.epoch))?;
    let ckpt = load_checkpoint(&layout.checkpoint(a.epoch))?;
    let measure = load_measure(&a.measure)?;
    let report = influence(&dump, &measure, &ckpt.params, &run_cfg.trainer.loss_config())?;
    let out = a.out.unwrap_or_else(|| {
        a.run
            .join("explain")
            .join(format!("influence_{:04}_{}.csv", a.epoch, measure.name))
    });
    write_text(&out, &report.to_csv())?;
    println!(
        "measure {} = {} at epoch {}",
        report.measure, report.measure_value, report.epoch
    );
    println!("{}", report.sign_convention);
    println!("{:<6} {:>8} {:>8} {:>14}", "rank", "epoch", "t", "influence");
    for (rank, i) in report.top_k(a.top).into_iter().enumerate() {
        let s = &report.scores[i];
        println!("{:<6} {:>8} {:>8} {:>14.6e}", rank + 1, s.epoch, s.t, s.score);
    }
    println!("report: {}", out.display());
    Ok(())
}

fn print_shapley(report: &ShapleyReport) {
    println!("{:<12} {:>14}", "feature", "phi");
    for (f, p) in report.features.iter().zip(&report.phi) {
        println!("{f:<12} {p:>14.6e}");
    }
    println!(
        "efficiency: sum(phi) = {:.12e}, v(F) - v(0) = {:.12e}, gap = {:.3e}",
        report.phi.iter().sum::<f64>(),
        report.v_full - report.v_empty,
        report.efficiency_gap()
    );
}

fn cmd_shapley(a: ShapleyArgs) -> Result<()> {
    let report = if a.toy {
        if a.toy_policy.len() != TOY_STATES {
            bail!(bxrl::Error::Config(format!(
                "--toy-policy needs {TOY_STATES} probabilities"
            )));
        }
        let policy: TabularPolicy = a.toy_policy.iter().map(|&r| [1.0 - r, r]).collect();
        let target = match a.toy_target {
            ToyTarget::Return => TabularTarget::ExpectedReturn,
            ToyTarget::RightProb => TabularTarget::Measure(TabularMeasure {
                terms: (0..TOY_STATES).map(|s| (s, 1, 1.0 / TOY_STATES as f64)).collect(),
            }),
        };
        tabular_shapley(&ToyMdp::chain(), &policy, &target)?
    } else {
        let (Some(ck), Some(m), Some(ds)) = (&a.checkpoint, &a.measure, &a.dataset) else {
            unreachable!("clap enforces the empirical-mode inputs");
        };
        let params = load_checkpoint(ck)?.params;
        let measure = load_measure(m)?;
        let dataset: Vec<Observation> = RolloutArchive::load(ds)?.records.iter().map(|r| r.obs).collect();
        let grouping = match a.grouping {
            GroupingArg::Rows => FeatureGrouping::Rows,
            GroupingArg::Columns => FeatureGrouping::Columns,
            GroupingArg::Individual => FeatureGrouping::Individual,
        };
        empirical_shapley(&measure, &params, &dataset, &grouping, a.tolerance)?
    };
    print_shapley(&report);
    if let Some(out) = &a.out {
        write_text(out, &report.to_csv())?;
        println!("report: {}", out.display());
    }
    Ok(())
}

fn cmd_counterfactual(a: CounterfactualArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let measure = load_measure(&a.measure)?;
    let mut eval = measure.observations()?;
    if let Some(p) = &a.eval {
        let archive = RolloutArchive::load(p)?;
        let stride = (archive.records.len() / a.eval_limit.max(1)).max(1);
        eval.extend(archive.records.iter().step_by(stride).take(a.eval_limit).map(|r| r.obs));
    }
    let cfg = CounterfactualConfig {
        target: a.target,
        k: a.k,
        steps: a.steps,
        pivot_every: a.pivot_every,
        huber: a.huber,
        ..CounterfactualConfig::default()
    };
    let result = counterfactual(&ckpt.params, &measure, &eval, &cfg)?;
    println!(
        "measure {}: {} -> {} (target {})",
        measure.name, result.initial_measure, result.achieved, result.target
    );
    println!("kl from start: {:.6e}", result.kl_from_start);
    println!("parameter displacement: {:.6e}", result.displacement);
    println!("steps: {} ({})", result.steps_taken, result.stop_reason);
    if let Some(out) = &a.out {
        write_text(out, &serde_json::to_string_pretty(&result)?)?;
        println!("report: {}", out.display());
    }
    if let Some(out) = &a.out_checkpoint {
        let params = result.params.clone().expect("counterfactual returns parameters");
        Checkpoint::new(params, ckpt.seed, ckpt.step).save(out)?;
        println!("checkpoint: {}", out.display());
    }
    Ok(())
}

fn cmd_fixture(a: FixtureArgs) -> Result<()> {
    write_text(&a.out, COLLISION_FIXTURE_JSON)?;
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_init(a: InitArgs) -> Result<()> {
    let mut params = PolicyParams::init(NetworkShape::default(), a.seed)?;
    if a.uniform {
        params = params.with_zero_policy_head();
    }
    let ckpt = Checkpoint::new(params, a.seed, 0);
    ckpt.save(&a.out)?;
    println!("{} {}", a.out.display(), ckpt.params.snapshot_id());
    Ok(())
}
