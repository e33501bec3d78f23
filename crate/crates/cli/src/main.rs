//! Benchmark orchestration CLI: scenario generation, training, simulation,
//! scoring, ablation sweeps, and sensitivity reports.

mod bench;
mod config;
mod suite;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use planlab_core::adapter::{evaluate_policy, ppo_train, AdapterPolicy, PpoConfig};
use planlab_core::metrics::{aggregate, parse_results_csv, results_csv, ScenarioResult};
use planlab_core::planner::{
    endpoint_sensitivity, eval_features, train_imitation, AugmentConfig, ForwardMode,
    InputVariant, PlannerModel, VariantConfig,
};
use planlab_core::rng::derive_seed;
use planlab_core::scenario::{
    generate_scenario, save_scenario, GenConfig, Scenario, ScenarioFamily,
};
use planlab_core::simulator::{SimOptions, SimulationLog};

use bench::{ablate_csv, evaluate_suite, AblateRow, ActuationSpec, PlannerSpec};
use config::FileConfig;
use suite::{
    load_suite, parallel_map, write_json, Manifest, SuiteFile, MANIFEST_SCHEMA, SUITE_SCHEMA,
};

#[derive(Parser)]
#[command(name = "planlab", about = "Closed-loop imitation-planning laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Base seed for all randomness in the command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for scenario-level parallelism.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Hyperparameter file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrafficArg {
    LogReplay,
    Reactive,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActuationArg {
    Lqr,
    RlAdapter,
    Perfect,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic scenario corpus with a manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: usize,
        /// Comma-separated families; defaults to all five.
        #[arg(long, value_delimiter = ',')]
        families: Vec<String>,
        /// Ambient agents per scenario.
        #[arg(long, default_value_t = 2)]
        agents: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the worst-scoring fraction per family into a hard suite.
    MakeHard {
        /// Results CSV produced by `score` for the rule-based planner.
        #[arg(long)]
        scores: PathBuf,
        /// Scenario directory the scores refer to.
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a planner by imitation.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "state6")]
        variant: String,
        /// Attach the state dropout encoder (state5/state6 only).
        #[arg(long)]
        sde: bool,
        #[arg(long, default_value_t = 0.75)]
        dropout: f64,
        /// Disable state perturbation (P).
        #[arg(long)]
        no_perturb: bool,
        /// Disable re-normalization onto the perturbed pose (RN).
        #[arg(long)]
        no_renorm: bool,
        /// Supervise with the corrected future trajectory (FC).
        #[arg(long)]
        future_correction: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run closed-loop simulations over a suite and write JSONL logs.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        suite: PathBuf,
        /// `expert`, `idm`, or a checkpoint path.
        #[arg(long)]
        planner: String,
        #[arg(long, value_enum, default_value_t = TrafficArg::LogReplay)]
        traffic: TrafficArg,
        #[arg(long, value_enum, default_value_t = ActuationArg::Lqr)]
        actuation: ActuationArg,
        /// Adapter checkpoint (required with `--actuation rl-adapter`).
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// Replan every N steps.
        #[arg(long, default_value_t = 1)]
        replan: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score simulation logs into the results CSV.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        suite: PathBuf,
        /// Directory of non-reactive logs (from `simulate`).
        #[arg(long)]
        logs: PathBuf,
        /// Optional directory of reactive logs for the r_cls column.
        #[arg(long)]
        logs_reactive: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproduce an ablation table end to end.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["inputs", "sde", "aug", "gap", "dropout"])]
        table: String,
        /// Training corpus directory.
        #[arg(long)]
        data: PathBuf,
        /// Evaluation suite (directory or suite file).
        #[arg(long)]
        suite: PathBuf,
        /// Adapter checkpoint for the `gap` table (trained if absent).
        #[arg(long)]
        adapter: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Endpoint-gradient report plus the steering-sweep trace.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the PPO trajectory adapter.
    AdapterTrain {
        #[command(flatten)]
        common: Common,
        /// Environment steps (80000 reproduces the full run).
        #[arg(long, default_value_t = 20_000)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData {
            common,
            count,
            families,
            agents,
            out,
        } => cmd_gen_data(&common, count, &families, agents, &out),
        Command::MakeHard {
            scores,
            suite,
            fraction,
            out,
        } => cmd_make_hard(&scores, &suite, fraction, &out),
        Command::Train {
            common,
            data,
            variant,
            sde,
            dropout,
            no_perturb,
            no_renorm,
            future_correction,
            epochs,
            batch_size,
            out,
        } => cmd_train(
            &common,
            &data,
            &variant,
            sde,
            dropout,
            no_perturb,
            no_renorm,
            future_correction,
            epochs,
            batch_size,
            &out,
        ),
        Command::Simulate {
            common,
            suite,
            planner,
            traffic,
            actuation,
            adapter,
            replan,
            out,
        } => cmd_simulate(
            &common, &suite, &planner, traffic, actuation, adapter.as_deref(), replan, &out,
        ),
        Command::Score {
            common,
            suite,
            logs,
            logs_reactive,
            out,
        } => cmd_score(&common, &suite, &logs, logs_reactive.as_deref(), &out),
        Command::Ablate {
            common,
            table,
            data,
            suite,
            adapter,
            epochs,
            out,
        } => cmd_ablate(&common, &table, &data, &suite, adapter.as_deref(), epochs, &out),
        Command::Sensitivity {
            common,
            checkpoint,
            suite,
            out,
        } => cmd_sensitivity(&common, &checkpoint, &suite, &out),
        Command::AdapterTrain { common, steps, out } => cmd_adapter_train(&common, steps, &out),
    }
}

fn parse_families(families: &[String]) -> Result<Vec<ScenarioFamily>> {
    if families.is_empty() {
        return Ok(ScenarioFamily::ALL.to_vec());
    }
    families
        .iter()
        .map(|f| f.parse::<ScenarioFamily>().map_err(Into::into))
        .collect()
}

fn cmd_gen_data(
    common: &Common,
    count: usize,
    families: &[String],
    agents: usize,
    out: &Path,
) -> Result<()> {
    if count == 0 {
        bail!("--count must be positive");
    }
    let families = parse_families(families)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let specs: Vec<(usize, ScenarioFamily, u64)> = (0..count)
        .map(|i| {
            let family = families[i % families.len()];
            (i, family, derive_seed(common.seed, i as u64, 0x67656e))
        })
        .collect();
    let scenarios = parallel_map(specs, common.jobs, |(_, family, seed)| {
        generate_scenario(
            &GenConfig {
                family: *family,
                num_agents: agents,
                ..GenConfig::default()
            },
            *seed,
        )
    });

    let mut ids = Vec::with_capacity(count);
    for scenario in scenarios {
        let scenario = scenario?;
        save_scenario(&scenario, &out.join(format!("{}.scenario.json", scenario.id)))?;
        ids.push(scenario.id);
    }
    ids.sort();
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            schema: MANIFEST_SCHEMA.into(),
            seed: common.seed,
            families: families.iter().map(|f| f.to_string()).collect(),
            count,
            scenarios: ids,
        },
    )?;
    println!("wrote {count} scenarios to {}", out.display());
    Ok(())
}

fn cmd_make_hard(scores: &Path, suite_dir: &Path, fraction: f64, out: &Path) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) || fraction <= 0.0 {
        bail!("--fraction must be in (0, 1]");
    }
    let text = std::fs::read_to_string(scores)
        .with_context(|| format!("reading {}", scores.display()))?;
    let results = parse_results_csv(&text, &scores.display().to_string())?;
    let scored: BTreeMap<&str, f64> = results
        .iter()
        .map(|r| (r.scenario_id.as_str(), r.nr.cls))
        .collect();

    let scenarios = load_suite(suite_dir)?;
    let mut by_family: BTreeMap<String, Vec<(f64, &str)>> = BTreeMap::new();
    for sc in &scenarios {
        let family = sc
            .id
            .rsplit_once('-')
            .map(|(f, _)| f.to_string())
            .unwrap_or_else(|| "unknown".into());
        let Some(&cls) = scored.get(sc.id.as_str()) else {
            bail!(
                "suite is not fully scored: `{}` missing from {}",
                sc.id,
                scores.display()
            );
        };
        by_family.entry(family).or_default().push((cls, &sc.id));
    }

    let mut picked: Vec<String> = Vec::new();
    for (_, mut entries) in by_family {
        entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
        let take = ((entries.len() as f64 * fraction).ceil() as usize)
            .clamp(1, entries.len());
        picked.extend(entries[..take].iter().map(|(_, id)| id.to_string()));
    }
    picked.sort();

    let dir = suite_dir
        .canonicalize()
        .unwrap_or_else(|_| suite_dir.to_path_buf());
    write_json(
        out,
        &SuiteFile {
            schema: SUITE_SCHEMA.into(),
            dir: dir.display().to_string(),
            scenarios: picked.clone(),
        },
    )?;
    println!("hard suite: {} scenarios -> {}", picked.len(), out.display());
    Ok(())
}

fn variant_config(variant: &str, sde: bool, dropout: f64) -> Result<VariantConfig> {
    let input_variant: InputVariant = variant.parse()?;
    let cfg = VariantConfig {
        input_variant,
        use_sde: sde,
        sde_dropout: dropout,
        ..VariantConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: &Common,
    data: &Path,
    variant: &str,
    sde: bool,
    dropout: f64,
    no_perturb: bool,
    no_renorm: bool,
    future_correction: bool,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    out: &Path,
) -> Result<()> {
    let file_cfg = FileConfig::load(common.config.as_deref())?;
    let mut hyper = file_cfg.train_config();
    if let Some(e) = epochs {
        hyper.epochs = e;
    }
    if let Some(b) = batch_size {
        hyper.batch_size = b;
    }
    let cfg = variant_config(variant, sde, dropout)?;
    let aug = AugmentConfig {
        perturb: !no_perturb,
        renormalize: !no_renorm,
        future_correction,
        ..AugmentConfig::default()
    };
    let dataset = load_suite(data)?;
    let (model, report) = train_imitation(&dataset, cfg, &aug, &hyper, common.seed)?;
    model.save(out)?;
    println!(
        "trained {} on {} scenarios: loss {:.4} -> {:.4}; saved {}",
        cfg.input_variant,
        dataset.len(),
        report.epoch_losses.first().unwrap_or(&f64::NAN),
        report.epoch_losses.last().unwrap_or(&f64::NAN),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    common: &Common,
    suite: &Path,
    planner: &str,
    traffic: TrafficArg,
    actuation: ActuationArg,
    adapter: Option<&Path>,
    replan: usize,
    out: &Path,
) -> Result<()> {
    let file_cfg = FileConfig::load(common.config.as_deref())?;
    let lqr = file_cfg.lqr_config();
    let scenarios = load_suite(suite)?;
    let spec = PlannerSpec::parse(planner)?;
    let policy = match (actuation, adapter) {
        (ActuationArg::RlAdapter, Some(path)) => Some(AdapterPolicy::load(path)?),
        (ActuationArg::RlAdapter, None) => bail!("--actuation rl-adapter needs --adapter"),
        _ => None,
    };
    let actuation = match actuation {
        ActuationArg::Lqr => ActuationSpec::Lqr(&lqr),
        ActuationArg::Perfect => ActuationSpec::Perfect,
        ActuationArg::RlAdapter => ActuationSpec::Adapter(policy.as_ref().expect("checked")),
    };
    let opts = SimOptions {
        replan_interval: file_cfg.replan_interval().unwrap_or(replan).max(1),
        ..SimOptions::default()
    };

    std::fs::create_dir_all(out)?;
    let mode = match traffic {
        TrafficArg::LogReplay => planlab_core::traffic::TrafficMode::LogReplay,
        TrafficArg::Reactive => planlab_core::traffic::TrafficMode::Reactive,
    };

    let items: Vec<&Scenario> = scenarios.iter().collect();
    let name = spec.name();
    let logs = parallel_map(items, common.jobs, |sc| -> Result<(String, String, String)> {
        let p = match &spec {
            PlannerSpec::Expert => {
                Box::new(planlab_core::simulator::LogReplayPlanner::new(sc))
                    as Box<dyn planlab_core::simulator::Planner>
            }
            PlannerSpec::Idm => Box::new(planlab_core::simulator::IdmPlanner::new(sc)?),
            PlannerSpec::Learned(model) => Box::new(BorrowedPlanner(model)),
        };
        let (plan, _) = planlab_core::simulator::run_open_loop(sc, p.as_ref())?;
        let log = planlab_core::simulator::run_closed_loop(
            sc,
            p.as_ref(),
            actuation_of(&actuation),
            mode,
            common.seed,
            &opts,
        )?;
        Ok((
            sc.id.clone(),
            log.to_jsonl(),
            serde_json::to_string_pretty(&plan)?,
        ))
    });

    let mut count = 0;
    for entry in logs {
        let (id, jsonl, plan) = entry?;
        std::fs::write(out.join(format!("{id}.log.jsonl")), jsonl)?;
        std::fs::write(out.join(format!("{id}.plan.json")), plan)?;
        count += 1;
    }
    println!(
        "simulated {count} scenarios with planner `{name}` -> {}",
        out.display()
    );
    Ok(())
}

struct BorrowedPlanner<'a>(&'a planlab_core::planner::LearnedPlanner);

impl planlab_core::simulator::Planner for BorrowedPlanner<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn plan(
        &self,
        snap: &planlab_core::scenario::SceneSnapshot<'_>,
        step: usize,
    ) -> planlab_core::error::Result<planlab_core::trajectory::PlannedTrajectory> {
        self.0.plan(snap, step)
    }
}

fn actuation_of<'a>(spec: &'a ActuationSpec<'a>) -> planlab_core::simulator::Actuation<'a> {
    match spec {
        ActuationSpec::Lqr(cfg) => planlab_core::simulator::Actuation::Lqr(cfg),
        ActuationSpec::Adapter(p) => planlab_core::simulator::Actuation::Adapter(*p),
        ActuationSpec::Perfect => planlab_core::simulator::Actuation::PerfectTracking,
    }
}

fn cmd_score(
    _common: &Common,
    suite: &Path,
    logs: &Path,
    logs_reactive: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let scenarios = load_suite(suite)?;
    let mut results: Vec<ScenarioResult> = Vec::with_capacity(scenarios.len());
    for sc in &scenarios {
        let log_path = logs.join(format!("{}.log.jsonl", sc.id));
        let text = std::fs::read_to_string(&log_path)
            .with_context(|| format!("reading {}", log_path.display()))?;
        let log = SimulationLog::from_jsonl(&text, &sc.id)?;
        let mut nr = planlab_core::metrics::closed_loop_score(&log, sc);

        let plan_path = logs.join(format!("{}.plan.json", sc.id));
        let ols = if plan_path.is_file() {
            let plan: planlab_core::trajectory::PlannedTrajectory =
                suite::read_json(&plan_path)?;
            planlab_core::metrics::open_loop_score(&plan, &sc.expert_future)?
        } else {
            0.0
        };
        nr.ols = ols;

        let r = match logs_reactive {
            Some(dir) => {
                let path = dir.join(format!("{}.log.jsonl", sc.id));
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let log = SimulationLog::from_jsonl(&text, &sc.id)?;
                Some(planlab_core::metrics::closed_loop_score(&log, sc))
            }
            None => None,
        };

        results.push(ScenarioResult {
            scenario_id: sc.id.clone(),
            planner: "scored".into(),
            ols,
            nr,
            r,
        });
    }
    let csv = results_csv(&results);
    std::fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    let agg = aggregate(&results)?;
    println!(
        "scored {} scenarios: ols {:.2}, nr_cls {:.2}, r_cls {:.2} -> {}",
        agg.count,
        agg.ols,
        agg.nr_cls,
        agg.r_cls,
        out.display()
    );
    Ok(())
}

fn cmd_ablate(
    common: &Common,
    table: &str,
    data: &Path,
    suite: &Path,
    adapter: Option<&Path>,
    epochs: Option<usize>,
    out: &Path,
) -> Result<()> {
    let file_cfg = FileConfig::load(common.config.as_deref())?;
    let mut hyper = file_cfg.train_config();
    if let Some(e) = epochs {
        hyper.epochs = e;
    }
    let lqr = file_cfg.lqr_config();
    let dataset = load_suite(data)?;
    let eval = load_suite(suite)?;
    let opts = SimOptions::default();

    let train_eval = |variant: VariantConfig, aug: &AugmentConfig, label: &str, detail: &str| -> Result<AblateRow> {
        let (model, _) = train_imitation(&dataset, variant, aug, &hyper, common.seed)?;
        let planner = PlannerSpec::Learned(Box::new(
            planlab_core::planner::LearnedPlanner::new(model),
        ));
        let results = evaluate_suite(
            &eval,
            &planner,
            ActuationSpec::Lqr(&lqr),
            true,
            common.seed,
            common.jobs,
            &opts,
        )?;
        let agg = aggregate(&results)?;
        Ok(AblateRow {
            table: table.into(),
            label: label.into(),
            detail: detail.into(),
            ols: agg.ols,
            nr_cls: agg.nr_cls,
            r_cls: agg.r_cls,
        })
    };

    let mut rows: Vec<AblateRow> = Vec::new();
    match table {
        "inputs" => {
            for variant in InputVariant::ALL {
                let cfg = VariantConfig {
                    input_variant: variant,
                    use_sde: false,
                    ..VariantConfig::default()
                };
                rows.push(train_eval(cfg, &AugmentConfig::default(), &variant.to_string(), "")?);
            }
        }
        "sde" => {
            for (variant, sde) in [
                (InputVariant::State3, false),
                (InputVariant::State5, false),
                (InputVariant::State5, true),
                (InputVariant::State6, false),
                (InputVariant::State6, true),
            ] {
                let cfg = VariantConfig {
                    input_variant: variant,
                    use_sde: sde,
                    ..VariantConfig::default()
                };
                let label = format!("{variant}{}", if sde { "+sde" } else { "" });
                rows.push(train_eval(cfg, &AugmentConfig::default(), &label, "")?);
            }
        }
        "aug" => {
            let cfg = VariantConfig {
                input_variant: InputVariant::State3,
                use_sde: false,
                ..VariantConfig::default()
            };
            for (p, rn, fc) in [
                (false, false, false),
                (true, false, false),
                (true, true, false),
                (true, true, true),
            ] {
                let aug = AugmentConfig {
                    perturb: p,
                    renormalize: rn,
                    future_correction: fc,
                    ..AugmentConfig::default()
                };
                let mark = |b: bool| if b { "x" } else { "-" };
                let label = format!("P{} RN{} FC{}", mark(p), mark(rn), mark(fc));
                rows.push(train_eval(cfg, &aug, "state3", &label)?);
            }
        }
        "gap" => {
            let policy = match adapter {
                Some(path) => AdapterPolicy::load(path)?,
                None => {
                    let cfg = PpoConfig {
                        total_steps: 200_000,
                        ..PpoConfig::default()
                    };
                    ppo_train(&cfg, common.seed)?.policy
                }
            };
            for (label, actuation) in [
                ("perfect", ActuationSpec::Perfect),
                ("lqr", ActuationSpec::Lqr(&lqr)),
                ("rl_adapter", ActuationSpec::Adapter(&policy)),
            ] {
                let results = evaluate_suite(
                    &eval,
                    &PlannerSpec::Expert,
                    actuation,
                    true,
                    common.seed,
                    common.jobs,
                    &opts,
                )?;
                let agg = aggregate(&results)?;
                rows.push(AblateRow {
                    table: table.into(),
                    label: format!("log_replay+{label}"),
                    detail: String::new(),
                    ols: agg.ols,
                    nr_cls: agg.nr_cls,
                    r_cls: agg.r_cls,
                });
            }
        }
        "dropout" => {
            let base = VariantConfig {
                input_variant: InputVariant::State6,
                use_sde: false,
                ..VariantConfig::default()
            };
            rows.push(train_eval(base, &AugmentConfig::default(), "state6", "no sde")?);
            for rate in [0.25, 0.5, 0.75] {
                let cfg = VariantConfig {
                    input_variant: InputVariant::State6,
                    use_sde: true,
                    sde_dropout: rate,
                    ..VariantConfig::default()
                };
                rows.push(train_eval(
                    cfg,
                    &AugmentConfig::default(),
                    "state6+sde",
                    &format!("dropout={rate}"),
                )?);
            }
        }
        other => bail!("unknown ablation table `{other}`"),
    }

    std::fs::write(out, ablate_csv(&rows)).with_context(|| format!("writing {}", out.display()))?;
    println!("ablation `{table}`: {} rows -> {}", rows.len(), out.display());
    Ok(())
}

pub const SENSITIVITY_CSV_SCHEMA: &str = "planlab.sensitivity.v1";

fn cmd_sensitivity(common: &Common, checkpoint: &Path, suite: &Path, out: &Path) -> Result<()> {
    let model = PlannerModel::load(checkpoint)?;
    let scenarios = load_suite(suite)?;
    let variant = model.cfg;

    let mut csv = format!("# schema={SENSITIVITY_CSV_SCHEMA}\n");
    csv.push_str("scenario_id,variant,mode,grad_x,grad_y,grad_yaw,grad_vel,grad_acc,grad_steer\n");
    let modes: &[(&str, ForwardMode)] = if variant.use_sde {
        &[("eval", ForwardMode::Eval), ("dropped", ForwardMode::EvalDropped)]
    } else {
        &[("eval", ForwardMode::Eval)]
    };
    for sc in &scenarios {
        let feats = eval_features(sc, &variant);
        for (mode_name, mode) in modes {
            let report = endpoint_sensitivity(&model, &feats, *mode)?;
            let g = report.autodiff;
            csv.push_str(&format!(
                "{},{}{},{mode_name},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
                sc.id,
                variant.input_variant,
                if variant.use_sde { "+sde" } else { "" },
                g[0].abs(),
                g[1].abs(),
                g[2].abs(),
                g[3].abs(),
                g[4].abs(),
                g[5].abs()
            ));
        }
    }
    std::fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;

    // Steering sweep: plan endpoints as the ego steering feature varies.
    if variant.input_variant.state_count() == Some(6) {
        let sweep_path = out.with_extension("sweep.csv");
        let mut sweep = format!("# schema={SENSITIVITY_CSV_SCHEMA}\n");
        sweep.push_str("scenario_id,steering,endpoint_x,endpoint_y\n");
        for sc in scenarios.iter().take(8) {
            let base = eval_features(sc, &variant);
            let mut steer = 0.15;
            while steer <= 0.5 + 1e-9 {
                let mut feats = base.clone();
                feats.ego_vector[5] = steer;
                let output = model.plan(&feats)?;
                let end = output.trajectory.endpoint();
                sweep.push_str(&format!(
                    "{},{steer:.2},{:.4},{:.4}\n",
                    sc.id, end.x, end.y
                ));
                steer += 0.05;
            }
        }
        std::fs::write(&sweep_path, &sweep)?;
        println!("sensitivity -> {}, sweep -> {}", out.display(), sweep_path.display());
    } else {
        println!("sensitivity -> {} (no steering input; sweep skipped)", out.display());
    }
    let _ = common;
    Ok(())
}

fn cmd_adapter_train(common: &Common, steps: usize, out: &Path) -> Result<()> {
    let cfg = PpoConfig {
        total_steps: steps,
        ..PpoConfig::default()
    };
    let outcome = ppo_train(&cfg, common.seed)?;
    outcome.policy.save(out)?;

    let mut curve = String::from("# schema=planlab.adapter-curve.v1\niteration,mean_episode_reward\n");
    for (i, r) in outcome.iteration_rewards.iter().enumerate() {
        curve.push_str(&format!("{i},{r:.6}\n"));
    }
    let curve_path = out.with_extension("curve.csv");
    std::fs::write(&curve_path, &curve)?;

    let eval = evaluate_policy(&outcome.policy, 20, derive_seed(common.seed, 0x6576, 0));
    println!(
        "adapter trained for {steps} steps, eval reward {eval:.2} -> {}",
        out.display()
    );
    Ok(())
}
