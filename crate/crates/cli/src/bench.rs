//! Shared benchmark plumbing: planner construction, suite evaluation, and
//! the versioned ablation CSV.

use std::path::Path;

use anyhow::{bail, Context, Result};
use planlab_core::adapter::AdapterPolicy;
use planlab_core::control::LqrConfig;
use planlab_core::metrics::{closed_loop_score, open_loop_score, ScenarioResult};
use planlab_core::planner::{LearnedPlanner, PlannerModel};
use planlab_core::scenario::Scenario;
use planlab_core::simulator::{
    run_closed_loop, run_open_loop, Actuation, IdmPlanner, LogReplayPlanner, Planner, SimOptions,
    SimulationLog,
};
use planlab_core::traffic::TrafficMode;

use crate::suite::parallel_map;

/// What plans: the expert log, the IDM baseline, or a trained checkpoint.
pub enum PlannerSpec {
    Expert,
    Idm,
    Learned(Box<LearnedPlanner>),
}

impl PlannerSpec {
    pub fn parse(spec: &str) -> Result<PlannerSpec> {
        match spec {
            "expert" | "log_replay" => Ok(PlannerSpec::Expert),
            "idm" => Ok(PlannerSpec::Idm),
            path => {
                let path = Path::new(path);
                if !path.is_file() {
                    bail!(
                        "planner `{}` is not `expert`, `idm`, or a checkpoint file",
                        path.display()
                    );
                }
                let model = PlannerModel::load(path)
                    .with_context(|| format!("loading checkpoint {}", path.display()))?;
                Ok(PlannerSpec::Learned(Box::new(LearnedPlanner::new(model))))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            PlannerSpec::Expert => "expert".into(),
            PlannerSpec::Idm => "idm".into(),
            PlannerSpec::Learned(p) => p.name().to_string(),
        }
    }

    fn build<'a>(&'a self, scenario: &Scenario) -> Result<Box<dyn Planner + 'a>> {
        Ok(match self {
            PlannerSpec::Expert => Box::new(LogReplayPlanner::new(scenario)),
            PlannerSpec::Idm => Box::new(IdmPlanner::new(scenario)?),
            PlannerSpec::Learned(p) => Box::new(ForwardPlanner(p)),
        })
    }
}

/// Borrowing adapter so one loaded model serves every scenario.
struct ForwardPlanner<'a>(&'a LearnedPlanner);

impl Planner for ForwardPlanner<'_> {
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

#[derive(Clone, Copy)]
pub enum ActuationSpec<'a> {
    Lqr(&'a LqrConfig),
    Adapter(&'a AdapterPolicy),
    Perfect,
}

impl ActuationSpec<'_> {
    fn as_actuation(&self) -> Actuation<'_> {
        match self {
            ActuationSpec::Lqr(cfg) => Actuation::Lqr(cfg),
            ActuationSpec::Adapter(p) => Actuation::Adapter(*p),
            ActuationSpec::Perfect => Actuation::PerfectTracking,
        }
    }
}

/// Runs the planner over every scenario: open loop for OLS, closed loop
/// non-reactive, and (optionally) closed loop reactive.
pub fn evaluate_suite(
    scenarios: &[Scenario],
    planner: &PlannerSpec,
    actuation: ActuationSpec<'_>,
    reactive: bool,
    seed: u64,
    jobs: usize,
    opts: &SimOptions,
) -> Result<Vec<ScenarioResult>> {
    let name = planner.name();
    let items: Vec<&Scenario> = scenarios.iter().collect();
    let outcomes = parallel_map(items, jobs, |sc| -> Result<(ScenarioResult, SimulationLog)> {
        let p = planner.build(sc)?;
        let (plan, expert) = run_open_loop(sc, p.as_ref())?;
        let ols = open_loop_score(&plan, &expert)?;
        let nr_log = run_closed_loop(
            sc,
            p.as_ref(),
            actuation.as_actuation(),
            TrafficMode::LogReplay,
            seed,
            opts,
        )?;
        let mut nr = closed_loop_score(&nr_log, sc);
        nr.ols = ols;
        let r = if reactive {
            let r_log = run_closed_loop(
                sc,
                p.as_ref(),
                actuation.as_actuation(),
                TrafficMode::Reactive,
                seed,
                opts,
            )?;
            Some(closed_loop_score(&r_log, sc))
        } else {
            None
        };
        Ok((
            ScenarioResult {
                scenario_id: sc.id.clone(),
                planner: name.clone(),
                ols,
                nr,
                r,
            },
            nr_log,
        ))
    });

    let mut results = Vec::with_capacity(scenarios.len());
    for outcome in outcomes {
        let (result, _log) = outcome?;
        results.push(result);
    }
    Ok(results)
}

pub const ABLATE_CSV_SCHEMA: &str = "planlab.ablate.v1";

/// One ablation row: a labelled configuration with its benchmark means.
pub struct AblateRow {
    pub table: String,
    pub label: String,
    pub detail: String,
    pub ols: f64,
    pub nr_cls: f64,
    pub r_cls: f64,
}

pub fn ablate_csv(rows: &[AblateRow]) -> String {
    let mut out = format!("# schema={ABLATE_CSV_SCHEMA}\n");
    out.push_str("table,row,detail,ols,nr_cls,r_cls,desk_scale\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},true\n",
            r.table, r.label, r.detail, r.ols, r.nr_cls, r.r_cls
        ));
    }
    out
}
