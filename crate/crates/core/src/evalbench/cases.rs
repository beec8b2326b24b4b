use serde::{Deserialize, Serialize};

use super::metrics::{aggregate_step, tracking_metrics, MetricsReport, StepMetricConfig};
use super::trace::{run_episode, Controller, EpisodeTrace};
use crate::curriculum::CurriculumPhase;
use crate::env::{EnvConfig, EnvError, ReferenceProfile, R2rEnv, StepEvent};
use crate::plant::PlantParams;
use crate::rng::derive_seed;

const NOMINAL_TENSION: f64 = 30.0;
const STEP_SECTION: usize = 1;
const STEP_FROM: f64 = 20.0;
const STEP_TO: f64 = 40.0;
const STEP_TIME_S: f64 = 0.5;

/// Fixed benchmark scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCase {
    /// 30 N in every section for the whole episode.
    NominalTracking,
    /// Section 2 steps 20 N -> 40 N at 0.5 s; the others hold 30 N.
    StepResponse,
}

impl TestCase {
    pub fn id(&self) -> u8 {
        match self {
            TestCase::NominalTracking => 1,
            TestCase::StepResponse => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(TestCase::NominalTracking),
            2 => Some(TestCase::StepResponse),
            _ => None,
        }
    }

    pub fn step_time(&self) -> Option<f64> {
        match self {
            TestCase::NominalTracking => None,
            TestCase::StepResponse => Some(STEP_TIME_S),
        }
    }

    pub fn step_event(&self, dt: f64) -> Option<StepEvent> {
        self.step_time().map(|t| StepEvent {
            section: STEP_SECTION,
            step: (t / dt).round() as usize,
            from: STEP_FROM,
            to: STEP_TO,
        })
    }

    pub fn profile(&self, params: &PlantParams, cfg: &EnvConfig) -> Result<ReferenceProfile, EnvError> {
        let n = params.n_sections;
        let mut base = vec![NOMINAL_TENSION; n];
        let events: Vec<StepEvent> = self.step_event(params.dt).into_iter().collect();
        for ev in &events {
            if ev.section >= n {
                return Err(EnvError::InvalidConfig(format!(
                    "step case needs at least {} sections",
                    ev.section + 1
                )));
            }
            base[ev.section] = ev.from;
        }
        Ok(ReferenceProfile::build(
            params,
            params.unwind_velocity,
            &base,
            events,
            cfg.episode_len,
        )?)
    }
}

/// Where evaluation episodes get their references from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scenario {
    Phase(CurriculumPhase),
    Case(TestCase),
}

const SCENARIO_TAG: u64 = 0x7e57;

/// Run `n_episodes` of a scenario. Episode `e` uses an environment seeded only
/// from `(scenario, e, master_seed)`, so different controllers see the same noise.
pub fn run_scenario(
    scenario: Scenario,
    controller: &mut dyn Controller,
    params: &PlantParams,
    cfg: &EnvConfig,
    n_episodes: usize,
    master_seed: u64,
) -> Result<Vec<EpisodeTrace>, EnvError> {
    let tag = match scenario {
        Scenario::Case(c) => u64::from(c.id()),
        Scenario::Phase(p) => 100 + u64::from(p.index),
    };
    let mut traces = Vec::with_capacity(n_episodes);
    for e in 0..n_episodes {
        let seed = derive_seed(master_seed, &[SCENARIO_TAG, tag, e as u64]);
        let mut env = R2rEnv::new(params.clone(), cfg.clone(), seed)?;
        let obs = match scenario {
            Scenario::Phase(phase) => env.reset(&phase)?,
            Scenario::Case(case) => env.reset_with_profile(case.profile(params, cfg)?)?,
        };
        traces.push(run_episode(&mut env, controller, obs)?);
    }
    Ok(traces)
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub case: TestCase,
    pub controller: String,
    pub report: MetricsReport,
    #[serde(skip)]
    pub traces: Vec<EpisodeTrace>,
}

/// Tracking metrics, plus step metrics when the case has a step.
pub fn case_report(
    case: TestCase,
    traces: &[EpisodeTrace],
    dt: f64,
    step_cfg: &StepMetricConfig,
) -> MetricsReport {
    let mut report = tracking_metrics(traces);
    if let Some(ev) = case.step_event(dt) {
        report.step = Some(aggregate_step(
            traces,
            ev.section,
            case.step_time().unwrap_or(0.0),
            ev.from,
            ev.to,
            step_cfg,
        ));
    }
    report
}

/// Evaluate a controller on a benchmark case and compute its metrics.
pub fn run_test_case(
    case: TestCase,
    controller: &mut dyn Controller,
    params: &PlantParams,
    cfg: &EnvConfig,
    n_episodes: usize,
    master_seed: u64,
    step_cfg: &StepMetricConfig,
) -> Result<CaseResult, EnvError> {
    let traces = run_scenario(
        Scenario::Case(case),
        controller,
        params,
        cfg,
        n_episodes,
        master_seed,
    )?;
    let report = case_report(case, &traces, params.dt, step_cfg);
    Ok(CaseResult {
        case,
        controller: controller.name(),
        report,
        traces,
    })
}
