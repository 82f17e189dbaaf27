//! Evaluation metrics and suites.
//!
//! SR and CR are percentages of episodes ending in `goal_reached` and `collision`;
//! GD is the mean true distance to the goal at the final step.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::LayoutSpec;
use crate::rng::mix64;
use crate::rollout::{rollout, ActorDriver, Driver, EpisodeOutcome, RolloutError, RolloutMeta};
use crate::policy::PolicySnapshot;
use crate::sim::{SimConfig, StopReason};

pub const DEFAULT_TRIALS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no outcomes to aggregate")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutMetrics {
    pub layout_seed: u64,
    pub sr: f64,
    pub gd: f64,
    pub cr: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr: f64,
    /// Mean final distance over all episodes.
    pub gd: f64,
    /// Mean final distance over unsuccessful episodes; `None` when all succeeded.
    pub gd_failures: Option<f64>,
    pub cr: f64,
    pub episodes: usize,
    pub per_layout: Vec<LayoutMetrics>,
}

fn aggregate(outcomes: &[&EpisodeOutcome]) -> (f64, f64, f64, Option<f64>) {
    let n = outcomes.len() as f64;
    let goals = outcomes.iter().filter(|o| o.stop_reason == StopReason::GoalReached).count() as f64;
    let collisions = outcomes.iter().filter(|o| o.stop_reason == StopReason::Collision).count() as f64;
    let gd = outcomes.iter().map(|o| o.final_goal_distance).sum::<f64>() / n;
    let fails: Vec<f64> = outcomes.iter().filter(|o| !o.success()).map(|o| o.final_goal_distance).collect();
    let gd_f = (!fails.is_empty()).then(|| fails.iter().sum::<f64>() / fails.len() as f64);
    (100.0 * goals / n, gd, 100.0 * collisions / n, gd_f)
}

pub fn compute_metrics(outcomes: &[EpisodeOutcome]) -> Result<MetricsReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let all: Vec<&EpisodeOutcome> = outcomes.iter().collect();
    let (sr, gd, cr, gd_failures) = aggregate(&all);
    let mut by_layout: BTreeMap<u64, Vec<&EpisodeOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_layout.entry(o.layout_seed).or_default().push(o);
    }
    let per_layout = by_layout
        .into_iter()
        .map(|(seed, os)| {
            let (sr, gd, cr, _) = aggregate(&os);
            LayoutMetrics { layout_seed: seed, sr, gd, cr, episodes: os.len() }
        })
        .collect();
    Ok(MetricsReport { sr, gd, gd_failures, cr, episodes: outcomes.len(), per_layout })
}

/// Simulator seed for one trial.
pub fn trial_seed(seed: u64, layout_index: usize, trial: usize) -> u64 {
    mix64(seed ^ mix64((layout_index as u64) << 20 | trial as u64))
}

/// Runs `trials` episodes per layout with drivers from `make_driver`.
pub fn run_suite_with<D: Driver>(
    suite: &[LayoutSpec],
    trials: usize,
    config: &SimConfig,
    seed: u64,
    mut make_driver: impl FnMut(&LayoutSpec) -> D,
) -> Result<(MetricsReport, Vec<EpisodeOutcome>), RolloutError> {
    let mut outcomes = Vec::with_capacity(suite.len() * trials);
    let meta = RolloutMeta { record_true_pose: false, ..RolloutMeta::default() };
    for (li, layout) in suite.iter().enumerate() {
        for t in 0..trials {
            let mut driver = make_driver(layout);
            let (_, o) = rollout(layout, config, trial_seed(seed, li, t), &mut driver, &meta)?;
            outcomes.push(o);
        }
    }
    let report = match compute_metrics(&outcomes) {
        Ok(r) => r,
        Err(_) => MetricsReport { sr: 0.0, gd: 0.0, gd_failures: None, cr: 0.0, episodes: 0, per_layout: Vec::new() },
    };
    Ok((report, outcomes))
}

/// Deterministic-action evaluation of a snapshot.
pub fn run_suite(
    policy: &PolicySnapshot,
    suite: &[LayoutSpec],
    trials: usize,
    config: &SimConfig,
    seed: u64,
) -> Result<MetricsReport, RolloutError> {
    Ok(run_suite_with(suite, trials, config, seed, |_| ActorDriver::deterministic(policy))?.0)
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub sr: f64,
    pub gd: f64,
    pub cr: f64,
}

impl TableRow {
    pub fn from_report(method: &str, r: &MetricsReport) -> Self {
        Self { method: String::from(method), sr: r.sr, gd: r.gd, cr: r.cr }
    }
}

const METHOD_WIDTH: usize = 24;

/// Aligned plain-text table with columns `SR↑ GD↓ CR↓`.
pub fn render_table(rows: &[TableRow]) -> String {
    let width = rows.iter().map(|r| r.method.chars().count()).max().unwrap_or(0).max(METHOD_WIDTH);
    let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>6}\n", "Method", "SR↑", "GD↓", "CR↓");
    for r in rows {
        out.push_str(&format!("{:<width$}  {:>6.1}  {:>6.2}  {:>6.1}\n", r.method, r.sr, r.gd, r.cr));
    }
    out
}

/// Inverse of [`render_table`] at the rendered precision.
pub fn parse_table(text: &str) -> Result<Vec<TableRow>, String> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 4 {
            return Err(format!("line {}: expected method and three numbers", i + 1));
        }
        let nums: Vec<&str> = parts.split_off(parts.len() - 3);
        let parse = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1));
        rows.push(TableRow { method: parts.join(" "), sr: parse(nums[0])?, gd: parse(nums[1])?, cr: parse(nums[2])? });
    }
    Ok(rows)
}
