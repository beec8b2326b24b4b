use serde::{Deserialize, Serialize};

use super::trace::EpisodeTrace;

/// Band conventions for step-response metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepMetricConfig {
    /// Rise time runs from the `rise_lo` to the `rise_hi` fraction of the step.
    pub rise_lo: f64,
    pub rise_hi: f64,
    /// Settling band as a fraction of the step magnitude.
    pub settle_band: f64,
    /// Absolute band (N) for the undisturbed sections.
    pub coupling_band: f64,
}

impl Default for StepMetricConfig {
    fn default() -> Self {
        Self {
            rise_lo: 0.1,
            rise_hi: 0.9,
            settle_band: 0.02,
            coupling_band: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// `None` when the response never reaches the upper rise level.
    pub rise_time: Option<f64>,
    /// Measured from the step instant; `None` if still outside the band at the end.
    pub settling_time: Option<f64>,
    pub overshoot_pct: f64,
    /// Largest `|T - T_ref|` in the other sections after the step, N.
    pub coupling_max_deviation: f64,
    pub coupling_settling_time: Option<f64>,
}

/// Aggregate step-response figures for the disturbed section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub section: usize,
    pub tension_mae: f64,
    pub tension_rmse: f64,
    pub rise_time: Option<f64>,
    pub settling_time: Option<f64>,
    pub overshoot_pct: f64,
    pub coupling_max_deviation: f64,
    pub coupling_settling_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub tension_mae: f64,
    pub tension_rmse: f64,
    pub velocity_mae: f64,
    pub velocity_rmse: f64,
    pub mean_return: f64,
    pub return_std: f64,
    /// Variance of consecutive differences of the normalized command.
    pub smoothness: f64,
    pub step: Option<StepReport>,
}

fn mae_rmse(pairs: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    for (x, r) in pairs {
        let e = x - r;
        abs += e.abs();
        sq += e * e;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    (abs / n as f64, (sq / n as f64).sqrt())
}

fn pooled<'a>(
    traces: &'a [EpisodeTrace],
    values: impl Fn(&'a EpisodeTrace) -> (&'a Vec<Vec<f64>>, &'a Vec<Vec<f64>>) + 'a,
    section: Option<usize>,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    traces.iter().flat_map(move |tr| {
        let (x, r) = values(tr);
        x.iter().zip(r).flat_map(move |(xr, rr)| {
            let range = match section {
                Some(i) => i..i + 1,
                None => 0..xr.len(),
            };
            range.map(move |i| (xr[i], rr[i]))
        })
    })
}

/// Tension MAE/RMSE of a single section pooled over all episodes.
pub fn section_tension_error(traces: &[EpisodeTrace], section: usize) -> (f64, f64) {
    mae_rmse(pooled(traces, |t| (&t.tensions, &t.tension_refs), Some(section)))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Pooled tracking errors, mean return and command smoothness over episodes.
pub fn tracking_metrics(traces: &[EpisodeTrace]) -> MetricsReport {
    let (t_mae, t_rmse) = mae_rmse(pooled(traces, |t| (&t.tensions, &t.tension_refs), None));
    let (v_mae, v_rmse) = mae_rmse(pooled(traces, |t| (&t.velocities, &t.velocity_refs), None));
    let returns: Vec<f64> = traces.iter().map(EpisodeTrace::episode_return).collect();
    let (mean_return, return_std) = mean_std(&returns);
    let deltas: Vec<f64> = traces
        .iter()
        .flat_map(|tr| {
            tr.commanded
                .windows(2)
                .flat_map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect::<Vec<_>>())
        })
        .collect();
    let (_, dstd) = mean_std(&deltas);
    MetricsReport {
        episodes: traces.len(),
        tension_mae: t_mae,
        tension_rmse: t_rmse,
        velocity_mae: v_mae,
        velocity_rmse: v_rmse,
        mean_return,
        return_std,
        smoothness: dstd * dstd,
        step: None,
    }
}

/// Time at which `progress` first reaches `level`, interpolated between samples.
fn crossing(time: &[f64], progress: &[f64], level: f64) -> Option<f64> {
    let k = progress.iter().position(|&p| p >= level)?;
    if k == 0 {
        return Some(time[0]);
    }
    let (p0, p1) = (progress[k - 1], progress[k]);
    let frac = (level - p0) / (p1 - p0);
    Some(time[k - 1] + frac * (time[k] - time[k - 1]))
}

/// Time from `step_time` until a series stays inside `band` of its target for good.
fn settle(time: &[f64], deviation: impl Iterator<Item = f64>, band: f64, step_time: f64) -> Option<f64> {
    let mut last_out = None;
    let mut count = 0;
    for (k, d) in deviation.enumerate() {
        if d.abs() > band {
            last_out = Some(k);
        }
        count = k + 1;
    }
    match last_out {
        None => Some(0.0),
        Some(k) if k + 1 >= count => None,
        Some(k) => Some(time[k + 1] - step_time),
    }
}

/// Step-response figures for `section` of one trace, using samples at or after
/// `step_time`.
pub fn step_metrics(
    trace: &EpisodeTrace,
    section: usize,
    step_time: f64,
    before: f64,
    after: f64,
    cfg: &StepMetricConfig,
) -> StepMetrics {
    let start = trace
        .time
        .iter()
        .position(|&t| t >= step_time - 1e-9)
        .unwrap_or(trace.len());
    let time = &trace.time[start..];
    let y: Vec<f64> = trace.tensions[start..].iter().map(|r| r[section]).collect();
    let mag = (after - before).abs();
    let dir = (after - before).signum();
    let progress: Vec<f64> = y.iter().map(|v| (v - before) * dir / mag).collect();

    let rise_time = match (
        crossing(time, &progress, cfg.rise_lo),
        crossing(time, &progress, cfg.rise_hi),
    ) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let settling_time = settle(
        time,
        y.iter().map(|v| v - after),
        cfg.settle_band * mag,
        step_time,
    );
    let overshoot_pct = progress
        .iter()
        .map(|p| (p - 1.0).max(0.0))
        .fold(0.0, f64::max)
        * 100.0;

    let n = trace.n_sections();
    let others: Vec<usize> = (0..n).filter(|&i| i != section).collect();
    let coupling_dev = |k: usize| {
        let row = start + k;
        others
            .iter()
            .map(|&i| (trace.tensions[row][i] - trace.tension_refs[row][i]).abs())
            .fold(0.0, f64::max)
    };
    let coupling_max_deviation = (0..time.len()).map(coupling_dev).fold(0.0, f64::max);
    let coupling_settling_time = if others.is_empty() {
        Some(0.0)
    } else {
        settle(
            time,
            (0..time.len()).map(coupling_dev),
            cfg.coupling_band,
            step_time,
        )
    };
    StepMetrics {
        rise_time,
        settling_time,
        overshoot_pct,
        coupling_max_deviation,
        coupling_settling_time,
    }
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Average per-episode step metrics. A timing figure is undefined when it is
/// undefined in any episode.
pub fn aggregate_step(
    traces: &[EpisodeTrace],
    section: usize,
    step_time: f64,
    before: f64,
    after: f64,
    cfg: &StepMetricConfig,
) -> StepReport {
    let per: Vec<StepMetrics> = traces
        .iter()
        .map(|t| step_metrics(t, section, step_time, before, after, cfg))
        .collect();
    let (mae, rmse) = section_tension_error(traces, section);
    let avg = |f: fn(&StepMetrics) -> f64| per.iter().map(f).sum::<f64>() / per.len().max(1) as f64;
    StepReport {
        section,
        tension_mae: mae,
        tension_rmse: rmse,
        rise_time: mean_defined(per.iter().map(|m| m.rise_time)),
        settling_time: mean_defined(per.iter().map(|m| m.settling_time)),
        overshoot_pct: avg(|m| m.overshoot_pct),
        coupling_max_deviation: avg(|m| m.coupling_max_deviation),
        coupling_settling_time: mean_defined(per.iter().map(|m| m.coupling_settling_time)),
    }
}
