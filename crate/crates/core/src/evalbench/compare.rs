use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::MetricsReport;

/// Relative reduction of `value` against `baseline`, in percent.
pub fn improvement_pct(value: f64, baseline: f64) -> f64 {
    (1.0 - value / baseline) * 100.0
}

/// Metrics as rows, controllers as columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub controllers: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ComparisonTable {
    pub fn value(&self, metric: &str, controller: &str) -> Option<f64> {
        let col = self.controllers.iter().position(|c| c == controller)?;
        self.rows
            .iter()
            .find(|(m, _)| m == metric)
            .and_then(|(_, v)| v[col])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for c in &self.controllers {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (metric, vals) in &self.rows {
            out.push_str(metric);
            for v in vals {
                match v {
                    Some(x) => {
                        let _ = write!(out, ",{x}");
                    }
                    None => out.push_str(",---"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Absolute metrics for every controller plus tension-MAE/RMSE improvements
/// against each named baseline. The baseline's own column shows `---`.
pub fn compare_controllers(reports: &[(String, MetricsReport)], baselines: &[&str]) -> ComparisonTable {
    let controllers: Vec<String> = reports.iter().map(|(n, _)| n.clone()).collect();
    let mut rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    let mut push = |name: &str, f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        rows.push((name.to_string(), reports.iter().map(|(_, r)| f(r)).collect()));
    };
    push("mean_episode_reward", &|r| Some(r.mean_return));
    push("tension_mae_n", &|r| Some(r.tension_mae));
    push("tension_rmse_n", &|r| Some(r.tension_rmse));
    push("velocity_mae_mps", &|r| Some(r.velocity_mae));
    push("velocity_rmse_mps", &|r| Some(r.velocity_rmse));
    push("control_smoothness_var_du", &|r| Some(r.smoothness));
    let has_step = reports.iter().any(|(_, r)| r.step.is_some());
    if has_step {
        push("step_section_mae_n", &|r| r.step.map(|s| s.tension_mae));
        push("step_section_rmse_n", &|r| r.step.map(|s| s.tension_rmse));
        push("rise_time_s", &|r| r.step.and_then(|s| s.rise_time));
        push("settling_time_s", &|r| r.step.and_then(|s| s.settling_time));
        push("peak_overshoot_pct", &|r| r.step.map(|s| s.overshoot_pct));
        push("coupling_max_deviation_n", &|r| r.step.map(|s| s.coupling_max_deviation));
        push("coupling_settling_s", &|r| r.step.and_then(|s| s.coupling_settling_time));
    }

    for &base in baselines {
        let Some((_, b)) = reports.iter().find(|(n, _)| n == base) else {
            continue;
        };
        let pick: Vec<(&str, fn(&MetricsReport) -> Option<f64>)> = if has_step {
            vec![("step_section_mae", |r| r.step.map(|s| s.tension_mae))]
        } else {
            vec![
                ("tension_mae", |r| Some(r.tension_mae)),
                ("tension_rmse", |r| Some(r.tension_rmse)),
            ]
        };
        for (label, f) in pick {
            let vals = reports
                .iter()
                .map(|(name, r)| {
                    if name == base {
                        return None;
                    }
                    Some(improvement_pct(f(r)?, f(b)?))
                })
                .collect();
            rows.push((format!("{label}_improvement_vs_{base}_pct"), vals));
        }
    }
    ComparisonTable { controllers, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(mae: f64) -> MetricsReport {
        MetricsReport {
            episodes: 10,
            tension_mae: mae,
            tension_rmse: mae * 1.2,
            velocity_mae: 1e-4,
            velocity_rmse: 1.1e-4,
            mean_return: 4.5,
            return_std: 0.0,
            smoothness: 0.0,
            step: None,
        }
    }

    #[test]
    fn improvement_examples() {
        assert!((improvement_pct(0.0036, 0.0182) - 80.2).abs() < 0.05);
        assert!((improvement_pct(0.336, 0.510) - 34.1).abs() < 0.05);
        assert_eq!(improvement_pct(0.7, 0.7), 0.0);
    }

    #[test]
    fn table_layout() {
        let reports = vec![
            ("sac".to_string(), report(0.0036)),
            ("mpc".to_string(), report(0.0154)),
            ("lqr".to_string(), report(0.0182)),
        ];
        let t = compare_controllers(&reports, &["lqr"]);
        let imp = t.value("tension_mae_improvement_vs_lqr_pct", "sac").unwrap();
        assert!((imp - 80.2).abs() < 0.05);
        let imp = t.value("tension_mae_improvement_vs_lqr_pct", "mpc").unwrap();
        assert!((imp - 15.4).abs() < 0.1);
        assert_eq!(t.value("tension_mae_improvement_vs_lqr_pct", "lqr"), None);
        let csv = t.to_csv();
        assert!(csv.starts_with("metric,sac,mpc,lqr\n"));
        assert!(csv.contains(",---"));
    }

    #[test]
    fn identical_reports_show_no_improvement() {
        let reports = vec![("a".to_string(), report(0.3)), ("b".to_string(), report(0.3))];
        let t = compare_controllers(&reports, &["b"]);
        assert_eq!(t.value("tension_mae_improvement_vs_b_pct", "a"), Some(0.0));
        assert_eq!(t.value("tension_rmse_improvement_vs_b_pct", "a"), Some(0.0));
    }
}
