//! Metrics tables and on-disk artifacts.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::run::{CaseResult, MethodOutcome, Models, TestCase};
use crate::error::{Error, Result};
use crate::forward::dataset::encode_dataset;
use crate::forward::{Dataset, Normalization, Sample};
use crate::geometry::Field;
use crate::inversion::mean_std;
use crate::metrics::{coverage_counts, CoverageCounts};
use crate::neural::{Checkpoint, LossTrace};

pub const METRICS_HEADER: &str = "method,target,cases,mae_mean,mae_std,cov1_pct,cov2_pct,train_s,pred_s";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    /// `u`, `f` or `sigma`.
    pub target: String,
    pub cases: usize,
    /// Mean and sample standard deviation of the per-case MAE.
    pub mae_mean: f64,
    pub mae_std: f64,
    /// Coverage pooled over all entries of all cases, in percent.
    pub coverage_1: Option<f64>,
    pub coverage_2: Option<f64>,
    pub train_seconds: Option<f64>,
    /// Mean prediction wall time per case.
    pub pred_seconds: Option<f64>,
}

pub struct ExperimentReport {
    pub rows: Vec<MetricsRow>,
    pub cases: Vec<TestCase>,
    pub results: Vec<CaseResult>,
    pub gabi: Option<Checkpoint>,
    pub gabi_trace: Option<LossTrace>,
    pub direct: Option<Checkpoint>,
    pub normalization: Normalization,
}

impl ExperimentReport {
    pub fn row(&self, method: Method, target: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method.label() && r.target == target)
    }

    /// Outcome of `method` on every case, in case order.
    pub fn outcomes(&self, method: Method) -> Vec<&MethodOutcome> {
        self.results
            .iter()
            .filter_map(|r| r.outcomes.iter().find(|o| o.method == method))
            .collect()
    }
}

fn select_channel(field: &Field, channel: usize) -> Vec<f64> {
    field.channel(channel)
}

fn train_seconds(method: Method, models: &Models) -> Option<f64> {
    match method {
        Method::GabiAbc | Method::GabiPcn => models.gabi_seconds,
        Method::Direct => models.direct_seconds,
        _ => None,
    }
}

pub fn metrics_rows(
    cfg: &ExperimentConfig,
    models: &Models,
    cases: &[TestCase],
    results: &[CaseResult],
) -> Result<Vec<MetricsRow>> {
    if cases.len() != results.len() {
        return Err(Error::Consistency("one result per test case expected".into()));
    }
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let outcomes: Vec<&MethodOutcome> = results
            .iter()
            .map(|r| {
                r.outcomes
                    .iter()
                    .find(|o| o.method == method)
                    .ok_or_else(|| Error::Consistency(format!("missing {} result", method.label())))
            })
            .collect::<Result<_>>()?;
        let pred = outcomes.iter().map(|o| o.seconds).sum::<f64>() / outcomes.len() as f64;
        let timing = |row: &mut MetricsRow| {
            row.train_seconds = train_seconds(method, models);
            row.pred_seconds = Some(pred);
        };

        for &(target, channel) in cfg.problem.field_targets() {
            let Some(slot) = outcomes[0].channels.iter().position(|&c| c == channel) else {
                continue;
            };
            let mut maes = Vec::with_capacity(cases.len());
            let mut pooled = CoverageCounts::default();
            for (case, o) in cases.iter().zip(&outcomes) {
                let truth = select_channel(&case.field, channel);
                let mean = select_channel(&o.mean, slot);
                let std = match &o.std {
                    Some(s) => select_channel(s, slot),
                    None => vec![0.0; truth.len()],
                };
                let c = coverage_counts(&truth, &mean, &std)?;
                maes.push(c.mae());
                pooled.merge(&c);
            }
            let with_bands = outcomes[0].std.is_some();
            let mut row = summary_row(method, target, &maes);
            if with_bands {
                row.coverage_1 = Some(pooled.coverage_1());
                row.coverage_2 = Some(pooled.coverage_2());
            }
            timing(&mut row);
            rows.push(row);
        }

        if outcomes.iter().all(|o| o.sigma.is_some()) {
            let mut maes = Vec::with_capacity(cases.len());
            let mut pooled = CoverageCounts::default();
            let mut with_bands = true;
            for (case, o) in cases.iter().zip(&outcomes) {
                let est = o.sigma.expect("checked above");
                with_bands &= est.std.is_some();
                let c = coverage_counts(&[case.sigma], &[est.mean], &[est.std.unwrap_or(0.0)])?;
                maes.push(c.mae());
                pooled.merge(&c);
            }
            let mut row = summary_row(method, "sigma", &maes);
            if with_bands {
                row.coverage_1 = Some(pooled.coverage_1());
                row.coverage_2 = Some(pooled.coverage_2());
            }
            timing(&mut row);
            rows.push(row);
        }
    }
    Ok(rows)
}

fn summary_row(method: Method, target: &str, maes: &[f64]) -> MetricsRow {
    let (mae_mean, mae_std) = if maes.len() > 1 {
        mean_std(maes)
    } else {
        (maes[0], 0.0)
    };
    MetricsRow {
        method: method.label().into(),
        target: target.into(),
        cases: maes.len(),
        mae_mean,
        mae_std,
        coverage_1: None,
        coverage_2: None,
        train_seconds: None,
        pred_seconds: None,
    }
}

fn opt(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(x) => format!("{x:.precision$}"),
        None => "NA".into(),
    }
}

/// `metrics.csv` contents. With `include_timings` off the timing columns
/// hold `NA`, which keeps the file identical across repeated runs.
pub fn metrics_csv(rows: &[MetricsRow], include_timings: bool) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let (train, pred) = if include_timings {
            (r.train_seconds, r.pred_seconds)
        } else {
            (None, None)
        };
        writeln!(
            s,
            "{},{},{},{:.6e},{:.6e},{},{},{},{}",
            r.method,
            r.target,
            r.cases,
            r.mae_mean,
            r.mae_std,
            opt(r.coverage_1, 2),
            opt(r.coverage_2, 2),
            opt(train, 3),
            opt(pred, 4)
        )
        .expect("writing to a String");
    }
    s
}

pub fn timings_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("method,train_s,pred_s\n");
    let mut seen = Vec::new();
    for r in rows {
        if seen.contains(&&r.method) {
            continue;
        }
        seen.push(&r.method);
        writeln!(s, "{},{},{}", r.method, opt(r.train_seconds, 3), opt(r.pred_seconds, 4)).expect("writing to a String");
    }
    s
}

fn field_dump(case: &TestCase, o: &MethodOutcome) -> Result<Vec<u8>> {
    let n = case.mesh.n_nodes();
    let k = o.channels.len();
    let mut truth = Vec::with_capacity(n * k);
    for i in 0..n {
        truth.extend(o.channels.iter().map(|&c| case.field.get(i, c)));
    }
    let names = o.mean.channels().to_vec();
    let truth = Field::new(n, names.clone(), truth)?;
    let std = match &o.std {
        Some(s) => s.clone(),
        None => Field::new(n, names.clone(), vec![0.0; n * k])?,
    };
    let error = Field::new(
        n,
        names,
        truth.values().iter().zip(o.mean.values()).map(|(t, m)| t - m).collect(),
    )?;
    let samples = [truth, o.mean.clone(), std, error]
        .into_iter()
        .map(|field| Sample {
            mesh: case.mesh.clone(),
            field,
        })
        .collect();
    encode_dataset(&Dataset {
        samples,
        normalization: Normalization::identity(k),
    })
}

/// Long-format posterior samples: one line per sample, node and channel.
fn samples_csv(o: &MethodOutcome) -> Option<String> {
    let ens = o.ensemble.as_ref()?;
    let mut s = String::from("sample,node,channel,value\n");
    for (k, f) in ens.fields.iter().enumerate() {
        for i in 0..f.n_nodes() {
            for c in 0..f.n_channels() {
                writeln!(s, "{k},{i},{c},{:.9e}", f.get(i, c)).expect("writing to a String");
            }
        }
    }
    Some(s)
}

pub fn write_outputs(cfg: &ExperimentConfig, report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&report.rows, !cfg.deterministic))?;
    std::fs::write(dir.join("timings.csv"), timings_csv(&report.rows))?;
    if cfg.dump_fields {
        let fields = dir.join("fields");
        std::fs::create_dir_all(&fields)?;
        for (case, result) in report.cases.iter().zip(&report.results) {
            for o in &result.outcomes {
                let path = fields.join(format!("case{:04}_{}.gabd", case.index, o.method.label()));
                std::fs::write(path, field_dump(case, o)?)?;
            }
        }
    }
    if cfg.export_samples {
        if let Some(first) = report.results.first() {
            for o in &first.outcomes {
                if let Some(csv) = samples_csv(o) {
                    std::fs::write(dir.join(format!("samples_case{:04}_{}.csv", first.case, o.method.label())), csv)?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, train: Option<f64>) -> MetricsRow {
        MetricsRow {
            method: method.into(),
            target: "u".into(),
            cases: 3,
            mae_mean: 0.012345678,
            mae_std: 1e-3,
            coverage_1: Some(68.0),
            coverage_2: None,
            train_seconds: train,
            pred_seconds: Some(0.5),
        }
    }

    #[test]
    fn csv_layout_is_fixed() {
        let csv = metrics_csv(&[row("gabi-abc", Some(12.0)), row("direct", None)], true);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1], "gabi-abc,u,3,1.234568e-2,1.000000e-3,68.00,NA,12.000,0.5000");
        assert_eq!(lines[2], "direct,u,3,1.234568e-2,1.000000e-3,68.00,NA,NA,0.5000");
        let quiet = metrics_csv(&[row("gabi-abc", Some(12.0))], false);
        assert!(quiet.lines().nth(1).unwrap().ends_with(",NA,NA"));
    }

    #[test]
    fn timings_list_each_method_once() {
        let mut sigma = row("gabi-abc", Some(1.0));
        sigma.target = "sigma".into();
        let t = timings_csv(&[row("gabi-abc", Some(1.0)), sigma, row("direct", None)]);
        assert_eq!(t, "method,train_s,pred_s\ngabi-abc,1.000,0.5000\ndirect,NA,0.5000\n");
    }
}
