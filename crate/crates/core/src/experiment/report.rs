use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plots::{bar_chart, line_chart, Bar, Line};
use super::results::{Results, RunRecord};
use crate::error::{Error, Result};
use crate::eval::median;

/// p-values at or below this are flagged significant.
pub const SIGNIFICANCE: f64 = 0.05;

/// One scheme × condition cell aggregated over seeds (medians).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub condition: String,
    pub condition_value: Option<f64>,
    pub scheme: String,
    pub n_seeds: usize,
    pub auroc_target: f64,
    pub target_lower: f64,
    pub target_upper: f64,
    pub auroc_attribute: Option<f64>,
    pub attribute_lower: Option<f64>,
    pub attribute_upper: Option<f64>,
    pub comparison: Option<String>,
    pub p_value: Option<f64>,
    pub significant: Option<bool>,
}

fn median_of(runs: &[&RunRecord], f: impl Fn(&RunRecord) -> Option<f64>) -> Option<f64> {
    let values: Vec<f64> = runs.iter().filter_map(|r| f(r)).collect();
    (!values.is_empty()).then(|| median(&values))
}

/// Scheme × condition rows of one results file, in run order.
pub fn summarize(results: &Results, experiment: &str) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for condition in results.conditions() {
        for scheme in results.schemes() {
            let runs: Vec<&RunRecord> = results.runs_of(&condition, &scheme).collect();
            if runs.is_empty() {
                continue;
            }
            let tests: Vec<_> = results
                .paired_tests
                .iter()
                .filter(|t| t.row() == (condition.as_str(), scheme.as_str()))
                .collect();
            let p_value = (!tests.is_empty())
                .then(|| median(&tests.iter().map(|t| t.p_value).collect::<Vec<_>>()));
            rows.push(SummaryRow {
                experiment: experiment.into(),
                condition: condition.clone(),
                condition_value: runs[0].condition_value,
                scheme: scheme.clone(),
                n_seeds: runs.len(),
                auroc_target: median_of(&runs, |r| Some(r.auroc_target)).unwrap(),
                target_lower: median_of(&runs, |r| Some(r.auroc_target_ci[0])).unwrap(),
                target_upper: median_of(&runs, |r| Some(r.auroc_target_ci[1])).unwrap(),
                auroc_attribute: median_of(&runs, |r| r.auroc_attribute),
                attribute_lower: median_of(&runs, |r| r.auroc_attribute_ci.map(|c| c[0])),
                attribute_upper: median_of(&runs, |r| r.auroc_attribute_ci.map(|c| c[1])),
                comparison: tests.first().map(|t| t.label()),
                p_value,
                significant: p_value.map(|p| p <= SIGNIFICANCE),
            });
        }
    }
    rows
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run rows of `table.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub condition: String,
    pub condition_value: Option<f64>,
    pub scheme: String,
    pub seed: u64,
    pub auroc_target: f64,
    pub target_lower: f64,
    pub target_upper: f64,
    pub auroc_attribute: Option<f64>,
    pub attribute_lower: Option<f64>,
    pub attribute_upper: Option<f64>,
    pub n_test_patients: usize,
    pub test_phi: Option<f64>,
}

impl From<&RunRecord> for TableRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            condition: r.condition.clone(),
            condition_value: r.condition_value,
            scheme: r.scheme.clone(),
            seed: r.seed,
            auroc_target: r.auroc_target,
            target_lower: r.auroc_target_ci[0],
            target_upper: r.auroc_target_ci[1],
            auroc_attribute: r.auroc_attribute,
            attribute_lower: r.auroc_attribute_ci.map(|c| c[0]),
            attribute_upper: r.auroc_attribute_ci.map(|c| c[1]),
            n_test_patients: r.n_test_patients,
            test_phi: r.test_phi,
        }
    }
}

fn bars(rows: &[SummaryRow], group: impl Fn(&SummaryRow) -> String) -> (Vec<Bar>, Vec<Bar>) {
    let target = rows
        .iter()
        .map(|r| Bar {
            group: group(r),
            series: r.scheme.clone(),
            value: r.auroc_target,
            lower: r.target_lower,
            upper: r.target_upper,
        })
        .collect();
    let attribute = rows
        .iter()
        .filter_map(|r| {
            Some(Bar {
                group: group(r),
                series: r.scheme.clone(),
                value: r.auroc_attribute?,
                lower: r.attribute_lower?,
                upper: r.attribute_upper?,
            })
        })
        .collect();
    (target, attribute)
}

/// Bar chart of both AUROCs; a line chart too when conditions are numeric.
pub fn write_figures(
    dir: &Path,
    rows: &[SummaryRow],
    group: impl Fn(&SummaryRow) -> String,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let (target, attribute) = bars(rows, group);
    let mut panels = vec![("AUROC(y_hat, target)", target)];
    if !attribute.is_empty() {
        panels.push(("AUROC(y_hat, attribute)", attribute));
    }
    let mut written = vec![dir.join("auroc.svg")];
    bar_chart(&written[0], &panels)?;
    if rows.iter().all(|r| r.condition_value.is_some()) && !rows.is_empty() {
        let mut lines: Vec<Line> = Vec::new();
        for r in rows {
            let point = (
                r.condition_value.unwrap(),
                r.auroc_target,
                r.target_lower,
                r.target_upper,
            );
            match lines.iter_mut().find(|l| l.name == r.scheme) {
                Some(l) => l.points.push(point),
                None => lines.push(Line {
                    name: r.scheme.clone(),
                    points: vec![point],
                }),
            }
        }
        for l in &mut lines {
            l.points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let path = dir.join("sweep.svg");
        line_chart(
            &path,
            "Target AUROC against source-task correlation",
            "source phi",
            &lines,
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Merges several results directories into one scheme × condition table.
///
/// Each directory contributes its summary rows unchanged, tagged with the
/// directory name; the merged `report.csv` and figures go to `out`.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<Vec<SummaryRow>> {
    if dirs.is_empty() {
        return Err(Error::Config(
            "report needs at least one results directory".into(),
        ));
    }
    let mut rows = Vec::new();
    for dir in dirs {
        let results = Results::load(dir)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| results.config.kind.to_string());
        rows.extend(summarize(&results, &name));
    }
    std::fs::create_dir_all(out)?;
    write_rows(&out.join("report.csv"), &rows)?;
    let multi = dirs.len() > 1;
    write_figures(&out.join("figures"), &rows, |r| {
        if multi {
            format!("{}:{}", r.experiment, r.condition)
        } else {
            r.condition.clone()
        }
    })?;
    Ok(rows)
}
