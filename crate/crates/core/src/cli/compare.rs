//! Multi-seed, multi-rule comparison tables.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use super::runner::execute;
use crate::dynamics::Rule;
use crate::error::Result;
use crate::io::config::{Overrides, RunConfig};
use crate::io::report::{RunReport, RunStatus};

/// Column names, in table order.
pub const COLUMNS: [&str; 6] = ["Accuracy", "NLL", "Ho/Ht", "MDo/MDt", "Modes", "MMD2"];

pub fn metrics_of(report: &RunReport) -> [Option<f64>; 6] {
    let f = &report.final_metrics;
    let e = f.ensemble.as_ref();
    [
        e.map(|e| e.accuracy),
        e.map(|e| e.nll),
        e.and_then(|e| e.entropy_ratio),
        e.and_then(|e| e.md_ratio),
        f.modes.as_ref().map(|m| m.covered_count() as f64),
        f.mmd2,
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct Cell {
    pub config: String,
    pub rule: Option<Rule>,
    pub seed: u64,
    pub metrics: Option<[Option<f64>; 6]>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub config: String,
    pub rule: String,
    pub runs: usize,
    pub failures: usize,
    pub columns: Vec<Option<Stat>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    pub column_names: Vec<String>,
    pub rows: Vec<Row>,
    pub cells: Vec<Cell>,
}

pub struct CompareInput {
    pub label: String,
    pub config: RunConfig,
    pub base: PathBuf,
}

/// Runs every (config, rule, seed) cell and aggregates per (config, rule) row.
/// A failing cell is recorded and excluded from the means.
pub fn compare(
    inputs: &[CompareInput],
    rules: &[Rule],
    seeds: &[u64],
    shared: &Overrides,
) -> CompareReport {
    let rule_slots: Vec<Option<Rule>> = if rules.is_empty() {
        vec![None]
    } else {
        rules.iter().copied().map(Some).collect()
    };
    let mut jobs = Vec::new();
    for (ci, _) in inputs.iter().enumerate() {
        for &rule in &rule_slots {
            for &seed in seeds {
                jobs.push((ci, rule, seed));
            }
        }
    }
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(ci, rule, seed)| {
            let input = &inputs[ci];
            let o = Overrides {
                seed: Some(seed),
                rule: rule.or(shared.rule),
                ..shared.clone()
            };
            let outcome = input
                .config
                .clone()
                .apply(&o)
                .and_then(|cfg| execute("compare", &cfg, &input.base));
            let (metrics, error) = match outcome {
                Ok(out) if out.report.status == RunStatus::Ok => {
                    (Some(metrics_of(&out.report)), None)
                }
                Ok(out) => (None, out.report.error),
                Err(e) => (None, Some(e.to_string())),
            };
            Cell {
                config: input.label.clone(),
                rule,
                seed,
                metrics,
                error,
            }
        })
        .collect();

    let per_row = seeds.len();
    let rows = cells
        .chunks(per_row.max(1))
        .map(|chunk| {
            let columns = (0..COLUMNS.len())
                .map(|k| {
                    let vals: Vec<f64> = chunk
                        .iter()
                        .filter_map(|c| c.metrics.and_then(|m| m[k]))
                        .collect();
                    Stat::of(&vals)
                })
                .collect();
            let first = &chunk[0];
            let rule = match first.rule {
                Some(r) => r.to_string(),
                None => inputs
                    .iter()
                    .find(|i| i.label == first.config)
                    .map(|i| rule_label(&i.config))
                    .unwrap_or_default(),
            };
            Row {
                config: first.config.clone(),
                rule,
                runs: chunk.len(),
                failures: chunk.iter().filter(|c| c.metrics.is_none()).count(),
                columns,
            }
        })
        .collect();
    CompareReport {
        seeds: seeds.to_vec(),
        column_names: COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
        cells,
    }
}

fn rule_label(cfg: &RunConfig) -> String {
    let rules: Vec<String> = cfg.phases.iter().map(|p| p.rule.to_string()).collect();
    rules.join("+")
}

/// Aligned text table; columns with no values in any row are omitted.
pub fn render_table(report: &CompareReport) -> String {
    let shown: Vec<usize> = (0..COLUMNS.len())
        .filter(|&k| report.rows.iter().any(|r| r.columns[k].is_some()))
        .collect();
    let mut header = vec!["Config".to_string(), "Rule".to_string()];
    header.extend(shown.iter().map(|&k| COLUMNS[k].to_string()));
    header.push("Failed".to_string());
    let mut lines = vec![header];
    for r in &report.rows {
        let mut line = vec![r.config.clone(), r.rule.clone()];
        for &k in &shown {
            line.push(match &r.columns[k] {
                Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
                None => "-".to_string(),
            });
        }
        line.push(format!("{}/{}", r.failures, r.runs));
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| {
            lines
                .iter()
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn seeds_from(spec: &str) -> Result<Vec<u64>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| crate::error::Error::usage(format!("bad seed {s:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::config::parse_run_config;

    fn input() -> CompareInput {
        let text = r#"
name = "sn"
particles = 12

[target]
kind = "standard_normal"
dim = 1

[init]
kind = "gaussian"
mean = [1.0]
std = 0.5

[[phases]]
rule = "svgd"
learning_rate = 0.1
steps = 20
"#;
        CompareInput {
            label: "sn".into(),
            config: parse_run_config(text).unwrap(),
            base: PathBuf::from("."),
        }
    }

    #[test]
    fn one_rule_one_seed_has_zero_std() {
        let rep = compare(&[input()], &[], &[5], &Overrides::default());
        assert_eq!(rep.rows.len(), 1);
        let mmd = rep.rows[0].columns[5].as_ref().unwrap();
        assert_eq!(mmd.std, 0.0);
        assert_eq!(mmd.n, 1);
    }

    #[test]
    fn two_rules_three_seeds_gives_two_row_means() {
        let rep = compare(
            &[input()],
            &[Rule::Svgd, Rule::Ergd],
            &[1, 2, 3],
            &Overrides::default(),
        );
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[1].rule, "ergd");
        for (r, row) in rep.rows.iter().enumerate() {
            let cells = &rep.cells[r * 3..r * 3 + 3];
            let vals: Vec<f64> = cells
                .iter()
                .map(|c| c.metrics.unwrap()[5].unwrap())
                .collect();
            let mean = vals.iter().sum::<f64>() / 3.0;
            let stat = row.columns[5].as_ref().unwrap();
            assert_eq!(stat.n, 3);
            assert!((stat.mean - mean).abs() < 1e-15);
        }
        let table = render_table(&rep);
        assert!(table.lines().next().unwrap().contains("MMD2"));
        assert!(!table.contains("Accuracy"));
    }

    #[test]
    fn failed_cells_are_recorded_and_aggregation_continues() {
        let mut inp = input();
        inp.config.phases[0].learning_rate = 1e300;
        inp.config.init = crate::engine::InitSpec::Gaussian {
            mean: vec![0.0],
            std: 100.0,
        };
        let rep = compare(&[inp, input()], &[], &[0], &Overrides::default());
        assert_eq!(rep.rows[0].failures, 1);
        assert!(rep.cells[0].error.is_some());
        assert_eq!(rep.rows[1].failures, 0);
    }

    #[test]
    fn sample_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert!(Stat::of(&[]).is_none());
        assert_eq!(seeds_from("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert!(seeds_from("1,x").is_err());
    }
}
