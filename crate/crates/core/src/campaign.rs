//! Campaign driver: fans scenario x replicate cells across the worker pool,
//! collects reports keyed by (scenario, replicate), and writes the full
//! artifact set under one directory. Cell results are collected in key order,
//! so every metric file is byte-identical across reruns regardless of the
//! worker count; only the manifest timestamps move.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{fmt_float, io_of, write_reports_csv};
use crate::par;
use crate::pipeline::{run_replicate, EvalOptions, EvalReport, MethodMetrics, METHOD_ORDER};
use crate::simulator::{scenario_grid, EffectType, ScenarioConfig};
use crate::svg::{box_plot, line_plot, BoxGroup, BoxStats, LineSeries};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchCampaign {
    pub scenarios: Vec<ScenarioConfig>,
    pub replicates: u64,
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalOptions,
}

impl BenchCampaign {
    /// The default sweep: every preset crossed with the Gaussian variance
    /// ladder and the zero-fraction ladder.
    pub fn full_grid(replicates: u64, seed: u64) -> Self {
        Self { scenarios: scenario_grid(), replicates, seed, eval: EvalOptions::default() }
    }

    /// Content hash of the campaign definition; reruns of the same campaign
    /// share it, any change to scenarios, replicates, seed, or evaluation
    /// options moves it.
    pub fn sha256(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// One cell that errored; the rest of the campaign is unaffected.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub scenario: String,
    pub replicate: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    /// The invocation that produced this run, as supplied by the caller.
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub replicates: u64,
    pub scenario_count: usize,
    pub cells_ok: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Every file this run wrote, relative to the output directory.
    pub artifacts: Vec<String>,
    pub failures: Vec<CellFailure>,
}

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Linear-interpolation quantile on a sorted slice (the convention most
/// stats packages default to). Callers guarantee non-empty input.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// (median, IQR) of whatever `get` extracts, over replicates where the
/// method produced metrics. `None` when nothing survived.
fn med_iqr(
    reports: &[&EvalReport],
    method: &str,
    get: impl Fn(&MethodMetrics) -> Option<f64>,
) -> Option<(f64, f64)> {
    let mut vals: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.method(method))
        .filter_map(&get)
        .filter(|v| v.is_finite())
        .collect();
    if vals.is_empty() {
        return None;
    }
    vals.sort_unstable_by(f64::total_cmp);
    Some((quantile(&vals, 0.5), quantile(&vals, 0.75) - quantile(&vals, 0.25)))
}

fn mean_of(
    reports: &[&EvalReport],
    method: &str,
    get: impl Fn(&MethodMetrics) -> Option<f64>,
) -> Option<f64> {
    let vals: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.method(method))
        .filter_map(&get)
        .filter(|v| v.is_finite())
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header).map_err(io_of)?;
    for row in rows {
        w.write_record(row).map_err(io_of)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-replicate values of one metric for one method within one scenario.
fn replicate_values(
    reports: &[&EvalReport],
    method: &str,
    get: impl Fn(&MethodMetrics) -> Option<f64>,
) -> Vec<f64> {
    reports
        .iter()
        .filter_map(|r| r.method(method))
        .filter_map(&get)
        .filter(|v| v.is_finite())
        .collect()
}

fn box_stats(values: &mut Vec<f64>) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    Some(BoxStats {
        min: values[0],
        q1: quantile(values, 0.25),
        median: quantile(values, 0.5),
        q3: quantile(values, 0.75),
        max: values[values.len() - 1],
    })
}

/// Scenario names end in a numeric level ("low-gauss-050"); the prefix is
/// the plot group and the level supplies the x coordinate.
fn plot_group(cfg: &ScenarioConfig) -> (String, f64) {
    let name = cfg.name();
    let group = name.rsplit_once('-').map(|(g, _)| g.to_string()).unwrap_or(name);
    let level = match cfg.effect {
        EffectType::Gaussian { variance } => variance,
        EffectType::Sparse { zero_fraction } => zero_fraction * 100.0,
        EffectType::IccTarget { icc } => icc * 100.0,
    };
    (group, level)
}

struct ScenarioSlice<'a> {
    cfg: &'a ScenarioConfig,
    name: String,
    reports: Vec<&'a EvalReport>,
}

/// Runs the whole campaign and writes, under `out_dir`:
///
/// - `config.json`, the campaign definition whose hash the manifest records
/// - `results.csv`, one row per scenario x replicate x method
/// - `summary.csv`, per-scenario medians and spreads
/// - `tables/*.csv`, one aggregate file per reported metric
/// - `plots/*.svg`, median lines and per-replicate boxes of test MSE
/// - `manifest.json`
///
/// `jobs` sizes the worker pool and changes wall time only. Failed cells are
/// recorded in the manifest and excluded from every aggregate.
pub fn run_bench(
    campaign: &BenchCampaign,
    jobs: Option<usize>,
    command: &str,
    out_dir: &Path,
) -> Result<RunManifest> {
    if campaign.scenarios.is_empty() {
        return Err(Error::InvalidInput("campaign has no scenarios".into()));
    }
    if campaign.replicates == 0 {
        return Err(Error::InvalidInput("campaign needs at least one replicate".into()));
    }
    let started = unix_now();
    fs::create_dir_all(out_dir.join("tables"))?;
    fs::create_dir_all(out_dir.join("plots"))?;

    let config_json = serde_json::to_vec_pretty(campaign)?;
    fs::write(out_dir.join("config.json"), &config_json)?;
    let config_sha256 = campaign.sha256()?;

    let reps = campaign.replicates as usize;
    let total = campaign.scenarios.len() * reps;
    // Cell index -> (scenario, replicate); map_indexed returns index order,
    // so collection order never depends on scheduling.
    let cells: Vec<Result<EvalReport>> = par::with_jobs(jobs, || {
        par::map_indexed(total, |idx| {
            let cfg = &campaign.scenarios[idx / reps];
            let replicate = (idx % reps) as u64;
            run_replicate(cfg, campaign.seed, replicate, &campaign.eval)
        })
    });

    let mut failures = Vec::new();
    let mut slices: Vec<ScenarioSlice> = Vec::with_capacity(campaign.scenarios.len());
    let mut reports_flat: Vec<&EvalReport> = Vec::new();
    for (si, cfg) in campaign.scenarios.iter().enumerate() {
        let mut ok = Vec::new();
        for (ri, cell) in cells[si * reps..(si + 1) * reps].iter().enumerate() {
            match cell {
                Ok(report) => ok.push(report),
                Err(e) => failures.push(CellFailure {
                    scenario: cfg.name(),
                    replicate: ri as u64,
                    error: e.to_string(),
                }),
            }
        }
        reports_flat.extend(ok.iter().copied());
        slices.push(ScenarioSlice { cfg, name: cfg.name(), reports: ok });
    }
    let cells_ok = reports_flat.len();

    let mut artifacts =
        vec!["config.json".to_string(), "manifest.json".to_string(), "results.csv".to_string()];
    let owned: Vec<EvalReport> = reports_flat.iter().map(|r| (*r).clone()).collect();
    write_reports_csv(&out_dir.join("results.csv"), &owned)?;

    write_summary(&out_dir.join("summary.csv"), &slices)?;
    artifacts.push("summary.csv".to_string());

    artifacts.extend(write_tables(out_dir, &slices)?);
    artifacts.extend(write_plots(out_dir, &slices)?);
    artifacts.sort();

    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_sha256,
        seed: campaign.seed,
        replicates: campaign.replicates,
        scenario_count: campaign.scenarios.len(),
        cells_ok,
        started_unix: started,
        finished_unix: unix_now(),
        artifacts,
        failures,
    };
    let mut f = BufWriter::new(File::create(out_dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(manifest)
}

const SUMMARY_COLUMNS: [&str; 12] = [
    "scenario",
    "method",
    "n_ok",
    "beta_err_median",
    "beta_err_iqr",
    "gamma_err_median",
    "gamma_err_iqr",
    "test_mse_median",
    "test_mse_iqr",
    "sparsity_recovery_mean",
    "icc_true_median",
    "icc_est_median",
];

fn write_summary(path: &Path, slices: &[ScenarioSlice]) -> Result<()> {
    let mut rows = Vec::new();
    for s in slices {
        let mut icc_true: Vec<f64> = s.reports.iter().map(|r| r.icc_true).collect();
        icc_true.sort_unstable_by(f64::total_cmp);
        let icc_true_med =
            if icc_true.is_empty() { String::new() } else { fmt_float(quantile(&icc_true, 0.5)) };
        for method in METHOD_ORDER {
            let n_ok = s.reports.iter().filter(|r| r.method(method).is_some()).count();
            let beta = med_iqr(&s.reports, method, |m| Some(m.beta_err));
            let gamma = med_iqr(&s.reports, method, |m| Some(m.gamma_err));
            let mse = med_iqr(&s.reports, method, |m| Some(m.test_mse));
            let rec = mean_of(&s.reports, method, |m| Some(m.sparsity_recovery));
            let icc = med_iqr(&s.reports, method, |m| m.icc_est);
            rows.push(vec![
                s.name.clone(),
                method.to_string(),
                n_ok.to_string(),
                opt_cell(beta.map(|b| b.0)),
                opt_cell(beta.map(|b| b.1)),
                opt_cell(gamma.map(|g| g.0)),
                opt_cell(gamma.map(|g| g.1)),
                opt_cell(mse.map(|m| m.0)),
                opt_cell(mse.map(|m| m.1)),
                opt_cell(rec),
                icc_true_med.clone(),
                opt_cell(icc.map(|i| i.0)),
            ]);
        }
    }
    write_csv(path, &SUMMARY_COLUMNS, &rows)
}

/// One aggregate file per metric: rows are scenarios, columns are the four
/// methods, cells are medians over surviving replicates (means for the
/// recovery fraction). Missing cells stay empty.
fn write_tables(out_dir: &Path, slices: &[ScenarioSlice]) -> Result<Vec<String>> {
    let header = ["scenario", "mio", "ols", "ridge", "lmem"];
    let per_method = |get: &dyn Fn(&MethodMetrics) -> Option<f64>, mean: bool| -> Vec<Vec<String>> {
        slices
            .iter()
            .map(|s| {
                let mut row = vec![s.name.clone()];
                for method in METHOD_ORDER {
                    let cell = if mean {
                        mean_of(&s.reports, method, get)
                    } else {
                        med_iqr(&s.reports, method, get).map(|v| v.0)
                    };
                    row.push(opt_cell(cell));
                }
                row
            })
            .collect()
    };

    let mut written = Vec::new();
    let tables: [(&str, &dyn Fn(&MethodMetrics) -> Option<f64>, bool); 4] = [
        ("beta_error.csv", &|m| Some(m.beta_err), false),
        ("gamma_error.csv", &|m| Some(m.gamma_err), false),
        ("test_mse.csv", &|m| Some(m.test_mse), false),
        ("sparsity_recovery.csv", &|m| Some(m.sparsity_recovery), true),
    ];
    for (file, get, mean) in tables {
        write_csv(&out_dir.join("tables").join(file), &header, &per_method(get, mean))?;
        written.push(format!("tables/{file}"));
    }

    // ICC recovery table: realized target next to the two estimators that
    // report one.
    let icc_rows: Vec<Vec<String>> = slices
        .iter()
        .map(|s| {
            let mut icc_true: Vec<f64> = s.reports.iter().map(|r| r.icc_true).collect();
            icc_true.sort_unstable_by(f64::total_cmp);
            vec![
                s.name.clone(),
                if icc_true.is_empty() {
                    String::new()
                } else {
                    fmt_float(quantile(&icc_true, 0.5))
                },
                opt_cell(med_iqr(&s.reports, "mio", |m| m.icc_est).map(|v| v.0)),
                opt_cell(med_iqr(&s.reports, "lmem", |m| m.icc_est).map(|v| v.0)),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("tables").join("icc.csv"),
        &["scenario", "icc_true_median", "mio", "lmem"],
        &icc_rows,
    )?;
    written.push("tables/icc.csv".to_string());
    Ok(written)
}

/// Test-MSE plots per scenario family (same preset and effect kind): a line
/// chart of medians across the effect level and a grouped box chart of the
/// replicate spread.
fn write_plots(out_dir: &Path, slices: &[ScenarioSlice]) -> Result<Vec<String>> {
    // Group in first-appearance order; within a group sort by level.
    let mut groups: Vec<(String, Vec<(f64, &ScenarioSlice)>)> = Vec::new();
    for s in slices {
        let (group, level) = plot_group(s.cfg);
        match groups.iter_mut().find(|(g, _)| *g == group) {
            Some((_, members)) => members.push((level, s)),
            None => groups.push((group, vec![(level, s)])),
        }
    }
    let labels: Vec<String> = METHOD_ORDER.iter().map(|m| m.to_string()).collect();

    let mut written = Vec::new();
    for (group, mut members) in groups {
        members.sort_by(|a, b| a.0.total_cmp(&b.0));

        let series: Vec<LineSeries> = METHOD_ORDER
            .iter()
            .map(|&method| LineSeries {
                label: method.to_string(),
                points: members
                    .iter()
                    .filter_map(|(level, s)| {
                        med_iqr(&s.reports, method, |m| Some(m.test_mse)).map(|v| (*level, v.0))
                    })
                    .collect(),
            })
            .collect();
        let line = line_plot(
            &format!("median test MSE, {group}"),
            "effect level",
            "test MSE",
            &series,
        );
        let line_name = format!("plots/test_mse_{group}.svg");
        fs::write(out_dir.join(&line_name), line)?;
        written.push(line_name);

        let box_groups: Vec<BoxGroup> = members
            .iter()
            .map(|(_, s)| BoxGroup {
                label: s.name.rsplit('-').next().unwrap_or(&s.name).to_string(),
                boxes: METHOD_ORDER
                    .iter()
                    .map(|&method| {
                        box_stats(&mut replicate_values(&s.reports, method, |m| Some(m.test_mse)))
                    })
                    .collect(),
            })
            .collect();
        let boxes = box_plot(
            &format!("test MSE by replicate, {group}"),
            "test MSE",
            &labels,
            &box_groups,
        );
        let box_name = format!("plots/test_mse_{group}_box.svg");
        fs::write(out_dir.join(&box_name), boxes)?;
        written.push(box_name);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::Preset;
    use tempfile::tempdir;

    fn tiny_campaign() -> BenchCampaign {
        let mut a = ScenarioConfig::new(Preset::Low, EffectType::Gaussian { variance: 10.0 });
        a.n_per_cluster = 24;
        let mut b = ScenarioConfig::new(Preset::Low, EffectType::Gaussian { variance: 50.0 });
        b.n_per_cluster = 24;
        BenchCampaign {
            scenarios: vec![a, b],
            replicates: 2,
            seed: 11,
            eval: EvalOptions { grid: Some(vec![0, 4]), ..EvalOptions::default() },
        }
    }

    fn read(dir: &Path, rel: &str) -> Vec<u8> {
        fs::read(dir.join(rel)).unwrap()
    }

    #[test]
    fn quantile_matches_hand_values() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
        assert_eq!(quantile(&[7.0], 0.5), 7.0);
        let odd = [1.0, 2.0, 9.0];
        assert_eq!(quantile(&odd, 0.5), 2.0);
    }

    #[test]
    fn bench_writes_the_full_artifact_set_and_manifest_lists_it() {
        let dir = tempdir().unwrap();
        let m = run_bench(&tiny_campaign(), Some(1), "bench test", dir.path()).unwrap();
        assert_eq!(m.format_version, MANIFEST_FORMAT_VERSION);
        assert_eq!(m.scenario_count, 2);
        assert_eq!(m.cells_ok, 4);
        assert!(m.failures.is_empty());
        assert!(m.finished_unix >= m.started_unix);
        assert_eq!(m.config_sha256.len(), 64);
        for a in &m.artifacts {
            assert!(dir.path().join(a).is_file(), "missing artifact {a}");
        }
        for required in
            ["config.json", "manifest.json", "results.csv", "summary.csv", "tables/beta_error.csv"]
        {
            assert!(m.artifacts.iter().any(|a| a == required), "{required} not listed");
        }
        // Two scenarios in one family: one line plot, one box plot.
        assert_eq!(m.artifacts.iter().filter(|a| a.ends_with(".svg")).count(), 2);
    }

    #[test]
    fn metric_files_are_byte_identical_across_reruns_and_job_counts() {
        let campaign = tiny_campaign();
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        let m1 = run_bench(&campaign, Some(1), "x", d1.path()).unwrap();
        let m2 = run_bench(&campaign, Some(4), "x", d2.path()).unwrap();
        assert_eq!(m1.artifacts, m2.artifacts);
        for a in m1.artifacts.iter().filter(|a| *a != "manifest.json") {
            assert_eq!(read(d1.path(), a), read(d2.path(), a), "{a} differs");
        }
        assert_eq!(m1.config_sha256, m2.config_sha256);
    }

    #[test]
    fn config_hash_moves_with_the_config() {
        let a = tiny_campaign();
        let mut b = tiny_campaign();
        b.seed += 1;
        assert_ne!(a.sha256().unwrap(), b.sha256().unwrap());
        let mut c = tiny_campaign();
        c.eval.mu *= 10.0;
        assert_ne!(a.sha256().unwrap(), c.sha256().unwrap());
    }

    #[test]
    fn failed_cells_are_isolated_and_recorded() {
        let mut campaign = tiny_campaign();
        // Three rows per cluster cannot satisfy the train/val/test split, so
        // every replicate of the second scenario fails while the first one
        // still reports.
        campaign.scenarios[1].n_per_cluster = 1;
        let dir = tempdir().unwrap();
        let m = run_bench(&campaign, Some(1), "x", dir.path()).unwrap();
        assert_eq!(m.cells_ok, 2);
        assert_eq!(m.failures.len(), 2);
        assert!(m.failures.iter().all(|f| f.scenario == campaign.scenarios[1].name()));
        assert!(!m.failures[0].error.is_empty());
        let results = String::from_utf8(read(dir.path(), "results.csv")).unwrap();
        assert!(results.contains(&campaign.scenarios[0].name()));
        assert!(!results.contains(&campaign.scenarios[1].name()));
        // Aggregate rows for the failed scenario exist but hold no numbers.
        let summary = String::from_utf8(read(dir.path(), "summary.csv")).unwrap();
        let empty_row =
            summary.lines().find(|l| l.contains(&campaign.scenarios[1].name())).unwrap();
        assert!(empty_row.contains(",0,,"));
    }

    #[test]
    fn summary_counts_rows_per_scenario_and_method() {
        let dir = tempdir().unwrap();
        run_bench(&tiny_campaign(), Some(1), "x", dir.path()).unwrap();
        let summary = String::from_utf8(read(dir.path(), "summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], SUMMARY_COLUMNS.join(","));
        assert_eq!(lines.len(), 1 + 2 * METHOD_ORDER.len());
        let results = String::from_utf8(read(dir.path(), "results.csv")).unwrap();
        assert_eq!(results.lines().count(), 1 + 4 * METHOD_ORDER.len());
    }

    #[test]
    fn empty_campaigns_are_rejected() {
        let dir = tempdir().unwrap();
        let none = BenchCampaign {
            scenarios: vec![],
            replicates: 1,
            seed: 0,
            eval: EvalOptions::default(),
        };
        assert!(matches!(
            run_bench(&none, Some(1), "x", dir.path()),
            Err(Error::InvalidInput(_))
        ));
        let mut zero_reps = tiny_campaign();
        zero_reps.replicates = 0;
        assert!(matches!(
            run_bench(&zero_reps, Some(1), "x", dir.path()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn plot_groups_split_presets_and_families() {
        let g = plot_group(&ScenarioConfig::new(Preset::Low, EffectType::Gaussian {
            variance: 10.0,
        }));
        assert_eq!(g, ("low-gauss".to_string(), 10.0));
        let s = plot_group(&ScenarioConfig::new(Preset::High, EffectType::Sparse {
            zero_fraction: 0.75,
        }));
        assert_eq!(s, ("high-sparse".to_string(), 75.0));
        let i = plot_group(&ScenarioConfig::new(
            Preset::Custom { p: 5, k: 4, q: 1 },
            EffectType::IccTarget { icc: 0.5 },
        ));
        assert_eq!(i.0, "custom-p5-k4-q1-icc");
        assert_eq!(i.1, 50.0);
    }
}
