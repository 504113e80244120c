//! File formats: clustered datasets as CSV, fitted models as versioned JSON,
//! evaluation reports as flat CSV with a fixed column order.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! export/import is lossless for finite doubles and output bytes are
//! reproducible across runs and worker counts.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusteredDataset, Role};
use crate::pipeline::{ClusterRegressor, EvalReport, METHOD_ORDER};
use crate::simulator::ScenarioTruth;

/// Maps CSV columns to dataset fields. Columns are referenced by header name,
/// so file column order never matters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub outcome: String,
    pub cluster: String,
    /// Covariate columns in design order; `None` takes every column not
    /// otherwise claimed, in header order.
    pub covariates: Option<Vec<String>>,
    pub z: Option<String>,
    /// Optional partition column (train|val|test); absent means all rows are
    /// training rows.
    pub role: Option<String>,
}

impl CsvSchema {
    pub fn new(outcome: &str, cluster: &str) -> Self {
        Self {
            outcome: outcome.into(),
            cluster: cluster.into(),
            covariates: None,
            z: None,
            role: None,
        }
    }
}

/// A cell is missing when empty or NA (any case). Missing cells drop the row.
fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

fn parse_cell(cell: &str, row: usize, col: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|e| Error::Parse {
        row,
        col: col.to_string(),
        msg: format!("'{}' {e}", cell.trim()),
    })
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    let hits: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| *h == name)
        .map(|(i, _)| i)
        .collect();
    match hits.len() {
        0 => Err(Error::Schema(format!("column '{name}' not in header"))),
        1 => Ok(hits[0]),
        n => Err(Error::Schema(format!("column '{name}' appears {n} times"))),
    }
}

/// Loads a clustered dataset. Cluster labels are assigned indices by first
/// appearance; rows with a missing value in any used column are dropped.
/// Returns the dataset and the dropped-row count.
pub fn load_clustered_csv(path: &Path, schema: &CsvSchema) -> Result<(ClusteredDataset, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::new(File::open(path)?));
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();

    let y_idx = header_index(&headers, &schema.outcome)?;
    let c_idx = header_index(&headers, &schema.cluster)?;
    let z_idx = schema.z.as_ref().map(|z| header_index(&headers, z)).transpose()?;
    let r_idx = schema.role.as_ref().map(|r| header_index(&headers, r)).transpose()?;

    let cov_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => {
            let claimed: Vec<usize> =
                [Some(y_idx), Some(c_idx), z_idx, r_idx].iter().flatten().copied().collect();
            headers
                .iter()
                .enumerate()
                .filter(|(i, _)| !claimed.contains(i))
                .map(|(_, h)| h.to_string())
                .collect()
        }
    };
    if cov_names.is_empty() {
        return Err(Error::Schema("no covariate columns".into()));
    }
    let cov_idx: Vec<usize> =
        cov_names.iter().map(|n| header_index(&headers, n)).collect::<Result<_>>()?;

    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut labels = Vec::new();
    let mut roles = Vec::new();
    let mut cluster_order: Vec<String> = Vec::new();
    let mut dropped = 0usize;

    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row: row_no,
            col: "<record>".into(),
            msg: e.to_string(),
        })?;
        let cell = |idx: usize| record.get(idx).unwrap_or("");

        let mut used: Vec<usize> = cov_idx.clone();
        used.push(y_idx);
        used.push(c_idx);
        used.extend(z_idx);
        used.extend(r_idx);
        if used.iter().any(|&idx| is_missing(cell(idx))) {
            dropped += 1;
            continue;
        }

        let label = cell(c_idx).trim().to_string();
        let li = match cluster_order.iter().position(|c| *c == label) {
            Some(li) => li,
            None => {
                cluster_order.push(label);
                cluster_order.len() - 1
            }
        };
        labels.push(li);
        y.push(parse_cell(cell(y_idx), row_no, &schema.outcome)?);
        let mut xr = Vec::with_capacity(cov_idx.len());
        for (j, &idx) in cov_idx.iter().enumerate() {
            xr.push(parse_cell(cell(idx), row_no, &cov_names[j])?);
        }
        x_rows.push(xr);
        if let Some(idx) = z_idx {
            z.push(parse_cell(cell(idx), row_no, schema.z.as_ref().unwrap())?);
        }
        roles.push(match r_idx {
            None => Role::Train,
            Some(idx) => Role::parse(cell(idx).trim()).map_err(|e| Error::Parse {
                row: row_no,
                col: schema.role.clone().unwrap(),
                msg: e.to_string(),
            })?,
        });
    }

    if x_rows.is_empty() {
        return Err(Error::EmptyAfterFiltering(format!(
            "no complete rows in {} ({dropped} dropped)",
            path.display()
        )));
    }
    let n = x_rows.len();
    let p = cov_idx.len();
    let x = DMatrix::from_fn(n, p, |i, j| x_rows[i][j]);
    let data = ClusteredDataset::new(
        x,
        if z_idx.is_some() { Some(DVector::from_vec(z)) } else { None },
        DVector::from_vec(y),
        labels,
        cluster_order,
        roles,
    )?;
    Ok((data, dropped))
}

pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v}")
}

/// Writes a dataset under the default header layout: cluster, y, x1..xp,
/// then z and role when present.
pub fn write_clustered_csv(path: &Path, data: &ClusteredDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["cluster".to_string(), "y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    if data.z.is_some() {
        header.push("z".into());
    }
    header.push("role".into());
    w.write_record(&header).map_err(io_of)?;
    for i in 0..data.n() {
        let mut rec = vec![data.cluster_order[data.labels[i]].clone(), fmt_float(data.y[i])];
        rec.extend((0..data.p()).map(|j| fmt_float(data.x[(i, j)])));
        if let Some(z) = &data.z {
            rec.push(fmt_float(z[i]));
        }
        rec.push(data.roles[i].as_str().to_string());
        w.write_record(&rec).map_err(io_of)?;
    }
    w.flush()?;
    Ok(())
}

/// Schema matching write_clustered_csv output.
pub fn default_schema(p: usize, has_z: bool) -> CsvSchema {
    CsvSchema {
        outcome: "y".into(),
        cluster: "cluster".into(),
        covariates: Some((1..=p).map(|j| format!("x{j}")).collect()),
        z: has_z.then(|| "z".into()),
        role: Some("role".into()),
    }
}

pub(crate) fn io_of(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: ClusterRegressor,
}

pub fn save_model(path: &Path, model: &ClusterRegressor) -> Result<()> {
    let file = ModelFile { format_version: MODEL_FORMAT_VERSION, model: model.clone() };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ClusterRegressor> {
    let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "model format_version {} unsupported (expected {MODEL_FORMAT_VERSION})",
            file.format_version
        )));
    }
    Ok(file.model)
}

pub fn save_truth(path: &Path, truth: &ScenarioTruth) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, truth)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Report CSV layout, one row per method per replicate. Metric cells are
/// empty when a method failed (the note column carries the reason) or when a
/// metric does not apply.
pub const REPORT_COLUMNS: [&str; 14] = [
    "scenario",
    "replicate",
    "method",
    "icc_true",
    "chosen_budget",
    "solver_status",
    "beta_err",
    "gamma_err",
    "gamma_err_raw",
    "sparsity_recovery",
    "icc_est",
    "test_mse",
    "test_mse_tree",
    "note",
];

pub fn status_str(s: crate::solver::SolveStatus) -> &'static str {
    match s {
        crate::solver::SolveStatus::Optimal => "optimal",
        crate::solver::SolveStatus::IterationLimit => "iteration_limit",
        crate::solver::SolveStatus::TimeLimit => "time_limit",
    }
}

/// Flattens one report into rows, fixed method order.
pub fn report_rows(report: &EvalReport) -> Vec<Vec<String>> {
    METHOD_ORDER
        .iter()
        .map(|&method| {
            let m = report.method(method);
            let is_mio = method == "mio";
            let opt_f = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
            vec![
                report.scenario.clone(),
                report.replicate.to_string(),
                method.to_string(),
                fmt_float(report.icc_true),
                if is_mio {
                    report.chosen_budget.map(|b| b.to_string()).unwrap_or_default()
                } else {
                    String::new()
                },
                if is_mio {
                    report.solver_status.map(status_str).unwrap_or_default().to_string()
                } else {
                    String::new()
                },
                opt_f(m.map(|m| m.beta_err)),
                opt_f(m.map(|m| m.gamma_err)),
                opt_f(m.map(|m| m.gamma_err_raw)),
                opt_f(m.map(|m| m.sparsity_recovery)),
                opt_f(m.and_then(|m| m.icc_est)),
                opt_f(m.map(|m| m.test_mse)),
                opt_f(m.and_then(|m| m.test_mse_tree)),
                if method == "lmem" {
                    report.lmem_note.clone().unwrap_or_default()
                } else {
                    String::new()
                },
            ]
        })
        .collect()
}

pub fn write_reports_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(REPORT_COLUMNS).map_err(io_of)?;
    for r in reports {
        for row in report_rows(r) {
            w.write_record(&row).map_err(io_of)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Predictions, one column, one row per observation.
pub fn write_predictions_csv(path: &Path, pred: &DVector<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "prediction")?;
    for i in 0..pred.len() {
        writeln!(w, "{}", fmt_float(pred[i]))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{fit_full, AssignMode};
    use crate::simulator::{gen_dataset, EffectType, Preset, ScenarioConfig};
    use crate::tree::TreeOptions;

    fn toy_csv(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("toy.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_row_file_keeps_shapes_and_label_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = toy_csv(
            dir.path(),
            "cluster,y,x1,x2\nb,1.5,0.1,0.2\na,2.5,0.3,0.4\nb,3.5,0.5,0.6\n",
        );
        let (data, dropped) =
            load_clustered_csv(&path, &CsvSchema::new("y", "cluster")).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!((data.n(), data.p()), (3, 2));
        // First appearance wins: b before a.
        assert_eq!(data.cluster_order, vec!["b", "a"]);
        assert_eq!(data.labels, vec![0, 1, 0]);
        assert_eq!(data.y[1], 2.5);
        assert_eq!(data.x[(2, 1)], 0.6);
        assert!(data.roles.iter().all(|&r| r == Role::Train));
    }

    #[test]
    fn unparseable_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path =
            toy_csv(dir.path(), "cluster,y,x1\na,1.0,0.5\na,oops,0.7\n");
        let err = load_clustered_csv(&path, &CsvSchema::new("y", "cluster")).unwrap_err();
        match err {
            Error::Parse { row, col, .. } => {
                assert_eq!(row, 2);
                assert_eq!(col, "y");
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn missing_cells_drop_rows_and_report_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = toy_csv(
            dir.path(),
            "cluster,y,x1\na,1.0,0.5\na,,0.7\nb,2.0,NA\nb,3.0,0.9\n",
        );
        let (data, dropped) =
            load_clustered_csv(&path, &CsvSchema::new("y", "cluster")).unwrap();
        assert_eq!(dropped, 2);
        assert_eq!(data.n(), 2);
        let all_missing = toy_csv(dir.path(), "cluster,y,x1\na,,0.5\nb,1.0,\n");
        let err =
            load_clustered_csv(&all_missing, &CsvSchema::new("y", "cluster")).unwrap_err();
        assert!(matches!(err, Error::EmptyAfterFiltering(_)));
    }

    #[test]
    fn schema_errors_name_the_missing_or_duplicated_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = toy_csv(dir.path(), "cluster,y,y,x1\na,1,2,3\n");
        let err = load_clustered_csv(&path, &CsvSchema::new("y", "cluster")).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("'y'")));
        let path2 = toy_csv(dir.path(), "cluster,x1\na,1\n");
        let err2 = load_clustered_csv(&path2, &CsvSchema::new("y", "cluster")).unwrap_err();
        assert!(matches!(&err2, Error::Schema(m) if m.contains("'y'")));
    }

    #[test]
    fn export_import_round_trip_is_bit_exact() {
        let cfg = ScenarioConfig::new(
            Preset::Custom { p: 4, k: 3, q: 2 },
            EffectType::Gaussian { variance: 7.3 },
        );
        let (mut data, _) = gen_dataset(&cfg, 99, 1).unwrap();
        // Values that stress the formatter.
        data.x[(0, 0)] = 1.0 / 3.0;
        data.x[(1, 1)] = 1e-300;
        data.x[(2, 2)] = -0.0;
        data.y[0] = f64::MIN_POSITIVE;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_clustered_csv(&path, &data).unwrap();
        let (back, dropped) =
            load_clustered_csv(&path, &default_schema(data.p(), true)).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(back.labels, data.labels);
        assert_eq!(back.cluster_order, data.cluster_order);
        assert_eq!(back.roles, data.roles);
        assert_eq!(back.x.as_slice(), data.x.as_slice());
        assert_eq!(back.y.as_slice(), data.y.as_slice());
        assert_eq!(
            back.z.as_ref().unwrap().as_slice(),
            data.z.as_ref().unwrap().as_slice()
        );
    }

    #[test]
    fn column_order_in_file_is_irrelevant_to_the_schema() {
        let dir = tempfile::tempdir().unwrap();
        let a = toy_csv(dir.path(), "y,x1,cluster\n1.0,2.0,catten\n");
        let (da, _) = load_clustered_csv(&a, &CsvSchema::new("y", "cluster")).unwrap();
        let b = dir.path().join("b.csv");
        std::fs::write(&b, "cluster,x1,y\ncatten,2.0,1.0\n").unwrap();
        let (db, _) = load_clustered_csv(&b, &CsvSchema::new("y", "cluster")).unwrap();
        assert_eq!(da.x.as_slice(), db.x.as_slice());
        assert_eq!(da.y.as_slice(), db.y.as_slice());
        assert_eq!(da.cluster_order, db.cluster_order);
    }

    #[test]
    fn model_json_round_trips_and_checks_version() {
        let cfg = ScenarioConfig::new(
            Preset::Custom { p: 3, k: 4, q: 1 },
            EffectType::Gaussian { variance: 9.0 },
        );
        let mut c = cfg;
        c.n_per_cluster = 25;
        let (data, _) = gen_dataset(&c, 5, 0).unwrap();
        let reg = fit_full(&data, 2, 1e-3, &TreeOptions::default(), AssignMode::Soft).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, &reg).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.beta().as_slice(), reg.beta().as_slice());
        assert_eq!(back.gamma().as_slice(), reg.gamma().as_slice());
        assert_eq!(back.cluster_order, reg.cluster_order);
        assert_eq!(back.chosen_budgets, reg.chosen_budgets);
        let p1 = reg.predict(&data.x, None).unwrap();
        let p2 = back.predict(&data.x, None).unwrap();
        assert_eq!(p1.as_slice(), p2.as_slice());

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"format_version\": 1"));
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 999");
        std::fs::write(&path, bumped).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn truth_sidecar_round_trips_bit_exactly() {
        let cfg = ScenarioConfig::new(Preset::Low, EffectType::Sparse { zero_fraction: 0.5 });
        let (_, truth) = gen_dataset(&cfg, 7, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        save_truth(&path, &truth).unwrap();
        let back: ScenarioTruth =
            serde_json::from_reader(File::open(&path).unwrap()).unwrap();
        assert_eq!(back.beta.as_slice(), truth.beta.as_slice());
        assert_eq!(back.gamma.as_slice(), truth.gamma.as_slice());
        assert_eq!(back.c.as_slice(), truth.c.as_slice());
        assert_eq!(back.noise.as_slice(), truth.noise.as_slice());
        assert!(back.sigma_eps == truth.sigma_eps);
        assert!(back.effect_variance == truth.effect_variance);
    }

    #[test]
    fn report_rows_follow_the_documented_layout() {
        let report = EvalReport {
            scenario: "toy".into(),
            replicate: 3,
            icc_true: 0.25,
            chosen_budget: Some(2),
            solver_status: Some(crate::solver::SolveStatus::Optimal),
            mio: Some(crate::pipeline::MethodMetrics {
                beta_err: 0.5,
                gamma_err: 0.25,
                gamma_err_raw: 1.0,
                sparsity_recovery: 0.75,
                icc_est: Some(0.3),
                test_mse: 1.25,
            }),
            ols: Some(crate::pipeline::MethodMetrics {
                beta_err: 2.0,
                gamma_err: 0.5,
                gamma_err_raw: 2.0,
                sparsity_recovery: 0.0,
                icc_est: None,
                test_mse: 3.0,
            }),
            ridge: None,
            lmem: None,
            lmem_note: Some("estimation did not converge: x".into()),
        };
        let rows = report_rows(&report);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0][0..3], ["toy".to_string(), "3".into(), "mio".into()]);
        assert_eq!(rows[0][4], "2");
        assert_eq!(rows[0][5], "optimal");
        assert_eq!(rows[0][6], "0.5");
        assert_eq!(rows[0][10], "0.3");
        // Baselines carry no solver columns.
        assert_eq!(rows[1][2], "ols");
        assert_eq!(rows[1][4], "");
        assert_eq!(rows[1][5], "");
        assert_eq!(rows[1][10], "");
        // Failed methods leave metric cells empty; the note explains lmem.
        assert!(rows[2][6..12].iter().all(|c| c.is_empty()));
        assert_eq!(rows[3][2], "lmem");
        assert_eq!(rows[3][12], "estimation did not converge: x");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_reports_csv(&path, &[report]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), REPORT_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn predictions_csv_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let pred = DVector::from_vec(vec![1.0 / 3.0, -2.5e-17, 0.0]);
        write_predictions_csv(&path, &pred).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "prediction");
        let vals: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
        assert_eq!(vals, vec![1.0 / 3.0, -2.5e-17, 0.0]);
    }
}
