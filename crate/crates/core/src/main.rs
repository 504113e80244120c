//! Command-line front end. Subcommands cover the whole workflow: simulate
//! data, fit and save a model, predict on new rows, run a simulation
//! campaign, run the protein-panel experiment, and dump a model's assignment
//! tree. Every file lands under --out.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or config error, 3 solver
//! finished without an optimality certificate while --strict was set.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use clusterreg::campaign::{run_bench, BenchCampaign, CellFailure, RunManifest};
use clusterreg::io::{
    load_clustered_csv, load_model, save_model, save_truth, status_str, write_clustered_csv,
    write_predictions_csv, CsvSchema,
};
use clusterreg::pipeline::{
    fit_full_with, tune_sparsity, AssignMode, ClusterRegressor, EvalOptions,
};
use clusterreg::protein::{
    run_protein_experiment, write_protein_csv, write_synthetic_protein_fixture, ProteinConfig,
};
use clusterreg::simulator::{gen_dataset, EffectType, Preset, ScenarioConfig};
use clusterreg::solver::{SolveOptions, SolveStatus};
use clusterreg::tree::TreeOptions;
use clusterreg::{Error, Role};

#[derive(Parser)]
#[command(
    name = "clusterreg",
    version,
    about = "Cluster-aware sparse linear regression: budgeted cluster effects \
             solved exactly, plus a tree that routes new rows to them"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// RNG seed for anything this command randomizes
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ridge weight on the extended design
    #[arg(long, global = true)]
    mu: Option<f64>,
    /// Per-block activation budget; omit to tune on a validation split
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// How unlabeled rows receive cluster effects
    #[arg(long, global = true, value_enum)]
    mode: Option<CliMode>,
    /// JSON config file; schema depends on the subcommand
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for campaign fan-out; changes wall time only
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Exit 3 when any solve ends without an optimality certificate
    #[arg(long, global = true)]
    strict: bool,
    /// Prepend a constant ones column to the covariates (it is never
    /// budgeted); saved models remember this and predict applies it
    #[arg(long, global = true)]
    intercept: bool,
}

impl Global {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(7)
    }

    fn mu(&self) -> f64 {
        self.mu.unwrap_or(1e-3)
    }

    fn mode(&self) -> AssignMode {
        self.mode.map(AssignMode::from).unwrap_or_default()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Hard,
    Soft,
}

impl From<CliMode> for AssignMode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::Hard => AssignMode::Hard,
            CliMode::Soft => AssignMode::Soft,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic clustered dataset plus its truth sidecar
    Simulate(SimulateArgs),
    /// Fit the sparse cluster model and assignment tree on a CSV
    Fit(FitArgs),
    /// Predict with a saved model on new rows
    Predict(PredictArgs),
    /// Run a simulation campaign: reports, aggregate tables, plots, manifest
    Bench(BenchArgs),
    /// Run the protein-panel experiment on a cortex expression export
    Protein(ProteinArgs),
    /// Render a saved model's assignment tree as text
    ExportTree(ExportTreeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CliPreset {
    Low,
    Medium,
    High,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliEffect {
    /// Gaussian effects; --level is the variance
    Gauss,
    /// Sparse +/-1 effects; --level is the zero fraction in [0, 1]
    Sparse,
    /// Gaussian effects calibrated to hit --level as the population ICC
    Icc,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "medium")]
    preset: CliPreset,
    /// Covariate count (only with --preset custom)
    #[arg(long, default_value_t = 25)]
    p: usize,
    /// Cluster count (only with --preset custom)
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Effect rows per cluster, 1 = intercepts, 2 = intercepts and slopes
    /// (only with --preset custom)
    #[arg(long, default_value_t = 1)]
    q: usize,
    #[arg(long, value_enum, default_value = "gauss")]
    effect: CliEffect,
    /// Effect level: variance, zero fraction, or target ICC
    #[arg(long, default_value_t = 10.0)]
    level: f64,
    #[arg(long, default_value_t = 50)]
    n_per_cluster: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma_eps: f64,
    /// Replicate index within the seed's stream
    #[arg(long, default_value_t = 0)]
    replicate: u64,
}

#[derive(Args)]
struct FitArgs {
    /// Training CSV with a header row
    #[arg(long)]
    data: PathBuf,
    /// Outcome column
    #[arg(long, default_value = "y")]
    outcome: String,
    /// Cluster id column
    #[arg(long, default_value = "cluster")]
    cluster: String,
    /// Comma-separated covariate columns; default is every unclaimed column
    /// in header order
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Column multiplying the per-cluster slope effects
    #[arg(long)]
    z: Option<String>,
    /// Column holding train|val|test row roles; its train/val split drives
    /// tuning when --budget is omitted
    #[arg(long)]
    role: Option<String>,
    /// Comma-separated budget grid for tuning; default 0..=K
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Per-cluster fraction of rows held out for tuning when neither
    /// --budget nor --role is given
    #[arg(long, default_value_t = 0.25)]
    val_fraction: f64,
    /// Cap on outer-approximation iterations for the final fit
    #[arg(long)]
    max_iters: Option<usize>,
    /// Wall-clock budget in seconds for the final fit
    #[arg(long)]
    time_limit: Option<f64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model JSON written by fit
    #[arg(long)]
    model: PathBuf,
    /// CSV of new rows; every column is a covariate unless claimed by
    /// --covariates, --z, or --cluster
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long)]
    z: Option<String>,
    /// Cluster id column; when given, rows are routed by their label
    /// instead of the tree
    #[arg(long)]
    cluster: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Replicates per scenario (flag wins over the config file)
    #[arg(long)]
    replicates: Option<u64>,
}

#[derive(Args)]
struct ProteinArgs {
    /// Cortex expression CSV export (MouseID plus 77 protein columns)
    #[arg(long, required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Generate a synthetic export with the canonical shape into --out and
    /// run on that instead of real data
    #[arg(long)]
    synthetic: bool,
    /// Comma-separated outcome proteins; default is the 11-protein panel
    #[arg(long, value_delimiter = ',')]
    outcomes: Option<Vec<String>>,
    /// Comma-separated budget grid; default {0, K}
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Split rows within every mouse instead of holding out whole mice
    #[arg(long)]
    within_mouse: bool,
}

#[derive(Args)]
struct ExportTreeArgs {
    /// Model JSON written by fit
    #[arg(long)]
    model: PathBuf,
}

enum Failure {
    Data(Error),
    /// A solve finished without certifying optimality and --strict is set.
    NonOptimal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Data(_) => 2,
            Failure::NonOptimal(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Data(e) => e.to_string(),
            Failure::NonOptimal(m) => m.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive here too; those are not
            // usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    fs::create_dir_all(&cli.global.out).map_err(Error::from)?;
    match &cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(&cli.global, args),
        Cmd::Fit(args) => cmd_fit(&cli.global, args),
        Cmd::Predict(args) => cmd_predict(&cli.global, args),
        Cmd::Bench(args) => cmd_bench(&cli.global, args),
        Cmd::Protein(args) => cmd_protein(&cli.global, args),
        Cmd::ExportTree(args) => cmd_export_tree(&cli.global, args),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn cmd_simulate(global: &Global, args: &SimulateArgs) -> Result<(), Failure> {
    let cfg: ScenarioConfig = match &global.config {
        Some(path) => read_json(path)?,
        None => {
            let preset = match args.preset {
                CliPreset::Low => Preset::Low,
                CliPreset::Medium => Preset::Medium,
                CliPreset::High => Preset::High,
                CliPreset::Custom => Preset::Custom { p: args.p, k: args.k, q: args.q },
            };
            let effect = match args.effect {
                CliEffect::Gauss => EffectType::Gaussian { variance: args.level },
                CliEffect::Sparse => EffectType::Sparse { zero_fraction: args.level },
                CliEffect::Icc => EffectType::IccTarget { icc: args.level },
            };
            let mut cfg = ScenarioConfig::new(preset, effect);
            cfg.n_per_cluster = args.n_per_cluster;
            cfg.sigma_eps = args.sigma_eps;
            cfg
        }
    };
    let (data, truth) = gen_dataset(&cfg, global.seed(), args.replicate)?;
    let data_path = global.out.join("data.csv");
    let truth_path = global.out.join("truth.json");
    write_clustered_csv(&data_path, &data)?;
    save_truth(&truth_path, &truth)?;
    println!(
        "simulated {}: {} rows, {} clusters, {} covariates -> {} and {}",
        cfg.name(),
        data.n(),
        data.k(),
        data.p(),
        data_path.display(),
        truth_path.display()
    );
    Ok(())
}

fn prepend_ones(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    out.view_mut((0, 1), (x.nrows(), x.ncols())).copy_from(x);
    out
}

/// Seeded per-cluster row split for tuning when the file has no role column:
/// each cluster donates round(val_fraction * rows) validation rows, keeping
/// at least one training row.
fn tuning_rows(labels: &[usize], k: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for cluster in 0..k {
        let mut rows: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == cluster).collect();
        if rows.is_empty() {
            continue;
        }
        rows.shuffle(&mut rng);
        let n_val = ((rows.len() as f64 * val_fraction).round() as usize).min(rows.len() - 1);
        val.extend_from_slice(&rows[..n_val]);
        train.extend_from_slice(&rows[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn check_strict(global: &Global, status: SolveStatus, context: &str) -> Result<(), Failure> {
    if global.strict && status != SolveStatus::Optimal {
        return Err(Failure::NonOptimal(format!(
            "{context}: solver status {} without an optimality certificate",
            status_str(status)
        )));
    }
    Ok(())
}

fn cmd_fit(global: &Global, args: &FitArgs) -> Result<(), Failure> {
    let schema = CsvSchema {
        outcome: args.outcome.clone(),
        cluster: args.cluster.clone(),
        covariates: args.covariates.clone(),
        z: args.z.clone(),
        role: args.role.clone(),
    };
    let (mut data, dropped) = load_clustered_csv(&args.data, &schema)?;
    if dropped > 0 {
        eprintln!("dropped {dropped} rows with missing values");
    }
    if global.intercept {
        data.x = prepend_ones(&data.x);
    }

    let mu = global.mu();
    let grid: Vec<usize> = args.grid.clone().unwrap_or_else(|| (0..=data.k()).collect());
    let (budget, trace) = match global.budget {
        Some(b) => (b, Vec::new()),
        None => {
            let (train_rows, val_rows) = if args.role.is_some() {
                (data.rows_with_role(&[Role::Train]), data.rows_with_role(&[Role::Validation]))
            } else {
                tuning_rows(&data.labels, data.k(), args.val_fraction, global.seed())
            };
            if val_rows.is_empty() {
                return Err(Error::InvalidInput(
                    "no validation rows for tuning; pass --budget, widen --val-fraction, \
                     or provide a role column with val rows"
                        .into(),
                )
                .into());
            }
            let train = data.subset(&train_rows);
            let val = data.subset(&val_rows);
            tune_sparsity(&train, &val, &grid, mu)?
        }
    };

    let mut solve = SolveOptions::default();
    if let Some(n) = args.max_iters {
        solve.max_iters = n;
    }
    if let Some(secs) = args.time_limit {
        solve.time_limit = Some(std::time::Duration::from_secs_f64(secs.max(0.0)));
    }
    let mut model =
        fit_full_with(&data, budget, mu, &solve, &TreeOptions::default(), global.mode())?;
    model.tuning_trace = trace;
    model.intercept = global.intercept;

    let model_path = global.out.join("model.json");
    let tree_path = global.out.join("tree.txt");
    save_model(&model_path, &model)?;
    fs::write(&tree_path, model.tree.to_text()).map_err(Error::from)?;

    let support = model.gamma().iter().filter(|v| **v != 0.0).count();
    println!(
        "fit {} rows, {} clusters: budget {}, status {}, {} active effect entries -> {} and {}",
        data.n(),
        data.k(),
        budget,
        status_str(model.fit.status),
        support,
        model_path.display(),
        tree_path.display()
    );
    check_strict(global, model.fit.status, "fit")
}

/// Reads a prediction design: covariates (all unclaimed columns unless named),
/// optional z column, optional cluster labels. Any missing or unparseable
/// cell is an error; predictions stay row-aligned with the input.
fn load_design(
    path: &Path,
    covariates: Option<&Vec<String>>,
    z: Option<&String>,
    cluster: Option<&String>,
) -> Result<(DMatrix<f64>, Option<DVector<f64>>, Option<Vec<String>>), Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::new(File::open(path)?));
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();

    let find = |name: &String| -> Result<usize, Error> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not in header")))
    };
    let z_idx = z.map(find).transpose()?;
    let c_idx = cluster.map(find).transpose()?;
    let x_idx: Vec<usize> = match covariates {
        Some(names) => names.iter().map(find).collect::<Result<_, _>>()?,
        None => (0..headers.len()).filter(|i| Some(*i) != z_idx && Some(*i) != c_idx).collect(),
    };
    if x_idx.is_empty() {
        return Err(Error::Schema("no covariate columns left".into()));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut zs: Vec<f64> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut n = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Schema(format!("row {}: {e}", row + 1)))?;
        let cell = |idx: usize| -> Result<f64, Error> {
            record[idx].trim().parse::<f64>().map_err(|_| Error::Parse {
                row: row + 1,
                col: headers[idx].clone(),
                msg: format!("'{}' is not numeric", &record[idx]),
            })
        };
        for &idx in &x_idx {
            xs.push(cell(idx)?);
        }
        if let Some(idx) = z_idx {
            zs.push(cell(idx)?);
        }
        if let Some(idx) = c_idx {
            labels.push(record[idx].to_string());
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyAfterFiltering("no data rows".into()));
    }
    let x = DMatrix::from_row_slice(n, x_idx.len(), &xs);
    Ok((x, z_idx.map(|_| DVector::from_vec(zs)), c_idx.map(|_| labels)))
}

fn cmd_predict(global: &Global, args: &PredictArgs) -> Result<(), Failure> {
    let mut model: ClusterRegressor = load_model(&args.model)?;
    if let Some(mode) = global.mode {
        model.mode = mode.into();
    }
    let (mut x, z, labels) =
        load_design(&args.data, args.covariates.as_ref(), args.z.as_ref(), args.cluster.as_ref())?;
    if model.intercept {
        x = prepend_ones(&x);
    }
    let pred = match &labels {
        Some(labels) => model.predict_labeled(&x, z.as_ref(), labels)?,
        None => model.predict(&x, z.as_ref())?,
    };
    let out_path = global.out.join("predictions.csv");
    write_predictions_csv(&out_path, &pred)?;
    println!("{} predictions -> {}", pred.len(), out_path.display());
    Ok(())
}

/// Bench config file: scenario list plus optional evaluation settings;
/// replicates and seed live here or on the command line (flags win).
#[derive(Deserialize)]
struct BenchConfigFile {
    scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    eval: Option<EvalOptions>,
    #[serde(default)]
    replicates: Option<u64>,
    #[serde(default)]
    seed: Option<u64>,
}

fn non_optimal_rows(out_dir: &Path) -> Result<usize, Error> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(out_dir.join("results.csv"))?));
    let mut count = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Schema(format!("results.csv: {e}")))?;
        let status = &record[5];
        if !status.is_empty() && status != "optimal" {
            count += 1;
        }
    }
    Ok(count)
}

fn cmd_bench(global: &Global, args: &BenchArgs) -> Result<(), Failure> {
    let campaign = match &global.config {
        Some(path) => {
            let file: BenchConfigFile = read_json(path)?;
            BenchCampaign {
                scenarios: file.scenarios,
                replicates: args.replicates.or(file.replicates).unwrap_or(5),
                seed: global.seed.or(file.seed).unwrap_or(7),
                eval: file.eval.unwrap_or_default(),
            }
        }
        None => BenchCampaign::full_grid(args.replicates.unwrap_or(5), global.seed()),
    };
    let command: Vec<String> = std::env::args().collect();
    let manifest = run_bench(&campaign, global.jobs, &command.join(" "), &global.out)?;
    println!(
        "bench: {} scenarios x {} replicates, {} cells ok, {} failed -> {}",
        manifest.scenario_count,
        manifest.replicates,
        manifest.cells_ok,
        manifest.failures.len(),
        global.out.join("manifest.json").display()
    );
    for f in manifest.failures.iter().take(5) {
        eprintln!("failed cell {} replicate {}: {}", f.scenario, f.replicate, f.error);
    }
    if global.strict {
        let bad = non_optimal_rows(&global.out)?;
        if bad > 0 || !manifest.failures.is_empty() {
            return Err(Failure::NonOptimal(format!(
                "bench: {} rows without an optimality certificate, {} failed cells",
                bad,
                manifest.failures.len()
            )));
        }
    }
    Ok(())
}

fn cmd_protein(global: &Global, args: &ProteinArgs) -> Result<(), Failure> {
    let mut cfg: ProteinConfig = match &global.config {
        Some(path) => read_json(path)?,
        None => ProteinConfig::default(),
    };
    if let Some(outcomes) = &args.outcomes {
        cfg.outcomes = outcomes.clone();
    }
    if let Some(grid) = &args.grid {
        cfg.grid = Some(grid.clone());
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(mu) = global.mu {
        cfg.mu = mu;
    }
    if let Some(mode) = global.mode {
        cfg.mode = mode.into();
    }
    if args.within_mouse {
        cfg.within_mouse_split = true;
    }

    let mut artifacts = vec!["manifest.json".to_string(), "protein_report.csv".to_string()];
    let data_path = if args.synthetic {
        let path = global.out.join("synthetic_cortex.csv");
        write_synthetic_protein_fixture(&path, cfg.seed)?;
        artifacts.push("synthetic_cortex.csv".to_string());
        println!("wrote synthetic cortex export to {}", path.display());
        path
    } else {
        args.data.clone().expect("clap enforces --data unless --synthetic")
    };

    let started = now_unix();
    let reports = run_protein_experiment(&data_path, &cfg)?;
    let report_path = global.out.join("protein_report.csv");
    write_protein_csv(&report_path, &reports)?;

    let mut mio_wins = 0;
    let mut comparable = 0;
    let mut non_optimal = 0;
    let mut failures = Vec::new();
    for r in &reports {
        match r {
            Ok(r) => {
                if r.solver_status != SolveStatus::Optimal {
                    non_optimal += 1;
                }
                if let Some(ols) = r.ols_test_mse {
                    comparable += 1;
                    if r.mio_test_mse < ols {
                        mio_wins += 1;
                    }
                }
            }
            Err((outcome, msg)) => failures.push(CellFailure {
                scenario: outcome.clone(),
                replicate: 0,
                error: msg.clone(),
            }),
        }
    }

    artifacts.sort();
    let manifest = RunManifest {
        format_version: clusterreg::campaign::MANIFEST_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: std::env::args().collect::<Vec<_>>().join(" "),
        config_sha256: hex_sha256(&serde_json::to_vec(&cfg).map_err(Error::from)?),
        seed: cfg.seed,
        replicates: 1,
        scenario_count: cfg.outcomes.len(),
        cells_ok: reports.iter().filter(|r| r.is_ok()).count(),
        started_unix: started,
        finished_unix: now_unix(),
        artifacts,
        failures: failures.clone(),
    };
    let manifest_path = global.out.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n",
    )
    .map_err(Error::from)?;

    println!(
        "protein: {} of {} outcomes complete, sparse model beat pooled OLS on {} of {} -> {}",
        manifest.cells_ok,
        cfg.outcomes.len(),
        mio_wins,
        comparable,
        report_path.display()
    );
    for f in &failures {
        eprintln!("outcome {} failed: {}", f.scenario, f.error);
    }
    if global.strict && (non_optimal > 0 || !failures.is_empty()) {
        return Err(Failure::NonOptimal(format!(
            "protein: {} solves without certificate, {} failed outcomes",
            non_optimal,
            failures.len()
        )));
    }
    Ok(())
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn hex_sha256(bytes: &[u8]) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}

fn cmd_export_tree(global: &Global, args: &ExportTreeArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let text = model.tree.to_text();
    let path = global.out.join("tree.txt");
    fs::write(&path, &text).map_err(Error::from)?;
    // Tree dumps get piped into pagers; a closed pipe is not an error.
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
    let _ = writeln!(
        std::io::stdout(),
        "assignment tree: depth {}, {} leaves, clusters {:?} -> {}",
        model.tree.depth(),
        model.tree.n_leaves(),
        model.cluster_order,
        path.display()
    );
    Ok(())
}
