//! Command implementations behind the `hiercast` binary.
//!
//! Every command computes all of its outputs in memory before writing, and
//! each file is written to a temporary file in the output directory and then
//! renamed, so a failed run never leaves partial outputs behind.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hiercast_core::covariance::{build_q_block, build_q_diagonal, CovarianceQ, Parity, QStructure};
use hiercast_core::decision::{default_loss, select_point, DecisionMode, LossSpec};
use hiercast_core::metrics::{node_errors, write_results_csv, ErrorMetric, EvaluationWeights, TableRow};
use hiercast_core::panel::{
    base_forecast_all, historical_accuracy, read_node_values, AccuracyVector, BaseForecasts, Forecaster,
    ForecasterSpec, SeriesPanel, DEFAULT_HOLDOUT_FRACTION,
};
use hiercast_core::posterior::{fit_posterior, posterior_summary, sample_posterior};
use hiercast_core::simlab::{q_label, run_setting, Method, Setting, SettingReport, SimConfig};
use hiercast_core::{Error, HierarchySpec};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "hiercast", version, about = "Probabilistic reconciliation of hierarchical forecasts")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-node holdout mean squared errors.
    Accuracy(AccuracyArgs),
    /// Posterior reconciliation of one period of base forecasts.
    Reconcile(ReconcileArgs),
    /// Synthetic benchmark against the baseline reconcilers.
    Simulate(SimulateArgs),
    /// Weighted error of revised forecasts against the truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Hierarchy JSON: {"nodes": [{"id": .., "parent": ..}, ..]}.
    #[arg(long)]
    pub hierarchy: PathBuf,
    /// Panel CSV with columns node_id,t,value.
    #[arg(long)]
    pub panel: PathBuf,
    /// Forecaster: mean, rw-drift, seasonal-naive:P or auto-ar[:p].
    #[arg(long, default_value = "auto-ar:3")]
    pub forecaster: Forecaster,
    /// Per-node forecaster, as NODE=METHOD; repeatable.
    #[arg(long = "forecaster-override", value_name = "NODE=METHOD")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_HOLDOUT_FRACTION)]
    pub holdout_frac: f64,
}

#[derive(Debug, Clone, Args)]
pub struct AccuracyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QArg {
    Q1,
    Q2,
}

impl From<QArg> for QStructure {
    fn from(q: QArg) -> Self {
        match q {
            QArg::Q1 => QStructure::Diagonal,
            QArg::Q2 => QStructure::BlockDiagonal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    DrawArgmin,
    PosteriorMean,
}

impl From<ModeArg> for DecisionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DrawArgmin => DecisionMode::DrawArgmin,
            ModeArg::PosteriorMean => DecisionMode::PosteriorMean,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReconcileArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Base forecasts CSV (node_id,value); computed from the panel if absent.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "q1")]
    pub q: QArg,
    /// Parent-level parity whose subtrees keep covariances under q2.
    #[arg(long)]
    pub keep_parity: Option<Parity>,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Loss JSON; equal-weight squared error if absent.
    #[arg(long)]
    pub loss: Option<PathBuf>,
    /// Point selection; posterior-mean for squared loss, draw-argmin otherwise.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Also write the dense Q matrix.
    #[arg(long)]
    pub dump_q: bool,
    /// Also write every posterior draw.
    #[arg(long)]
    pub dump_draws: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QChoice {
    Q1,
    Q2,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// 1: equal weights except the noisy nodes; 2: all weight on the focus node.
    /// Both settings run when omitted.
    #[arg(long, value_parser = ["1", "2"])]
    pub setting: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub datasets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    pub q: QChoice,
    #[arg(long)]
    pub keep_parity: Option<Parity>,
    #[arg(long, default_value_t = 24)]
    pub t_min: usize,
    #[arg(long, default_value_t = 60)]
    pub t_max: usize,
    /// Noise multiplier of the designated noisy nodes.
    #[arg(long)]
    pub noisy_multiplier: Option<f64>,
    /// Lower and upper per-dataset error scale, as LO,HI.
    #[arg(long, value_name = "LO,HI")]
    pub error_scale: Option<String>,
    #[arg(long)]
    pub shock_correlation: Option<f64>,
    #[arg(long, default_value = "mare")]
    pub metric: ErrorMetric,
    #[arg(long, default_value_t = 0.25)]
    pub q_low: f64,
    #[arg(long, default_value_t = 0.75)]
    pub q_high: f64,
    #[arg(long, default_value = "average-of-shares")]
    pub td_proportions: hiercast_core::Proportions,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    /// CSV with node_id and a `revised` (or `value`) column.
    #[arg(long)]
    pub revised: PathBuf,
    /// CSV with node_id and a `value` column.
    #[arg(long)]
    pub truth: PathBuf,
    /// CSV node_id,weight; unlisted nodes weigh 0. Equal weights if absent.
    #[arg(long, conflicts_with = "setting")]
    pub weights: Option<PathBuf>,
    /// Weights of a simulation setting on the reference tree.
    #[arg(long, value_parser = ["1", "2"])]
    pub setting: Option<String>,
    #[arg(long, default_value = "mare")]
    pub metric: ErrorMetric,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<String> {
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(CliError::Usage("--threads must be >= 1".into()));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?
    };
    pool.install(|| match cli.command {
        Command::Accuracy(a) => cmd_accuracy(&a),
        Command::Reconcile(a) => cmd_reconcile(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn with_path(path: &Path, e: Error) -> CliError {
    match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())).into(),
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", path.display())).into(),
        Error::Hierarchy(m) => Error::Hierarchy(format!("{}: {m}", path.display())).into(),
        other => other.into(),
    }
}

/// Buffered output files, written together once every one is ready.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn commit(self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| CliError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let target = dir.join(&name);
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io(dir))?;
            {
                let mut w = BufWriter::new(tmp.as_file_mut());
                w.write_all(&bytes).map_err(io(&target))?;
                w.flush().map_err(io(&target))?;
            }
            tmp.persist(&target).map_err(|e| CliError::Io { path: target.clone(), source: e.error })?;
            written.push(target);
        }
        Ok(written)
    }
}

struct Loaded {
    h: HierarchySpec,
    panel: SeriesPanel<f64>,
    spec: ForecasterSpec,
}

fn load_inputs(input: &InputArgs) -> CliResult<Loaded> {
    let h = HierarchySpec::from_json(&read_text(&input.hierarchy)?).map_err(|e| with_path(&input.hierarchy, e))?;
    let panel = SeriesPanel::from_csv(open(&input.panel)?, &h).map_err(|e| with_path(&input.panel, e))?;
    let mut spec = ForecasterSpec::uniform(input.forecaster);
    for o in &input.overrides {
        let (node, method) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("forecaster override '{o}' is not NODE=METHOD")))?;
        if h.index_of(node).is_none() {
            return Err(Error::Invalid(format!("forecaster override names unknown node '{node}'")).into());
        }
        spec.overrides.insert(node.to_string(), method.parse()?);
    }
    spec.validate()?;
    Ok(Loaded { h, panel, spec })
}

fn csv_bytes(write: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        write(&mut w).map_err(Error::from)?;
        w.flush().map_err(Error::from)?;
    }
    Ok(buf)
}

fn summary_line(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| format!("wrote {}", p.display())).collect::<Vec<_>>().join("\n")
}

pub fn cmd_accuracy(args: &AccuracyArgs) -> CliResult<String> {
    let Loaded { h, panel, spec } = load_inputs(&args.input)?;
    let acc = historical_accuracy(&panel, &spec, args.input.holdout_frac)?;
    let bytes = csv_bytes(|w| {
        w.write_record(["node_id", "gamma"])?;
        for (id, g) in h.ids().zip(&acc.gamma) {
            w.write_record([id, &g.to_string()])?;
        }
        Ok(())
    })?;
    let mut out = Outputs::default();
    out.add("accuracy.csv", bytes);
    Ok(summary_line(&out.commit(&args.out)?))
}

#[derive(Serialize)]
struct RunInfo {
    q: String,
    shrink_factor: f64,
    holdout: usize,
    nu: usize,
    s2: f64,
    draws: usize,
    seed: u64,
    mode: String,
    expected_loss: f64,
    draw_index: Option<usize>,
    point_mass: bool,
}

fn build_q(q: QArg, gamma: &AccuracyVector<f64>, h: &HierarchySpec, parity: Option<Parity>) -> CliResult<CovarianceQ<f64>> {
    Ok(match q {
        QArg::Q1 => build_q_diagonal(gamma),
        QArg::Q2 => build_q_block(gamma, h, parity.unwrap_or_else(|| Parity::deepest(h)))?,
    })
}

pub fn cmd_reconcile(args: &ReconcileArgs) -> CliResult<String> {
    if args.draws == 0 {
        return Err(CliError::Usage("--draws must be >= 1".into()));
    }
    let Loaded { h, panel, spec } = load_inputs(&args.input)?;
    let horizon = panel.first_period() + panel.len() as i64;
    let base = match &args.base {
        Some(p) => BaseForecasts::from_csv(open(p)?, &h, horizon).map_err(|e| with_path(p, e))?,
        None => base_forecast_all(&panel, &spec)?,
    };
    let loss = match &args.loss {
        Some(p) => LossSpec::from_json(&read_text(p)?, &h).map_err(|e| with_path(p, e))?,
        None => default_loss(&h),
    };
    let mode = args.mode.map_or_else(|| DecisionMode::default_for(loss.kind), DecisionMode::from);

    let gamma = historical_accuracy(&panel, &spec, args.input.holdout_frac)?;
    let q = build_q(args.q, &gamma, &h, args.keep_parity)?;
    if q.shrink_factor() < 1.0 {
        log::warn!("Q off-diagonals shrunk by {} to restore positive definiteness", q.shrink_factor());
    }
    let s = h.summing_matrix::<f64>();
    let post = fit_posterior(&s, &q, &base)?;
    let draws = sample_posterior(&post, args.draws, args.seed)?;
    let revised = select_point(&draws, &s, &loss, mode)?;
    let summary = posterior_summary(&draws, &s, &[0.05, 0.5, 0.95])?;

    let mut out = Outputs::default();
    out.add(
        "reconciled.csv",
        csv_bytes(|w| {
            w.write_record(["node_id", "base", "revised", "post_mean", "q05", "q50", "q95"])?;
            for (i, id) in h.ids().enumerate() {
                let n = &summary.nodes[i];
                w.write_record([
                    id.to_string(),
                    base.point[i].to_string(),
                    revised.full[i].to_string(),
                    summary.center(i).to_string(),
                    n.quantiles[0].1.to_string(),
                    n.quantiles[1].1.to_string(),
                    n.quantiles[2].1.to_string(),
                ])?;
            }
            let s2 = &summary.sigma2;
            w.write_record([
                "sigma2".to_string(),
                String::new(),
                String::new(),
                summary.sigma2_center().to_string(),
                s2.quantiles[0].1.to_string(),
                s2.quantiles[1].1.to_string(),
                s2.quantiles[2].1.to_string(),
            ])
        })?,
    );
    let info = RunInfo {
        q: q_label(args.q.into()).to_string(),
        shrink_factor: q.shrink_factor(),
        holdout: gamma.holdout,
        nu: post.nu,
        s2: post.s2,
        draws: args.draws,
        seed: args.seed,
        mode: match mode {
            DecisionMode::DrawArgmin => "draw-argmin",
            DecisionMode::PosteriorMean => "posterior-mean",
        }
        .to_string(),
        expected_loss: revised.expected_loss,
        draw_index: revised.draw_index,
        point_mass: draws.is_point_mass(),
    };
    let mut json = serde_json::to_vec_pretty(&info).map_err(Error::from)?;
    json.push(b'\n');
    out.add("run.json", json);
    if args.dump_q {
        let dense = q.to_dense();
        out.add(
            "q.csv",
            csv_bytes(|w| {
                let mut header = vec!["node_id".to_string()];
                header.extend(h.ids().map(str::to_owned));
                w.write_record(&header)?;
                for (i, id) in h.ids().enumerate() {
                    let mut rec = vec![id.to_string()];
                    rec.extend(dense.row(i).iter().map(|v| v.to_string()));
                    w.write_record(&rec)?;
                }
                Ok(())
            })?,
        );
    }
    if args.dump_draws {
        out.add(
            "draws.csv",
            csv_bytes(|w| {
                let mut header = vec!["draw".to_string(), "sigma2".to_string()];
                header.extend((1..=s.m_bottom()).map(|j| format!("beta_{j}")));
                w.write_record(&header)?;
                for d in 0..draws.n_draws {
                    let mut rec = vec![d.to_string(), draws.sigma2[d].to_string()];
                    rec.extend(draws.beta.row(d).iter().map(|v| v.to_string()));
                    w.write_record(&rec)?;
                }
                Ok(())
            })?,
        );
    }
    Ok(summary_line(&out.commit(&args.out)?))
}

fn parse_pair(s: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::Usage(format!("expected LO,HI, got '{s}'"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn sim_config(args: &SimulateArgs) -> CliResult<SimConfig> {
    let mut cfg = SimConfig {
        n_datasets: args.datasets,
        t_range: (args.t_min, args.t_max),
        metric: args.metric,
        q_low: args.q_low,
        q_high: args.q_high,
        proportions: args.td_proportions,
        keep_parity: args.keep_parity,
        seed: args.seed,
        ..SimConfig::default()
    };
    if let Some(v) = args.noisy_multiplier {
        cfg.noisy_multiplier = v;
    }
    if let Some(s) = &args.error_scale {
        cfg.error_scale = parse_pair(s)?;
    }
    if let Some(v) = args.shock_correlation {
        cfg.shock_correlation = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the requested settings and Q structures; returns the reports in run order.
pub fn simulate_reports(args: &SimulateArgs) -> CliResult<Vec<SettingReport>> {
    let cfg = sim_config(args)?;
    let settings = match args.setting.as_deref() {
        Some(s) => vec![s.parse::<Setting>()?],
        None => vec![Setting::One, Setting::Two],
    };
    let qs = match args.q {
        QChoice::Q1 => vec![QStructure::Diagonal],
        QChoice::Q2 => vec![QStructure::BlockDiagonal],
        QChoice::Both => vec![QStructure::Diagonal, QStructure::BlockDiagonal],
    };
    let mut reports = Vec::new();
    for &setting in &settings {
        for &q in &qs {
            reports.push(run_setting(&cfg, setting, &Method::ALL, q)?);
        }
    }
    Ok(reports)
}

fn setting_number(s: Setting) -> u8 {
    match s {
        Setting::One => 1,
        Setting::Two => 2,
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<String> {
    let reports = simulate_reports(args)?;
    let mut out = Outputs::default();
    let mut text = String::new();
    let mut by_setting: BTreeMap<u8, Vec<TableRow>> = BTreeMap::new();
    for r in &reports {
        let n = setting_number(r.setting);
        let mut scores = Vec::new();
        r.write_scores_csv(&mut scores)?;
        out.add(&format!("scores_setting{n}_{}.csv", q_label(r.q_mode).to_lowercase()), scores);
        by_setting.entry(n).or_default().extend(r.rows.iter().cloned());
        for notice in &r.notices {
            text.push_str(&format!("setting {n} {}: {notice}\n", q_label(r.q_mode)));
        }
    }
    for (n, rows) in &by_setting {
        // easy rows first, then hard, as in the published layout
        let mut rows = rows.clone();
        rows.sort_by_key(|r| (r.reconciliation != "easy", r.q.clone()));
        let mut table = Vec::new();
        write_results_csv(&rows, &mut table)?;
        text.push_str(&format!("setting {n}\n{}", String::from_utf8_lossy(&table)));
        out.add(&format!("results_setting{n}.csv"), table);
    }
    let written = out.commit(&args.out)?;
    Ok(format!("{text}{}", summary_line(&written)))
}

fn read_revised(path: &Path, h: &HierarchySpec) -> CliResult<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let headers = rdr.headers().map_err(Error::from)?.clone();
    let column = if headers.iter().any(|c| c == "revised") { "revised" } else { "value" };
    // reconcile output carries a sigma2 row; drop it before the node join
    let text = read_text(path)?;
    let filtered: String = text.lines().filter(|l| !l.starts_with("sigma2,")).map(|l| format!("{l}\n")).collect();
    read_node_values(filtered.as_bytes(), h, column).map_err(|e| with_path(path, e))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<String> {
    let h = HierarchySpec::from_json(&read_text(&args.hierarchy)?).map_err(|e| with_path(&args.hierarchy, e))?;
    let revised = read_revised(&args.revised, &h)?;
    let truth = read_node_values(open(&args.truth)?, &h, "value").map_err(|e| with_path(&args.truth, e))?;
    let weights = match (&args.weights, &args.setting) {
        (Some(p), _) => {
            let raw = read_sparse_weights(p, &h)?;
            EvaluationWeights::new(raw).map_err(|e| with_path(p, e))?
        }
        (None, Some(s)) => {
            let cfg = SimConfig { hierarchy: h.clone(), ..SimConfig::default() };
            s.parse::<Setting>()?.weights(&cfg)?
        }
        (None, None) => EvaluationWeights::uniform(h.m()),
    };
    let total = hiercast_core::metrics::evaluate_with(&revised, &truth, &weights, args.metric)?;
    let terms = node_errors(&revised, &truth, args.metric)?;
    let bytes = csv_bytes(|w| {
        w.write_record(["node_id", "revised", "truth", "weight", "error"])?;
        for (i, id) in h.ids().enumerate() {
            w.write_record([
                id.to_string(),
                revised[i].to_string(),
                truth[i].to_string(),
                weights.as_slice()[i].to_string(),
                terms[i].to_string(),
            ])?;
        }
        w.write_record(["weighted", "", "", "", &total.to_string()])
    })?;
    let mut out = Outputs::default();
    out.add("evaluation.csv", bytes);
    let written = out.commit(&args.out)?;
    Ok(format!("weighted error {total}\n{}", summary_line(&written)))
}

fn read_sparse_weights(path: &Path, h: &HierarchySpec) -> CliResult<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut w = vec![0.0; h.m()];
    for (line, rec) in rdr.deserialize::<(String, f64)>().enumerate() {
        let (id, v) = rec.map_err(|e| with_path(path, e.into()))?;
        let i = h.index_of(&id).ok_or_else(|| {
            with_path(path, Error::Invalid(format!("line {}: unknown node '{id}'", line + 2)))
        })?;
        w[i] = v;
    }
    Ok(w)
}
