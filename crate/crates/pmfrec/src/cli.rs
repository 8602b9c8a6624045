//! The `pmfrec` command line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pmfrec_core::harness::{
    derive_seed, eval_metrics, hide_entries, mre_fact, mre_ten, random_model, sample_dataset,
};
use pmfrec_core::harness::{PredictionMetrics, PredictionTask};
use pmfrec_core::{
    fit, identifiability, Error as CoreError, Evidence, FitConfig, JointPmfModel, MarginalSet,
    Termination,
};
use serde::Serialize;

use crate::csvio::{load_csv, write_csv, CsvOptions, LoadedCsv, Rounding};
use crate::error::{AppError, AppResult};
use crate::experiment::{self, par_estimate_marginals, ExperimentSpec};
use crate::formats::{self, parse_rho, sig12, BoundsFile, FitReportFile, MarginalsFile, ModelFile};

#[derive(Debug, Parser)]
#[command(
    name = "pmfrec",
    version,
    about = "Joint PMF recovery from low-order marginals"
)]
pub struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate all order-d marginals of a CSV dataset.
    Marginals(MarginalsArgs),
    /// Fit a naive Bayes model to marginals (a marginal file or a CSV).
    Fit(FitArgs),
    /// Rank bounds for generic identifiability.
    Bounds(BoundsArgs),
    /// Predict one column of each record from the others.
    Predict(PredictArgs),
    /// Generate a random model and data, or run an experiment config.
    Synth(SynthArgs),
    /// Compare a model with the truth, or score its predictions on data.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CsvArgs {
    /// The first line holds column names.
    #[arg(long)]
    pub header: bool,
    /// Field delimiter; `tab` for tab-separated files.
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    pub delimiter: u8,
    #[arg(long, default_value = "?")]
    pub missing_token: String,
    /// How fractional cells are mapped to codes.
    #[arg(long, value_enum, default_value_t = Rounding::None)]
    pub rounding: Rounding,
    /// Alphabet size of every column, comma-separated (inferred otherwise).
    #[arg(long, value_delimiter = ',')]
    pub alphabets: Option<Vec<usize>>,
}

impl CsvArgs {
    fn options(&self) -> CsvOptions {
        CsvOptions {
            has_header: self.header,
            delimiter: self.delimiter,
            missing_token: self.missing_token.clone(),
            rounding: self.rounding,
            alphabet_sizes: self.alphabets.clone(),
        }
    }
}

fn parse_delimiter(s: &str) -> Result<u8, String> {
    match s {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(format!("'{s}' is not a single ASCII character")),
    }
}

#[derive(Debug, Args)]
pub struct MarginalsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
    pub order: u8,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub rank: usize,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    /// ADMM iterations per block update.
    #[arg(long)]
    pub admm_iters: Option<usize>,
    /// Relative cost change that ends the fit.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub inner_tol: Option<f64>,
    /// `gram-diagonal`, `trace-over-rank` or a fixed positive penalty.
    #[arg(long, value_parser = parse_rho)]
    pub rho: Option<pmfrec_core::RhoPolicy>,
    /// Plain block cycling without the extrapolation step.
    #[arg(long)]
    pub no_extrapolate: bool,
    /// Leave components with zero loading as they are.
    #[arg(long)]
    pub no_revive: bool,
}

impl SolverArgs {
    fn config(&self, seed: u64) -> AppResult<FitConfig> {
        if self.rank == 0 {
            return Err(AppError::Usage("--rank must be at least 1".into()));
        }
        let mut c = FitConfig::new(self.rank);
        c.seed = seed;
        if let Some(v) = self.max_sweeps {
            c.max_outer_sweeps = v;
        }
        if let Some(v) = self.admm_iters {
            c.admm_inner_iters = v;
        }
        if let Some(v) = self.tol {
            c.outer_tol = v;
        }
        if let Some(v) = self.inner_tol {
            c.inner_tol = v;
        }
        if let Some(v) = self.rho {
            c.rho_policy = v;
        }
        c.extrapolate = !self.no_extrapolate;
        c.revive_dead = !self.no_revive;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// A marginal file (`.json`) or a CSV dataset.
    #[arg(long)]
    pub input: PathBuf,
    /// Marginal order to build from a CSV input.
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
    pub order: Option<u8>,
    /// Model file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Fit report; defaults to the model path with `.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Start from this model instead of a random one.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Number of variables N.
    #[arg(long)]
    pub vars: u64,
    /// Common alphabet size I.
    #[arg(long)]
    pub alphabet: u64,
    /// Marginal order available to the fit.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..=4))]
    pub order: u64,
    /// Write JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Most probable category.
    Map,
    /// Conditional expectation of the one-based code.
    Expect,
}

#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV records; the target column is ignored as evidence.
    #[arg(long)]
    pub input: PathBuf,
    /// Column to predict: one-based number or header name.
    #[arg(long)]
    pub target: String,
    #[arg(long, value_enum, default_value_t = Mode::Map)]
    pub mode: Mode,
    /// Field delimiter; `tab` for tab-separated files.
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    pub delimiter: u8,
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value = "?")]
    pub missing_token: String,
    #[arg(long, value_enum, default_value_t = Rounding::None)]
    pub rounding: Rounding,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub target: TargetArgs,
    /// Predictions CSV; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Experiment config (JSON); the other generation flags are then unused.
    #[arg(long, conflicts_with_all = ["vars", "alphabet", "rank", "records", "model_output"])]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub vars: Option<usize>,
    #[arg(long)]
    pub alphabet: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Records to sample from the model.
    #[arg(long)]
    pub records: Option<usize>,
    /// Fraction of cells to hide.
    #[arg(long, default_value_t = 0.0)]
    pub hide: f64,
    /// Where to write the generated model.
    #[arg(long)]
    pub model_output: Option<PathBuf>,
    /// Sampled CSV, or the results JSON in config mode.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Results table (CSV) in config mode.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value = "?")]
    pub missing_token: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Estimated model.
    #[arg(long)]
    pub model: PathBuf,
    /// Ground-truth model: reports MRE_fact and MRE_ten.
    #[arg(long, conflicts_with_all = ["input", "target"])]
    pub truth: Option<PathBuf>,
    /// Test CSV: reports prediction metrics for --target.
    #[arg(long, requires = "target")]
    pub input: Option<PathBuf>,
    #[arg(long, requires = "input")]
    pub target: Option<String>,
    #[arg(long, value_enum, default_value_t = Mode::Map)]
    pub mode: Mode,
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    pub delimiter: u8,
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value = "?")]
    pub missing_token: String,
    #[arg(long, value_enum, default_value_t = Rounding::None)]
    pub rounding: Rounding,
    /// JSON result; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> AppResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            write!(out, "{e}").map_err(out_err)?;
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let msg = msg.strip_prefix("error: ").unwrap_or(&msg).trim_end();
            return Err(AppError::Usage(msg.to_owned()));
        }
    };
    run(&cli, out)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> AppResult<()> {
    match &cli.command {
        Command::Marginals(a) => cmd_marginals(a, out),
        Command::Fit(a) => cmd_fit(a, cli.seed, out),
        Command::Bounds(a) => cmd_bounds(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Synth(a) => cmd_synth(a, cli.seed, out),
        Command::Eval(a) => cmd_eval(a, out),
    }
}

fn out_err(e: io::Error) -> AppError {
    AppError::output(e)
}

fn create(path: &Path) -> AppResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| AppError::io(path, e))
}

fn load_data(path: &Path, csv: &CsvArgs, order: usize) -> AppResult<LoadedCsv> {
    let loaded = load_csv(path, &csv.options())?;
    if order > loaded.data.n_vars() {
        return Err(AppError::Usage(format!(
            "--order {order} exceeds the {} columns of {}",
            loaded.data.n_vars(),
            path.display()
        )));
    }
    Ok(loaded)
}

fn cmd_marginals(a: &MarginalsArgs, out: &mut dyn Write) -> AppResult<()> {
    let order = a.order as usize;
    let loaded = load_data(&a.input, &a.csv, order)?;
    let ms = par_estimate_marginals(&loaded.data, order)?;
    formats::write_json(&a.output, &MarginalsFile::from_set(&ms))?;

    let data = &loaded.data;
    writeln!(
        out,
        "{} records, {} variables, {} missing cells",
        data.n_records(),
        data.n_vars(),
        data.missing_count()
    )
    .map_err(out_err)?;
    if loaded.inferred {
        writeln!(out, "inferred alphabet sizes: {:?}", data.alphabet_sizes()).map_err(out_err)?;
    }
    let mut supports = Vec::with_capacity(ms.len());
    for (vars, e) in ms.iter() {
        let support = e.support.unwrap_or(0);
        supports.push(support);
        let cols: Vec<String> = vars.iter().map(|v| (v + 1).to_string()).collect();
        let flag = if e.is_empty() {
            "  (empty, not fitted)"
        } else {
            ""
        };
        writeln!(out, "tuple ({}) support {support}{flag}", cols.join(",")).map_err(out_err)?;
    }
    supports.sort_unstable();
    writeln!(
        out,
        "{} tuples of order {order}; support min {} median {} max {}",
        supports.len(),
        supports[0],
        supports[supports.len() / 2],
        supports[supports.len() - 1]
    )
    .map_err(out_err)
}

fn default_report_path(model: &Path) -> PathBuf {
    let stem = model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    model.with_file_name(format!("{stem}.report.json"))
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Marginals from a marginal file or a CSV dataset.
fn fit_input(a: &FitArgs) -> AppResult<MarginalSet> {
    if is_json(&a.input) {
        let ms = formats::load_marginals(&a.input)?;
        if let Some(d) = a.order {
            if d as usize != ms.order() {
                return Err(AppError::Usage(format!(
                    "--order {d} but {} holds order-{} marginals",
                    a.input.display(),
                    ms.order()
                )));
            }
        }
        Ok(ms)
    } else {
        let order = a
            .order
            .ok_or_else(|| AppError::Usage("--order is required with a CSV input".into()))?
            as usize;
        let loaded = load_data(&a.input, &a.csv, order)?;
        par_estimate_marginals(&loaded.data, order)
    }
}

fn cmd_fit(a: &FitArgs, seed: u64, out: &mut dyn Write) -> AppResult<()> {
    let config = a.solver.config(seed)?;
    let ms = fit_input(a)?;
    let init = match &a.init {
        Some(p) => {
            let m = formats::load_model(p)?;
            if m.rank() != config.rank {
                return Err(AppError::Usage(format!(
                    "--init model has rank {}, --rank is {}",
                    m.rank(),
                    config.rank
                )));
            }
            Some(m.into_bundle())
        }
        None => None,
    };
    let (bundle, report) = fit(&ms, &config, init.as_ref())?;
    formats::write_json(&a.output, &ModelFile::from_bundle(&bundle))?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| default_report_path(&a.output));
    formats::write_json(&report_path, &FitReportFile::new(&config, &report))?;

    writeln!(
        out,
        "{} after {} sweeps; cost {:e} (initial {:e}); {} dead components",
        report.termination.as_str(),
        report.sweeps_run,
        sig12(report.best_cost),
        sig12(report.cost_trace[0]),
        report.deflated_components
    )
    .map_err(out_err)?;
    if report.termination == Termination::SweepBudget {
        writeln!(
            out,
            "warning: sweep budget exhausted before the cost settled"
        )
        .map_err(out_err)?;
    }
    Ok(())
}

fn cmd_bounds(a: &BoundsArgs, out: &mut dyn Write) -> AppResult<()> {
    if a.vars == 0 || a.alphabet == 0 {
        return Err(AppError::Usage(
            "--vars and --alphabet must be positive".into(),
        ));
    }
    let report = identifiability::report(a.vars, a.alphabet, a.order);
    let text = if a.json {
        formats::to_json(&BoundsFile::from_report(&report))?
    } else {
        bounds_table(&report)
    };
    match &a.output {
        Some(p) => std::fs::write(p, text).map_err(|e| AppError::io(p, e)),
        None => out.write_all(text.as_bytes()).map_err(out_err),
    }
}

fn bounds_table(r: &identifiability::IdentifiabilityReport) -> String {
    let mut s = format!("N={} I={} order={}\n", r.n_vars, r.alphabet, r.order);
    s.push_str(&format!(
        "{:<16} {:>8}  {:<14} {:<10} note\n",
        "rule", "bound", "partition", "applies"
    ));
    for rule in &r.rules {
        let part = rule
            .partition
            .as_ref()
            .map(|p| p.iter().map(u64::to_string).collect::<Vec<_>>().join("/"))
            .unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<16} {:>8}  {:<14} {:<10} {}\n",
            rule.rule,
            rule.bound,
            part,
            if rule.applicable { "yes" } else { "no" },
            rule.note.as_deref().unwrap_or("")
        ));
    }
    s.push_str(&format!("triples: {}\n", r.triples));
    match r.quadruples {
        Some(q) => s.push_str(&format!("quadruples: {q}\n")),
        None => s.push_str("quadruples: requires N >= 4\n"),
    }
    s.push_str(&format!("combined: {}\n", r.combined_bound));
    s
}

/// Zero-based index of the target column.
fn resolve_target(target: &str, headers: Option<&[String]>, n_vars: usize) -> AppResult<usize> {
    if let Some(h) = headers {
        if let Some(i) = h.iter().position(|name| name == target) {
            return Ok(i);
        }
    }
    match target.parse::<usize>() {
        Ok(c) if (1..=n_vars).contains(&c) => Ok(c - 1),
        _ => Err(AppError::Usage(format!(
            "--target '{target}' is neither a column number in 1..={n_vars} nor a header name"
        ))),
    }
}

/// Records checked against the model's alphabets, with the resolved target.
fn load_for_model(t: &TargetArgs, model: &JointPmfModel) -> AppResult<(LoadedCsv, usize)> {
    let opts = CsvOptions {
        has_header: t.header,
        delimiter: t.delimiter,
        missing_token: t.missing_token.clone(),
        rounding: t.rounding,
        alphabet_sizes: Some(model.alphabet_sizes()),
    };
    let loaded = load_csv(&t.input, &opts)?;
    let target = resolve_target(&t.target, loaded.headers.as_deref(), loaded.data.n_vars())?;
    Ok((loaded, target))
}

/// Prediction for one record; `None` when the evidence has zero probability.
pub fn predict_record(
    model: &JointPmfModel,
    record: &[Option<usize>],
    target: usize,
    mode: Mode,
) -> AppResult<Option<f64>> {
    let evidence = Evidence::from_record(record, target);
    let result = match mode {
        Mode::Map => model.map_predict(target, &evidence).map(|c| (c + 1) as f64),
        Mode::Expect => model.conditional_expectation(target, &evidence),
    };
    match result {
        Ok(v) => Ok(Some(v)),
        Err(CoreError::ZeroProbabilityEvidence) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn format_prediction(v: f64, mode: Mode) -> String {
    match mode {
        Mode::Map => format!("{}", v as usize),
        Mode::Expect => format!("{}", sig12(v)),
    }
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> AppResult<()> {
    let t = &a.target;
    let model = formats::load_model(&t.model)?;
    let (loaded, target) = load_for_model(t, &model)?;
    let sink: Box<dyn Write + '_> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(&mut *out),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["record", "prediction", "diagnostic"])?;
    for (r, record) in loaded.data.records().enumerate() {
        let row = (r + 1).to_string();
        match predict_record(&model, &record, target, t.mode)? {
            Some(v) => w.write_record([row.as_str(), &format_prediction(v, t.mode), ""])?,
            None => w.write_record([row.as_str(), "", "zero-probability evidence"])?,
        }
    }
    w.flush().map_err(out_err)
}

fn cmd_synth(a: &SynthArgs, seed: u64, out: &mut dyn Write) -> AppResult<()> {
    if let Some(config) = &a.config {
        let output = a.output.as_ref().ok_or_else(|| {
            AppError::Usage("--output (results JSON) is required with --config".into())
        })?;
        let text = std::fs::read_to_string(config).map_err(|e| AppError::io(config, e))?;
        let spec: ExperimentSpec = serde_json::from_str(&text)
            .map_err(|e| AppError::Usage(format!("{}: {e}", config.display())))?;
        spec.validate()?;
        let results = experiment::run(&spec)?;
        formats::write_json(output, &results)?;
        if let Some(table) = &a.table {
            experiment::write_table(create(table)?, &results)?;
        } else {
            experiment::write_table(&mut *out, &results)?;
        }
        return Ok(());
    }

    let (Some(n), Some(i), Some(f)) = (a.vars, a.alphabet, a.rank) else {
        return Err(AppError::Usage(
            "--vars, --alphabet and --rank are required without --config".into(),
        ));
    };
    if n == 0 || i == 0 || f == 0 {
        return Err(AppError::Usage(
            "--vars, --alphabet and --rank must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&a.hide) {
        return Err(AppError::Usage(format!(
            "--hide {} is not in [0, 1)",
            a.hide
        )));
    }
    if a.model_output.is_none() && a.output.is_none() {
        return Err(AppError::Usage(
            "nothing to write: give --model-output and/or --output".into(),
        ));
    }
    if a.output.is_some() != a.records.is_some() {
        return Err(AppError::Usage("--output and --records go together".into()));
    }
    let model = random_model(n, i, f, derive_seed(seed, 0));
    if let Some(p) = &a.model_output {
        formats::write_json(p, &ModelFile::from_bundle(model.bundle()))?;
    }
    if let (Some(p), Some(m)) = (&a.output, a.records) {
        let sample = sample_dataset(&model, m, derive_seed(seed, 1))?;
        let data = if a.hide > 0.0 {
            hide_entries(&sample.data, a.hide, derive_seed(seed, 2))?
        } else {
            sample.data
        };
        write_csv(create(p)?, &data, None, &a.missing_token)?;
        writeln!(out, "{m} records, {} missing cells", data.missing_count()).map_err(out_err)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ModelComparison {
    mre_fact: Option<f64>,
    mre_ten: f64,
}

#[derive(Debug, Serialize)]
struct PredictionReport {
    mode: &'static str,
    target_column: usize,
    scored: usize,
    skipped_missing_target: usize,
    zero_probability_rows: usize,
    rmse: f64,
    mae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    misclassification: Option<f64>,
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> AppResult<()> {
    let model = formats::load_model(&a.model)?;
    let text = if let Some(truth) = &a.truth {
        let truth = formats::load_model(truth)?;
        if truth.alphabet_sizes() != model.alphabet_sizes() {
            return Err(AppError::Data(format!(
                "model alphabets {:?} differ from the truth's {:?}",
                model.alphabet_sizes(),
                truth.alphabet_sizes()
            )));
        }
        let mre_fact = if truth.rank() == model.rank() {
            Some(sig12(mre_fact(truth.bundle(), model.bundle())?))
        } else {
            None
        };
        let mre_ten = sig12(mre_ten(&truth.dense_joint()?, &model.dense_joint()?)?);
        formats::to_json(&ModelComparison { mre_fact, mre_ten })?
    } else {
        let (Some(input), Some(target)) = (&a.input, &a.target) else {
            return Err(AppError::Usage(
                "give --truth, or --input with --target".into(),
            ));
        };
        let t = TargetArgs {
            model: a.model.clone(),
            input: input.clone(),
            target: target.clone(),
            mode: a.mode,
            delimiter: a.delimiter,
            header: a.header,
            missing_token: a.missing_token.clone(),
            rounding: a.rounding,
        };
        let (loaded, target) = load_for_model(&t, &model)?;
        let mut predictions = Vec::new();
        let mut truth = Vec::new();
        let (mut skipped, mut zero) = (0, 0);
        for record in loaded.data.records() {
            let Some(actual) = record[target] else {
                skipped += 1;
                continue;
            };
            match predict_record(&model, &record, target, a.mode)? {
                Some(p) => {
                    predictions.push(p);
                    truth.push((actual + 1) as f64);
                }
                None => zero += 1,
            }
        }
        let task = match a.mode {
            Mode::Map => PredictionTask::Classification,
            Mode::Expect => PredictionTask::Regression,
        };
        let m: PredictionMetrics = eval_metrics(&predictions, &truth, task)?;
        formats::to_json(&PredictionReport {
            mode: match a.mode {
                Mode::Map => "map",
                Mode::Expect => "expect",
            },
            target_column: target + 1,
            scored: m.count,
            skipped_missing_target: skipped,
            zero_probability_rows: zero,
            rmse: sig12(m.rmse),
            mae: sig12(m.mae),
            misclassification: m.misclassification.map(sig12),
        })?
    };
    match &a.output {
        Some(p) => std::fs::write(p, text).map_err(|e| AppError::io(p, e)),
        None => out.write_all(text.as_bytes()).map_err(out_err),
    }
}
