//! Versioned JSON artifacts: marginal sets, models, fit reports, bound
//! reports.
//!
//! Every float is rounded to 12 significant digits before it is written, so
//! reruns with the same seed produce byte-identical files. Variable indices
//! in files are zero-based; CSV category codes are the only one-based values.

use std::fs;
use std::path::Path;

use pmfrec_core::factorization::{Block, BlockReport};
use pmfrec_core::identifiability::IdentifiabilityReport;
use pmfrec_core::marginals::MarginalEntry;
use pmfrec_core::{
    DenseTensor, FactorBundle, FitConfig, FitReport, JointPmfModel, MarginalSet, Matrix, RhoPolicy,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const FORMAT_VERSION: u32 = 1;

pub const MARGINALS_FORMAT: &str = "pmfrec-marginals";
pub const MODEL_FORMAT: &str = "pmfrec-model";
pub const FIT_REPORT_FORMAT: &str = "pmfrec-fit-report";
pub const BOUNDS_FORMAT: &str = "pmfrec-bounds";

/// Sum-to-one slack accepted when loading marginals and models back.
pub const LOAD_TOL: f64 = 1e-9;

/// `x` rounded to 12 significant digits. Non-finite values pass through (and
/// are refused by the JSON writer).
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn sig12_all(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| sig12(x)).collect()
}

fn check_header(kind: &str, format: &str, version: u32, expected: &str) -> AppResult<()> {
    if format != expected {
        return Err(AppError::Data(format!(
            "expected a {kind} file ({expected}), found '{format}'"
        )));
    }
    if version != FORMAT_VERSION {
        return Err(AppError::Data(format!(
            "{kind} file version {version} is not supported"
        )));
    }
    Ok(())
}

fn check_finite(kind: &str, xs: &[f64]) -> AppResult<()> {
    match xs.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(AppError::Data(format!(
            "{kind} contains the non-finite value {x}"
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TupleRecord {
    pub vars: Vec<usize>,
    /// Jointly observed records; absent for population marginals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<u64>,
    pub weight: f64,
    pub shape: Vec<usize>,
    /// Tensor entries, first index fastest.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalsFile {
    pub format: String,
    pub version: u32,
    pub order: usize,
    pub n_vars: usize,
    pub alphabet_sizes: Vec<usize>,
    pub tuples: Vec<TupleRecord>,
}

impl MarginalsFile {
    pub fn from_set(ms: &MarginalSet) -> Self {
        Self {
            format: MARGINALS_FORMAT.into(),
            version: FORMAT_VERSION,
            order: ms.order(),
            n_vars: ms.n_vars(),
            alphabet_sizes: ms.alphabet_sizes().to_vec(),
            tuples: ms
                .iter()
                .map(|(vars, e)| TupleRecord {
                    vars: vars.clone(),
                    support: e.support,
                    weight: sig12(e.weight),
                    shape: e.tensor.shape().to_vec(),
                    values: sig12_all(e.tensor.data()),
                })
                .collect(),
        }
    }

    pub fn into_set(self) -> AppResult<MarginalSet> {
        check_header("marginals", &self.format, self.version, MARGINALS_FORMAT)?;
        if self.alphabet_sizes.len() != self.n_vars {
            return Err(AppError::Data(format!(
                "{} alphabet sizes for {} variables",
                self.alphabet_sizes.len(),
                self.n_vars
            )));
        }
        let mut ms = MarginalSet::new(self.order, self.alphabet_sizes)?;
        for t in self.tuples {
            check_finite(&format!("marginal {:?}", t.vars), &t.values)?;
            let tensor = DenseTensor::from_data(&t.shape, t.values)?;
            let vars = t.vars;
            ms.insert(
                vars.clone(),
                MarginalEntry {
                    tensor,
                    support: t.support,
                    weight: t.weight,
                },
            )
            .map_err(|e| AppError::Data(format!("marginal {vars:?}: {e}")))?;
        }
        ms.validate(LOAD_TOL)?;
        Ok(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub alphabet_sizes: Vec<usize>,
    pub rank: usize,
    pub lambda: Vec<f64>,
    /// Per variable, the `rank` columns `Pr(X_n = · | H = f)`.
    pub factors: Vec<Vec<Vec<f64>>>,
}

impl ModelFile {
    pub fn from_bundle(bundle: &FactorBundle) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: FORMAT_VERSION,
            alphabet_sizes: bundle.alphabet_sizes(),
            rank: bundle.rank(),
            lambda: sig12_all(bundle.loadings()),
            factors: bundle
                .factors()
                .iter()
                .map(|a| (0..a.cols()).map(|f| sig12_all(a.col(f))).collect())
                .collect(),
        }
    }

    pub fn into_model(self) -> AppResult<JointPmfModel> {
        check_header("model", &self.format, self.version, MODEL_FORMAT)?;
        if self.lambda.len() != self.rank || self.factors.len() != self.alphabet_sizes.len() {
            return Err(AppError::Data(format!(
                "model declares rank {} and {} variables but stores {} loadings and {} factors",
                self.rank,
                self.alphabet_sizes.len(),
                self.lambda.len(),
                self.factors.len()
            )));
        }
        check_finite("model loadings", &self.lambda)?;
        let mut factors = Vec::with_capacity(self.factors.len());
        for (n, (cols, &size)) in self
            .factors
            .into_iter()
            .zip(&self.alphabet_sizes)
            .enumerate()
        {
            if cols.len() != self.rank || cols.iter().any(|c| c.len() != size) {
                return Err(AppError::Data(format!(
                    "factor {n} must hold {} columns of length {size}",
                    self.rank
                )));
            }
            for c in &cols {
                check_finite(&format!("factor {n}"), c)?;
            }
            factors.push(Matrix::from_columns(&cols)?);
        }
        let bundle = FactorBundle::from_parts_unchecked(self.lambda, factors)?;
        bundle.validate(LOAD_TOL)?;
        Ok(JointPmfModel::new(bundle)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub rank: usize,
    pub max_sweeps: usize,
    pub admm_iters: usize,
    /// `gram-diagonal`, `trace-over-rank` or the fixed penalty.
    pub rho: String,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub cost_floor: f64,
    pub seed: u64,
    pub extrapolate: bool,
    pub revive_dead: bool,
}

impl ConfigRecord {
    pub fn from_config(c: &FitConfig) -> Self {
        Self {
            rank: c.rank,
            max_sweeps: c.max_outer_sweeps,
            admm_iters: c.admm_inner_iters,
            rho: rho_name(c.rho_policy),
            outer_tol: sig12(c.outer_tol),
            inner_tol: sig12(c.inner_tol),
            cost_floor: sig12(c.cost_floor),
            seed: c.seed,
            extrapolate: c.extrapolate,
            revive_dead: c.revive_dead,
        }
    }
}

pub fn rho_name(rho: RhoPolicy) -> String {
    match rho {
        RhoPolicy::GramDiagonal => "gram-diagonal".into(),
        RhoPolicy::TraceOverRank => "trace-over-rank".into(),
        RhoPolicy::Fixed(r) => format!("{}", sig12(r)),
    }
}

/// Inverse of [`rho_name`].
pub fn parse_rho(s: &str) -> Result<RhoPolicy, String> {
    match s {
        "gram-diagonal" => Ok(RhoPolicy::GramDiagonal),
        "trace-over-rank" => Ok(RhoPolicy::TraceOverRank),
        _ => match s.parse::<f64>() {
            Ok(r) if r > 0.0 && r.is_finite() => Ok(RhoPolicy::Fixed(r)),
            _ => Err(format!(
                "'{s}' is neither gram-diagonal, trace-over-rank nor a positive number"
            )),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    /// `factor <n>` or `loadings`.
    pub block: String,
    pub iterations: usize,
    pub rho: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl BlockRecord {
    fn from_report(b: &BlockReport) -> Self {
        Self {
            block: match b.block {
                Block::Factor(n) => format!("factor {n}"),
                Block::Loadings => "loadings".into(),
            },
            iterations: b.iterations,
            rho: sig12(b.rho),
            primal_residual: sig12(b.primal_residual),
            dual_residual: sig12(b.dual_residual),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportFile {
    pub format: String,
    pub version: u32,
    pub config: ConfigRecord,
    pub termination: String,
    pub sweeps_run: usize,
    pub best_sweep: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub deflated_components: usize,
    pub extrapolations_accepted: usize,
    pub blocks: Vec<BlockRecord>,
    pub cost_trace: Vec<f64>,
}

impl FitReportFile {
    pub fn new(config: &FitConfig, report: &FitReport) -> Self {
        Self {
            format: FIT_REPORT_FORMAT.into(),
            version: FORMAT_VERSION,
            config: ConfigRecord::from_config(config),
            termination: report.termination.as_str().into(),
            sweeps_run: report.sweeps_run,
            best_sweep: report.best_sweep,
            initial_cost: sig12(report.cost_trace.first().copied().unwrap_or(f64::NAN)),
            final_cost: sig12(report.best_cost),
            deflated_components: report.deflated_components,
            extrapolations_accepted: report.extrapolations_accepted,
            blocks: report.blocks.iter().map(BlockRecord::from_report).collect(),
            cost_trace: sig12_all(&report.cost_trace),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub rule: String,
    pub bound: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<u64>>,
    pub applicable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsFile {
    pub format: String,
    pub version: u32,
    pub n_vars: u64,
    pub alphabet: u64,
    pub order: u64,
    pub triples: u64,
    /// Absent for fewer than four variables.
    pub quadruples: Option<u64>,
    pub combined_bound: u64,
    pub rules: Vec<RuleRecord>,
}

impl BoundsFile {
    pub fn from_report(r: &IdentifiabilityReport) -> Self {
        Self {
            format: BOUNDS_FORMAT.into(),
            version: FORMAT_VERSION,
            n_vars: r.n_vars,
            alphabet: r.alphabet,
            order: r.order,
            triples: r.triples,
            quadruples: r.quadruples,
            combined_bound: r.combined_bound,
            rules: r
                .rules
                .iter()
                .map(|b| RuleRecord {
                    rule: b.rule.into(),
                    bound: b.bound,
                    partition: b.partition.clone(),
                    applicable: b.applicable,
                    note: b.note.clone(),
                })
                .collect(),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> AppResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    fs::write(path, to_json(value)?).map_err(|e| AppError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

pub fn load_marginals(path: &Path) -> AppResult<MarginalSet> {
    read_json::<MarginalsFile>(path)?
        .into_set()
        .map_err(|e| prefix_path(path, e))
}

pub fn load_model(path: &Path) -> AppResult<JointPmfModel> {
    read_json::<ModelFile>(path)?
        .into_model()
        .map_err(|e| prefix_path(path, e))
}

fn prefix_path(path: &Path, e: AppError) -> AppError {
    match e {
        AppError::Data(m) => AppError::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}
