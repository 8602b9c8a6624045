//! Seeded Monte-Carlo experiments on synthetic naive Bayes models.
//!
//! Two kinds are supported. A recovery experiment draws random models, builds
//! exact or sampled marginals, fits them and scores the estimate against the
//! truth (and, for sampled data, against the oracle MLE that sees the latent
//! states). A classification experiment fits on a training split and compares
//! MAP prediction of one variable against the majority class and against MAP
//! under the true model.
//!
//! Trial `t` uses the seed `derive_seed(seed, t)` and, within it, fixed
//! streams for the model, the sample, the hidden cells and the fit start. The
//! same trial therefore sees the same model and records at every marginal
//! order, sample size and hiding rate. Trials run on the rayon pool; results
//! are collected in trial order so output does not depend on scheduling.

use std::io::Write;

use pmfrec_core::harness::{
    derive_seed, hide_entries, majority_class, mre_fact, mre_ten, oracle_mle, random_model,
    sample_dataset, split_indices,
};
use pmfrec_core::marginals::estimate_tuple;
use pmfrec_core::{
    fit, DiscreteDataset, Evidence, FitConfig, JointPmfModel, MarginalSet, Termination,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::formats::{parse_rho, sig12};

pub const EXPERIMENT_FORMAT: &str = "pmfrec-experiment";

const MODEL_STREAM: u64 = 0;
const SAMPLE_STREAM: u64 = 1;
const HIDE_STREAM: u64 = 2;
const FIT_STREAM: u64 = 3;
const SPLIT_STREAM: u64 = 4;

/// Solver settings of an experiment; unset fields keep the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sweeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admm_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<String>,
}

impl FitSettings {
    pub fn config(&self, rank: usize, seed: u64) -> AppResult<FitConfig> {
        let mut c = FitConfig::new(rank);
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
        if let Some(v) = self.cost_floor {
            c.cost_floor = v;
        }
        if let Some(r) = &self.rho {
            c.rho_policy = parse_rho(r).map_err(AppError::Usage)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySpec {
    pub n_vars: usize,
    pub alphabet: usize,
    /// Rank of the generating model. When absent each fitted rank is also
    /// the generating rank, which gives the usual one-row-per-rank table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_rank: Option<usize>,
    pub fit_ranks: Vec<usize>,
    pub orders: Vec<usize>,
    /// Records per dataset; empty means exact population marginals.
    #[serde(default)]
    pub sample_sizes: Vec<usize>,
    #[serde(default)]
    pub hide_fraction: f64,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit: FitSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationSpec {
    pub n_vars: usize,
    pub alphabet: usize,
    pub true_rank: usize,
    pub fit_rank: usize,
    pub order: usize,
    /// Records drawn per trial, split into training and test parts.
    pub records: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Zero-based variable to predict; defaults to the last one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit: FitSettings,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExperimentSpec {
    Recovery(RecoverySpec),
    Classification(ClassificationSpec),
}

fn usage(msg: String) -> AppError {
    AppError::Usage(msg)
}

impl RecoverySpec {
    pub fn validate(&self) -> AppResult<()> {
        if self.n_vars == 0 || self.alphabet == 0 || self.trials == 0 {
            return Err(usage("n_vars, alphabet and trials must be positive".into()));
        }
        if self.fit_ranks.is_empty() || self.orders.is_empty() {
            return Err(usage("fit_ranks and orders must not be empty".into()));
        }
        if self.fit_ranks.contains(&0) || self.true_rank == Some(0) {
            return Err(usage("ranks must be positive".into()));
        }
        if let Some(&d) = self.orders.iter().find(|&&d| d == 0 || d > self.n_vars) {
            return Err(usage(format!("order {d} is not in 1..={}", self.n_vars)));
        }
        if self.sample_sizes.contains(&0) {
            return Err(usage("sample sizes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.hide_fraction) {
            return Err(usage(format!(
                "hide fraction {} is not in [0, 1)",
                self.hide_fraction
            )));
        }
        if self.hide_fraction > 0.0 && self.sample_sizes.is_empty() {
            return Err(usage(
                "hiding cells needs sampled data (sample_sizes)".into(),
            ));
        }
        self.fit.config(1, 0)?;
        Ok(())
    }
}

impl ClassificationSpec {
    pub fn target(&self) -> usize {
        self.target.unwrap_or(self.n_vars.saturating_sub(1))
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.n_vars < 2 || self.alphabet == 0 || self.trials == 0 || self.records == 0 {
            return Err(usage(
                "need n_vars >= 2 and positive alphabet, trials and records".into(),
            ));
        }
        if self.true_rank == 0 || self.fit_rank == 0 {
            return Err(usage("ranks must be positive".into()));
        }
        if self.order == 0 || self.order > self.n_vars {
            return Err(usage(format!(
                "order {} is not in 1..={}",
                self.order, self.n_vars
            )));
        }
        if self.target() >= self.n_vars {
            return Err(usage(format!("target {} is not a variable", self.target())));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(usage(format!(
                "test fraction {} is not in (0, 1)",
                self.test_fraction
            )));
        }
        self.fit.config(1, 0)?;
        Ok(())
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> AppResult<()> {
        match self {
            ExperimentSpec::Recovery(s) => s.validate(),
            ExperimentSpec::Classification(s) => s.validate(),
        }
    }
}

/// Marginals of every `order`-tuple, one tuple per rayon task.
pub fn par_estimate_marginals(data: &DiscreteDataset, order: usize) -> AppResult<MarginalSet> {
    let mut set = MarginalSet::new(order, data.alphabet_sizes().to_vec())?;
    let tuples = pmfrec_core::marginals::combinations(data.n_vars(), order);
    let entries: Vec<_> = tuples
        .par_iter()
        .map(|vars| estimate_tuple(data, vars))
        .collect::<Result<_, _>>()?;
    for (vars, e) in tuples.into_iter().zip(entries) {
        set.insert(vars, e)?;
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTrial {
    pub order: usize,
    pub true_rank: usize,
    pub fit_rank: usize,
    /// `None` for exact marginals.
    pub sample_size: Option<usize>,
    pub trial: usize,
    /// Only defined when the fitted and true ranks agree.
    pub mre_fact: Option<f64>,
    pub mre_ten: f64,
    pub final_cost: f64,
    pub sweeps: usize,
    pub termination: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_mre_fact: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_mre_ten: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation, zero for a single value.
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let k = sorted.len();
        let median = if k % 2 == 1 {
            sorted[k / 2]
        } else {
            0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
        };
        Some(Stats {
            mean: sig12(mean),
            std: sig12(var.sqrt()),
            median: sig12(median),
            min: sig12(sorted[0]),
            max: sig12(sorted[k - 1]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCell {
    pub order: usize,
    pub true_rank: usize,
    pub fit_rank: usize,
    pub sample_size: Option<usize>,
    pub hide_fraction: f64,
    pub trials: usize,
    /// Fits that stopped before exhausting the sweep budget.
    pub converged: usize,
    pub mre_fact: Option<Stats>,
    pub mre_ten: Stats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_mre_fact: Option<Stats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_mre_ten: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResults {
    pub format: String,
    pub version: u32,
    pub spec: RecoverySpec,
    pub cells: Vec<RecoveryCell>,
    pub trials: Vec<RecoveryTrial>,
}

impl RecoveryResults {
    pub fn cell(
        &self,
        order: usize,
        fit_rank: usize,
        sample_size: Option<usize>,
    ) -> Option<&RecoveryCell> {
        self.cells
            .iter()
            .find(|c| c.order == order && c.fit_rank == fit_rank && c.sample_size == sample_size)
    }
}

fn rank_pairs(spec: &RecoverySpec) -> Vec<(usize, usize)> {
    spec.fit_ranks
        .iter()
        .map(|&f| (spec.true_rank.unwrap_or(f), f))
        .collect()
}

fn sizes(spec: &RecoverySpec) -> Vec<Option<usize>> {
    if spec.sample_sizes.is_empty() {
        vec![None]
    } else {
        spec.sample_sizes.iter().map(|&m| Some(m)).collect()
    }
}

/// One trial of one (rank pair, sample size) setting, fitted at every order.
fn recovery_job(
    spec: &RecoverySpec,
    (true_rank, fit_rank): (usize, usize),
    sample_size: Option<usize>,
    trial: usize,
) -> AppResult<Vec<RecoveryTrial>> {
    let seed = derive_seed(spec.seed, trial as u64);
    let truth = random_model(
        spec.n_vars,
        spec.alphabet,
        true_rank,
        derive_seed(seed, MODEL_STREAM),
    );
    let truth_joint = truth.dense_joint()?;

    let (data, oracle) = match sample_size {
        None => (None, None),
        Some(m) => {
            let sample = sample_dataset(&truth, m, derive_seed(seed, SAMPLE_STREAM))?;
            let data = if spec.hide_fraction > 0.0 {
                hide_entries(
                    &sample.data,
                    spec.hide_fraction,
                    derive_seed(seed, HIDE_STREAM),
                )?
            } else {
                sample.data
            };
            let oracle = oracle_mle(&data, &sample.latent, true_rank)?;
            let o_fact = mre_fact(truth.bundle(), oracle.bundle())?;
            let o_ten = mre_ten(&truth_joint, &oracle.dense_joint()?)?;
            (Some(data), Some((o_fact, o_ten)))
        }
    };

    let config = spec.fit.config(fit_rank, derive_seed(seed, FIT_STREAM))?;
    let mut out = Vec::with_capacity(spec.orders.len());
    for &order in &spec.orders {
        let ms = match &data {
            None => MarginalSet::from_bundle(truth.bundle(), order)?,
            Some(d) => pmfrec_core::marginals::estimate_marginals(d, order)?,
        };
        let (est, report) = fit(&ms, &config, None)?;
        let est = JointPmfModel::new(est)?;
        out.push(RecoveryTrial {
            order,
            true_rank,
            fit_rank,
            sample_size,
            trial,
            mre_fact: if true_rank == fit_rank {
                Some(sig12(mre_fact(truth.bundle(), est.bundle())?))
            } else {
                None
            },
            mre_ten: sig12(mre_ten(&truth_joint, &est.dense_joint()?)?),
            final_cost: sig12(report.best_cost),
            sweeps: report.sweeps_run,
            termination: report.termination.as_str().into(),
            oracle_mre_fact: oracle.map(|o| sig12(o.0)),
            oracle_mre_ten: oracle.map(|o| sig12(o.1)),
        });
    }
    Ok(out)
}

/// Runs every trial of a recovery experiment on the current rayon pool.
pub fn run_recovery(spec: &RecoverySpec) -> AppResult<RecoveryResults> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for ranks in rank_pairs(spec) {
        for m in sizes(spec) {
            for t in 0..spec.trials {
                jobs.push((ranks, m, t));
            }
        }
    }
    let per_job: Vec<Vec<RecoveryTrial>> = jobs
        .par_iter()
        .map(|&(ranks, m, t)| recovery_job(spec, ranks, m, t))
        .collect::<AppResult<_>>()?;
    let trials: Vec<RecoveryTrial> = per_job.into_iter().flatten().collect();

    let mut cells = Vec::new();
    for &order in &spec.orders {
        for (true_rank, fit_rank) in rank_pairs(spec) {
            for m in sizes(spec) {
                let rows: Vec<&RecoveryTrial> = trials
                    .iter()
                    .filter(|r| r.order == order && r.fit_rank == fit_rank && r.sample_size == m)
                    .collect();
                let collect = |f: &dyn Fn(&RecoveryTrial) -> Option<f64>| -> Vec<f64> {
                    rows.iter().filter_map(|r| f(r)).collect()
                };
                cells.push(RecoveryCell {
                    order,
                    true_rank,
                    fit_rank,
                    sample_size: m,
                    hide_fraction: spec.hide_fraction,
                    trials: rows.len(),
                    converged: rows
                        .iter()
                        .filter(|r| r.termination != Termination::SweepBudget.as_str())
                        .count(),
                    mre_fact: Stats::of(&collect(&|r| r.mre_fact)),
                    mre_ten: Stats::of(&collect(&|r| Some(r.mre_ten))).expect("at least one trial"),
                    oracle_mre_fact: Stats::of(&collect(&|r| r.oracle_mre_fact)),
                    oracle_mre_ten: Stats::of(&collect(&|r| r.oracle_mre_ten)),
                });
            }
        }
    }
    Ok(RecoveryResults {
        format: EXPERIMENT_FORMAT.into(),
        version: crate::formats::FORMAT_VERSION,
        spec: spec.clone(),
        cells,
        trials,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per cell: the table layout of the recovery results.
pub fn write_recovery_table<W: Write>(w: W, results: &RecoveryResults) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "order",
        "true_rank",
        "fit_rank",
        "sample_size",
        "hide_fraction",
        "trials",
        "converged",
        "mre_fact_mean",
        "mre_fact_std",
        "mre_fact_median",
        "mre_ten_mean",
        "mre_ten_std",
        "mre_ten_median",
        "oracle_mre_ten_median",
    ])?;
    for c in &results.cells {
        w.write_record([
            c.order.to_string(),
            c.true_rank.to_string(),
            c.fit_rank.to_string(),
            c.sample_size
                .map(|m| m.to_string())
                .unwrap_or_else(|| "exact".into()),
            c.hide_fraction.to_string(),
            c.trials.to_string(),
            c.converged.to_string(),
            opt(c.mre_fact.map(|s| s.mean)),
            opt(c.mre_fact.map(|s| s.std)),
            opt(c.mre_fact.map(|s| s.median)),
            c.mre_ten.mean.to_string(),
            c.mre_ten.std.to_string(),
            c.mre_ten.median.to_string(),
            opt(c.oracle_mre_ten.map(|s| s.median)),
        ])?;
    }
    w.flush().map_err(AppError::output)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationTrial {
    pub trial: usize,
    pub test_records: usize,
    /// Accuracy of MAP prediction under the fitted model.
    pub fitted_accuracy: f64,
    /// Accuracy of always predicting the training majority class.
    pub majority_accuracy: f64,
    /// Accuracy of MAP prediction under the generating model.
    pub bayes_accuracy: f64,
    /// Test rows whose evidence has zero probability under the fitted model;
    /// they are scored as errors.
    pub zero_probability_rows: usize,
    pub termination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResults {
    pub format: String,
    pub version: u32,
    pub spec: ClassificationSpec,
    pub fitted_accuracy: Stats,
    pub majority_accuracy: Stats,
    pub bayes_accuracy: Stats,
    /// Fitted minus majority accuracy, per trial.
    pub gain_over_majority: Stats,
    pub trials: Vec<ClassificationTrial>,
}

fn map_accuracy(
    model: &JointPmfModel,
    data: &DiscreteDataset,
    target: usize,
) -> AppResult<(f64, usize, usize)> {
    let mut right = 0usize;
    let mut scored = 0usize;
    let mut zero = 0usize;
    for r in 0..data.n_records() {
        let Some(truth) = data.get(r, target) else {
            continue;
        };
        scored += 1;
        let evidence = Evidence::from_record(&data.record(r), target);
        match model.map_predict(target, &evidence) {
            Ok(p) if p == truth => right += 1,
            Ok(_) => {}
            Err(pmfrec_core::Error::ZeroProbabilityEvidence) => zero += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if scored == 0 {
        return Err(AppError::Data(
            "no test record has the target observed".into(),
        ));
    }
    Ok((right as f64 / scored as f64, scored, zero))
}

fn classification_job(spec: &ClassificationSpec, trial: usize) -> AppResult<ClassificationTrial> {
    let seed = derive_seed(spec.seed, trial as u64);
    let target = spec.target();
    let truth = random_model(
        spec.n_vars,
        spec.alphabet,
        spec.true_rank,
        derive_seed(seed, MODEL_STREAM),
    );
    let sample = sample_dataset(&truth, spec.records, derive_seed(seed, SAMPLE_STREAM))?;
    let split = split_indices(
        spec.records,
        1.0 - spec.test_fraction,
        0.0,
        derive_seed(seed, SPLIT_STREAM),
    )?;
    let train = sample.data.select(&split.train);
    let test = sample.data.select(&split.test);

    let ms = pmfrec_core::marginals::estimate_marginals(&train, spec.order)?;
    let config = spec
        .fit
        .config(spec.fit_rank, derive_seed(seed, FIT_STREAM))?;
    let (est, report) = fit(&ms, &config, None)?;
    let est = JointPmfModel::new(est)?;

    let (fitted, scored, zero) = map_accuracy(&est, &test, target)?;
    let (bayes, _, _) = map_accuracy(&truth, &test, target)?;
    let majority = majority_class(&train, target)?;
    let hits = (0..test.n_records())
        .filter(|&r| test.get(r, target) == Some(majority))
        .count();
    Ok(ClassificationTrial {
        trial,
        test_records: scored,
        fitted_accuracy: sig12(fitted),
        majority_accuracy: sig12(hits as f64 / scored as f64),
        bayes_accuracy: sig12(bayes),
        zero_probability_rows: zero,
        termination: report.termination.as_str().into(),
    })
}

pub fn run_classification(spec: &ClassificationSpec) -> AppResult<ClassificationResults> {
    spec.validate()?;
    let trials: Vec<ClassificationTrial> = (0..spec.trials)
        .into_par_iter()
        .map(|t| classification_job(spec, t))
        .collect::<AppResult<_>>()?;
    let col = |f: fn(&ClassificationTrial) -> f64| -> Stats {
        Stats::of(&trials.iter().map(f).collect::<Vec<_>>()).expect("at least one trial")
    };
    Ok(ClassificationResults {
        format: EXPERIMENT_FORMAT.into(),
        version: crate::formats::FORMAT_VERSION,
        spec: spec.clone(),
        fitted_accuracy: col(|t| t.fitted_accuracy),
        majority_accuracy: col(|t| t.majority_accuracy),
        bayes_accuracy: col(|t| t.bayes_accuracy),
        gain_over_majority: col(|t| t.fitted_accuracy - t.majority_accuracy),
        trials,
    })
}

pub fn write_classification_table<W: Write>(
    w: W,
    results: &ClassificationResults,
) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "trial",
        "test_records",
        "fitted_accuracy",
        "majority_accuracy",
        "bayes_accuracy",
        "zero_probability_rows",
    ])?;
    for t in &results.trials {
        w.write_record([
            t.trial.to_string(),
            t.test_records.to_string(),
            t.fitted_accuracy.to_string(),
            t.majority_accuracy.to_string(),
            t.bayes_accuracy.to_string(),
            t.zero_probability_rows.to_string(),
        ])?;
    }
    w.flush().map_err(AppError::output)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentResults {
    Recovery(RecoveryResults),
    Classification(ClassificationResults),
}

pub fn run(spec: &ExperimentSpec) -> AppResult<ExperimentResults> {
    Ok(match spec {
        ExperimentSpec::Recovery(s) => ExperimentResults::Recovery(run_recovery(s)?),
        ExperimentSpec::Classification(s) => {
            ExperimentResults::Classification(run_classification(s)?)
        }
    })
}

pub fn write_table<W: Write>(w: W, results: &ExperimentResults) -> AppResult<()> {
    match results {
        ExperimentResults::Recovery(r) => write_recovery_table(w, r),
        ExperimentResults::Classification(r) => write_classification_table(w, r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RecoverySpec {
        RecoverySpec {
            n_vars: 4,
            alphabet: 3,
            true_rank: None,
            fit_ranks: vec![2],
            orders: vec![3],
            sample_sizes: vec![],
            hide_fraction: 0.0,
            trials: 3,
            seed: 5,
            fit: FitSettings {
                max_sweeps: Some(300),
                ..FitSettings::default()
            },
        }
    }

    #[test]
    fn stats_by_hand() {
        let s = Stats::of(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 10.0);
        // deviations -3,-2,-1,6 → 50/3
        assert!((s.std - (50.0f64 / 3.0).sqrt()).abs() < 1e-11);
        assert_eq!(Stats::of(&[7.0]).unwrap().std, 0.0);
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn spec_validation() {
        assert!(small().validate().is_ok());
        let mut s = small();
        s.orders = vec![5];
        assert!(matches!(s.validate(), Err(AppError::Usage(_))));
        let mut s = small();
        s.hide_fraction = 0.2;
        assert!(s.validate().is_err());
        s.sample_sizes = vec![100];
        assert!(s.validate().is_ok());
        s.hide_fraction = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_json_uses_kind_tag() {
        let text = r#"{"kind":"recovery","n_vars":4,"alphabet":3,"fit_ranks":[2],"orders":[3],"trials":2}"#;
        let spec: ExperimentSpec = serde_json::from_str(text).unwrap();
        let ExperimentSpec::Recovery(r) = spec else {
            panic!()
        };
        assert_eq!(r.sample_sizes, Vec::<usize>::new());
        assert_eq!(r.seed, 0);
        assert!(
            serde_json::from_str::<ExperimentSpec>(r#"{"kind":"recovery","bogus":1}"#).is_err()
        );
    }

    #[test]
    fn recovery_is_deterministic_and_shaped() {
        let mut spec = small();
        spec.orders = vec![2, 3];
        spec.sample_sizes = vec![200, 400];
        spec.hide_fraction = 0.1;
        let a = run_recovery(&spec).unwrap();
        let b = run_recovery(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 4);
        assert_eq!(a.trials.len(), 2 * 2 * 3);
        let c = a.cell(3, 2, Some(400)).unwrap();
        assert_eq!(c.trials, 3);
        assert!(c.oracle_mre_ten.is_some());
        let mut buf = Vec::new();
        write_recovery_table(&mut buf, &a).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn mismatched_rank_has_no_factor_error() {
        let mut spec = small();
        spec.true_rank = Some(3);
        spec.trials = 1;
        let r = run_recovery(&spec).unwrap();
        assert!(r.trials[0].mre_fact.is_none());
        assert!(r.cells[0].mre_fact.is_none());
    }

    #[test]
    fn classification_runs() {
        let spec = ClassificationSpec {
            n_vars: 4,
            alphabet: 3,
            true_rank: 2,
            fit_rank: 2,
            order: 3,
            records: 500,
            test_fraction: 0.2,
            target: None,
            trials: 2,
            seed: 1,
            fit: FitSettings {
                max_sweeps: Some(200),
                tol: Some(1e-8),
                ..FitSettings::default()
            },
        };
        let r = run_classification(&spec).unwrap();
        assert_eq!(r.trials.len(), 2);
        assert_eq!(r.trials[0].test_records, 100);
        for t in &r.trials {
            assert!((0.0..=1.0).contains(&t.fitted_accuracy));
        }
        assert_eq!(r, run_classification(&spec).unwrap());
    }
}
