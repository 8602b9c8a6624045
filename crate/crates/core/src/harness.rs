//! Synthetic models, sampling, baselines, and error metrics for recovery
//! experiments.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::min_cost_assignment;
use crate::marginals::DiscreteDataset;
use crate::math;
use crate::model::JointPmfModel;
use crate::tensor::{DenseTensor, FactorBundle, Matrix, DEFAULT_ELEMENT_BUDGET};
use crate::{Error, Result};

/// Seed for stream `stream` derived from a master seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform(0,1) entries, each column normalized to sum to one.
pub(crate) fn random_stochastic(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for c in 0..cols {
        let col = m.col_mut(c);
        loop {
            col.iter_mut().for_each(|v| *v = rng.random::<f64>());
            let s = math::sum(col);
            if s > 0.0 {
                col.iter_mut().for_each(|v| *v /= s);
                break;
            }
        }
    }
    m
}

/// Random bundle with the given alphabets: factors first (variable order),
/// then the loadings.
pub fn random_bundle(alphabet_sizes: &[usize], rank: usize, seed: u64) -> Result<FactorBundle> {
    if rank == 0 || alphabet_sizes.is_empty() || alphabet_sizes.contains(&0) {
        return Err(Error::InvalidInput(
            "rank, variable count and alphabets must be positive".into(),
        ));
    }
    let mut rng = rng(seed);
    let factors = alphabet_sizes
        .iter()
        .map(|&d| random_stochastic(d, rank, &mut rng))
        .collect();
    let loadings = random_stochastic(rank, 1, &mut rng).into_data();
    FactorBundle::new(loadings, factors)
}

/// Random model with `n_vars` variables of alphabet `alphabet`. All sizes
/// must be positive (panics otherwise).
pub fn random_model(n_vars: usize, alphabet: usize, rank: usize, seed: u64) -> JointPmfModel {
    let bundle = random_bundle(&vec![alphabet; n_vars], rank, seed).expect("positive sizes");
    JointPmfModel::new(bundle).expect("random bundles are valid")
}

/// A sampled dataset together with the latent state of each record.
#[derive(Debug, Clone)]
pub struct Sample {
    pub data: DiscreteDataset,
    pub latent: Vec<usize>,
}

fn cumulative(values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

/// Inverse-CDF draw; never returns a zero-probability category.
fn draw(cdf: &[f64], pmf: &[f64], u: f64) -> usize {
    let total = cdf[cdf.len() - 1];
    let target = u * total;
    match cdf.iter().position(|&c| c > target) {
        Some(i) if pmf[i] > 0.0 => i,
        _ => pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0),
    }
}

/// Ancestral sampling: `h ~ λ`, then each variable from `A_n(:, h)`.
pub fn sample_dataset(model: &JointPmfModel, records: usize, seed: u64) -> Result<Sample> {
    if records == 0 {
        return Err(Error::InvalidInput("cannot sample an empty dataset".into()));
    }
    let b = model.bundle();
    let mut rng = rng(seed);
    let lam_cdf = cumulative(b.loadings());
    let cdfs: Vec<Vec<Vec<f64>>> = b
        .factors()
        .iter()
        .map(|a| (0..a.cols()).map(|f| cumulative(a.col(f))).collect())
        .collect();
    let mut data = DiscreteDataset::with_alphabets(b.alphabet_sizes())?;
    let mut latent = Vec::with_capacity(records);
    let mut row = vec![None; b.n_vars()];
    for _ in 0..records {
        let h = draw(&lam_cdf, b.loadings(), rng.random::<f64>());
        for (n, cell) in row.iter_mut().enumerate() {
            let a = b.factor(n);
            *cell = Some(draw(&cdfs[n][h], a.col(h), rng.random::<f64>()));
        }
        data.push_record(&row)?;
        latent.push(h);
    }
    Ok(Sample { data, latent })
}

/// Marks `round(fraction · M · N)` cells, chosen uniformly without
/// replacement, as missing.
pub fn hide_entries(data: &DiscreteDataset, fraction: f64, seed: u64) -> Result<DiscreteDataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "hide fraction {fraction} is not in [0, 1)"
        )));
    }
    let n_cells = data.n_records() * data.n_vars();
    let count = math::round(fraction * n_cells as f64) as usize;
    let mut out = data.clone();
    let mut rng = rng(seed);
    for cell in index::sample(&mut rng, n_cells, count) {
        out.set(cell / data.n_vars(), cell % data.n_vars(), None)?;
    }
    Ok(out)
}

/// Component permutation `perm` (estimate column `perm[f]` ↔ truth column
/// `f`) minimizing `Σ_n ‖A_n(:,f) − Â_n(:,perm[f])‖² / ‖A_n‖_F²` summed over
/// components, by optimal assignment.
pub fn match_components(truth: &FactorBundle, est: &FactorBundle) -> Result<Vec<usize>> {
    if truth.rank() != est.rank() || truth.alphabet_sizes() != est.alphabet_sizes() {
        return Err(Error::Shape(format!(
            "cannot compare rank-{} model over {:?} with rank-{} model over {:?}",
            truth.rank(),
            truth.alphabet_sizes(),
            est.rank(),
            est.alphabet_sizes()
        )));
    }
    let rank = truth.rank();
    let mut cost = vec![vec![0.0; rank]; rank];
    for (a, ahat) in truth.factors().iter().zip(est.factors()) {
        let scale = math::norm_sq(a.data());
        for (f, row) in cost.iter_mut().enumerate() {
            for (g, c) in row.iter_mut().enumerate() {
                let d: f64 = a
                    .col(f)
                    .iter()
                    .zip(ahat.col(g))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                *c += d / scale;
            }
        }
    }
    Ok(min_cost_assignment(&cost))
}

/// Mean relative factor error after fixing the permutation ambiguity:
/// `(1/N) Σ_n ‖A_n − Â_n Π‖_F / ‖A_n‖_F`.
pub fn mre_fact(truth: &FactorBundle, est: &FactorBundle) -> Result<f64> {
    let perm = match_components(truth, est)?;
    Ok(mre_fact_with(truth, est, &perm))
}

pub(crate) fn mre_fact_with(truth: &FactorBundle, est: &FactorBundle, perm: &[usize]) -> f64 {
    let total: f64 = truth
        .factors()
        .iter()
        .zip(est.factors())
        .map(|(a, ahat)| {
            let err: f64 = perm
                .iter()
                .enumerate()
                .map(|(f, &g)| {
                    a.col(f)
                        .iter()
                        .zip(ahat.col(g))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                })
                .sum();
            math::sqrt(err) / a.frobenius_norm()
        })
        .sum();
    total / truth.n_vars() as f64
}

/// `‖X − X̂‖_F / ‖X‖_F`.
pub fn mre_ten(truth: &DenseTensor, est: &DenseTensor) -> Result<f64> {
    if truth.shape() != est.shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            truth.shape(),
            est.shape()
        )));
    }
    let norm = truth.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::InvalidInput("reference tensor is zero".into()));
    }
    let diff: f64 = truth
        .data()
        .iter()
        .zip(est.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(math::sqrt(diff) / norm)
}

/// Frequency estimates given the true latent state of every record:
/// `A_n(i, f) = count(x_n = i, h = f) / count(x_n observed, h = f)` and
/// `λ(f) = count(h = f) / M`. States never seen get zero loading and uniform
/// conditionals.
pub fn oracle_mle(data: &DiscreteDataset, latent: &[usize], rank: usize) -> Result<JointPmfModel> {
    if latent.len() != data.n_records() {
        return Err(Error::Shape(format!(
            "{} latent labels for {} records",
            latent.len(),
            data.n_records()
        )));
    }
    if rank == 0 || data.n_records() == 0 {
        return Err(Error::InvalidInput(
            "oracle estimate needs records and a positive rank".into(),
        ));
    }
    if let Some(&h) = latent.iter().find(|&&h| h >= rank) {
        return Err(Error::OutOfRange(format!(
            "latent label {h} for rank {rank}"
        )));
    }
    let mut state_counts = vec![0u64; rank];
    let mut counts: Vec<Vec<u64>> = data
        .alphabet_sizes()
        .iter()
        .map(|&d| vec![0; d * rank])
        .collect();
    for (r, &h) in latent.iter().enumerate() {
        state_counts[h] += 1;
        for (n, c) in counts.iter_mut().enumerate() {
            if let Some(i) = data.get(r, n) {
                c[i + h * data.alphabet_sizes()[n]] += 1;
            }
        }
    }
    let m = data.n_records() as f64;
    let loadings = state_counts.iter().map(|&c| c as f64 / m).collect();
    let factors = counts
        .iter()
        .zip(data.alphabet_sizes())
        .map(|(c, &d)| {
            let mut a = Matrix::zeros(d, rank);
            for f in 0..rank {
                let col = &c[f * d..(f + 1) * d];
                let total: u64 = col.iter().sum();
                for (i, &k) in col.iter().enumerate() {
                    let v = if total > 0 {
                        k as f64 / total as f64
                    } else {
                        1.0 / d as f64
                    };
                    a.set(i, f, v);
                }
            }
            a
        })
        .collect();
    JointPmfModel::new(FactorBundle::new(loadings, factors)?)
}

/// Normalized histogram of the fully observed records.
pub fn empirical_joint(data: &DiscreteDataset) -> Result<DenseTensor> {
    let shape = data.alphabet_sizes().to_vec();
    let mut t = DenseTensor::zeros_with_budget(&shape, DEFAULT_ELEMENT_BUDGET)?;
    let mut complete = 0u64;
    let mut counts = vec![0u64; t.len()];
    for r in 0..data.n_records() {
        if !data.is_fully_observed(r) {
            continue;
        }
        let mut lin = 0;
        let mut stride = 1;
        for (n, &d) in shape.iter().enumerate() {
            lin += data.get(r, n).unwrap_or(0) * stride;
            stride *= d;
        }
        counts[lin] += 1;
        complete += 1;
    }
    if complete == 0 {
        return Err(Error::InvalidInput("no fully observed record".into()));
    }
    for (v, &c) in t.data_mut().iter_mut().zip(&counts) {
        *v = c as f64 / complete as f64;
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionTask {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionMetrics {
    pub count: usize,
    pub rmse: f64,
    pub mae: f64,
    /// Fraction of exact mismatches; classification only.
    pub misclassification: Option<f64>,
}

pub fn eval_metrics(
    predictions: &[f64],
    truth: &[f64],
    task: PredictionTask,
) -> Result<PredictionMetrics> {
    if predictions.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    let n = truth.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut wrong = 0usize;
    for (&p, &t) in predictions.iter().zip(truth) {
        let d = p - t;
        sq += d * d;
        abs += d.abs();
        if p != t {
            wrong += 1;
        }
    }
    Ok(PredictionMetrics {
        count: truth.len(),
        rmse: math::sqrt(sq / n),
        mae: abs / n,
        misclassification: match task {
            PredictionTask::Classification => Some(wrong as f64 / n),
            PredictionTask::Regression => None,
        },
    })
}

/// Shuffled train/validation/test record indices; the default split used for
/// rank selection is 70/10/20.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(records: usize, train: f64, validation: f64, seed: u64) -> Result<Split> {
    if !(train > 0.0 && validation >= 0.0 && train + validation <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "split fractions {train}/{validation}"
        )));
    }
    let mut rng = rng(seed);
    let order: Vec<usize> = index::sample(&mut rng, records, records).into_vec();
    let n_train = math::round(train * records as f64) as usize;
    let n_val = (math::round(validation * records as f64) as usize).min(records - n_train);
    Ok(Split {
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

/// Share of records whose `target` equals the most common observed target
/// value in `reference` (the majority-class baseline).
pub fn majority_class(reference: &DiscreteDataset, target: usize) -> Result<usize> {
    let mut counts = vec![0u64; reference.alphabet_sizes()[target]];
    for r in 0..reference.n_records() {
        if let Some(c) = reference.get(r, target) {
            counts[c] += 1;
        }
    }
    let best = counts.iter().enumerate().fold(
        (0usize, 0u64),
        |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc },
    );
    if best.1 == 0 {
        return Err(Error::InvalidInput(format!(
            "target {target} is never observed"
        )));
    }
    Ok(best.0)
}
