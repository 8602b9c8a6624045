//! Inference on a recovered naive Bayes / CPD model.
//!
//! `A_n(i, f) = Pr(X_n = i | H = f)` and `λ(f) = Pr(H = f)`. Nothing here
//! materializes the joint: every query costs `O(N·F)` per target value.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{synthesize, DenseTensor, FactorBundle, Matrix, SIMPLEX_TOL};
use crate::{Error, Result};

/// Above this many observed variables evidence likelihoods are accumulated in
/// log space.
pub const LOG_SPACE_THRESHOLD: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct JointPmfModel {
    bundle: FactorBundle,
}

/// Observed values, keyed by variable (both zero-based).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evidence {
    observed: BTreeMap<usize, usize>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: usize, category: usize) -> Self {
        self.observed.insert(var, category);
        self
    }

    pub fn insert(&mut self, var: usize, category: usize) {
        self.observed.insert(var, category);
    }

    /// Evidence from a dataset record, leaving out `target` and missing cells.
    pub fn from_record(record: &[Option<usize>], target: usize) -> Self {
        let observed = record
            .iter()
            .enumerate()
            .filter(|&(v, _)| v != target)
            .filter_map(|(v, c)| c.map(|c| (v, c)))
            .collect();
        Self { observed }
    }

    pub fn get(&self, var: usize) -> Option<usize> {
        self.observed.get(&var).copied()
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.observed.iter().map(|(&v, &c)| (v, c))
    }
}

impl JointPmfModel {
    pub fn new(bundle: FactorBundle) -> Result<Self> {
        bundle.validate(SIMPLEX_TOL)?;
        Ok(Self { bundle })
    }

    pub fn bundle(&self) -> &FactorBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> FactorBundle {
        self.bundle
    }

    pub fn n_vars(&self) -> usize {
        self.bundle.n_vars()
    }

    pub fn rank(&self) -> usize {
        self.bundle.rank()
    }

    pub fn alphabet_sizes(&self) -> Vec<usize> {
        self.bundle.alphabet_sizes()
    }

    /// Dense joint PMF; only for small models.
    pub fn dense_joint(&self) -> Result<DenseTensor> {
        synthesize(&self.bundle)
    }

    /// `Pr(X = assignment)` for a full zero-based assignment.
    pub fn joint_prob(&self, assignment: &[usize]) -> Result<f64> {
        if assignment.len() != self.n_vars() {
            return Err(Error::Shape(format!(
                "assignment has {} values for {} variables",
                assignment.len(),
                self.n_vars()
            )));
        }
        let mut weights = self.bundle.loadings().to_vec();
        for (n, &i) in assignment.iter().enumerate() {
            let a = self.checked_factor(n, i)?;
            for (f, w) in weights.iter_mut().enumerate() {
                *w *= a.get(i, f);
            }
        }
        Ok(math::sum(&weights))
    }

    fn checked_factor(&self, var: usize, category: usize) -> Result<&Matrix> {
        let a = self
            .bundle
            .factors()
            .get(var)
            .ok_or_else(|| Error::OutOfRange(format!("variable {var}")))?;
        if category >= a.rows() {
            return Err(Error::OutOfRange(format!(
                "category {category} of variable {var} (alphabet size {})",
                a.rows()
            )));
        }
        Ok(a)
    }

    /// `Pr(H = f | evidence)` up to normalization is `λ(f) Π A_v(c, f)`;
    /// returns it normalized.
    pub fn latent_posterior(&self, evidence: &Evidence) -> Result<Vec<f64>> {
        let rank = self.rank();
        let mut weights = if evidence.len() > LOG_SPACE_THRESHOLD {
            let mut logw: Vec<f64> = self
                .bundle
                .loadings()
                .iter()
                .map(|&l| math::ln(l))
                .collect();
            for (v, c) in evidence.iter() {
                let a = self.checked_factor(v, c)?;
                for (f, lw) in logw.iter_mut().enumerate() {
                    *lw += math::ln(a.get(c, f));
                }
            }
            let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if top == f64::NEG_INFINITY {
                return Err(Error::ZeroProbabilityEvidence);
            }
            logw.iter().map(|&lw| math::exp(lw - top)).collect()
        } else {
            let mut w = self.bundle.loadings().to_vec();
            for (v, c) in evidence.iter() {
                let a = self.checked_factor(v, c)?;
                for (f, wf) in w.iter_mut().enumerate() {
                    *wf *= a.get(c, f);
                }
            }
            w
        };
        let total = math::sum(&weights);
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroProbabilityEvidence);
        }
        debug_assert_eq!(weights.len(), rank);
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(weights)
    }

    /// `Pr(X_target = v | evidence)` for every `v`. Unobserved non-target
    /// variables are summed out implicitly because factor columns sum to one.
    pub fn posterior_over(&self, target: usize, evidence: &Evidence) -> Result<Vec<f64>> {
        if target >= self.n_vars() {
            return Err(Error::OutOfRange(format!("target variable {target}")));
        }
        if evidence.get(target).is_some() {
            return Err(Error::InvalidInput(format!(
                "target {target} is part of the evidence"
            )));
        }
        let h = self.latent_posterior(evidence)?;
        let a = self.bundle.factor(target);
        let mut post: Vec<f64> = (0..a.rows())
            .map(|v| h.iter().enumerate().map(|(f, &p)| a.get(v, f) * p).sum())
            .collect();
        let total = math::sum(&post);
        post.iter_mut().for_each(|p| *p /= total);
        Ok(post)
    }

    /// Most probable target value; ties go to the smallest category.
    pub fn map_predict(&self, target: usize, evidence: &Evidence) -> Result<usize> {
        Ok(argmax_first(&self.posterior_over(target, evidence)?))
    }

    /// Expected one-based category code, `Σ_v (v+1) Pr(X_target = v | evidence)`.
    pub fn conditional_expectation(&self, target: usize, evidence: &Evidence) -> Result<f64> {
        Ok(expected_code(&self.posterior_over(target, evidence)?))
    }

    /// Univariate marginal `A_n λ`.
    pub fn marginal(&self, var: usize) -> Result<Vec<f64>> {
        self.posterior_over(var, &Evidence::new())
    }
}

/// Index of the largest entry, first one on ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Expectation of the one-based code under a distribution over codes.
pub fn expected_code(dist: &[f64]) -> f64 {
    dist.iter()
        .enumerate()
        .map(|(v, &p)| (v + 1) as f64 * p)
        .sum()
}

/// Exact naive Bayes representation of any PMF tensor of order ≥ 3.
///
/// The mode `k` with the largest alphabet supplies the fibers: each fiber
/// `X(.., :, ..)` along `k` becomes one component whose loading is the fiber
/// mass and whose mode-`k` column is the normalized fiber; every other factor
/// is a 0/1 indicator of the fiber's position. This yields
/// `min_k Π_{n≠k} I_n` components. Zero-mass fibers get a uniform column and
/// zero loading.
pub fn construct_trivial_cpd(t: &DenseTensor) -> Result<FactorBundle> {
    if t.order() < 3 {
        return Err(Error::InvalidInput(format!(
            "construction needs an order of at least 3, got {}",
            t.order()
        )));
    }
    t.validate_pmf(SIMPLEX_TOL)?;
    let shape = t.shape();
    let fiber_mode = argmax_first(&shape.iter().map(|&d| d as f64).collect::<Vec<_>>());
    let fiber_len = shape[fiber_mode];
    let rank = t.len() / fiber_len;

    let mut factors: Vec<Matrix> = shape.iter().map(|&d| Matrix::zeros(d, rank)).collect();
    let mut loadings = vec![0.0; rank];
    let other_modes: Vec<usize> = (0..shape.len()).filter(|&k| k != fiber_mode).collect();
    let mode_stride: usize = shape[..fiber_mode].iter().product();

    let mut other_idx = vec![0usize; other_modes.len()];
    for c in 0..rank {
        // linear offset of the fiber start
        let mut base = 0;
        let mut stride = 1;
        let mut oi = 0;
        for (k, &d) in shape.iter().enumerate() {
            if k != fiber_mode {
                base += other_idx[oi] * stride;
                oi += 1;
            }
            stride *= d;
        }
        let fiber: Vec<f64> = (0..fiber_len)
            .map(|i| t.data()[base + i * mode_stride])
            .collect();
        let mass = math::sum(&fiber);
        loadings[c] = mass;
        let col = factors[fiber_mode].col_mut(c);
        if mass > 0.0 {
            for (dst, &x) in col.iter_mut().zip(&fiber) {
                *dst = x / mass;
            }
        } else {
            col.iter_mut().for_each(|x| *x = 1.0 / fiber_len as f64);
        }
        for (&k, &i) in other_modes.iter().zip(&other_idx) {
            factors[k].set(i, c, 1.0);
        }
        for (i, &k) in other_idx.iter_mut().zip(&other_modes) {
            *i += 1;
            if *i < shape[k] {
                break;
            }
            *i = 0;
        }
    }
    // loadings sum to the tensor total, already checked to be one within tolerance
    FactorBundle::new(loadings, factors)
}
