//! Categorical datasets with missing cells and their empirical marginals.
//!
//! Variables and categories are zero-based here. File formats in the
//! companion crate use one-based category codes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{synthesize_parts, DenseTensor, FactorBundle, Matrix, DEFAULT_ELEMENT_BUDGET};
use crate::{Error, Result};

/// `M` records over `N` categorical variables, each cell observed or missing.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDataset {
    alphabet_sizes: Vec<usize>,
    // row-major, `None` = missing
    cells: Vec<Option<u32>>,
}

impl DiscreteDataset {
    /// Empty dataset; records are added with [`push_record`](Self::push_record).
    pub fn with_alphabets(alphabet_sizes: Vec<usize>) -> Result<Self> {
        if alphabet_sizes.is_empty() {
            return Err(Error::InvalidInput(
                "a dataset needs at least one variable".into(),
            ));
        }
        if let Some(n) = alphabet_sizes
            .iter()
            .position(|&a| a == 0 || a > u32::MAX as usize)
        {
            return Err(Error::InvalidInput(format!(
                "variable {n} has an invalid alphabet size"
            )));
        }
        Ok(Self {
            alphabet_sizes,
            cells: Vec::new(),
        })
    }

    pub fn from_records(
        alphabet_sizes: Vec<usize>,
        records: &[Vec<Option<usize>>],
    ) -> Result<Self> {
        let mut d = Self::with_alphabets(alphabet_sizes)?;
        for r in records {
            d.push_record(r)?;
        }
        Ok(d)
    }

    pub fn push_record(&mut self, record: &[Option<usize>]) -> Result<()> {
        if record.len() != self.n_vars() {
            return Err(Error::Shape(format!(
                "record has {} cells, dataset has {} variables",
                record.len(),
                self.n_vars()
            )));
        }
        for (n, (cell, &size)) in record.iter().zip(&self.alphabet_sizes).enumerate() {
            if let Some(c) = *cell {
                if c >= size {
                    return Err(Error::OutOfRange(format!(
                        "category {c} of variable {n} exceeds alphabet size {size}"
                    )));
                }
            }
        }
        self.cells
            .extend(record.iter().map(|c| c.map(|v| v as u32)));
        Ok(())
    }

    #[inline]
    pub fn n_vars(&self) -> usize {
        self.alphabet_sizes.len()
    }

    #[inline]
    pub fn n_records(&self) -> usize {
        self.cells.len() / self.n_vars()
    }

    pub fn alphabet_sizes(&self) -> &[usize] {
        &self.alphabet_sizes
    }

    #[inline]
    pub fn get(&self, record: usize, var: usize) -> Option<usize> {
        self.cells[record * self.n_vars() + var].map(|c| c as usize)
    }

    pub fn set(&mut self, record: usize, var: usize, value: Option<usize>) -> Result<()> {
        if let Some(c) = value {
            if c >= self.alphabet_sizes[var] {
                return Err(Error::OutOfRange(format!("category {c} of variable {var}")));
            }
        }
        let n = self.n_vars();
        self.cells[record * n + var] = value.map(|c| c as u32);
        Ok(())
    }

    pub fn record(&self, record: usize) -> Vec<Option<usize>> {
        (0..self.n_vars()).map(|v| self.get(record, v)).collect()
    }

    pub fn records(&self) -> impl Iterator<Item = Vec<Option<usize>>> + '_ {
        (0..self.n_records()).map(|r| self.record(r))
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn is_fully_observed(&self, record: usize) -> bool {
        let n = self.n_vars();
        self.cells[record * n..(record + 1) * n]
            .iter()
            .all(Option::is_some)
    }

    /// Dataset restricted to the given records, in the given order.
    pub fn select(&self, records: &[usize]) -> DiscreteDataset {
        let n = self.n_vars();
        let mut cells = Vec::with_capacity(records.len() * n);
        for &r in records {
            cells.extend_from_slice(&self.cells[r * n..(r + 1) * n]);
        }
        DiscreteDataset {
            alphabet_sizes: self.alphabet_sizes.clone(),
            cells,
        }
    }
}

/// One stored marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalEntry {
    pub tensor: DenseTensor,
    /// Records fully observed on the tuple; `None` for population marginals
    /// computed from a known model.
    pub support: Option<u64>,
    /// Weight of this tuple's residual in the fitting objective.
    pub weight: f64,
}

impl MarginalEntry {
    /// Tuples without a single jointly observed record carry no information
    /// and are left out of the fit.
    pub fn is_empty(&self) -> bool {
        self.support == Some(0)
    }
}

/// Marginal PMFs of every stored variable tuple (strictly increasing indices).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSet {
    order: usize,
    alphabet_sizes: Vec<usize>,
    entries: BTreeMap<Vec<usize>, MarginalEntry>,
}

impl MarginalSet {
    pub fn new(order: usize, alphabet_sizes: Vec<usize>) -> Result<Self> {
        if order == 0 || order > alphabet_sizes.len() {
            return Err(Error::InvalidInput(format!(
                "marginal order {order} is not in 1..={}",
                alphabet_sizes.len()
            )));
        }
        Ok(Self {
            order,
            alphabet_sizes,
            entries: BTreeMap::new(),
        })
    }

    /// Population marginals of a known model, one per `order`-tuple.
    pub fn from_bundle(bundle: &FactorBundle, order: usize) -> Result<Self> {
        let mut set = Self::new(order, bundle.alphabet_sizes())?;
        for vars in combinations(bundle.n_vars(), order) {
            let factors: Vec<&Matrix> = vars.iter().map(|&v| bundle.factor(v)).collect();
            let tensor = synthesize_parts(bundle.loadings(), &factors, DEFAULT_ELEMENT_BUDGET)?;
            set.insert(
                vars,
                MarginalEntry {
                    tensor,
                    support: None,
                    weight: 1.0,
                },
            )?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, vars: Vec<usize>, entry: MarginalEntry) -> Result<()> {
        if vars.len() != self.order {
            return Err(Error::Shape(format!(
                "tuple {vars:?} does not have order {}",
                self.order
            )));
        }
        if vars.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "tuple {vars:?} is not strictly increasing"
            )));
        }
        if let Some(&v) = vars.iter().find(|&&v| v >= self.n_vars()) {
            return Err(Error::OutOfRange(format!("variable {v} in tuple {vars:?}")));
        }
        let expected: Vec<usize> = vars.iter().map(|&v| self.alphabet_sizes[v]).collect();
        if entry.tensor.shape() != expected.as_slice() {
            return Err(Error::Shape(format!(
                "tensor for {vars:?} has shape {:?}, expected {expected:?}",
                entry.tensor.shape()
            )));
        }
        if !(entry.weight >= 0.0) || !entry.weight.is_finite() {
            return Err(Error::InvalidInput(format!(
                "weight {} for {vars:?}",
                entry.weight
            )));
        }
        self.entries.insert(vars, entry);
        Ok(())
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn n_vars(&self) -> usize {
        self.alphabet_sizes.len()
    }

    pub fn alphabet_sizes(&self) -> &[usize] {
        &self.alphabet_sizes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Holds every `C(N, order)` tuple.
    pub fn is_complete(&self) -> bool {
        self.entries.len() == binomial(self.n_vars(), self.order)
    }

    pub fn get(&self, vars: &[usize]) -> Option<&MarginalEntry> {
        self.entries.get(vars)
    }

    pub fn get_mut(&mut self, vars: &[usize]) -> Option<&mut MarginalEntry> {
        self.entries.get_mut(vars)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, &MarginalEntry)> {
        self.entries.iter()
    }

    /// Entries that take part in fitting: nonempty support and positive weight.
    pub fn fitted_entries(&self) -> impl Iterator<Item = (&Vec<usize>, &MarginalEntry)> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.is_empty() && e.weight > 0.0)
    }

    /// Checks that every nonempty entry is a PMF.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (vars, e) in self.fitted_entries() {
            e.tensor
                .validate_pmf(tol)
                .map_err(|err| Error::InvalidInput(format!("marginal {vars:?}: {err}")))?;
        }
        Ok(())
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All strictly increasing `k`-tuples from `0..n`, lexicographic.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Co-occurrence marginals of every `order`-tuple. A record counts toward a
/// tuple only when all of the tuple's cells are observed; tuples with no such
/// record are stored with zero support and an all-zero tensor.
pub fn estimate_marginals(data: &DiscreteDataset, order: usize) -> Result<MarginalSet> {
    if order == 0 || order > data.n_vars() {
        return Err(Error::InvalidInput(format!(
            "marginal order {order} exceeds the {} available variables",
            data.n_vars()
        )));
    }
    let mut set = MarginalSet::new(order, data.alphabet_sizes().to_vec())?;
    for vars in combinations(data.n_vars(), order) {
        let entry = estimate_tuple(data, &vars)?;
        set.insert(vars, entry)?;
    }
    Ok(set)
}

/// Empirical marginal of a single tuple of variables.
pub fn estimate_tuple(data: &DiscreteDataset, vars: &[usize]) -> Result<MarginalEntry> {
    let shape: Vec<usize> = vars.iter().map(|&v| data.alphabet_sizes()[v]).collect();
    let mut tensor = DenseTensor::zeros(&shape)?;
    let mut strides = Vec::with_capacity(shape.len());
    let mut s = 1;
    for &d in &shape {
        strides.push(s);
        s *= d;
    }
    let mut counts = vec![0u64; tensor.len()];
    let mut support = 0u64;
    'records: for r in 0..data.n_records() {
        let mut lin = 0;
        for (&v, &stride) in vars.iter().zip(&strides) {
            match data.get(r, v) {
                Some(c) => lin += c * stride,
                None => continue 'records,
            }
        }
        counts[lin] += 1;
        support += 1;
    }
    if support > 0 {
        let total = support as f64;
        for (t, &c) in tensor.data_mut().iter_mut().zip(&counts) {
            *t = c as f64 / total;
        }
    }
    Ok(MarginalEntry {
        tensor,
        support: Some(support),
        weight: 1.0,
    })
}

/// Sums out every mode not in `keep` (strictly increasing, zero-based).
pub fn marginalize_tensor(t: &DenseTensor, keep: &[usize]) -> Result<DenseTensor> {
    if keep.is_empty() {
        return Err(Error::InvalidInput("at least one mode must be kept".into()));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) || keep[keep.len() - 1] >= t.order() {
        return Err(Error::InvalidInput(format!(
            "keep set {keep:?} is not an increasing subset of 0..{}",
            t.order()
        )));
    }
    let out_shape: Vec<usize> = keep.iter().map(|&k| t.shape()[k]).collect();
    let mut out = DenseTensor::zeros_with_budget(&out_shape, usize::MAX)?;
    let mut out_strides = vec![0usize; t.order()];
    let mut s = 1;
    for &k in keep {
        out_strides[k] = s;
        s *= t.shape()[k];
    }
    let mut idx = vec![0usize; t.order()];
    let mut pos = 0usize;
    for &v in t.data() {
        out.data_mut()[pos] += v;
        for (k, i) in idx.iter_mut().enumerate() {
            *i += 1;
            pos += out_strides[k];
            if *i < t.shape()[k] {
                break;
            }
            pos -= out_strides[k] * t.shape()[k];
            *i = 0;
        }
    }
    Ok(out)
}
