//! Dense multiway arrays and the CPD kernels built on them.
//!
//! Tensors are stored first-index-fastest: the entry `(i_1, .., i_K)` (zero
//! based) lives at `Σ_k i_k · J_k` with `J_k = Π_{m<k} I_m`. Matrices are
//! column-major, which is the same convention for two-way arrays.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Largest number of entries a dense tensor may hold unless a caller passes
/// its own budget.
pub const DEFAULT_ELEMENT_BUDGET: usize = 100_000_000;

/// Tolerance used when checking simplex membership of factors and loadings.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices; convenient in tests and fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let mut m = Self::zeros(n_rows, n_cols);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape("columns of unequal length".into()));
        }
        let data = columns.iter().flatten().copied().collect();
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row + col * self.rows]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row + col * self.rows] = value;
    }

    pub fn col(&self, col: usize) -> &[f64] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn col_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            for k in 0..self.cols {
                let b = rhs.get(k, j);
                if b == 0.0 {
                    continue;
                }
                let a_col = self.col(k);
                let out_col = out.col_mut(j);
                for (o, &a) in out_col.iter_mut().zip(a_col) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `AᵀA`.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for a in 0..self.cols {
            for b in a..self.cols {
                let v: f64 = self
                    .col(a)
                    .iter()
                    .zip(self.col(b))
                    .map(|(x, y)| x * y)
                    .sum();
                g.set(a, b, v);
                g.set(b, a, v);
            }
        }
        g
    }

    /// Elementwise product.
    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Shape("hadamard operands differ in shape".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale_columns(&mut self, weights: &[f64]) {
        for (j, &w) in weights.iter().enumerate().take(self.cols) {
            for v in self.col_mut(j) {
                *v *= w;
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(math::norm_sq(&self.data))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Whether every column is a probability vector.
    pub fn is_column_stochastic(&self, tol: f64) -> bool {
        (0..self.cols).all(|j| is_probability_vector(self.col(j), tol))
    }
}

pub(crate) fn is_probability_vector(v: &[f64], tol: f64) -> bool {
    v.iter().all(|&x| x >= 0.0 && x.is_finite()) && (math::sum(v) - 1.0).abs() <= tol
}

fn checked_len(shape: &[usize], budget: usize) -> Result<usize> {
    let mut n: u128 = 1;
    for &d in shape {
        n = n.saturating_mul(d as u128);
    }
    if n > budget as u128 {
        return Err(Error::Capacity {
            requested: n,
            budget,
        });
    }
    Ok(n as usize)
}

/// Dense K-way array of `f64`, first index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::zeros_with_budget(shape, DEFAULT_ELEMENT_BUDGET)
    }

    pub fn zeros_with_budget(shape: &[usize], budget: usize) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("invalid tensor shape {shape:?}")));
        }
        let len = checked_len(shape, budget)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("invalid tensor shape {shape:?}")));
        }
        let len = checked_len(shape, usize::MAX)?;
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Linear position of a zero-based multi-index.
    pub fn linear_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "index of length {} for an order-{} tensor",
                index.len(),
                self.shape.len()
            )));
        }
        let mut j = 0;
        let mut stride = 1;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::OutOfRange(format!(
                    "index {index:?} for shape {:?}",
                    self.shape
                )));
            }
            j += i * stride;
            stride *= d;
        }
        Ok(j)
    }

    /// Zero-based multi-index of a linear position.
    pub fn multi_index(&self, mut linear: usize) -> Vec<usize> {
        self.shape
            .iter()
            .map(|&d| {
                let i = linear % d;
                linear /= d;
                i
            })
            .collect()
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.linear_index(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let j = self.linear_index(index)?;
        self.data[j] = value;
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        math::sum(&self.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(math::norm_sq(&self.data))
    }

    /// Checks the PMF invariants: nonnegative, finite, and summing to one.
    pub fn validate_pmf(&self, tol: f64) -> Result<()> {
        if let Some(v) = self.data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "tensor entry {v} is not a probability"
            )));
        }
        let s = self.sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::InvalidInput(format!("tensor sums to {s}, not 1")));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Normalized CPD: loadings `λ` and one `I_n × F` factor per mode, each column
/// a conditional PMF.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorBundle {
    loadings: Vec<f64>,
    factors: Vec<Matrix>,
}

impl FactorBundle {
    /// Builds a bundle after checking the simplex invariants.
    pub fn new(loadings: Vec<f64>, factors: Vec<Matrix>) -> Result<Self> {
        let bundle = Self::from_parts_unchecked(loadings, factors)?;
        bundle.validate(SIMPLEX_TOL)?;
        Ok(bundle)
    }

    /// Builds a bundle checking only shapes. Used for intermediate iterates and
    /// deliberately perturbed fixtures.
    pub fn from_parts_unchecked(loadings: Vec<f64>, factors: Vec<Matrix>) -> Result<Self> {
        let rank = loadings.len();
        if rank == 0 {
            return Err(Error::Shape("rank must be at least 1".into()));
        }
        if factors.is_empty() {
            return Err(Error::Shape("a bundle needs at least one factor".into()));
        }
        if let Some((n, a)) = factors
            .iter()
            .enumerate()
            .find(|(_, a)| a.cols() != rank || a.rows() == 0)
        {
            return Err(Error::Shape(format!(
                "factor {n} is {}x{}, expected {rank} columns",
                a.rows(),
                a.cols()
            )));
        }
        Ok(Self { loadings, factors })
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if !is_probability_vector(&self.loadings, tol) {
            return Err(Error::InvalidInput(
                "loadings are not on the probability simplex".into(),
            ));
        }
        for (n, a) in self.factors.iter().enumerate() {
            if !a.is_column_stochastic(tol) {
                return Err(Error::InvalidInput(format!(
                    "factor {n} has a column off the probability simplex"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.loadings.len()
    }

    #[inline]
    pub fn n_vars(&self) -> usize {
        self.factors.len()
    }

    pub fn loadings(&self) -> &[f64] {
        &self.loadings
    }

    pub fn loadings_mut(&mut self) -> &mut Vec<f64> {
        &mut self.loadings
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, n: usize) -> &Matrix {
        &self.factors[n]
    }

    pub fn factor_mut(&mut self, n: usize) -> &mut Matrix {
        &mut self.factors[n]
    }

    pub fn alphabet_sizes(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    /// The bundle describing the marginal of the listed variables: same
    /// loadings, only the listed factors.
    pub fn sub_bundle(&self, vars: &[usize]) -> Result<FactorBundle> {
        let factors = vars
            .iter()
            .map(|&v| {
                self.factors
                    .get(v)
                    .cloned()
                    .ok_or_else(|| Error::OutOfRange(format!("variable {v}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FactorBundle {
            loadings: self.loadings.clone(),
            factors,
        })
    }

    /// Reorders the latent components: new component `f` is old `perm[f]`.
    pub fn permute_components(&self, perm: &[usize]) -> Result<FactorBundle> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || core::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidInput(
                "not a permutation of the components".into(),
            ));
        }
        let loadings = perm.iter().map(|&p| self.loadings[p]).collect();
        let factors = self
            .factors
            .iter()
            .map(|a| {
                let mut out = Matrix::zeros(a.rows(), rank);
                for (f, &p) in perm.iter().enumerate() {
                    out.col_mut(f).copy_from_slice(a.col(p));
                }
                out
            })
            .collect();
        Ok(FactorBundle { loadings, factors })
    }

    /// Number of components with zero loading.
    pub fn deflated_components(&self) -> usize {
        self.loadings.iter().filter(|&&l| l == 0.0).count()
    }
}

/// Visits every multi-index of `shape[1..]` in first-fastest order, calling
/// `visit(outer_index, base)` where `base` is the linear offset of the fiber
/// along mode 0.
fn for_each_mode0_fiber(shape: &[usize], mut visit: impl FnMut(&[usize], usize)) {
    let outer_shape = &shape[1..];
    let fiber = shape[0];
    let n_outer: usize = outer_shape.iter().product();
    let mut idx = vec![0usize; outer_shape.len()];
    for o in 0..n_outer {
        visit(&idx, o * fiber);
        for (i, &d) in idx.iter_mut().zip(outer_shape) {
            *i += 1;
            if *i < d {
                break;
            }
            *i = 0;
        }
    }
}

/// Row-major copy of a factor so that a row's `F` entries are contiguous.
fn rows_contiguous(a: &Matrix) -> Vec<f64> {
    let f = a.cols();
    let mut out = vec![0.0; a.rows() * f];
    for c in 0..f {
        for (r, &v) in a.col(c).iter().enumerate() {
            out[r * f + c] = v;
        }
    }
    out
}

fn check_factor_shapes(shape: &[usize], factors: &[&Matrix]) -> Result<usize> {
    if factors.len() != shape.len() {
        return Err(Error::Shape(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            shape.len()
        )));
    }
    let rank = factors[0].cols();
    for (n, (a, &d)) in factors.iter().zip(shape).enumerate() {
        if a.rows() != d || a.cols() != rank {
            return Err(Error::Shape(format!(
                "factor {n} is {}x{}, mode size {d}, rank {rank}",
                a.rows(),
                a.cols()
            )));
        }
    }
    Ok(rank)
}

/// Evaluates `Σ_f λ(f) Π_n A_n(i_n, f)` over the full grid.
pub fn synthesize(bundle: &FactorBundle) -> Result<DenseTensor> {
    synthesize_with_budget(bundle, DEFAULT_ELEMENT_BUDGET)
}

pub fn synthesize_with_budget(bundle: &FactorBundle, budget: usize) -> Result<DenseTensor> {
    let refs: Vec<&Matrix> = bundle.factors.iter().collect();
    synthesize_parts(&bundle.loadings, &refs, budget)
}

/// Synthesis from borrowed parts, so sub-bundles need not be cloned.
pub(crate) fn synthesize_parts(
    loadings: &[f64],
    factors: &[&Matrix],
    budget: usize,
) -> Result<DenseTensor> {
    let shape: Vec<usize> = factors.iter().map(|a| a.rows()).collect();
    let rank = check_factor_shapes(&shape, factors)?;
    if loadings.len() != rank {
        return Err(Error::Shape("loadings length differs from rank".into()));
    }
    let mut out = DenseTensor::zeros_with_budget(&shape, budget)?;
    let first = rows_contiguous(factors[0]);
    let mut weights = vec![0.0; rank];
    let i0 = shape[0];
    for_each_mode0_fiber(&shape, |outer, base| {
        weights.copy_from_slice(loadings);
        for (m, &i) in outer.iter().enumerate() {
            let a = factors[m + 1];
            for (f, w) in weights.iter_mut().enumerate() {
                *w *= a.get(i, f);
            }
        }
        for r in 0..i0 {
            let row = &first[r * rank..(r + 1) * rank];
            out.data[base + r] = row.iter().zip(&weights).map(|(a, w)| a * w).sum();
        }
    });
    Ok(out)
}

/// Mode-`mode` unfolding (zero-based mode): a `Π_{k≠n} I_k × I_n` matrix whose
/// row index runs over the remaining modes, first fastest.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    if mode >= t.order() {
        return Err(Error::OutOfRange(format!(
            "mode {mode} of an order-{} tensor",
            t.order()
        )));
    }
    let cols = t.shape[mode];
    let rows = t.len() / cols;
    let mut out = Matrix::zeros(rows, cols);
    let row_strides = unfold_strides(&t.shape, mode);
    for (lin, &v) in t.data.iter().enumerate() {
        let (row, col) = unfold_position(&t.shape, mode, lin, &row_strides);
        out.set(row, col, v);
    }
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, shape: &[usize], mode: usize) -> Result<DenseTensor> {
    if mode >= shape.len() {
        return Err(Error::OutOfRange(format!(
            "mode {mode} of an order-{} tensor",
            shape.len()
        )));
    }
    let mut out = DenseTensor::zeros_with_budget(shape, usize::MAX)?;
    if m.cols() != shape[mode] || m.rows() * m.cols() != out.len() {
        return Err(Error::Shape(
            "matrix does not match the requested unfolding".into(),
        ));
    }
    let row_strides = unfold_strides(shape, mode);
    for lin in 0..out.len() {
        let (row, col) = unfold_position(shape, mode, lin, &row_strides);
        out.data[lin] = m.get(row, col);
    }
    Ok(out)
}

/// Row strides of the unfolding: `J_k = Π_{m<k, m≠n} I_m`.
fn unfold_strides(shape: &[usize], mode: usize) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut s = 1;
    for (k, &d) in shape.iter().enumerate() {
        if k != mode {
            strides[k] = s;
            s *= d;
        }
    }
    strides
}

#[inline]
fn unfold_position(
    shape: &[usize],
    mode: usize,
    mut lin: usize,
    row_strides: &[usize],
) -> (usize, usize) {
    let mut row = 0;
    let mut col = 0;
    for (k, &d) in shape.iter().enumerate() {
        let i = lin % d;
        lin /= d;
        if k == mode {
            col = i;
        } else {
            row += i * row_strides[k];
        }
    }
    (row, col)
}

/// Column-wise Kronecker product: column `f` is `A(:,f) ⊗ B(:,f)`, so the row
/// index is `i_a · rows(B) + i_b`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "Khatri-Rao operands have {} and {} columns",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows() * b.rows(), a.cols());
    for f in 0..a.cols() {
        let col = out.col_mut(f);
        for (ia, &va) in a.col(f).iter().enumerate() {
            for (ib, &vb) in b.col(f).iter().enumerate() {
                col[ia * b.rows() + ib] = va * vb;
            }
        }
    }
    Ok(out)
}

/// `M_1 ⊙ M_2 ⊙ … ⊙ M_k` in the given order.
pub fn khatri_rao_chain(mats: &[&Matrix]) -> Result<Matrix> {
    let (first, rest) = mats
        .split_first()
        .ok_or_else(|| Error::Shape("empty Khatri-Rao chain".into()))?;
    let mut acc = (*first).clone();
    for m in rest {
        acc = khatri_rao(&acc, m)?;
    }
    Ok(acc)
}

/// Matricized tensor times Khatri-Rao product, `(⊙_{j≠n} A_j)ᵀ X^{(n)}`, as an
/// `F × I_n` matrix. The Khatri-Rao product is never formed; each tensor entry
/// is streamed once. `factors[mode]` is ignored except for its shape.
pub fn mttkrp(t: &DenseTensor, factors: &[&Matrix], mode: usize) -> Result<Matrix> {
    let rank = check_factor_shapes(&t.shape, factors)?;
    if mode >= t.order() {
        return Err(Error::OutOfRange(format!(
            "mode {mode} of an order-{} tensor",
            t.order()
        )));
    }
    let mut out = Matrix::zeros(rank, t.shape[mode]);
    let i0 = t.shape[0];
    let mut weights = vec![0.0; rank];
    if mode == 0 {
        for_each_mode0_fiber(&t.shape, |outer, base| {
            let fiber = &t.data[base..base + i0];
            if fiber.iter().all(|&x| x == 0.0) {
                return;
            }
            weights.iter_mut().for_each(|w| *w = 1.0);
            for (m, &i) in outer.iter().enumerate() {
                let a = factors[m + 1];
                for (f, w) in weights.iter_mut().enumerate() {
                    *w *= a.get(i, f);
                }
            }
            for (r, &x) in fiber.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (o, &w) in out.col_mut(r).iter_mut().zip(&weights) {
                    *o += x * w;
                }
            }
        });
    } else {
        let first = rows_contiguous(factors[0]);
        let mut acc = vec![0.0; rank];
        for_each_mode0_fiber(&t.shape, |outer, base| {
            let fiber = &t.data[base..base + i0];
            if fiber.iter().all(|&x| x == 0.0) {
                return;
            }
            acc.iter_mut().for_each(|v| *v = 0.0);
            for (r, &x) in fiber.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &first[r * rank..(r + 1) * rank];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += x * v;
                }
            }
            weights.copy_from_slice(&acc);
            for (m, &i) in outer.iter().enumerate() {
                if m + 1 == mode {
                    continue;
                }
                let a = factors[m + 1];
                for (f, w) in weights.iter_mut().enumerate() {
                    *w *= a.get(i, f);
                }
            }
            let target = outer[mode - 1];
            for (o, &w) in out.col_mut(target).iter_mut().zip(&weights) {
                *o += w;
            }
        });
    }
    Ok(out)
}

/// `(⊙_{j=K..1} A_j)ᵀ vec(X)`: contracts every mode, leaving one value per
/// component.
pub fn full_contraction(t: &DenseTensor, factors: &[&Matrix]) -> Result<Vec<f64>> {
    let m = mttkrp(t, factors, 0)?;
    let a0 = factors[0];
    Ok((0..m.rows())
        .map(|f| (0..m.cols()).map(|i| m.get(f, i) * a0.get(i, f)).sum())
        .collect())
}

/// Flat copy in linear-index order.
pub fn vectorize(t: &DenseTensor) -> Vec<f64> {
    t.data.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::random_model;
    use proptest::prelude::*;

    fn naive_synthesis(b: &FactorBundle) -> DenseTensor {
        let shape = b.alphabet_sizes();
        let mut t = DenseTensor::zeros(&shape).unwrap();
        for lin in 0..t.len() {
            let idx = t.multi_index(lin);
            let mut s = 0.0;
            for f in 0..b.rank() {
                let mut p = b.loadings()[f];
                for (n, &i) in idx.iter().enumerate() {
                    p *= b.factor(n).get(i, f);
                }
                s += p;
            }
            t.data_mut()[lin] = s;
        }
        t
    }

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            *v = (s >> 11) as f64 / (1u64 << 53) as f64;
        }
        m
    }

    fn lcg_tensor(shape: &[usize], seed: u64) -> DenseTensor {
        let n: usize = shape.iter().product();
        let m = lcg_matrix(n, 1, seed);
        DenseTensor::from_data(shape, m.into_data()).unwrap()
    }

    #[test]
    fn rank_one_outer_product() {
        let a1 = Matrix::from_rows(&[&[0.3], &[0.7]]).unwrap();
        let a2 = Matrix::from_rows(&[&[0.6], &[0.4]]).unwrap();
        let b = FactorBundle::new(vec![1.0], vec![a1, a2]).unwrap();
        let t = synthesize(&b).unwrap();
        // [[0.18,0.12],[0.42,0.28]] as rows i1, columns i2.
        let expect = [0.18, 0.42, 0.12, 0.28];
        for (got, want) in t.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_factors() {
        let b = FactorBundle::new(
            vec![0.5, 0.5],
            vec![Matrix::identity(2), Matrix::identity(2)],
        )
        .unwrap();
        let t = synthesize(&b).unwrap();
        assert_eq!(t.data(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn synthesis_matches_triple_loop() {
        let b = random_model(3, 4, 3, 1).into_bundle();
        let fast = synthesize(&b).unwrap();
        let slow = naive_synthesis(&b);
        assert!(fast.max_abs_diff(&slow) < 1e-15);
        assert!((fast.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthesis_respects_budget() {
        let b = random_model(4, 10, 2, 3).into_bundle();
        let err = synthesize_with_budget(&b, 9_999).unwrap_err();
        assert!(matches!(
            err,
            Error::Capacity {
                requested: 10_000,
                ..
            }
        ));
    }

    #[test]
    fn unfold_small_examples() {
        let t = DenseTensor::from_data(&[2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        let m = unfold(&t, 0).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 2));
        let rows: Vec<[f64; 2]> = (0..4).map(|r| [m.get(r, 0), m.get(r, 1)]).collect();
        assert_eq!(rows, vec![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]);

        // (i1,i2,i3) = (2,1,2) one-based lands on row 3, column 2.
        let v = t.get(&[1, 0, 1]).unwrap();
        assert_eq!(m.get(2, 1), v);
        assert!(unfold(&t, 3).is_err());
    }

    #[test]
    fn unfolding_of_cpd_is_khatri_rao_product() {
        let lam = random_model(1, 2, 3, 7).into_bundle().loadings().to_vec();
        let factors = [3, 4, 5]
            .iter()
            .map(|&d| {
                random_model(1, d, 3, d as u64)
                    .into_bundle()
                    .factor(0)
                    .clone()
            })
            .collect();
        let b = FactorBundle::new(lam, factors).unwrap();
        let t = synthesize(&b).unwrap();
        assert_eq!(t.shape(), &[3, 4, 5]);
        for n in 0..3 {
            let others: Vec<&Matrix> = (0..3)
                .rev()
                .filter(|&j| j != n)
                .map(|j| b.factor(j))
                .collect();
            let mut kr = khatri_rao_chain(&others).unwrap();
            kr.scale_columns(b.loadings());
            let expect = kr.matmul(&b.factor(n).transpose()).unwrap();
            let got = unfold(&t, n).unwrap();
            assert!(got.max_abs_diff(&expect) < 1e-15, "mode {n}");
        }
    }

    #[test]
    fn khatri_rao_examples() {
        let kr = khatri_rao(&Matrix::identity(2), &Matrix::identity(2)).unwrap();
        assert_eq!(kr.col(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(kr.col(1), &[0.0, 0.0, 0.0, 1.0]);

        let a = Matrix::from_rows(&[&[1.0], &[2.0]]).unwrap();
        let b = Matrix::from_rows(&[&[3.0], &[4.0], &[5.0]]).unwrap();
        assert_eq!(
            khatri_rao(&a, &b).unwrap().col(0),
            &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]
        );

        assert!(khatri_rao(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn mttkrp_examples() {
        let ones = DenseTensor::from_data(&[2, 2, 2], vec![1.0; 8]).unwrap();
        let f = Matrix::from_col_major(2, 2, vec![1.0; 4]).unwrap();
        for n in 0..3 {
            let m = mttkrp(&ones, &[&f, &f, &f], n).unwrap();
            assert!(m.data().iter().all(|&v| v == 4.0));
        }
        let zero = DenseTensor::zeros(&[2, 2, 2]).unwrap();
        let m = mttkrp(&zero, &[&f, &f, &f], 1).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
        assert!(mttkrp(&zero, &[&f, &f], 0).is_err());
    }

    #[test]
    fn vectorize_examples() {
        // [[a,c],[b,d]] -> [a,b,c,d]
        let t = DenseTensor::from_data(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(&[0, 1]).unwrap(), 3.0);
        assert_eq!(vectorize(&t), vec![1.0, 2.0, 3.0, 4.0]);
        let s = DenseTensor::from_data(&[1], vec![0.25]).unwrap();
        assert_eq!(vectorize(&s), vec![0.25]);
    }

    #[test]
    fn vectorized_cpd_is_khatri_rao_times_loadings() {
        let b = random_model(3, 3, 4, 11).into_bundle();
        let chain: Vec<&Matrix> = b.factors().iter().rev().collect();
        let kr = khatri_rao_chain(&chain).unwrap();
        let lam = Matrix::from_col_major(b.rank(), 1, b.loadings().to_vec()).unwrap();
        let expect = kr.matmul(&lam).unwrap();
        let got = vectorize(&synthesize(&b).unwrap());
        for (g, e) in got.iter().zip(expect.data()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn full_contraction_matches_explicit_product() {
        let t = lcg_tensor(&[3, 2, 4], 5);
        let fs: Vec<Matrix> = [3, 2, 4]
            .iter()
            .map(|&d| lcg_matrix(d, 3, d as u64))
            .collect();
        let refs: Vec<&Matrix> = fs.iter().collect();
        let chain: Vec<&Matrix> = fs.iter().rev().collect();
        let kr = khatri_rao_chain(&chain).unwrap();
        let x = Matrix::from_col_major(t.len(), 1, vectorize(&t)).unwrap();
        let expect = kr.transpose().matmul(&x).unwrap();
        let got = full_contraction(&t, &refs).unwrap();
        for (g, e) in got.iter().zip(expect.data()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..=5, 1..=4)
    }

    proptest! {
        #[test]
        fn fold_inverts_unfold(shape in shape_strategy(), seed in any::<u64>()) {
            let t = lcg_tensor(&shape, seed);
            for n in 0..shape.len() {
                let m = unfold(&t, n).unwrap();
                prop_assert_eq!(&fold(&m, &shape, n).unwrap(), &t);
            }
        }

        #[test]
        fn mttkrp_matches_explicit_khatri_rao(shape in shape_strategy(), rank in 1usize..=4, seed in any::<u64>()) {
            let t = lcg_tensor(&shape, seed);
            let fs: Vec<Matrix> = shape.iter().enumerate()
                .map(|(k, &d)| lcg_matrix(d, rank, seed ^ (k as u64 + 1)))
                .collect();
            let refs: Vec<&Matrix> = fs.iter().collect();
            for n in 0..shape.len() {
                let others: Vec<&Matrix> = (0..shape.len()).rev().filter(|&j| j != n).map(|j| &fs[j]).collect();
                let kr = if others.is_empty() {
                    Matrix::from_col_major(1, rank, vec![1.0; rank]).unwrap()
                } else {
                    khatri_rao_chain(&others).unwrap()
                };
                let expect = kr.transpose().matmul(&unfold(&t, n).unwrap()).unwrap();
                let got = mttkrp(&t, &refs, n).unwrap();
                let scale = 1.0 + expect.frobenius_norm();
                prop_assert!(got.max_abs_diff(&expect) <= 1e-12 * scale);
            }
        }

        #[test]
        fn khatri_rao_gram_identity(seed in any::<u64>()) {
            let a = lcg_matrix(5, 3, seed);
            let b = lcg_matrix(5, 3, seed.wrapping_add(1));
            let lhs = khatri_rao(&a, &b).unwrap().gram();
            let rhs = a.gram().hadamard(&b.gram()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn synthesis_is_permutation_invariant(seed in any::<u64>(), rank in 1usize..=5) {
            let b = random_model(3, 3, rank, seed).into_bundle();
            let mut perm: Vec<usize> = (0..rank).collect();
            perm.rotate_left((seed % rank as u64) as usize);
            perm.swap(0, rank - 1);
            let p = b.permute_components(&perm).unwrap();
            let d = synthesize(&b).unwrap().max_abs_diff(&synthesize(&p).unwrap());
            prop_assert!(d < 1e-15);
        }
    }
}
