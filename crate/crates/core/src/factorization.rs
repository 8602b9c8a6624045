//! Coupled simplex-constrained CPD of a marginal set by alternating
//! optimization, each block solved with ADMM.
//!
//! The objective is `Σ_t w_t · ½‖X_t − [[λ, A_t1, .., A_tk]]‖_F²` over the
//! stored tuples `t`. Blocks are the factors `A_1..A_N` followed by `λ`, all
//! constrained to the probability simplex (factors columnwise).
//!
//! Each block is a linear least-squares problem `min ½ tr(ZᵀGZ) − tr(VᵀZ)`
//! over `Z = Aᵀ` (or `Z = λ`), and the ADMM iteration in scaled form is
//!
//! ```text
//! Â ← (G + ρI)⁻¹ (V + ρ(Z + U))
//! Z ← P(Â − U)
//! U ← U + Z − Â
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::harness::random_bundle;
use crate::linalg::Cholesky;
use crate::marginals::MarginalSet;
use crate::math;
use crate::simplex::project_simplex_in_place;
use crate::tensor::{
    full_contraction, mttkrp, synthesize_parts, FactorBundle, Matrix, DEFAULT_ELEMENT_BUDGET,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoPolicy {
    /// `ρ = trace(G)/F` for every component, recomputed whenever `G` changes.
    TraceOverRank,
    /// `ρ_f = G_ff` per component on factor blocks, floored at
    /// `1e-8 · trace(G)/F`; the loadings block uses `trace(G)/F`. Components
    /// with small loadings have small diagonal entries, and a common `ρ`
    /// would slow their rows down by the ratio.
    GramDiagonal,
    Fixed(f64),
}

impl RhoPolicy {
    /// Per-row penalties for the `F × K` iterate.
    pub fn penalties(self, gram: &Matrix, axis: SimplexAxis) -> Vec<f64> {
        let f = gram.rows();
        let trace: f64 = (0..f).map(|i| gram.get(i, i)).sum();
        // a block that appears in no fitted tuple has G = 0
        let mean = if trace > 0.0 { trace / f as f64 } else { 1.0 };
        match (self, axis) {
            (RhoPolicy::Fixed(r), _) => vec![r; f],
            (RhoPolicy::GramDiagonal, SimplexAxis::Rows) => {
                (0..f).map(|i| gram.get(i, i).max(1e-8 * mean)).collect()
            }
            _ => vec![mean; f],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub rank: usize,
    pub max_outer_sweeps: usize,
    pub admm_inner_iters: usize,
    pub rho_policy: RhoPolicy,
    /// Stop once `|c_{k−1} − c_k| / c_{k−1}` drops below this.
    pub outer_tol: f64,
    /// Inner ADMM exits early when both relative residuals fall below this;
    /// zero disables the early exit.
    pub inner_tol: f64,
    /// Stop once the cost drops to this fraction of `Σ_t w_t ½‖X_t‖²`, the
    /// cost of the zero model.
    pub cost_floor: f64,
    pub seed: u64,
    /// Refit the factor columns of components whose loading is zero.
    pub revive_dead: bool,
    /// Extrapolate along the last sweep's step when that lowers the cost.
    pub extrapolate: bool,
    /// Overrides of the per-tuple weights stored in the marginal set.
    pub tuple_weights: BTreeMap<Vec<usize>, f64>,
}

impl FitConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if self.admm_inner_iters == 0 {
            return Err(Error::Config(
                "at least one ADMM iteration per block is required".into(),
            ));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::Config(format!(
                "outer tolerance {} is not positive",
                self.outer_tol
            )));
        }
        if !(self.inner_tol >= 0.0) || !(self.cost_floor >= 0.0) {
            return Err(Error::Config(
                "inner tolerance and cost floor must be nonnegative".into(),
            ));
        }
        if let RhoPolicy::Fixed(r) = self.rho_policy {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::Config(format!("fixed rho {r} is not positive")));
            }
        }
        if let Some((t, w)) = self
            .tuple_weights
            .iter()
            .find(|(_, &w)| !(w >= 0.0) || !w.is_finite())
        {
            return Err(Error::Config(format!("weight {w} for tuple {t:?}")));
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rank: 1,
            max_outer_sweeps: 10_000,
            admm_inner_iters: 10,
            rho_policy: RhoPolicy::GramDiagonal,
            outer_tol: 1e-12,
            inner_tol: 1e-12,
            cost_floor: 1e-20,
            seed: 0,
            extrapolate: true,
            revive_dead: true,
            tuple_weights: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Relative cost change fell below `outer_tol`.
    Converged,
    /// Cost reached `cost_floor`.
    CostFloor,
    SweepBudget,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::CostFloor => "cost_floor",
            Termination::SweepBudget => "sweep_budget",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Block {
    Factor(usize),
    Loadings,
}

/// Result of one ADMM block solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmOutcome {
    /// The last unconstrained iterate `Â`.
    pub unconstrained: Matrix,
    pub iterations: usize,
    /// Penalty of each row.
    pub rho: Vec<f64>,
    /// `‖Z − Â‖_F / ‖Z‖_F` after the last iteration.
    pub primal_residual: f64,
    /// `‖Z − Z_prev‖_F / ‖U‖_F` after the last iteration.
    pub dual_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block: Block,
    pub iterations: usize,
    /// Mean penalty over components.
    pub rho: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Entry 0 is the cost at initialization, entry `k` the cost after sweep `k`.
    pub cost_trace: Vec<f64>,
    pub sweeps_run: usize,
    pub termination: Termination,
    /// Sweep whose iterate was returned.
    pub best_sweep: usize,
    pub best_cost: f64,
    /// Inner-solver residuals of every block in the last sweep.
    pub blocks: Vec<BlockReport>,
    /// Components whose loading is exactly zero in the returned bundle.
    pub deflated_components: usize,
    /// Sweeps whose extrapolated point was kept.
    pub extrapolations_accepted: usize,
}

/// Which entries the projection constrains to the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexAxis {
    /// Every row of the `F × K` iterate (the columns of a factor `A = Zᵀ`).
    Rows,
    /// Every column (the loadings, stored as an `F × 1` matrix).
    Columns,
}

fn project(z: &mut Matrix, axis: SimplexAxis, buf: &mut Vec<f64>) -> Result<()> {
    match axis {
        SimplexAxis::Columns => {
            for c in 0..z.cols() {
                project_simplex_in_place(z.col_mut(c))?;
            }
        }
        SimplexAxis::Rows => {
            buf.resize(z.cols(), 0.0);
            for r in 0..z.rows() {
                for (c, b) in buf.iter_mut().enumerate() {
                    *b = z.get(r, c);
                }
                project_simplex_in_place(buf)?;
                for (c, &b) in buf.iter().enumerate() {
                    z.set(r, c, b);
                }
            }
        }
    }
    Ok(())
}

/// Runs up to `iters` scaled-form ADMM iterations for
/// `min ½ tr(ZᵀGZ) − tr(VᵀZ)` subject to the simplex constraint on `axis`,
/// with penalty `R = diag(rho)`:
///
/// ```text
/// Â ← (G + R)⁻¹ (V + R(Z + U))
/// ```
///
/// `rho` must be constant under [`SimplexAxis::Columns`], where a row
/// weighting would change the projection. `primal` and `dual` are updated in
/// place so callers can warm-start.
#[allow(clippy::too_many_arguments)]
pub fn solve_admm(
    gram: &Matrix,
    rhs: &Matrix,
    rho: &[f64],
    primal: &mut Matrix,
    dual: &mut Matrix,
    iters: usize,
    inner_tol: f64,
    axis: SimplexAxis,
) -> Result<AdmmOutcome> {
    let f = gram.rows();
    if gram.cols() != f || rhs.rows() != f {
        return Err(Error::Shape(format!(
            "gram {}x{} with right-hand side {}x{}",
            gram.rows(),
            gram.cols(),
            rhs.rows(),
            rhs.cols()
        )));
    }
    let same = |m: &Matrix| m.rows() == rhs.rows() && m.cols() == rhs.cols();
    if !same(primal) || !same(dual) {
        return Err(Error::Shape(
            "ADMM iterates differ in shape from the right-hand side".into(),
        ));
    }
    if rho.len() != f {
        return Err(Error::Shape(format!(
            "{} penalties for {f} rows",
            rho.len()
        )));
    }
    if let Some(r) = rho.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::Numerical(format!(
            "ADMM penalty {r} is not positive"
        )));
    }
    if axis == SimplexAxis::Columns && rho.iter().any(|&r| r != rho[0]) {
        return Err(Error::Config(
            "column constraints need a common penalty".into(),
        ));
    }
    if iters == 0 {
        return Err(Error::Config(
            "at least one ADMM iteration is required".into(),
        ));
    }
    let mut shifted = gram.clone();
    for i in 0..f {
        shifted.set(i, i, gram.get(i, i) + rho[i]);
    }
    let chol = Cholesky::factor(&shifted)?;
    let mut a_hat = rhs.clone();
    let mut previous = primal.clone();
    let mut buf = Vec::new();
    let mut outcome = AdmmOutcome {
        unconstrained: Matrix::zeros(0, 0),
        iterations: 0,
        rho: rho.to_vec(),
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
    };
    for it in 1..=iters {
        for (k, ((a, &v), (&z, &u))) in a_hat
            .data_mut()
            .iter_mut()
            .zip(rhs.data())
            .zip(primal.data().iter().zip(dual.data()))
            .enumerate()
        {
            *a = v + rho[k % f] * (z + u);
        }
        chol.solve_matrix_in_place(&mut a_hat);
        previous.data_mut().copy_from_slice(primal.data());
        for ((z, &a), &u) in primal
            .data_mut()
            .iter_mut()
            .zip(a_hat.data())
            .zip(dual.data())
        {
            *z = a - u;
        }
        project(primal, axis, &mut buf)?;
        let mut r = 0.0;
        let mut s = 0.0;
        for ((u, &z), (&a, &p)) in dual
            .data_mut()
            .iter_mut()
            .zip(primal.data())
            .zip(a_hat.data().iter().zip(previous.data()))
        {
            *u += z - a;
            r += (z - a) * (z - a);
            s += (z - p) * (z - p);
        }
        let z_norm = math::sqrt(math::norm_sq(primal.data()));
        let u_norm = math::sqrt(math::norm_sq(dual.data()));
        outcome.iterations = it;
        outcome.primal_residual = math::sqrt(r) / z_norm.max(f64::MIN_POSITIVE);
        outcome.dual_residual = math::sqrt(s) / u_norm.max(f64::MIN_POSITIVE);
        if inner_tol > 0.0
            && outcome.primal_residual < inner_tol
            && outcome.dual_residual < inner_tol
        {
            break;
        }
    }
    outcome.unconstrained = a_hat;
    Ok(outcome)
}

/// Tuples entering the objective with their effective weights.
fn active_tuples<'a>(
    ms: &'a MarginalSet,
    config: Option<&FitConfig>,
) -> Vec<(&'a [usize], &'a crate::DenseTensor, f64)> {
    ms.fitted_entries()
        .filter_map(|(vars, e)| {
            let w = config
                .and_then(|c| c.tuple_weights.get(vars).copied())
                .unwrap_or(e.weight);
            (w > 0.0).then_some((vars.as_slice(), &e.tensor, w))
        })
        .collect()
}

fn check_compatible(ms: &MarginalSet, bundle: &FactorBundle) -> Result<()> {
    if ms.alphabet_sizes() != bundle.alphabet_sizes().as_slice() {
        return Err(Error::Shape(format!(
            "marginals over alphabets {:?}, model over {:?}",
            ms.alphabet_sizes(),
            bundle.alphabet_sizes()
        )));
    }
    Ok(())
}

fn weighted_cost(
    tuples: &[(&[usize], &crate::DenseTensor, f64)],
    bundle: &FactorBundle,
) -> Result<f64> {
    let mut total = 0.0;
    for &(vars, x, w) in tuples {
        let factors: Vec<&Matrix> = vars.iter().map(|&v| bundle.factor(v)).collect();
        let model = synthesize_parts(bundle.loadings(), &factors, DEFAULT_ELEMENT_BUDGET)?;
        let sq: f64 = x
            .data()
            .iter()
            .zip(model.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += 0.5 * w * sq;
    }
    Ok(total)
}

/// `Σ_t w_t · ½‖X_t − [[λ, A_t1, .., A_tk]]‖_F²` with the weights stored in
/// the marginal set. An empty set costs zero.
pub fn coupled_cost(ms: &MarginalSet, bundle: &FactorBundle) -> Result<f64> {
    check_compatible(ms, bundle)?;
    weighted_cost(&active_tuples(ms, None), bundle)
}

/// Same as [`coupled_cost`] with the weight overrides of `config`.
pub fn coupled_cost_with(
    ms: &MarginalSet,
    bundle: &FactorBundle,
    config: &FitConfig,
) -> Result<f64> {
    check_compatible(ms, bundle)?;
    weighted_cost(&active_tuples(ms, Some(config)), bundle)
}

/// Gram matrix and right-hand side of the least-squares problem in `Aⱼᵀ`.
fn factor_system(
    tuples: &[(&[usize], &crate::DenseTensor, f64)],
    bundle: &FactorBundle,
    grams: &[Matrix],
    j: usize,
    lam: &[f64],
) -> Result<(Matrix, Matrix)> {
    let rank = bundle.rank();
    let mut g = Matrix::zeros(rank, rank);
    let mut v = Matrix::zeros(rank, bundle.factor(j).rows());
    let mut prod = Matrix::zeros(rank, rank);
    for &(vars, x, w) in tuples {
        let Some(pos) = vars.iter().position(|&m| m == j) else {
            continue;
        };
        prod.data_mut().iter_mut().for_each(|p| *p = w);
        for &m in vars.iter().filter(|&&m| m != j) {
            for (p, &q) in prod.data_mut().iter_mut().zip(grams[m].data()) {
                *p *= q;
            }
        }
        for (a, &p) in g.data_mut().iter_mut().zip(prod.data()) {
            *a += p;
        }
        let factors: Vec<&Matrix> = vars.iter().map(|&m| bundle.factor(m)).collect();
        let m = mttkrp(x, &factors, pos)?;
        for (a, &b) in v.data_mut().iter_mut().zip(m.data()) {
            *a += w * b;
        }
    }
    for c in 0..rank {
        for r in 0..rank {
            g.set(r, c, g.get(r, c) * lam[r] * lam[c]);
        }
    }
    for c in 0..v.cols() {
        for (x, &l) in v.col_mut(c).iter_mut().zip(lam) {
            *x *= l;
        }
    }
    Ok((g, v))
}

fn loadings_system(
    tuples: &[(&[usize], &crate::DenseTensor, f64)],
    bundle: &FactorBundle,
    grams: &[Matrix],
) -> Result<(Matrix, Matrix)> {
    let rank = bundle.rank();
    let mut g = Matrix::zeros(rank, rank);
    let mut v = Matrix::zeros(rank, 1);
    let mut prod = Matrix::zeros(rank, rank);
    for &(vars, x, w) in tuples {
        prod.data_mut().iter_mut().for_each(|p| *p = w);
        for &m in vars {
            for (p, &q) in prod.data_mut().iter_mut().zip(grams[m].data()) {
                *p *= q;
            }
        }
        for (a, &p) in g.data_mut().iter_mut().zip(prod.data()) {
            *a += p;
        }
        let factors: Vec<&Matrix> = vars.iter().map(|&m| bundle.factor(m)).collect();
        for (a, b) in v.data_mut().iter_mut().zip(full_contraction(x, &factors)?) {
            *a += w * b;
        }
    }
    Ok((g, v))
}

fn check_block_inputs(ms: &MarginalSet, bundle: &FactorBundle, config: &FitConfig) -> Result<()> {
    config.validate()?;
    check_compatible(ms, bundle)?;
    if bundle.rank() != config.rank {
        return Err(Error::Shape(format!(
            "bundle rank {} differs from configured rank {}",
            bundle.rank(),
            config.rank
        )));
    }
    Ok(())
}

/// One cold-started block update of `A_j` (zero dual, primal at the current
/// factor) with `config.admm_inner_iters` iterations.
pub fn update_factor(
    ms: &MarginalSet,
    bundle: &FactorBundle,
    j: usize,
    config: &FitConfig,
) -> Result<(Matrix, AdmmOutcome)> {
    check_block_inputs(ms, bundle, config)?;
    if j >= bundle.n_vars() {
        return Err(Error::OutOfRange(format!(
            "factor {j} of {}",
            bundle.n_vars()
        )));
    }
    let tuples = active_tuples(ms, Some(config));
    let grams: Vec<Matrix> = bundle.factors().iter().map(Matrix::gram).collect();
    let (g, v) = factor_system(&tuples, bundle, &grams, j, bundle.loadings())?;
    let mut z = bundle.factor(j).transpose();
    let mut u = Matrix::zeros(z.rows(), z.cols());
    let rho = config.rho_policy.penalties(&g, SimplexAxis::Rows);
    let out = solve_admm(
        &g,
        &v,
        &rho,
        &mut z,
        &mut u,
        config.admm_inner_iters,
        config.inner_tol,
        SimplexAxis::Rows,
    )?;
    Ok((z.transpose(), out))
}

/// One cold-started block update of `λ`.
pub fn update_loadings(
    ms: &MarginalSet,
    bundle: &FactorBundle,
    config: &FitConfig,
) -> Result<(Vec<f64>, AdmmOutcome)> {
    check_block_inputs(ms, bundle, config)?;
    let tuples = active_tuples(ms, Some(config));
    let grams: Vec<Matrix> = bundle.factors().iter().map(Matrix::gram).collect();
    let (g, v) = loadings_system(&tuples, bundle, &grams)?;
    let mut z = Matrix::from_col_major(bundle.rank(), 1, bundle.loadings().to_vec())?;
    let mut u = Matrix::zeros(bundle.rank(), 1);
    let rho = config.rho_policy.penalties(&g, SimplexAxis::Columns);
    let out = solve_admm(
        &g,
        &v,
        &rho,
        &mut z,
        &mut u,
        config.admm_inner_iters,
        config.inner_tol,
        SimplexAxis::Columns,
    )?;
    Ok((z.into_data(), out))
}

/// Fits a rank-`config.rank` bundle to the marginals.
///
/// Factors are updated in variable order, then the loadings, once per sweep.
/// Duals are carried across sweeps. Without `init` the start is drawn with
/// `config.seed` (uniform entries, normalized). The lowest-cost iterate seen
/// is returned.
pub fn fit(
    ms: &MarginalSet,
    config: &FitConfig,
    init: Option<&FactorBundle>,
) -> Result<(FactorBundle, FitReport)> {
    config.validate()?;
    let mut bundle = match init {
        Some(b) => {
            if b.rank() != config.rank {
                return Err(Error::Shape(format!(
                    "initial bundle has rank {}, configured rank is {}",
                    b.rank(),
                    config.rank
                )));
            }
            b.clone()
        }
        None => random_bundle(ms.alphabet_sizes(), config.rank, config.seed)?,
    };
    check_compatible(ms, &bundle)?;
    let tuples = active_tuples(ms, Some(config));
    if tuples.is_empty() {
        return Err(Error::InvalidInput(
            "no marginal with positive weight and support to fit".into(),
        ));
    }

    let n = bundle.n_vars();
    let rank = config.rank;
    let mut duals: Vec<Matrix> = bundle
        .factors()
        .iter()
        .map(|a| Matrix::zeros(rank, a.rows()))
        .collect();
    let mut lambda_dual = Matrix::zeros(rank, 1);
    // penalty each dual was last scaled with
    let mut last_rho: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut grams: Vec<Matrix> = bundle.factors().iter().map(Matrix::gram).collect();

    let energy: f64 = tuples
        .iter()
        .map(|&(_, x, w)| 0.5 * w * math::norm_sq(x.data()))
        .sum();
    let initial = weighted_cost(&tuples, &bundle)?;
    if !initial.is_finite() {
        return Err(Error::Numerical(format!("initial cost is {initial}")));
    }
    let mut trace = vec![initial];
    let mut best = (initial, 0usize, bundle.clone());
    let mut blocks = Vec::with_capacity(n + 1);
    let mut termination = Termination::SweepBudget;
    let mut sweeps = 0;
    let mut beta = 0.5;
    let mut accepted = 0;
    let mut beta_cap = 1.0;

    while termination == Termination::SweepBudget && sweeps < config.max_outer_sweeps {
        sweeps += 1;
        blocks.clear();
        let before = bundle.clone();
        for j in 0..n {
            let (g, v) = factor_system(&tuples, &bundle, &grams, j, bundle.loadings())?;
            let rho = config.rho_policy.penalties(&g, SimplexAxis::Rows);
            rescale_dual(&mut duals[j], &mut last_rho[j], &rho);
            let mut z = bundle.factor(j).transpose();
            let out = solve_admm(
                &g,
                &v,
                &rho,
                &mut z,
                &mut duals[j],
                config.admm_inner_iters,
                config.inner_tol,
                SimplexAxis::Rows,
            )?;
            if config.revive_dead && bundle.loadings().contains(&0.0) {
                revive(&tuples, &bundle, &grams, j, config, &mut z)?;
            }
            *bundle.factor_mut(j) = z.transpose();
            grams[j] = bundle.factor(j).gram();
            blocks.push(block_report(Block::Factor(j), &out));
        }
        let (g, v) = loadings_system(&tuples, &bundle, &grams)?;
        let rho = config.rho_policy.penalties(&g, SimplexAxis::Columns);
        rescale_dual(&mut lambda_dual, &mut last_rho[n], &rho);
        let mut z = Matrix::from_col_major(rank, 1, bundle.loadings().to_vec())?;
        let out = solve_admm(
            &g,
            &v,
            &rho,
            &mut z,
            &mut lambda_dual,
            config.admm_inner_iters,
            config.inner_tol,
            SimplexAxis::Columns,
        )?;
        *bundle.loadings_mut() = z.into_data();
        blocks.push(block_report(Block::Loadings, &out));

        let mut cost = weighted_cost(&tuples, &bundle)?;
        if config.extrapolate && cost.is_finite() {
            let trial = extrapolated(&before, &bundle, beta)?;
            let trial_cost = weighted_cost(&tuples, &trial)?;
            if trial_cost < cost {
                bundle = trial;
                cost = trial_cost;
                accepted += 1;
                for (g, a) in grams.iter_mut().zip(bundle.factors()) {
                    *g = a.gram();
                }
                beta = (beta * 1.05).min(beta_cap);
                beta_cap = (beta_cap * 1.01).min(1.0);
            } else {
                beta_cap = beta;
                beta /= 1.5;
            }
        }
        if cost.is_nan() {
            return Err(Error::Numerical(format!(
                "cost became NaN in sweep {sweeps}"
            )));
        }
        let previous = trace[trace.len() - 1];
        trace.push(cost);
        if cost < best.0 {
            best = (cost, sweeps, bundle.clone());
        }
        if cost <= config.cost_floor * energy {
            termination = Termination::CostFloor;
        } else if (previous - cost).abs() <= config.outer_tol * previous {
            termination = Termination::Converged;
        }
    }

    let (best_cost, best_sweep, bundle) = best;
    let report = FitReport {
        cost_trace: trace,
        sweeps_run: sweeps,
        termination,
        best_sweep,
        best_cost,
        blocks,
        deflated_components: bundle.deflated_components(),
        extrapolations_accepted: accepted,
    };
    Ok((bundle, report))
}

/// Columns of a component with zero loading do not enter the cost, and the
/// block system gives them no signal, so they would stay frozen. Refit those
/// rows as if the loading were `1/F`, leaving every other row untouched.
fn revive(
    tuples: &[(&[usize], &crate::DenseTensor, f64)],
    bundle: &FactorBundle,
    grams: &[Matrix],
    j: usize,
    config: &FitConfig,
    z: &mut Matrix,
) -> Result<()> {
    let rank = bundle.rank();
    let lam: Vec<f64> = bundle
        .loadings()
        .iter()
        .map(|&l| if l == 0.0 { 1.0 / rank as f64 } else { l })
        .collect();
    let (g, v) = factor_system(tuples, bundle, grams, j, &lam)?;
    let mut trial = bundle.factor(j).transpose();
    let mut dual = Matrix::zeros(trial.rows(), trial.cols());
    let rho = config.rho_policy.penalties(&g, SimplexAxis::Rows);
    solve_admm(
        &g,
        &v,
        &rho,
        &mut trial,
        &mut dual,
        config.admm_inner_iters,
        config.inner_tol,
        SimplexAxis::Rows,
    )?;
    for f in (0..rank).filter(|&f| bundle.loadings()[f] == 0.0) {
        for c in 0..z.cols() {
            z.set(f, c, trial.get(f, c));
        }
    }
    Ok(())
}

/// `P(x + β(x − x_prev))` for every block.
fn extrapolated(
    previous: &FactorBundle,
    current: &FactorBundle,
    beta: f64,
) -> Result<FactorBundle> {
    let step = |new: &[f64], old: &[f64], out: &mut [f64]| {
        for ((o, &a), &b) in out.iter_mut().zip(new).zip(old) {
            *o = a + beta * (a - b);
        }
    };
    let mut out = current.clone();
    for j in 0..current.n_vars() {
        let (a, b) = (current.factor(j), previous.factor(j));
        let y = out.factor_mut(j);
        for c in 0..a.cols() {
            step(a.col(c), b.col(c), y.col_mut(c));
            project_simplex_in_place(y.col_mut(c))?;
        }
    }
    let lam = out.loadings_mut();
    step(current.loadings(), previous.loadings(), lam);
    project_simplex_in_place(lam)?;
    Ok(out)
}

/// Keeps the unscaled multiplier `ρU` fixed when the penalty changes.
fn rescale_dual(dual: &mut Matrix, last: &mut Vec<f64>, rho: &[f64]) {
    if last.len() == rho.len() {
        for c in 0..dual.cols() {
            for (u, (&old, &new)) in dual.col_mut(c).iter_mut().zip(last.iter().zip(rho)) {
                *u *= old / new;
            }
        }
    }
    last.clear();
    last.extend_from_slice(rho);
}

fn block_report(block: Block, out: &AdmmOutcome) -> BlockReport {
    BlockReport {
        block,
        iterations: out.iterations,
        rho: out.rho.iter().sum::<f64>() / out.rho.len() as f64,
        primal_residual: out.primal_residual,
        dual_residual: out.dual_residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{mre_fact, random_model};
    use crate::marginals::MarginalEntry;
    use crate::tensor::{synthesize, DenseTensor};
    use proptest::prelude::*;

    fn exact(n: usize, i: usize, f: usize, order: usize, seed: u64) -> (FactorBundle, MarginalSet) {
        let b = random_model(n, i, f, seed).into_bundle();
        let ms = MarginalSet::from_bundle(&b, order).unwrap();
        (b, ms)
    }

    fn uniform_factor(rows: usize, cols: usize) -> Matrix {
        Matrix::from_col_major(rows, cols, vec![1.0 / rows as f64; rows * cols]).unwrap()
    }

    #[test]
    fn cost_is_zero_at_generating_bundle() {
        let (b, ms) = exact(4, 3, 3, 3, 1);
        assert!(coupled_cost(&ms, &b).unwrap() < 1e-30);
    }

    #[test]
    fn cost_matches_elementwise_oracle() {
        let truth = random_model(3, 2, 2, 5).into_bundle();
        let ms = MarginalSet::from_bundle(&truth, 3).unwrap();
        let mut off = truth.clone();
        *off.loadings_mut() = vec![1.0, 0.0];
        let x = synthesize(&truth).unwrap();
        let mut oracle = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let model: f64 = (0..2)
                        .map(|f| {
                            off.loadings()[f]
                                * off.factor(0).get(i, f)
                                * off.factor(1).get(j, f)
                                * off.factor(2).get(k, f)
                        })
                        .sum();
                    let d = x.get(&[i, j, k]).unwrap() - model;
                    oracle += 0.5 * d * d;
                }
            }
        }
        let c = coupled_cost(&ms, &off).unwrap();
        assert!(oracle > 0.0);
        assert!((c - oracle).abs() < 1e-15);
    }

    #[test]
    fn empty_set_costs_zero() {
        let b = random_model(3, 2, 2, 5).into_bundle();
        let ms = MarginalSet::new(2, vec![2, 2, 2]).unwrap();
        assert_eq!(coupled_cost(&ms, &b).unwrap(), 0.0);
        assert!(fit(&ms, &FitConfig::new(2), None).is_err());
    }

    #[test]
    fn weights_scale_cost_and_zero_support_is_ignored() {
        let (truth, mut ms) = exact(3, 3, 2, 2, 8);
        let other = random_model(3, 3, 2, 9).into_bundle();
        let base = coupled_cost(&ms, &other).unwrap();
        let mut config = FitConfig::new(2);
        for t in [vec![0, 1], vec![0, 2], vec![1, 2]] {
            config.tuple_weights.insert(t, 3.0);
        }
        assert!((coupled_cost_with(&ms, &other, &config).unwrap() - 3.0 * base).abs() < 1e-14);
        let e = ms.get_mut(&[0, 1]).unwrap();
        e.support = Some(0);
        let reduced = coupled_cost(&ms, &other).unwrap();
        let only = {
            let mut s = MarginalSet::new(2, vec![3, 3, 3]).unwrap();
            s.insert(
                vec![0, 1],
                MarginalEntry {
                    tensor: ms.get(&[0, 1]).unwrap().tensor.clone(),
                    support: None,
                    weight: 1.0,
                },
            )
            .unwrap();
            coupled_cost(&s, &other).unwrap()
        };
        assert!((reduced - (base - only)).abs() < 1e-14);
        assert!(coupled_cost(&ms, &truth).unwrap() < 1e-30);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (_, ms) = exact(3, 3, 2, 2, 8);
        let wrong = random_model(3, 4, 2, 1).into_bundle();
        assert!(matches!(coupled_cost(&ms, &wrong), Err(Error::Shape(_))));
        let wrong = random_model(4, 3, 2, 1).into_bundle();
        assert!(fit(&ms, &FitConfig::new(2), Some(&wrong)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::new(0).validate().is_err());
        let mut c = FitConfig::new(2);
        c.admm_inner_iters = 0;
        assert!(c.validate().is_err());
        let mut c = FitConfig::new(2);
        c.outer_tol = 0.0;
        assert!(c.validate().is_err());
        let mut c = FitConfig::new(2);
        c.rho_policy = RhoPolicy::Fixed(0.0);
        assert!(c.validate().is_err());
        assert!(FitConfig::new(3).validate().is_ok());
    }

    #[test]
    fn factor_update_recovers_truth_with_others_fixed() {
        let (truth, ms) = exact(3, 4, 3, 3, 21);
        let mut start = truth.clone();
        *start.factor_mut(1) = uniform_factor(4, 3);
        let mut config = FitConfig::new(3);
        config.admm_inner_iters = 2000;
        config.inner_tol = 0.0;
        let (a, _) = update_factor(&ms, &start, 1, &config).unwrap();
        assert!(a.is_column_stochastic(1e-12));
        assert!(
            a.max_abs_diff(truth.factor(1)) < 1e-6,
            "{}",
            a.max_abs_diff(truth.factor(1))
        );
    }

    #[test]
    fn rank_one_factor_update_is_the_marginal() {
        // With F = 1 every column lies on the simplex, and the unconstrained
        // minimizer of Σ_t ‖X_t − a ⊗ (others)‖² is proportional to the
        // variable's marginal; projection makes it exact.
        let (truth, ms) = exact(3, 3, 1, 2, 4);
        let mut start = truth.clone();
        *start.factor_mut(0) = Matrix::from_col_major(3, 1, vec![0.7, 0.2, 0.1]).unwrap();
        let mut config = FitConfig::new(1);
        config.admm_inner_iters = 200;
        config.inner_tol = 0.0;
        let (a, _) = update_factor(&ms, &start, 0, &config).unwrap();
        assert!(a.max_abs_diff(truth.factor(0)) < 1e-10);
        let (lam, _) = update_loadings(&ms, &truth, &config).unwrap();
        assert_eq!(lam, vec![1.0]);
    }

    #[test]
    fn factor_outside_every_tuple_is_a_fixed_point() {
        let (truth, ms) = exact(3, 3, 2, 2, 4);
        let mut config = FitConfig::new(2);
        for t in [vec![0, 1], vec![0, 2]] {
            config.tuple_weights.insert(t, 0.0);
        }
        let mut start = truth.clone();
        *start.factor_mut(0) = random_model(3, 3, 2, 77).into_bundle().factor(0).clone();
        let (a, _) = update_factor(&ms, &start, 0, &config).unwrap();
        assert!(a.max_abs_diff(start.factor(0)) < 1e-15);
    }

    #[test]
    fn loadings_update_recovers_truth() {
        let (truth, ms) = exact(4, 3, 3, 3, 12);
        let mut start = truth.clone();
        *start.loadings_mut() = vec![1.0 / 3.0; 3];
        let mut config = FitConfig::new(3);
        config.admm_inner_iters = 200;
        config.inner_tol = 0.0;
        let (lam, _) = update_loadings(&ms, &start, &config).unwrap();
        for (a, b) in lam.iter().zip(truth.loadings()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicated_component_gives_feasible_minimizer() {
        let a = Matrix::from_rows(&[&[0.2, 0.2, 0.5], &[0.8, 0.8, 0.5]]).unwrap();
        let truth = FactorBundle::new(vec![0.3, 0.3, 0.4], vec![a.clone(), a.clone(), a]).unwrap();
        let ms = MarginalSet::from_bundle(&truth, 3).unwrap();
        let mut start = truth.clone();
        *start.loadings_mut() = vec![0.5, 0.1, 0.4];
        assert!(coupled_cost(&ms, &start).unwrap() < 1e-30);
        *start.loadings_mut() = vec![0.1, 0.1, 0.8];
        let mut config = FitConfig::new(3);
        config.admm_inner_iters = 500;
        config.inner_tol = 0.0;
        let (lam, _) = update_loadings(&ms, &start, &config).unwrap();
        assert!((lam.iter().sum::<f64>() - 1.0).abs() < 1e-12 && lam.iter().all(|&l| l >= 0.0));
        let mut out = start.clone();
        *out.loadings_mut() = lam;
        assert!(coupled_cost(&ms, &out).unwrap() < 1e-14);
    }

    #[test]
    fn minimizer_is_a_fixed_point() {
        let (truth, ms) = exact(4, 3, 3, 3, 2);
        let mut config = FitConfig::new(3);
        config.max_outer_sweeps = 1;
        config.cost_floor = 0.0;
        let (b, report) = fit(&ms, &config, Some(&truth)).unwrap();
        assert!(report.cost_trace[1] - report.cost_trace[0] <= 1e-10);
        assert!(b.factor(0).max_abs_diff(truth.factor(0)) < 1e-8);
    }

    /// `‖(G + R)Â − V − R(Z + U)‖_F` and `‖V‖_F`.
    fn normal_equation_residual(
        g: &Matrix,
        v: &Matrix,
        rho: &[f64],
        z: &Matrix,
        u: &Matrix,
        a_hat: &Matrix,
    ) -> (f64, f64) {
        let mut lhs = g.matmul(a_hat).unwrap();
        for (k, (l, (&a, (&vv, (&zz, &uu))))) in lhs
            .data_mut()
            .iter_mut()
            .zip(
                a_hat
                    .data()
                    .iter()
                    .zip(v.data().iter().zip(z.data().iter().zip(u.data()))),
            )
            .enumerate()
        {
            let r = rho[k % rho.len()];
            *l += r * a - vv - r * (zz + uu);
        }
        (lhs.frobenius_norm(), v.frobenius_norm())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn admm_solve_satisfies_normal_equations(seed in 0u64..1000, f in 1usize..8, i in 2usize..6, sweeps in 0usize..4) {
            let truth = random_model(4, i, f, seed).into_bundle();
            let ms = MarginalSet::from_bundle(&truth, 3).unwrap();
            let mut config = FitConfig::new(f);
            config.max_outer_sweeps = sweeps.max(1);
            let start = random_model(4, i, f, seed + 1).into_bundle();
            let (b, _) = fit(&ms, &config, Some(&start)).unwrap();
            let tuples = active_tuples(&ms, None);
            let grams: Vec<Matrix> = b.factors().iter().map(Matrix::gram).collect();
            let (g, v) = factor_system(&tuples, &b, &grams, 2, b.loadings()).unwrap();
            let rho = RhoPolicy::GramDiagonal.penalties(&g, SimplexAxis::Rows);
            let z0 = b.factor(2).transpose();
            let u0 = {
                let mut u = Matrix::zeros(f, i);
                u.data_mut().iter_mut().enumerate().for_each(|(k, x)| *x = ((k * 7 % 5) as f64 - 2.0) * 0.01);
                u
            };
            let (mut z, mut u) = (z0.clone(), u0.clone());
            let out = solve_admm(&g, &v, &rho, &mut z, &mut u, 1, 0.0, SimplexAxis::Rows).unwrap();
            let (res, vnorm) = normal_equation_residual(&g, &v, &rho, &z0, &u0, &out.unconstrained);
            prop_assert!(res <= 1e-10 * (1.0 + vnorm), "{res}");

            let (g, v) = loadings_system(&tuples, &b, &grams).unwrap();
            let rho = RhoPolicy::GramDiagonal.penalties(&g, SimplexAxis::Columns);
            let z0 = Matrix::from_col_major(f, 1, b.loadings().to_vec()).unwrap();
            let (mut z, mut u) = (z0.clone(), Matrix::zeros(f, 1));
            let out = solve_admm(&g, &v, &rho, &mut z, &mut u, 1, 0.0, SimplexAxis::Columns).unwrap();
            let (res, vnorm) = normal_equation_residual(&g, &v, &rho, &z0, &Matrix::zeros(f, 1), &out.unconstrained);
            prop_assert!(res <= 1e-10 * (1.0 + vnorm), "{res}");
        }

        #[test]
        fn fit_keeps_iterates_feasible_and_cost_down(seed in 0u64..1000, order in 2usize..5, f in 1usize..6) {
            let truth = random_model(5, 3, f, seed).into_bundle();
            let ms = MarginalSet::from_bundle(&truth, order).unwrap();
            let mut config = FitConfig::new(f);
            config.max_outer_sweeps = 30;
            config.seed = seed ^ 0xABCD;
            let (b, report) = fit(&ms, &config, None).unwrap();
            prop_assert!(b.validate(1e-12).is_ok());
            prop_assert!(report.cost_trace.iter().all(|&c| c >= 0.0));
            prop_assert!(report.best_cost <= report.cost_trace[0]);
            prop_assert!((coupled_cost(&ms, &b).unwrap() - report.best_cost).abs() <= 1e-15);
            prop_assert_eq!(report.blocks.len(), 6);
        }
    }

    #[test]
    fn fit_recovers_a_small_model_from_triples() {
        let (truth, ms) = exact(5, 4, 3, 3, 31);
        let config = FitConfig {
            seed: 7,
            ..FitConfig::new(3)
        };
        let (b, report) = fit(&ms, &config, None).unwrap();
        assert!(mre_fact(&truth, &b).unwrap() < 1e-5, "{report:?}");
        let x = synthesize(&truth).unwrap();
        let y: DenseTensor = synthesize(&b).unwrap();
        assert!(crate::harness::mre_ten(&x, &y).unwrap() < 1e-6);
    }

    #[test]
    fn fit_is_deterministic() {
        let (_, ms) = exact(4, 3, 2, 3, 3);
        let mut config = FitConfig::new(2);
        config.max_outer_sweeps = 20;
        let a = fit(&ms, &config, None).unwrap();
        let b = fit(&ms, &config, None).unwrap();
        assert_eq!(a, b);
    }
}
