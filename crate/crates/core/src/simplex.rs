//! Euclidean projection onto the probability simplex.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Projects `v` onto `{x ≥ 0, Σx = 1}` with the sort-and-threshold method.
///
/// After sorting descending into `u`, the threshold index is the largest `k`
/// with `u_k + (1 − Σ_{i≤k} u_i)/k > 0`; every entry is then shifted by that
/// `(1 − Σ_{i≤k} u_i)/k` and clipped at zero.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    project_simplex_in_place(&mut out)?;
    Ok(out)
}

pub fn project_simplex_in_place(v: &mut [f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput(
            "cannot project an empty vector onto the simplex".into(),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "non-finite value in simplex projection input".into(),
        ));
    }
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (1.0 - cumulative) / (k + 1) as f64;
        if u + candidate > 0.0 {
            shift = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x + shift).max(0.0);
    }
    Ok(())
}
