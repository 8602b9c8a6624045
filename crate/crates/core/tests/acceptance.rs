//! Acceptance suite: one pass/fail line per criterion on stderr.
//!
//! Lines are written straight to the stderr handle so they show up even
//! though the test harness captures `println!` output of passing tests.
//! Every run uses a fixed seed chosen before looking at results.

#![allow(clippy::needless_range_loop)]

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use pmfrec::experiment::{
    run_classification, run_recovery, ClassificationSpec, FitSettings, RecoveryResults,
    RecoverySpec,
};
use pmfrec_core::factorization::{coupled_cost, solve_admm, RhoPolicy, SimplexAxis};
use pmfrec_core::harness::{random_bundle, random_model, sample_dataset};
use pmfrec_core::identifiability::{theorem3_bound, triples_bound};
use pmfrec_core::marginals::estimate_marginals;
use pmfrec_core::model::construct_trivial_cpd;
use pmfrec_core::simplex::project_simplex;
use pmfrec_core::tensor::{synthesize, DenseTensor, Matrix};
use pmfrec_core::{fit, Evidence, FitConfig, JointPmfModel, MarginalSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("\nacceptance criterion {criterion}: {verdict} | {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

#[test]
fn criterion_1_bound_tables() {
    let start = Instant::now();
    let mut bad = Vec::new();
    let quad = |n, i| theorem3_bound(n, i).map(|t| t.0);
    for (n, want) in [(6, 10), (10, 36), (20, 179), (40, 729), (80, 2916)] {
        if quad(n, 3) != Some(want) {
            bad.push(format!("quadruples N={n} I=3: {:?} != {want}", quad(n, 3)));
        }
    }
    for (i, want) in [(6, 45), (10, 131), (20, 544), (40, 2220), (80, 8966)] {
        if quad(6, i) != Some(want) {
            bad.push(format!("quadruples N=6 I={i}: {:?} != {want}", quad(6, i)));
        }
    }
    for (i, want) in [(6, 24), (10, 40), (20, 105), (40, 410), (80, 1620)] {
        if triples_bound(6, i) != want {
            bad.push(format!(
                "triples N=6 I={i}: {} != {want}",
                triples_bound(6, i)
            ));
        }
    }
    if triples_bound(6, 3) != 4 {
        bad.push(format!("triples N=6 I=3: {} != 4", triples_bound(6, 3)));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bad.is_empty() && secs < 1.0;
    report(
        1,
        pass,
        &format!(
            "16 table entries, {} mismatches, {secs:.3}s{}",
            bad.len(),
            bad.iter().map(|b| format!("; {b}")).collect::<String>()
        ),
    );
    assert!(pass, "{bad:?} in {secs}s");
}

#[test]
fn criterion_2_noiseless_recovery() {
    let spec = RecoverySpec {
        n_vars: 5,
        alphabet: 10,
        true_rank: None,
        fit_ranks: vec![5, 10, 15],
        orders: vec![2, 3, 4],
        sample_sizes: vec![],
        hide_fraction: 0.0,
        trials: 20,
        seed: 1,
        fit: FitSettings::default(),
    };
    let start = Instant::now();
    let r = run_recovery(&spec).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for &order in &spec.orders {
        for &f in &spec.fit_ranks {
            let c = r.cell(order, f, None).unwrap();
            let fact = c.mre_fact.unwrap().median;
            let ten = c.mre_ten.median;
            let ok = if order == 2 {
                fact >= 0.05
            } else {
                fact <= 1e-5 && ten <= 1e-6
            };
            pass &= ok;
            parts.push(format!(
                "d={order} F={f} fact {fact:.2e} ten {ten:.2e} conv {}/{}",
                c.converged, c.trials
            ));
        }
    }
    report(
        2,
        pass,
        &format!(
            "{:.0}s; medians over 20 trials: {}",
            start.elapsed().as_secs_f64(),
            parts.join(", ")
        ),
    );
    assert!(pass, "{parts:?}");
}

fn sampled_spec(hide_fraction: f64) -> RecoverySpec {
    RecoverySpec {
        n_vars: 5,
        alphabet: 10,
        true_rank: None,
        fit_ranks: vec![10],
        orders: vec![3],
        sample_sizes: vec![1_000, 10_000, 100_000],
        hide_fraction,
        trials: 10,
        seed: 1,
        fit: FitSettings {
            max_sweeps: Some(5_000),
            tol: Some(1e-10),
            ..FitSettings::default()
        },
    }
}

fn sampled(hidden: bool) -> &'static RecoveryResults {
    static FULL: OnceLock<RecoveryResults> = OnceLock::new();
    static HIDDEN: OnceLock<RecoveryResults> = OnceLock::new();
    if hidden {
        HIDDEN.get_or_init(|| run_recovery(&sampled_spec(0.2)).unwrap())
    } else {
        FULL.get_or_init(|| run_recovery(&sampled_spec(0.0)).unwrap())
    }
}

fn trend(r: &RecoveryResults) -> (Vec<f64>, bool) {
    let medians: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&m| r.cell(3, 10, Some(m)).unwrap().mre_ten.median)
        .collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    (medians, decreasing)
}

#[test]
fn criterion_3_sampled_trend() {
    let r = sampled(false);
    let (medians, decreasing) = trend(r);
    let oracle = r
        .cell(3, 10, Some(100_000))
        .unwrap()
        .oracle_mre_ten
        .unwrap()
        .median;
    let ratio = medians[2] / oracle;
    let pass = decreasing && ratio <= 2.0;
    report(
        3,
        pass,
        &format!(
            "median MRE_ten at M=1e3/1e4/1e5: {:.4}/{:.4}/{:.4} (decreasing: {decreasing}); oracle MLE at 1e5 {oracle:.4}, ratio {ratio:.2} (limit 2)",
            medians[0], medians[1], medians[2]
        ),
    );
    assert!(pass, "medians {medians:?}, oracle {oracle}");
}

#[test]
fn criterion_4_missing_data() {
    let full = sampled(false);
    let hidden = sampled(true);
    let (medians, decreasing) = trend(hidden);
    let full_ten = full.cell(3, 10, Some(100_000)).unwrap().mre_ten.median;
    let degradation = medians[2] / full_ten - 1.0;
    let pass = decreasing && degradation <= 0.5;
    report(
        4,
        pass,
        &format!(
            "20% hidden: median MRE_ten {:.4}/{:.4}/{:.4} (decreasing: {decreasing}); at 1e5 {:.4} vs {full_ten:.4} fully observed, {:+.0}% (limit +50%)",
            medians[0],
            medians[1],
            medians[2],
            medians[2],
            100.0 * degradation
        ),
    );
    assert!(pass, "{medians:?} vs {full_ten}");
}

/// Posterior of `target` by summing the dense joint over all completions.
fn dense_posterior(joint: &DenseTensor, evidence: &[Option<usize>], target: usize) -> Vec<f64> {
    let mut post = vec![0.0; joint.shape()[target]];
    for lin in 0..joint.len() {
        let idx = joint.multi_index(lin);
        if evidence
            .iter()
            .enumerate()
            .all(|(n, e)| e.is_none_or(|c| c == idx[n]))
        {
            post[idx[target]] += joint.data()[lin];
        }
    }
    let total: f64 = post.iter().sum();
    post.iter().map(|p| p / total).collect()
}

#[test]
fn criterion_5_inference_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut map_mismatch = 0;
    for case in 0..200u64 {
        let n = rng.random_range(2..=5);
        let sizes: Vec<usize> = (0..n).map(|_| rng.random_range(2..=4)).collect();
        let f = rng.random_range(1..=6);
        let model = JointPmfModel::new(random_bundle(&sizes, f, 1000 + case).unwrap()).unwrap();
        let joint = model.dense_joint().unwrap();
        let target = rng.random_range(0..n);
        let mut ev = vec![None; n];
        let mut evidence = Evidence::new();
        for (v, slot) in ev.iter_mut().enumerate() {
            if v != target && rng.random_bool(0.6) {
                let c = rng.random_range(0..sizes[v]);
                *slot = Some(c);
                evidence.insert(v, c);
            }
        }
        let want = dense_posterior(&joint, &ev, target);
        let got = model.posterior_over(target, &evidence).unwrap();
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        let want_map = (0..want.len()).fold(0, |b, i| if want[i] > want[b] { i } else { b });
        if model.map_predict(target, &evidence).unwrap() != want_map {
            map_mismatch += 1;
        }
        let want_e: f64 = want
            .iter()
            .enumerate()
            .map(|(v, p)| (v + 1) as f64 * p)
            .sum();
        worst =
            worst.max((model.conditional_expectation(target, &evidence).unwrap() - want_e).abs());
    }
    let pass = worst <= 1e-10 && map_mismatch == 0;
    report(
        5,
        pass,
        &format!("200 instances: max |posterior/expectation error| {worst:.1e} (limit 1e-10), {map_mismatch} MAP mismatches"),
    );
    assert!(pass);
}

#[test]
fn criterion_6_trivial_construction() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut wrong_rank = 0;
    for _ in 0..50 {
        let order = rng.random_range(3..=4);
        let shape: Vec<usize> = (0..order).map(|_| rng.random_range(1..=4)).collect();
        let len: usize = shape.iter().product();
        let mut data: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        if data.iter().all(|&x| x == 0.0) {
            data[0] = 1.0;
        }
        let total: f64 = data.iter().sum();
        data.iter_mut().for_each(|x| *x /= total);
        let t = DenseTensor::from_data(&shape, data).unwrap();
        let bundle = construct_trivial_cpd(&t).unwrap();
        worst = worst.max(synthesize(&bundle).unwrap().max_abs_diff(&t));
        let expected = (0..order)
            .map(|k| {
                shape
                    .iter()
                    .enumerate()
                    .filter(|&(n, _)| n != k)
                    .map(|(_, &s)| s)
                    .product::<usize>()
            })
            .min()
            .unwrap();
        if bundle.rank() != expected {
            wrong_rank += 1;
        }
    }
    let pass = worst <= 1e-12 && wrong_rank == 0;
    report(
        6,
        pass,
        &format!("50 tensors: max resynthesis error {worst:.1e} (limit 1e-12), {wrong_rank} with the wrong column count"),
    );
    assert!(pass);
}

/// Exact projection by enumerating supports: on support `S` the minimizer
/// of `‖x − v‖²` over `Σx = 1` is `v_S − (Σv_S − 1)/|S|`; keep the closest
/// nonnegative candidate.
fn projection_oracle(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let k = mask.count_ones() as f64;
        let shift = ((0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| v[i])
            .sum::<f64>()
            - 1.0)
            / k;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                if mask >> i & 1 == 1 {
                    v[i] - shift
                } else {
                    0.0
                }
            })
            .collect();
        if x.iter().any(|&xi| xi < 0.0) {
            continue;
        }
        let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    }
    best.unwrap().1
}

#[test]
fn criterion_7_solver_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut proj_err = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(1..=8);
        let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let v: Vec<f64> = (0..n)
            .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let got = project_simplex(&v).unwrap();
        for (a, b) in got.iter().zip(projection_oracle(&v)) {
            proj_err = proj_err.max((a - b).abs());
        }
    }

    // One ADMM iteration from known (Z, U): Â must solve
    // (G + R) Â = V + R (Z + U).
    let mut normal_err = 0.0f64;
    for case in 0..100u64 {
        let f = rng.random_range(1..=8);
        let k = rng.random_range(1..=6);
        let a = random_bundle(&[k, 5, 6], f, 2000 + case).unwrap();
        let g = a.factor(1).gram().hadamard(&a.factor(2).gram()).unwrap();
        let v = Matrix::from_col_major(f, k, (0..f * k).map(|_| rng.random::<f64>()).collect())
            .unwrap();
        let z0 = a.factor(0).transpose();
        let u0 = Matrix::from_col_major(
            f,
            k,
            (0..f * k).map(|_| 0.1 * rng.random::<f64>()).collect(),
        )
        .unwrap();
        let rho = RhoPolicy::GramDiagonal.penalties(&g, SimplexAxis::Rows);
        let (mut z, mut u) = (z0.clone(), u0.clone());
        let out = solve_admm(&g, &v, &rho, &mut z, &mut u, 1, 0.0, SimplexAxis::Rows).unwrap();
        let lhs = g.matmul(&out.unconstrained).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for r in 0..f {
            for c in 0..k {
                let rhs = v.get(r, c) + rho[r] * (z0.get(r, c) + u0.get(r, c));
                let l = lhs.get(r, c) + rho[r] * out.unconstrained.get(r, c);
                num += (l - rhs).powi(2);
                den += rhs * rhs;
            }
        }
        normal_err = normal_err.max((num / den).sqrt());
    }

    // Final cost never above the initial one, exact and sampled fixtures.
    let mut rises = 0;
    let mut fixtures = 0;
    for seed in 0..6u64 {
        let truth = random_model(5, 4, 3, 300 + seed);
        let exact = MarginalSet::from_bundle(truth.bundle(), 3).unwrap();
        let data = sample_dataset(&truth, 2_000, 400 + seed).unwrap().data;
        let noisy = estimate_marginals(&data, 3).unwrap();
        for ms in [&exact, &noisy] {
            let mut config = FitConfig::new(3);
            config.seed = seed;
            config.max_outer_sweeps = 200;
            let (bundle, report) = fit(ms, &config, None).unwrap();
            fixtures += 1;
            let final_cost = coupled_cost(ms, &bundle).unwrap();
            if final_cost > report.cost_trace[0] {
                rises += 1;
            }
        }
    }

    let pass = proj_err <= 1e-12 && normal_err <= 1e-10 && rises == 0;
    report(
        7,
        pass,
        &format!(
            "projection vs support-enumeration QP {proj_err:.1e} (limit 1e-12); normal-equation residual {normal_err:.1e} (limit 1e-10); final > initial cost on {rises}/{fixtures} fixtures"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_synthetic_classification() {
    let spec = ClassificationSpec {
        n_vars: 6,
        alphabet: 4,
        true_rank: 4,
        fit_rank: 4,
        order: 3,
        records: 10_000,
        test_fraction: 0.2,
        target: None,
        trials: 10,
        seed: 1,
        fit: FitSettings {
            max_sweeps: Some(5_000),
            tol: Some(1e-10),
            ..FitSettings::default()
        },
    };
    let r = run_classification(&spec).unwrap();
    let gain = r.gain_over_majority.mean;
    let bayes_gain = r.bayes_accuracy.mean - r.majority_accuracy.mean;
    let pass = gain >= 0.10;
    report(
        8,
        pass,
        &format!(
            "10 trials, M=1e4, N=6, I=4, F=4: MAP accuracy {:.3}, majority {:.3}, gain {:+.1}pp (limit +10pp); Bayes-optimal under the true model {:.3}, gain {:+.1}pp",
            r.fitted_accuracy.mean,
            r.majority_accuracy.mean,
            100.0 * gain,
            r.bayes_accuracy.mean,
            100.0 * bayes_gain
        ),
    );
    assert!(pass, "gain {gain}, Bayes-optimal gain {bayes_gain}");
}
