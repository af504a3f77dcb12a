//! Acceptance suite for the toolkit: objective-level oracles and gradient
//! checks, optimization-loop conformance, evaluation-protocol identities,
//! and desk-scale end-to-end training comparisons on synthetic data.
//!
//! Everything runs inside one test, in order, so the slow shared corpus
//! and training runs are built exactly once. Each check prints a PASS or
//! FAIL line; failures pool into a single panic at the end so one broken
//! check never hides the rest. Run with
//! `cargo test --test acceptance -- --nocapture` to watch the verdicts.
//!
//! Set DEAPS_ACCEPT_CACHE=1 to reuse training runs from a previous
//! invocation; time budgets are then reported but not enforced.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use deaps_core::evalkit::{self, pca, probe, RepresentationTable};
use deaps_core::gradcheck::{analytic_grad, finite_diff_grad, max_relative_error};
use deaps_core::io::RecordMeta;
use deaps_core::model::{DeapsModel, Encoder, EncoderConfig, Init};
use deaps_core::objectives::{
    self, cosine_loss, covariance_loss, gradual_mask, gradual_term, par, ForwardBundle,
    LossConfig,
};
use deaps_core::pipeline;
use deaps_core::sampling::{Corpus, LoadedRecord, QuadBatch, QuadSampler};
use deaps_core::trainer::adam::{Adam, AdamConfig};
use deaps_core::trainer::{
    build_net, find_latest_checkpoint, Dtype, Method, Net, TrainConfig, TrainState,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

type Verdict = Result<String, String>;

#[test]
fn acceptance() {
    let mut failures = Vec::new();
    criterion(1, "gradient suite", &mut failures, c1_gradient_suite);
    criterion(2, "loss value oracles", &mut failures, c2_loss_oracles);
    criterion(3, "mask equivalence", &mut failures, c3_mask_equivalence);
    criterion(4, "stop gradient and moving average", &mut failures, c4_stop_gradient_ema);
    criterion(5, "single step conformance", &mut failures, c5_step_conformance);
    criterion(6, "smoke training descends without collapse", &mut failures, c6_smoke_training);
    criterion(7, "method comparison on held-out subjects", &mut failures, c7_method_comparison);
    criterion(8, "component analysis separation", &mut failures, c8_component_separation);
    criterion(9, "evaluation protocol oracles", &mut failures, c9_protocol_oracles);
    criterion(10, "parameter count", &mut failures, c10_parameter_count);
    assert!(
        failures.is_empty(),
        "{} acceptance check(s) failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}

fn criterion<F>(id: usize, name: &str, failures: &mut Vec<String>, body: F)
where
    F: FnOnce() -> Verdict,
{
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(body));
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(Ok(detail)) if detail.is_empty() => {
            println!("criterion {id:2} PASS {name} ({secs:.1}s)");
        }
        Ok(Ok(detail)) => {
            println!("criterion {id:2} PASS {name} ({secs:.1}s): {detail}");
        }
        Ok(Err(msg)) => {
            println!("criterion {id:2} FAIL {name} ({secs:.1}s): {msg}");
            failures.push(format!("criterion {id} ({name}): {msg}"));
        }
        Err(payload) => {
            let msg = panic_text(payload);
            println!("criterion {id:2} FAIL {name} ({secs:.1}s): panicked: {msg}");
            failures.push(format!("criterion {id} ({name}): panicked: {msg}"));
        }
    }
}

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string payload".to_string()
    }
}

// ---------------------------------------------------------------------------
// Small tensor helpers. Everything numerical runs on the CPU in f64 so the
// finite-difference and closed-form tolerances below are meaningful.

const DEV: Device = Device::Cpu;

fn t2(vals: &[f64], rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(vals.to_vec(), (rows, cols), &DEV).unwrap()
}

fn col(vals: &[f64]) -> Tensor {
    Tensor::from_vec(vals.to_vec(), (vals.len(), 1), &DEV).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_vec0::<f64>().unwrap()
}

fn flat_f64(t: &Tensor) -> Vec<f64> {
    t.flatten_all()
        .unwrap()
        .to_dtype(DType::F64)
        .unwrap()
        .to_vec1::<f64>()
        .unwrap()
}

fn rand_t(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let vals: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    t2(&vals, rows, cols)
}

fn rand_var(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Var {
    Var::from_tensor(&rand_t(rng, rows, cols)).unwrap()
}

fn rand_offsets(rng: &mut ChaCha8Rng, rows: usize) -> Tensor {
    let vals: Vec<f64> = (0..rows).map(|_| rng.random_range(1..=5) as f64).collect();
    col(&vals)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients match central finite differences for all
// four losses on 20 random instances each, in double precision, within a
// minute of wall time.

fn check_grad<F>(f: &mut F, var: &Var, what: &str) -> Result<(), String>
where
    F: FnMut() -> deaps_core::Result<Tensor>,
{
    let loss = f().expect("forward pass");
    let analytic = analytic_grad(&loss, var).expect("backward pass");
    let numeric = finite_diff_grad(f, var, 1e-5).expect("finite differences");
    let rel = max_relative_error(&analytic, &numeric);
    if rel >= 1e-4 {
        return Err(format!("{what}: relative error {rel:.3e} >= 1e-4"));
    }
    Ok(())
}

fn build_bundle(sv: &[Var], tv: &[Tensor], i: &Tensor, j: &Tensor) -> ForwardBundle {
    ForwardBundle {
        s_static_1: sv[0].as_tensor().clone(),
        s_static_t: sv[1].as_tensor().clone(),
        s_dyn_a: sv[2].as_tensor().clone(),
        s_dyn_t: sv[3].as_tensor().clone(),
        s_dyn_b: sv[4].as_tensor().clone(),
        p_static_1: sv[5].as_tensor().clone(),
        p_static_t: sv[6].as_tensor().clone(),
        p_dyn_a: sv[7].as_tensor().clone(),
        p_dyn_t: sv[8].as_tensor().clone(),
        p_dyn_b: sv[9].as_tensor().clone(),
        t_static_1: tv[0].clone(),
        t_static_t: tv[1].clone(),
        t_dyn_a: tv[2].clone(),
        t_dyn_t: tv[3].clone(),
        t_dyn_b: tv[4].clone(),
        offsets_i: i.clone(),
        offsets_j: j.clone(),
    }
}

fn c1_gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let eps = 1e-8;
    let (b, d) = (4, 8);

    for inst in 0..20 {
        let a = rand_var(&mut rng, b, d);
        let bb = rand_var(&mut rng, b, d);
        for (tag, var) in [("first", &a), ("second", &bb)] {
            let mut f = || cosine_loss(a.as_tensor(), bb.as_tensor(), eps);
            check_grad(&mut f, var, &format!("cosine_loss/{tag} #{inst}"))?;
        }
    }

    for inst in 0..20 {
        let mid = rand_var(&mut rng, b, d);
        let za = rand_var(&mut rng, b, d);
        let zb = rand_var(&mut rng, b, d);
        let i = rand_offsets(&mut rng, b);
        let j = rand_offsets(&mut rng, b);
        let pred_a = rand_t(&mut rng, b, d);
        let pred_b = rand_t(&mut rng, b, d);
        let mask = gradual_mask(&pred_a, &pred_b, d / 2).unwrap();
        for (tag, var) in [("mid", &mid), ("za", &za), ("zb", &zb)] {
            let mut f = || {
                gradual_term(mid.as_tensor(), za.as_tensor(), zb.as_tensor(), &i, &j, &mask, eps)
            };
            check_grad(&mut f, var, &format!("gradual_term/{tag} #{inst}"))?;
        }
    }

    for inst in 0..20 {
        let z = rand_var(&mut rng, b, d);
        let mut f = || covariance_loss(z.as_tensor());
        check_grad(&mut f, &z, &format!("covariance_loss #{inst}"))?;
    }

    let cfg = LossConfig {
        alpha: 0.1,
        eps,
        n_selected: d / 2,
    };
    for inst in 0..20 {
        let sv: Vec<Var> = (0..10).map(|_| rand_var(&mut rng, b, d)).collect();
        let tv: Vec<Tensor> = (0..5).map(|_| rand_t(&mut rng, b, d)).collect();
        let i = rand_offsets(&mut rng, b);
        let j = rand_offsets(&mut rng, b);
        // The selection mask is data dependent and piecewise constant, so it
        // is frozen at the base point; the check differentiates the loss
        // given that mask, exactly as one optimization step does.
        let mask = objectives::make_mask(&build_bundle(&sv, &tv, &i, &j), &cfg).unwrap();
        for (k, var) in sv.iter().enumerate() {
            let mut f = || {
                objectives::total_loss(&build_bundle(&sv, &tv, &i, &j), &mask, &cfg)
                    .map(|(loss, _)| loss)
            };
            check_grad(&mut f, var, &format!("total_loss/input{k} #{inst}"))?;
        }
    }

    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "gradient suite took {secs:.1}s, budget is 60s");
    Ok(format!("80 instances, max step 1e-5, done in {secs:.1}s"))
}

// ---------------------------------------------------------------------------
// Criterion 2: every documented example value of the objectives module,
// exact where the arithmetic is exact in doubles and within 1e-9 otherwise.

fn c2_loss_oracles() -> Verdict {
    let eps = 1e-8;

    // cosine_loss: identical, orthogonal, and hand-computed 0.6 cosine.
    let same = t2(&[0.3, -0.7, 0.5], 1, 3);
    let v = scalar(&cosine_loss(&same, &same, eps).unwrap());
    ensure!(v.abs() < 1e-9, "cosine of identical vectors gave {v:e}");
    let v = scalar(&cosine_loss(&t2(&[1.0, 0.0], 1, 2), &t2(&[0.0, 1.0], 1, 2), eps).unwrap());
    ensure!(v == 1.0, "cosine of orthogonal vectors gave {v}");
    let v = scalar(&cosine_loss(&t2(&[1.0, 0.0], 1, 2), &t2(&[0.6, 0.8], 1, 2), eps).unwrap());
    ensure!((v - 0.4).abs() < 1e-9, "hand-computed cosine case gave {v}");

    // par: symmetric midpoint, degenerate offset limit, and the 2:1 case.
    let p = par(
        &t2(&[0.0, 0.0], 1, 2),
        &t2(&[2.0, 2.0], 1, 2),
        &col(&[1.0]),
        &col(&[1.0]),
    )
    .unwrap();
    ensure!(flat_f64(&p) == vec![1.0, 1.0], "midpoint case gave {:?}", flat_f64(&p));
    let p = par(
        &t2(&[0.5, -0.25], 1, 2),
        &t2(&[17.0, 3.0], 1, 2),
        &col(&[1e-9]),
        &col(&[1.0]),
    )
    .unwrap();
    let got = flat_f64(&p);
    ensure!(
        (got[0] - 0.5).abs() < 1e-6 && (got[1] + 0.25).abs() < 1e-6,
        "near-zero offset should return the first endpoint, got {got:?}"
    );
    let p = par(
        &t2(&[0.0, 3.0], 1, 2),
        &t2(&[3.0, 0.0], 1, 2),
        &col(&[2.0]),
        &col(&[1.0]),
    )
    .unwrap();
    ensure!(flat_f64(&p) == vec![2.0, 1.0], "2:1 interpolation gave {:?}", flat_f64(&p));

    // gradual_mask: documented selections including the tie case.
    let m = gradual_mask(&t2(&[0.1, 1.5, 0.7, 0.05], 1, 4), &t2(&[0.0; 4], 1, 4), 2).unwrap();
    ensure!(flat_f64(&m) == vec![0.0, 1.0, 1.0, 0.0], "top-2 mask gave {:?}", flat_f64(&m));
    let m = gradual_mask(&t2(&[0.1, 1.5, 0.7, 0.05], 1, 4), &t2(&[0.0; 4], 1, 4), 4).unwrap();
    ensure!(flat_f64(&m) == vec![1.0; 4], "full-width mask gave {:?}", flat_f64(&m));
    let m = gradual_mask(&t2(&[1.0, 1.0, 0.0, 0.0], 1, 4), &t2(&[0.0; 4], 1, 4), 1).unwrap();
    ensure!(
        flat_f64(&m) == vec![1.0, 0.0, 0.0, 0.0],
        "tie should resolve to the lower index, got {:?}",
        flat_f64(&m)
    );

    // gradual_term: collinear, orthogonal, and hand-computed 45 degrees.
    let ones = t2(&[1.0, 1.0], 1, 2);
    let za = t2(&[1.0, 2.0], 1, 2);
    let zb = t2(&[3.0, 0.0], 1, 2);
    let unit = (&col(&[1.0]), &col(&[1.0]));
    // par(za, zb, 1, 1) is [2, 1]; a middle vector of [4, 2] is collinear.
    let v = scalar(
        &gradual_term(&t2(&[4.0, 2.0], 1, 2), &za, &zb, unit.0, unit.1, &ones, eps).unwrap(),
    );
    ensure!(v.abs() < 1e-9, "collinear middle gave {v:e}");
    let v = scalar(
        &gradual_term(&t2(&[1.0, -2.0], 1, 2), &za, &zb, unit.0, unit.1, &ones, eps).unwrap(),
    );
    ensure!((v - 1.0).abs() < 1e-9, "orthogonal middle gave {v}");
    let e10 = t2(&[1.0, 0.0], 1, 2);
    let v = scalar(
        &gradual_term(&t2(&[1.0, 1.0], 1, 2), &e10, &e10, unit.0, unit.1, &ones, eps).unwrap(),
    );
    let expect = 1.0 - 1.0 / 2f64.sqrt();
    ensure!((v - expect).abs() < 1e-9, "45 degree case gave {v}, want {expect}");

    // covariance_loss: decorrelated zero, the exact 4.0 case, and quartic
    // homogeneity under batch scaling.
    let v = scalar(
        &covariance_loss(&t2(&[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0], 4, 2)).unwrap(),
    );
    ensure!(v == 0.0, "decorrelated batch gave {v:e}");
    let v = scalar(&covariance_loss(&t2(&[1.0, 1.0, -1.0, -1.0], 2, 2)).unwrap());
    ensure!(v == 4.0, "correlated pair gave {v}, want exactly 4");
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let z = rand_t(&mut rng, 4, 3);
    let base = scalar(&covariance_loss(&z).unwrap());
    let scaled = scalar(&covariance_loss(&(&z * 2.0).unwrap()).unwrap());
    ensure!(
        (scaled - 16.0 * base).abs() <= 1e-9 * scaled.abs().max(1.0),
        "scaling by 2 gave {scaled}, want 16x of {base}"
    );

    // total_loss composition: a bundle built so the three terms are exactly
    // 0.5, 0.3, and 1.0, which must combine to 0.9 under alpha = 0.1.
    let s = 0.84f64.sqrt();
    let bundle = ForwardBundle {
        s_static_1: t2(&[1.0, 0.5], 1, 2),
        s_static_t: t2(&[-1.0, -0.5], 1, 2),
        s_dyn_a: t2(&[1.0, 2.0], 1, 2),
        s_dyn_t: t2(&[1.0, 2.0], 1, 2),
        s_dyn_b: t2(&[1.0, 2.0], 1, 2),
        p_static_1: t2(&[1.0, 0.0], 1, 2),
        p_static_t: t2(&[1.0, 0.0], 1, 2),
        p_dyn_a: t2(&[0.4, s], 1, 2),
        p_dyn_t: t2(&[1.0, 0.0], 1, 2),
        p_dyn_b: t2(&[0.4, s], 1, 2),
        t_static_1: t2(&[1.0, 0.0], 1, 2),
        t_static_t: t2(&[0.0, 1.0], 1, 2),
        t_dyn_a: t2(&[2.0, 0.0], 1, 2),
        t_dyn_t: t2(&[1.0, 0.0], 1, 2),
        t_dyn_b: t2(&[2.0, 0.0], 1, 2),
        offsets_i: col(&[1.0]),
        offsets_j: col(&[1.0]),
    };
    let cfg = LossConfig {
        alpha: 0.1,
        eps,
        n_selected: 2,
    };
    let mask = objectives::make_mask(&bundle, &cfg).unwrap();
    ensure!(flat_f64(&mask) == vec![1.0, 1.0], "full-width mask expected");
    let (_, bd) = objectives::total_loss(&bundle, &mask, &cfg).unwrap();
    ensure!(bd.l_sim == 0.5, "similarity term gave {}, want exactly 0.5", bd.l_sim);
    ensure!((bd.l_gra - 0.3).abs() < 1e-9, "gradual term gave {}, want 0.3", bd.l_gra);
    ensure!(bd.l_cov == 1.0, "covariance term gave {}, want exactly 1", bd.l_cov);
    ensure!((bd.total - 0.9).abs() < 1e-9, "composition gave {}, want 0.9", bd.total);

    // Weight zero drops the covariance term.
    let cfg0 = LossConfig { alpha: 0.0, ..cfg };
    let (_, bd0) = objectives::total_loss(&bundle, &mask, &cfg0).unwrap();
    ensure!(
        bd0.total == bd0.l_sim + bd0.l_gra,
        "alpha 0 total {} differs from sim {} + gra {}",
        bd0.total,
        bd0.l_sim,
        bd0.l_gra
    );

    // Student equal to teacher and collinear with the interpolation target
    // zeroes both cosine terms exactly.
    let e = t2(&[1.0, 0.0], 1, 2);
    let aligned = ForwardBundle {
        s_static_1: e.clone(),
        s_static_t: e.clone(),
        s_dyn_a: e.clone(),
        s_dyn_t: e.clone(),
        s_dyn_b: e.clone(),
        p_static_1: e.clone(),
        p_static_t: e.clone(),
        p_dyn_a: e.clone(),
        p_dyn_t: e.clone(),
        p_dyn_b: e.clone(),
        t_static_1: e.clone(),
        t_static_t: e.clone(),
        t_dyn_a: e.clone(),
        t_dyn_t: e.clone(),
        t_dyn_b: e.clone(),
        offsets_i: col(&[1.0]),
        offsets_j: col(&[1.0]),
    };
    let mask = objectives::make_mask(&aligned, &cfg).unwrap();
    let (_, bda) = objectives::total_loss(&aligned, &mask, &cfg).unwrap();
    ensure!(bda.l_sim == 0.0, "aligned similarity gave {}", bda.l_sim);
    ensure!(bda.l_gra == 0.0, "aligned gradual gave {}", bda.l_gra);

    Ok("18 documented example values hold".to_string())
}

// ---------------------------------------------------------------------------
// Criterion 3: the selection mask equals a brute-force repeated-maximum
// oracle on 1000 random 16x64 instances, half of them quantized so exact
// ties are common, and every row sums to exactly the selection count.

fn c3_mask_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (b, d) = (16, 64);
    for inst in 0..1000 {
        let quantized = inst % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if quantized {
                rng.random_range(-4..=4) as f64 * 0.25
            } else {
                rng.random_range(-1.0..1.0)
            }
        };
        let mut a_vals: Vec<f64> = (0..b * d).map(|_| draw(&mut rng)).collect();
        let b_vals: Vec<f64> = (0..b * d).map(|_| draw(&mut rng)).collect();
        if inst == 0 {
            // Force one fully tied row: all differences zero.
            a_vals[..d].copy_from_slice(&b_vals[..d]);
        }
        let n = rng.random_range(1..=d);

        let mask = gradual_mask(&t2(&a_vals, b, d), &t2(&b_vals, b, d), n).unwrap();
        let mask = mask.to_dtype(DType::F64).unwrap().to_vec2::<f64>().unwrap();

        for row in 0..b {
            let diffs: Vec<f64> =
                (0..d).map(|c| (a_vals[row * d + c] - b_vals[row * d + c]).abs()).collect();
            // Oracle: pick the maximum remaining difference n times, first
            // occurrence winning ties, without any sorting.
            let mut selected = vec![false; d];
            for _ in 0..n {
                let mut best = None;
                for (c, &val) in diffs.iter().enumerate() {
                    if selected[c] {
                        continue;
                    }
                    match best {
                        None => best = Some(c),
                        Some(bc) => {
                            if val > diffs[bc] {
                                best = Some(c);
                            }
                        }
                    }
                }
                selected[best.unwrap()] = true;
            }
            let row_sum: f64 = mask[row].iter().sum();
            ensure!(
                row_sum == n as f64,
                "instance {inst} row {row}: mask sums to {row_sum}, want {n}"
            );
            for c in 0..d {
                let want = if selected[c] { 1.0 } else { 0.0 };
                ensure!(
                    mask[row][c] == want,
                    "instance {inst} row {row} feature {c}: mask {} vs oracle {want} \
                     (diff {}, n {n})",
                    mask[row][c],
                    diffs[c]
                );
            }
        }
    }
    Ok("1000 instances, half with quantized ties".to_string())
}

// ---------------------------------------------------------------------------
// Shared scaffolding for the optimization-loop checks: a small in-memory
// corpus of synthetic sine records and a double-precision configuration.

fn toy_corpus(subjects: u32, seconds: u32) -> Corpus {
    let fs = pipeline::TARGET_FS;
    let n = (seconds as f64 * fs) as usize;
    let tau = std::f64::consts::TAU;
    let mut records = Vec::new();
    for s in 0..subjects {
        for r in 0..2u32 {
            let f0 = 0.8 + 0.07 * s as f64 + 0.01 * r as f64;
            let samples: Vec<f32> = (0..n)
                .map(|k| {
                    let t = k as f64 / fs;
                    ((f0 * t * tau).sin() + 0.3 * (0.05 * t * tau).sin()) as f32
                })
                .collect();
            let meta = RecordMeta {
                subject_id: s,
                record_id: r,
                fs,
                n_samples: n,
                static_class: None,
                window_labels: None,
                pipeline: None,
            };
            records.push(LoadedRecord {
                subject_id: s,
                record_id: r,
                samples,
                fs,
                meta,
            });
        }
    }
    Corpus::from_records(records)
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        method: Method::Deaps,
        iterations: 1,
        batch_size: 4,
        window_size_s: 20,
        min_offset_s: 2,
        seed: 7,
        lr: 1e-3,
        weight_decay: 1e-6,
        tau: 0.995,
        alpha: 0.1,
        n_selected: 4,
        temperature: 0.1,
        checkpoint_every: 1,
        dtype: Dtype::F64,
        encoder: EncoderConfig {
            input_len: 200,
            patch_len: 50,
            n_blocks: 1,
            n_heads: 2,
            model_dim: 16,
            head_hidden: 32,
            head_out: 8,
        },
    }
}

/// Mirrors the training forward pass through public model APIs: one encoder
/// call per network over the concatenated quadruplet, heads seeing each
/// branch as one batch, teacher outputs detached.
fn scripted_forward(
    student: &DeapsModel,
    teacher: &DeapsModel,
    batch: &QuadBatch,
    dtype: DType,
) -> ForwardBundle {
    let b = batch.len();
    let to_t = |flat: Vec<f32>| {
        let cols = flat.len() / b;
        Tensor::from_vec(flat, (b, cols), &DEV)
            .unwrap()
            .to_dtype(dtype)
            .unwrap()
    };
    let x1 = to_t(batch.flat_x1());
    let xa = to_t(batch.flat_x_tmi());
    let xt = to_t(batch.flat_x_t());
    let xb = to_t(batch.flat_x_tpj());
    let x_all = Tensor::cat(&[&x1, &xa, &xt, &xb], 0).unwrap();

    let branch = |model: &DeapsModel| {
        let h = model.encoder.forward(&x_all).unwrap();
        let h1 = h.narrow(0, 0, b).unwrap();
        let ha = h.narrow(0, b, b).unwrap();
        let ht = h.narrow(0, 2 * b, b).unwrap();
        let hb = h.narrow(0, 3 * b, b).unwrap();
        let zs = model
            .proj_static
            .forward(&Tensor::cat(&[&h1, &ht], 0).unwrap(), true)
            .unwrap();
        let zd = model
            .proj_dynamic
            .forward(&Tensor::cat(&[&ha, &ht, &hb], 0).unwrap(), true)
            .unwrap();
        (zs, zd)
    };

    let (zs, zd) = branch(student);
    let ps = student.pred_static.as_ref().unwrap().forward(&zs, true).unwrap();
    let pd = student.pred_dynamic.as_ref().unwrap().forward(&zd, true).unwrap();
    let (tzs, tzd) = branch(teacher);
    let tzs = tzs.detach();
    let tzd = tzd.detach();

    let offsets = |vals: Vec<f64>| {
        Tensor::from_vec(vals, (b, 1), &DEV)
            .unwrap()
            .to_dtype(dtype)
            .unwrap()
    };

    ForwardBundle {
        s_static_1: zs.narrow(0, 0, b).unwrap(),
        s_static_t: zs.narrow(0, b, b).unwrap(),
        s_dyn_a: zd.narrow(0, 0, b).unwrap(),
        s_dyn_t: zd.narrow(0, b, b).unwrap(),
        s_dyn_b: zd.narrow(0, 2 * b, b).unwrap(),
        p_static_1: ps.narrow(0, 0, b).unwrap(),
        p_static_t: ps.narrow(0, b, b).unwrap(),
        p_dyn_a: pd.narrow(0, 0, b).unwrap(),
        p_dyn_t: pd.narrow(0, b, b).unwrap(),
        p_dyn_b: pd.narrow(0, 2 * b, b).unwrap(),
        t_static_1: tzs.narrow(0, 0, b).unwrap(),
        t_static_t: tzs.narrow(0, b, b).unwrap(),
        t_dyn_a: tzd.narrow(0, 0, b).unwrap(),
        t_dyn_t: tzd.narrow(0, b, b).unwrap(),
        t_dyn_b: tzd.narrow(0, 2 * b, b).unwrap(),
        offsets_i: offsets(batch.offsets_i()),
        offsets_j: offsets(batch.offsets_j()),
    }
}

// ---------------------------------------------------------------------------
// Criterion 4: teacher tensors receive no gradient from the total loss, and
// the moving average contracts teacher-to-student distance by exactly tau
// per step over ten steps.

fn c4_stop_gradient_ema() -> Verdict {
    let cfg = tiny_cfg();
    let corpus = toy_corpus(4, 60);
    let net = build_net(&cfg).unwrap();
    let Net::Deaps { student, teacher } = &net else {
        return Err("expected the student/teacher pair".to_string());
    };
    let mut sampler = QuadSampler::new(cfg.sampler_config(), &corpus).unwrap();
    let batch = sampler.next_batch(&corpus).unwrap();

    let bundle = scripted_forward(student, teacher, &batch, DType::F64);
    let loss_cfg = cfg.loss_config();
    let mask = objectives::make_mask(&bundle, &loss_cfg).unwrap();
    let (loss, _) = objectives::total_loss(&bundle, &mask, &loss_cfg).unwrap();
    let grads = loss.backward().unwrap();

    let teacher_tensors = net.teacher_tensors().expect("teacher exists");
    for (name, var) in &teacher_tensors {
        if let Some(g) = grads.get(var.as_tensor()) {
            let worst = flat_f64(g).into_iter().fold(0f64, |m, v| m.max(v.abs()));
            ensure!(worst == 0.0, "teacher tensor {name} received gradient {worst:e}");
        }
    }
    let missing: Vec<String> = net
        .student_vars()
        .iter()
        .filter(|(_, v)| grads.get(v.as_tensor()).is_none())
        .map(|(n, _)| n.clone())
        .collect();
    ensure!(missing.is_empty(), "student parameters got no gradient: {missing:?}");

    // Moving-average contraction: push the teacher half a unit away from
    // the frozen student, then verify the per-element distance shrinks by
    // exactly tau to the tenth after ten updates.
    let pairs = DeapsModel::ema_pairs(student, teacher);
    for (_, t) in &pairs {
        t.set(&(t.as_tensor() + 0.5).unwrap()).unwrap();
    }
    let theta: Vec<Vec<f64>> = pairs.iter().map(|(s, _)| flat_f64(s.as_tensor())).collect();
    let xi0: Vec<Vec<f64>> = pairs.iter().map(|(_, t)| flat_f64(t.as_tensor())).collect();
    let tau = 0.995f64;
    for _ in 0..10 {
        net.ema_step(tau).unwrap();
    }
    let factor = tau.powi(10);
    let mut worst = 0f64;
    for (p, (_, t)) in pairs.iter().enumerate() {
        let xik = flat_f64(t.as_tensor());
        for e in 0..xik.len() {
            let got = (xik[e] - theta[p][e]).abs();
            let want = factor * (xi0[p][e] - theta[p][e]).abs();
            worst = worst.max((got - want).abs());
        }
    }
    ensure!(worst <= 1e-10, "contraction deviates from tau^10 by {worst:e}");
    Ok(format!(
        "{} teacher tensors gradient-free, contraction error {worst:.1e}",
        teacher_tensors.len()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 5: one train_step equals one scripted forward, one Adam update,
// and one moving-average update, with the loss breakdown matching an
// independent recomposition of the three terms.

fn c5_step_conformance() -> Verdict {
    let cfg = tiny_cfg();
    let corpus = toy_corpus(4, 60);

    // Keep a pristine copy of the initial weights for the moving-average
    // identity below. Construction is deterministic in the seed.
    let pristine = build_net(&cfg).unwrap();

    let mut state = TrainState::new(cfg.clone(), &corpus).unwrap();
    let stats = state.train_step(&corpus).unwrap();
    ensure!(state.iteration == 1, "iteration counter is {}", state.iteration);
    ensure!(state.opt.t == 1, "optimizer step counter is {}", state.opt.t);

    // Replica: same seed, fresh sampler, scripted forward, one hand-driven
    // Adam step and one moving-average step.
    let replica = build_net(&cfg).unwrap();
    let Net::Deaps { student, teacher } = &replica else {
        return Err("expected the student/teacher pair".to_string());
    };
    let mut sampler = QuadSampler::new(cfg.sampler_config(), &corpus).unwrap();
    let batch = sampler.next_batch(&corpus).unwrap();
    let bundle = scripted_forward(student, teacher, &batch, cfg.dtype.to_dtype());
    let loss_cfg = cfg.loss_config();
    let mask = objectives::make_mask(&bundle, &loss_cfg).unwrap();

    // Independent recomposition of the three terms from the forward
    // tensors, combined in plain f64 arithmetic.
    let eps = loss_cfg.eps;
    let my_sim = 0.5
        * (scalar(&cosine_loss(&bundle.p_static_1, &bundle.t_static_t, eps).unwrap())
            + scalar(&cosine_loss(&bundle.p_static_t, &bundle.t_static_1, eps).unwrap()));
    let my_gra = 0.5
        * (scalar(
            &gradual_term(
                &bundle.t_dyn_t,
                &bundle.p_dyn_a,
                &bundle.p_dyn_b,
                &bundle.offsets_i,
                &bundle.offsets_j,
                &mask,
                eps,
            )
            .unwrap(),
        ) + scalar(
            &gradual_term(
                &bundle.p_dyn_t,
                &bundle.t_dyn_a,
                &bundle.t_dyn_b,
                &bundle.offsets_i,
                &bundle.offsets_j,
                &mask,
                eps,
            )
            .unwrap(),
        ));
    let static_cat = Tensor::cat(&[&bundle.s_static_1, &bundle.s_static_t], 0).unwrap();
    let dynamic_cat =
        Tensor::cat(&[&bundle.s_dyn_a, &bundle.s_dyn_t, &bundle.s_dyn_b], 0).unwrap();
    let my_cov = scalar(&covariance_loss(&static_cat).unwrap())
        + scalar(&covariance_loss(&dynamic_cat).unwrap());
    let my_total = my_sim + my_gra + loss_cfg.alpha * my_cov;

    ensure!(
        (stats.loss.l_sim - my_sim).abs() < 1e-8,
        "similarity {} vs recomposed {my_sim}",
        stats.loss.l_sim
    );
    ensure!(
        (stats.loss.l_gra - my_gra).abs() < 1e-8,
        "gradual {} vs recomposed {my_gra}",
        stats.loss.l_gra
    );
    ensure!(
        (stats.loss.l_cov - my_cov).abs() < 1e-8,
        "covariance {} vs recomposed {my_cov}",
        stats.loss.l_cov
    );
    ensure!(
        (stats.loss.total - my_total).abs() < 1e-8,
        "total {} vs recomposed {my_total}",
        stats.loss.total
    );

    // Drive the replica through exactly one update of each kind.
    let (loss, _) = objectives::total_loss(&bundle, &mask, &loss_cfg).unwrap();
    let grads = loss.backward().unwrap();
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    opt.step(&replica.student_vars(), &grads).unwrap();
    replica.ema_step(cfg.tau).unwrap();

    let compare = |label: &str,
                   left: Vec<(String, Var)>,
                   right: Vec<(String, Var)>|
     -> Result<f64, String> {
        if left.len() != right.len() {
            return Err(format!(
                "{label}: {} tensors vs {} in the replica",
                left.len(),
                right.len()
            ));
        }
        let mut worst = 0f64;
        for ((ln, lv), (rn, rv)) in left.iter().zip(&right) {
            if ln != rn {
                return Err(format!("{label}: tensor order diverged, {ln} vs {rn}"));
            }
            let a = flat_f64(lv.as_tensor());
            let b = flat_f64(rv.as_tensor());
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs());
            }
        }
        if worst > 1e-10 {
            return Err(format!("{label}: differs from the replica by {worst:e}"));
        }
        Ok(worst)
    };
    compare("student parameters", state.net.student_vars(), replica.student_vars())?;
    compare("student buffers", state.net.student_buffers(), replica.student_buffers())?;
    compare(
        "teacher tensors",
        state.net.teacher_tensors().unwrap(),
        replica.teacher_tensors().unwrap(),
    )?;

    // Moving-average identity in plain f64: the post-step teacher equals
    // tau times the initial teacher plus (1 - tau) times the post-step
    // student, element for element.
    let Net::Deaps { student: s1, teacher: t1 } = &state.net else {
        return Err("expected the student/teacher pair".to_string());
    };
    let Net::Deaps { student: s0, teacher: t0 } = &pristine else {
        return Err("expected the student/teacher pair".to_string());
    };
    let pairs1 = DeapsModel::ema_pairs(s1, t1);
    let pairs0 = DeapsModel::ema_pairs(s0, t0);
    ensure!(pairs1.len() == pairs0.len(), "moving-average pair counts diverged");
    let mut worst = 0f64;
    for ((s1v, t1v), (_, t0v)) in pairs1.iter().zip(&pairs0) {
        let theta1 = flat_f64(s1v.as_tensor());
        let xi1 = flat_f64(t1v.as_tensor());
        let xi0 = flat_f64(t0v.as_tensor());
        for e in 0..xi1.len() {
            let want = cfg.tau * xi0[e] + (1.0 - cfg.tau) * theta1[e];
            worst = worst.max((xi1[e] - want).abs());
        }
    }
    ensure!(worst <= 1e-12, "moving-average identity off by {worst:e}");

    Ok(format!(
        "breakdown recomposed within 1e-8, replica exact to 1e-10, average identity {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Shared end-to-end fixture: a 16-subject synthetic corpus generated and
// preprocessed through the command line binary, then one smoke-preset
// training run per method at seed 0.

struct Smoke {
    proc_manifest: PathBuf,
    runs: BTreeMap<&'static str, PathBuf>,
    train_secs: BTreeMap<&'static str, f64>,
    /// False when checkpoints from a previous invocation were reused, in
    /// which case wall-time budgets are reported but not enforced.
    fresh: bool,
}

static SMOKE: OnceLock<Result<Smoke, String>> = OnceLock::new();

fn smoke() -> Result<&'static Smoke, String> {
    SMOKE.get_or_init(build_smoke).as_ref().map_err(Clone::clone)
}

fn run_bin(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deaps"))
        .args(args)
        .output()
        .map_err(|e| format!("spawning the binary failed: {e}"))?;
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    if !out.status.success() {
        return Err(format!(
            "deaps {} exited with {:?}:\n{stdout}{stderr}",
            args.join(" "),
            out.status.code()
        ));
    }
    Ok(stdout)
}

fn build_smoke() -> Result<Smoke, String> {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let cache = std::env::var("DEAPS_ACCEPT_CACHE").as_deref() == Ok("1");
    if !cache && root.exists() {
        fs::remove_dir_all(&root).map_err(|e| format!("clearing {}: {e}", root.display()))?;
    }
    fs::create_dir_all(&root).map_err(|e| format!("creating {}: {e}", root.display()))?;

    let raw_manifest = root.join("raw").join("manifest.csv");
    let proc_manifest = root.join("proc").join("manifest.csv");
    if !raw_manifest.exists() {
        run_bin(&[
            "synth",
            "--subjects",
            "16",
            "--records",
            "2",
            "--duration",
            "300",
            "--seed",
            "0",
            "--out",
            root.join("raw").to_str().unwrap(),
        ])?;
    }
    if !proc_manifest.exists() {
        run_bin(&[
            "preprocess",
            "--in-manifest",
            raw_manifest.to_str().unwrap(),
            "--out",
            root.join("proc").to_str().unwrap(),
        ])?;
    }

    let mut runs = BTreeMap::new();
    let mut train_secs = BTreeMap::new();
    let mut fresh = true;
    for method in ["deaps", "byol", "contrastive"] {
        let dir = root.join(method);
        let done_before = find_latest_checkpoint(&dir)
            .ok()
            .flatten()
            .map(|p| p.to_string_lossy().contains("ckpt_002000"))
            .unwrap_or(false);
        fresh &= !done_before;
        let t0 = Instant::now();
        run_bin(&[
            "train",
            "--preset",
            "smoke",
            "--method",
            method,
            "--seed",
            "0",
            "--data",
            proc_manifest.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])?;
        train_secs.insert(method, t0.elapsed().as_secs_f64());
        runs.insert(method, dir);
    }
    Ok(Smoke {
        proc_manifest,
        runs,
        train_secs,
        fresh,
    })
}

fn final_reps(fx: &Smoke, method: &str) -> Result<RepresentationTable, String> {
    let dir = &fx.runs[method];
    let ckpt = find_latest_checkpoint(dir)
        .map_err(|e| format!("scanning {}: {e}", dir.display()))?
        .ok_or_else(|| format!("no checkpoint in {}", dir.display()))?;
    evalkit::embed_checkpoint(&ckpt, &fx.proc_manifest, 64)
        .map_err(|e| format!("embedding {method}: {e}"))
}

fn read_totals(path: &Path) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty loss log")?;
    ensure!(
        header == "iter,l_sim,l_gra,l_cov,total",
        "unexpected loss log header: {header}"
    );
    lines
        .map(|l| {
            l.rsplit(',')
                .next()
                .unwrap()
                .parse::<f64>()
                .map_err(|e| format!("bad total in row {l:?}: {e}"))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Criterion 6: the smoke run's loss trends down over 2000 iterations and the
// learned representations do not collapse, within the wall-time budget.

fn c6_smoke_training() -> Verdict {
    let fx = smoke()?;
    let secs = fx.train_secs["deaps"];
    let totals = read_totals(&fx.runs["deaps"].join("loss_log.csv"))?;
    ensure!(totals.len() == 2000, "loss log holds {} rows, want 2000", totals.len());
    let first = mean(&totals[..100]);
    let last = mean(&totals[1900..]);
    ensure!(
        last < first,
        "mean total loss did not descend: first 100 {first:.4}, last 100 {last:.4}"
    );

    let table = final_reps(fx, "deaps")?;
    let n = table.rows.len() as f64;
    let mut min_std = f64::INFINITY;
    for c in 0..table.dim {
        let vals: Vec<f64> = table.rows.iter().map(|r| r.h[c] as f64).collect();
        let m = mean(&vals);
        let std = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
        min_std = min_std.min(std);
    }
    ensure!(
        min_std > 1e-3,
        "representations collapsed: smallest per-feature std {min_std:.2e}"
    );
    if fx.fresh {
        ensure!(secs <= 600.0, "smoke run took {secs:.0}s, budget is 600s");
    }
    Ok(format!(
        "loss {first:.4} -> {last:.4}, min feature std {min_std:.3}, {secs:.0}s{}",
        if fx.fresh { "" } else { " (cached)" }
    ))
}

// ---------------------------------------------------------------------------
// Criterion 7: with identical smoke settings at seed 0, the dynamic-state
// probe of the main method beats the contrastive baseline by at least five
// accuracy points, and every method's static probe beats chance by at least
// ten, all within the total wall-time budget.

fn c7_method_comparison() -> Verdict {
    let fx = smoke()?;
    let eval_start = Instant::now();
    let mut state_acc = BTreeMap::new();
    let mut static_acc = BTreeMap::new();
    let mut chance = 0.0;
    for method in ["deaps", "byol", "contrastive"] {
        let table = final_reps(fx, method)?;
        let (x, y, s) = table.probe_inputs("state").map_err(|e| e.to_string())?;
        let res = probe::loo_cv("state", &x, &y, &s).map_err(|e| e.to_string())?;
        state_acc.insert(method, res.accuracy);

        let (x, y, s) = table.probe_inputs("static").map_err(|e| e.to_string())?;
        let res = probe::kfold_cv("static", &x, &y, &s, 4).map_err(|e| e.to_string())?;
        static_acc.insert(method, res.accuracy);

        let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
        for v in &y {
            *counts.entry(*v).or_default() += 1;
        }
        chance = counts.values().copied().max().unwrap_or(0) as f64 / y.len() as f64;
    }

    let margin = state_acc["deaps"] - state_acc["contrastive"];
    ensure!(
        margin >= 0.05,
        "state probe: deaps {:.3} vs contrastive {:.3}, margin {margin:.3} < 0.05",
        state_acc["deaps"],
        state_acc["contrastive"]
    );
    for method in ["deaps", "byol", "contrastive"] {
        ensure!(
            static_acc[method] >= chance + 0.10,
            "static probe of {method} is {:.3}, chance {chance:.3} + 0.10 not cleared",
            static_acc[method]
        );
    }
    let train_total: f64 = fx.train_secs.values().sum();
    let total = train_total + eval_start.elapsed().as_secs_f64();
    if fx.fresh {
        ensure!(total <= 1800.0, "comparison took {total:.0}s, budget is 1800s");
    }
    Ok(format!(
        "state deaps {:.3} byol {:.3} contrastive {:.3}; static {:.3}/{:.3}/{:.3} \
         vs chance {chance:.3}; {total:.0}s{}",
        state_acc["deaps"],
        state_acc["byol"],
        state_acc["contrastive"],
        static_acc["deaps"],
        static_acc["byol"],
        static_acc["contrastive"],
        if fx.fresh { "" } else { " (cached)" }
    ))
}

// ---------------------------------------------------------------------------
// Criterion 8: principal component analysis of the main method's embedding
// finds at least one state-discriminative direction among the first six;
// the contrastive baseline's embedding yields none.

fn c8_component_separation() -> Verdict {
    let fx = smoke()?;
    let flags = |method: &str| -> Result<(Vec<usize>, Vec<f64>), String> {
        let table = final_reps(fx, method)?;
        let (x, s, stat, state) = table.pca_inputs();
        let report = pca::analyze(&x, &s, &stat, &state, 6).map_err(|e| e.to_string())?;
        let flagged = report
            .components
            .iter()
            .filter(|c| c.state_flag)
            .map(|c| c.component)
            .collect();
        let ds = report
            .components
            .iter()
            .map(|c| c.d_state.unwrap_or(0.0))
            .collect();
        Ok((flagged, ds))
    };
    let (deaps_flagged, deaps_d) = flags("deaps")?;
    let (contr_flagged, contr_d) = flags("contrastive")?;
    ensure!(
        !deaps_flagged.is_empty(),
        "no state-discriminative component in the first 6; effect sizes {deaps_d:?}"
    );
    ensure!(
        contr_flagged.is_empty(),
        "contrastive baseline flags components {contr_flagged:?}; effect sizes {contr_d:?}"
    );
    Ok(format!(
        "deaps flags {deaps_flagged:?}, contrastive flags none (max |d| {:.2})",
        contr_d.iter().fold(0f64, |m, d| m.max(d.abs()))
    ))
}

// ---------------------------------------------------------------------------
// Criterion 9: evaluation-protocol identities on constructed data: fold
// structure of leave-one-subject-out, the train/test subject-disjointness
// guard, and the confusion-matrix metric oracle.

fn c9_protocol_oracles() -> Verdict {
    // Confusion oracle: 3 true positives, 1 false negative, 4 true
    // negatives, 2 false positives, indexed [actual][predicted].
    let confusion = vec![vec![4usize, 2], vec![1, 3]];
    let (acc, sens, spec) = probe::confusion_metrics(&confusion, &[0, 1]);
    ensure!(acc == 0.70, "accuracy {acc} != 0.70");
    ensure!(sens == Some(0.75), "sensitivity {sens:?} != 0.75");
    ensure!(spec == Some(4.0 / 6.0), "specificity {spec:?} != 2/3");
    ensure!((spec.unwrap() - 0.6667).abs() < 5e-5, "specificity rounds to 0.6667");

    // Fold structure: five subjects, three rows each, separable labels.
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut s = Vec::new();
    for si in 0..5 {
        let label = (si % 2) as i32;
        for k in 0..3 {
            x.push(vec![si as f64 * 0.01 + k as f64 * 0.1, label as f64 * 10.0]);
            y.push(label);
            s.push(format!("s{si}"));
        }
    }
    let res = probe::loo_cv("state", &x, &y, &s).map_err(|e| e.to_string())?;
    ensure!(res.folds.len() == 5, "{} folds for 5 subjects", res.folds.len());
    let held: BTreeSet<&str> = res.folds.iter().map(|f| f.held_out.as_str()).collect();
    ensure!(held.len() == 5, "held-out sets overlap: {held:?}");
    ensure!(
        held == ["s0", "s1", "s2", "s3", "s4"].into_iter().collect(),
        "every subject is held out exactly once, got {held:?}"
    );
    ensure!(
        res.folds.iter().all(|f| f.n_test == 3),
        "every fold tests that subject's 3 rows"
    );
    let total: usize = res.confusion.iter().flatten().sum();
    ensure!(total == 15, "confusion pools {total} predictions, want 15");
    for (c, class) in res.classes.iter().enumerate() {
        let row_sum: usize = res.confusion[c].iter().sum();
        let actual = y.iter().filter(|&&v| v == *class).count();
        ensure!(
            row_sum == actual,
            "confusion row for class {class} sums to {row_sum}, want {actual}"
        );
    }

    // Disjointness guard: scoring a subject seen during fitting must fail.
    let probe_model = probe::Probe::fit(&x, &y, &s).map_err(|e| e.to_string())?;
    match probe_model.score(&x[..1], &s[..1]) {
        Ok(_) => return Err("overlapping subject was accepted at scoring time".to_string()),
        Err(e) => {
            let msg = e.to_string();
            ensure!(
                msg.contains("both train and test"),
                "unexpected guard message: {msg}"
            );
        }
    }

    // Leave-one-subject-out needs at least two subjects.
    let single = probe::loo_cv("state", &x[..3], &y[..3], &s[..3]);
    ensure!(single.is_err(), "a single-subject corpus must be rejected");

    Ok("confusion oracle exact, folds disjoint and exhaustive".to_string())
}

// ---------------------------------------------------------------------------
// Criterion 10: the default encoder lands within ten percent of the
// reference budget of 1,192,616 trainable parameters, and the dry run
// prints the exact count.

fn c10_parameter_count() -> Verdict {
    let out = run_bin(&["train", "--dry-run"])?;
    let printed: usize = out
        .lines()
        .find_map(|l| l.strip_prefix("encoder parameters: "))
        .ok_or_else(|| format!("dry run did not print the parameter count:\n{out}"))?
        .trim()
        .parse()
        .map_err(|e| format!("unparseable parameter count: {e}"))?;

    let reference = 1_192_616f64;
    let deviation = (printed as f64 - reference).abs() / reference;
    ensure!(
        deviation <= 0.10,
        "default encoder has {printed} parameters, {:.1}% from the reference budget",
        deviation * 100.0
    );

    let mut init = Init::new(0, Device::Cpu, DType::F32);
    let encoder = Encoder::new(&mut init, &EncoderConfig::default()).unwrap();
    ensure!(
        encoder.param_count() == printed,
        "dry run printed {printed} but the built encoder counts {}",
        encoder.param_count()
    );
    Ok(format!(
        "{printed} parameters, {:.2}% from the 1,192,616 reference",
        deviation * 100.0
    ))
}
