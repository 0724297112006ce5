//! Acceptance criteria 1–10. Each test writes one `criterion N ...: PASS|FAIL`
//! line straight to stdout (bypassing capture) and then asserts the outcome.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ndebias::embedding_io::split_dataset;
use ndebias::gated_adapter::{adapter_loss, evaluate_loss, soft_project, soft_project_jacobian, PreparedContext};
use ndebias::inlp::{compose_matrices, extract_backbone_block};
use ndebias::kernel_lift::{kernel_estimate, median_bandwidth};
use ndebias::linalg::{asymmetry, idempotence_defect, max_abs, min_singular_value};
use ndebias::probes::{auc_one_vs_rest, audit_leakage};
use ndebias::synth::{Encoding, SynthAttribute};
use ndebias::{
    fit_attribute_projector, generate, nullspace_projector, sample_rff, AdapterParams, AdapterTrainConfig, FeatureLift,
    InlpConfig, MlpConfig, SynthConfig, ToyTaskHead,
};
use ndebias_cli::commands::{cmd_debias, cmd_probe, cmd_report, cmd_synth, cmd_train_adapter, Console};
use ndebias_cli::{ExitCode, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Exp1, StandardNormal};

fn verdict(n: usize, name: &str, pass: bool, detail: String) {
    let line = format!(
        "criterion {n:>2} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_projector(d: usize, removed: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    nullspace_projector(&gaussian(removed, d, rng)).unwrap()
}

#[test]
fn criterion_01_projector_algebra() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 3];
    for _ in 0..200 {
        let p = rng.random_range(2..=256);
        let t = rng.random_range(1..=64usize.min(p));
        let w = gaussian(t, p, &mut rng);
        let ph = nullspace_projector(&w).unwrap();
        worst[0] = worst[0].max(idempotence_defect(&ph));
        worst[1] = worst[1].max(asymmetry(&ph));
        worst[2] = worst[2].max(max_abs(&(&w * &ph)));
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|&e| e <= 1e-8) && elapsed < Duration::from_secs(10);
    verdict(
        1,
        "projector algebra",
        pass,
        format!(
            "max |P²−P| {:.1e}, |Pᵀ−P| {:.1e}, |WP| {:.1e} over 200 stacks in {}",
            worst[0],
            worst[1],
            worst[2],
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_02_backbone_block_identity() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let (t, d, extra) = (5, 8, 16);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let ph = nullspace_projector(&gaussian(t, d + extra, &mut rng)).unwrap();
        let p = extract_backbone_block(&ph, d).unwrap();
        let h = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut padded = DVector::zeros(d + extra);
        padded.rows_mut(0, d).copy_from(&h);
        let selected = (&ph * padded).rows(0, d).into_owned();
        worst = worst.max((selected - &p * &h).amax());
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "backbone-block identity",
        worst <= 1e-10 && elapsed < Duration::from_secs(5),
        format!("max deviation {worst:.1e} over 100 instances in {}", secs(elapsed)),
    );
}

#[test]
fn criterion_03_rff_unbiasedness() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let (d, sigma) = (8, 1.7);
    let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    let mut errors = Vec::new();
    for ratio in [0.0, 0.5, 1.0, 2.0] {
        let y: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, u)| a + ratio * sigma * u).collect();
        let mean = (0..50u64)
            .map(|s| kernel_estimate(&x, &y, &sample_rff(d, 2048, sigma, 0.0, 1000 + s).unwrap()).unwrap())
            .sum::<f64>()
            / 50.0;
        errors.push((ratio, (mean - (-ratio * ratio / 2.0f64).exp()).abs()));
    }
    let elapsed = start.elapsed();
    let pass = errors.iter().all(|&(_, e)| e <= 0.03) && elapsed < Duration::from_secs(30);
    let detail = errors
        .iter()
        .map(|(r, e)| format!("‖x−y‖/σ={r}: {e:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(3, "RFF unbiasedness", pass, format!("{detail}; {}", secs(elapsed)));
}

fn quadratic_config(seed: u64) -> SynthConfig {
    SynthConfig {
        attributes: vec![SynthAttribute {
            name: "q".into(),
            classes: 2,
            encoding: Encoding::QuadraticSign,
            strength: 1.0,
        }],
        seed,
        ..SynthConfig::default()
    }
}

struct QuadraticRun {
    pre: f64,
    post: f64,
    ablation: Option<f64>,
    converged: bool,
    refinements: usize,
}

/// Fit on the train split and audit with a fresh MLP on the test split.
fn quadratic_run(seed: u64, with_ablation: bool) -> QuadraticRun {
    let set = generate(&quadratic_config(seed)).unwrap().set;
    let (train, _, test) = split_dataset(&set, (0.7, 0.1, 0.2), seed).unwrap();
    let (x_tr, x_te) = (train.to_matrix(), test.to_matrix());
    let y_tr = train.attribute("q").unwrap().as_classes();
    let y_te = test.attribute("q").unwrap().as_classes();
    let audit = MlpConfig {
        seed,
        ..MlpConfig::default()
    };
    let gap = |p: &DMatrix<f64>| {
        audit_leakage(&(&x_tr * p), &y_tr, &(&x_te * p), &y_te, 2, "q", &audit)
            .unwrap()
            .gap
    };
    let pre = gap(&DMatrix::identity(64, 64));
    let cfg = InlpConfig::default();
    let sigma = median_bandwidth(&x_tr).unwrap();
    let lift = FeatureLift::Fourier(sample_rff(64, 4096, sigma, 0.05, seed).unwrap());
    let fit = fit_attribute_projector(&train, "q", &lift, &cfg, seed).unwrap();
    let post = gap(&fit.record.matrix);
    let ablation = with_ablation.then(|| {
        let plain = fit_attribute_projector(&train, "q", &FeatureLift::Backbone { eta: 0.05 }, &cfg, seed).unwrap();
        gap(&plain.record.matrix)
    });
    QuadraticRun {
        pre,
        post,
        ablation,
        converged: fit.record.converged,
        refinements: fit.record.refinements,
    }
}

#[test]
fn criterion_04_nonlinear_leakage_removal() {
    let start = Instant::now();
    let run = quadratic_run(0, true);
    let ablation = run.ablation.unwrap();
    let elapsed = start.elapsed();
    let pass = run.pre >= 0.15 && run.post <= 0.05 && ablation >= 0.10 && elapsed < Duration::from_secs(600);
    verdict(
        4,
        "nonlinear-leakage removal",
        pass,
        format!(
            "pre gap {:.4} (need ≥ 0.15), RFF-INLP gap {:.4} (need ≤ 0.05), D=0 gap {:.4} (need ≥ 0.10), {}",
            run.pre,
            run.post,
            ablation,
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_05_refinement_economy() {
    let start = Instant::now();
    let mut converged = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let run = quadratic_run(seed, false);
        if run.converged && run.refinements <= 3 {
            converged += 1;
        }
        detail.push(format!("{:.3}/{}", run.post, run.refinements));
    }
    verdict(
        5,
        "refinement economy",
        converged >= 9,
        format!(
            "{converged}/10 seeds converged within 3 refinements (gap/rounds: {}), {}",
            detail.join(" "),
            secs(start.elapsed())
        ),
    );
}

#[test]
fn criterion_06_gradient_correctness() {
    let start = Instant::now();
    let (d, k, r, items, step) = (8, 2, 2, 5, 1e-5);
    let mut worst = 0.0f64;
    for instance in 0..20u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(600 + instance);
        let projectors = (0..k).map(|_| random_projector(d, 2, &mut rng)).collect();
        let mut params = AdapterParams::init(projectors, gaussian(d, d, &mut rng) * 0.5, r, 0.3, instance).unwrap();
        params.g1 = gaussian(k, d, &mut rng) * 0.5;
        params.gates = (0..k).map(|_| gaussian(d, 1, &mut rng).column(0) * 0.5).collect();
        params.u = (0..k).map(|_| gaussian(d, r, &mut rng) * 0.5).collect();
        let head = ToyTaskHead::new(gaussian(items, d, &mut rng)).unwrap();
        let targets: Vec<usize> = (0..6).map(|_| rng.random_range(0..items)).collect();
        let batch = PreparedContext::batch(&gaussian(6, d, &mut rng), &targets, &params).unwrap();
        let cfg = AdapterTrainConfig {
            lambda_entropy: 0.1,
            lambda_l1: 0.2,
            ..AdapterTrainConfig::default()
        };
        let analytic = adapter_loss(&batch, &params, &head, &cfg).unwrap().1.flatten();
        let theta = params.trainable();
        let loss = |th: &[f64]| {
            let mut p = params.clone();
            p.set_trainable(th);
            evaluate_loss(&batch, &p, &head, &cfg).unwrap().total
        };
        for i in 0..theta.len() {
            let (mut plus, mut minus) = (theta.clone(), theta.clone());
            plus[i] += step;
            minus[i] -= step;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let scale = analytic[i].abs().max(numeric.abs());
            let err = if scale < 1e-6 {
                (analytic[i] - numeric).abs()
            } else {
                (analytic[i] - numeric).abs() / scale
            };
            worst = worst.max(err);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        6,
        "gradient correctness",
        worst <= 1e-4 && elapsed < Duration::from_secs(60),
        format!("max relative error {worst:.2e} over 20 instances in {}", secs(elapsed)),
    );
}

fn three_attribute_config(out: &Path) -> PipelineConfig {
    let attr = |name: &str, classes, encoding| SynthAttribute {
        name: name.into(),
        classes,
        encoding,
        strength: 1.0,
    };
    let mut cfg = PipelineConfig {
        out: out.to_path_buf(),
        ..PipelineConfig::default()
    };
    cfg.synth.attributes = vec![
        attr("gender", 2, Encoding::Linear),
        attr("age", 3, Encoding::Linear),
        attr("occupation", 4, Encoding::Mixed),
    ];
    cfg.synth.task_correlation = 0.3;
    cfg
}

/// synth → probe → debias → train-adapter → report. Non-convergence in
/// debias still leaves every artifact behind, so the run continues.
fn full_pipeline(cfg: &PipelineConfig) -> ndebias_cli::report::ReportTable {
    let quiet = Console { quiet: true };
    cmd_synth(cfg, quiet).unwrap();
    cmd_probe(cfg, quiet).unwrap();
    match cmd_debias(cfg, quiet) {
        Ok(_) => {}
        Err(e) if e.code() == ExitCode::NonConvergence => {}
        Err(e) => panic!("debias failed: {e}"),
    }
    cmd_train_adapter(cfg, quiet).unwrap();
    cmd_report(cfg, quiet).unwrap()
}

#[test]
fn criterion_07_erase_then_repair() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let table = full_pipeline(&three_attribute_config(dir.path()));
    let hit1 = |stage: &str| table.row(stage).unwrap().hits.as_ref().unwrap()[0];
    let (before, projected, adapter) = (hit1("before"), hit1("projected"), hit1("adapter"));
    let gaps: Vec<f64> = table.row("adapter").unwrap().gaps.iter().map(|g| g.unwrap()).collect();
    let a = before - projected >= 0.05;
    let b = adapter >= 0.9 * before;
    let c = gaps.iter().all(|&g| g <= 0.05);
    let elapsed = start.elapsed();
    let mark = |ok: bool| if ok { "ok" } else { "miss" };
    let gap_text = table
        .attributes
        .iter()
        .zip(&gaps)
        .map(|(a, g)| format!("{a} {g:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        7,
        "erase-then-repair",
        a && b && c && elapsed < Duration::from_secs(1200),
        format!(
            "Hit@1 before {before:.4}, P* {projected:.4} [(a) drop ≥ 0.05 {}], adapter {adapter:.4} \
             [(b) ≥ {:.4} {}]; adapter gaps {gap_text} [(c) ≤ 0.05 {}]; {}",
            mark(a),
            0.9 * before,
            mark(b),
            mark(c),
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_08_gate_endpoints_and_jacobian() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut endpoints = true;
    for _ in 0..50 {
        let d = rng.random_range(2..=10);
        let k = rng.random_range(1..=4);
        let projectors: Vec<DMatrix<f64>> = (0..k)
            .map(|_| random_projector(d, rng.random_range(1..d), &mut rng))
            .collect();
        let h = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        endpoints &=
            (soft_project(&h, &DVector::zeros(k), &projectors).unwrap() - &h).amax() <= 1e-14 * h.amax().max(1.0);
        for j in 0..k {
            let mut one_hot = DVector::zeros(k);
            one_hot[j] = 1.0;
            let out = soft_project(&h, &one_hot, &projectors).unwrap();
            endpoints &= (out - &projectors[j] * &h).amax() <= 1e-14 * h.amax().max(1.0);
        }
    }
    let mut smallest = f64::INFINITY;
    for _ in 0..500 {
        let d = rng.random_range(2..=10);
        let k = rng.random_range(1..=4);
        let projectors: Vec<DMatrix<f64>> = (0..k)
            .map(|_| random_projector(d, rng.random_range(1..=(d / 2).max(1)), &mut rng))
            .collect();
        let alpha = loop {
            let e = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(Exp1));
            let a = &e / e.sum() * rng.random_range(0.0..=1.0);
            if a.max() <= 1.0 - 1e-3 {
                break a;
            }
        };
        smallest = smallest.min(min_singular_value(&soft_project_jacobian(&alpha, &projectors).unwrap()));
    }
    verdict(
        8,
        "gate endpoints and Jacobian",
        endpoints && smallest >= 1e-6,
        format!(
            "endpoint identities {}; smallest Jacobian singular value {smallest:.2e} over 500 trials",
            if endpoints { "exact" } else { "violated" }
        ),
    );
}

#[test]
fn criterion_09_oracle_equivalences() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);

    let mut auc_exact = true;
    for _ in 0..50 {
        let n = rng.random_range(2..=500);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..40) as f64) * 0.05).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        for c in 0..3 {
            let pos: Vec<f64> = scores
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(s, _)| *s)
                .collect();
            let neg: Vec<f64> = scores
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l != c)
                .map(|(s, _)| *s)
                .collect();
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            let mut twice = 0u64;
            for p in &pos {
                for q in &neg {
                    twice += if p > q {
                        2
                    } else if p == q {
                        1
                    } else {
                        0
                    };
                }
            }
            let brute = twice as f64 / (2 * pos.len() * neg.len()) as f64;
            auc_exact &= auc_one_vs_rest(&scores, &labels, c).unwrap() == brute;
        }
    }

    let mut compose_err = 0.0f64;
    for _ in 0..10 {
        let p1 = random_projector(8, rng.random_range(1..=3), &mut rng);
        let p2 = random_projector(8, rng.random_range(1..=3), &mut rng);
        let composite = compose_matrices(&[&p1, &p2]).unwrap().matrix;
        let cycle = &p1 * &p2;
        let mut oracle = DMatrix::identity(8, 8);
        for _ in 0..500 {
            oracle = &oracle * &cycle;
        }
        compose_err = compose_err.max((composite - oracle).amax());
    }

    let x = gaussian(2000, 16, &mut rng);
    let mut dists = Vec::with_capacity(2000 * 1999 / 2);
    for i in 0..2000 {
        for j in i + 1..2000 {
            dists.push((x.row(i) - x.row(j)).norm());
        }
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let exhaustive = dists[dists.len() / 2];
    let median_rel = (median_bandwidth(&x).unwrap() / exhaustive - 1.0).abs();

    verdict(
        9,
        "oracle equivalences",
        auc_exact && compose_err <= 1e-6 && median_rel <= 0.05,
        format!(
            "AUC vs pair counting {}; composite vs 500-step alternating projections {compose_err:.1e}; \
             median bandwidth off by {:.2}%",
            if auc_exact { "exact" } else { "differs" },
            100.0 * median_rel
        ),
    );
}

fn small_config(out: &Path) -> PipelineConfig {
    let mut cfg = three_attribute_config(out);
    cfg.synth.n = 800;
    cfg.synth.d = 16;
    cfg.synth.n_items = 100;
    cfg.rff.dim = 512;
    cfg.adapter.epochs = 8;
    cfg.seed = 10;
    cfg
}

fn file_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    full_pipeline(&small_config(a.path()));
    full_pipeline(&small_config(b.path()));
    let (fa, fb) = (file_bytes(a.path()), file_bytes(b.path()));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    verdict(
        10,
        "determinism",
        differing.is_empty() && !fa.is_empty(),
        format!(
            "{} artifacts compared, {} differ{}; {}",
            fa.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {}", differing.join(", "))
            },
            secs(start.elapsed())
        ),
    );
}
