//! Exit criteria. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use m3tcm::autodiff::{grad_check, Graph, Tensor, Var};
use m3tcm::cli::proportional_labels;
use m3tcm::data::{Role, Scoring, StrideMode};
use m3tcm::harness::output::write_cv_run;
use m3tcm::harness::{context_sweep, cross_validate, TrainConfig};
use m3tcm::loss::{focal_loss, multitask_loss};
use m3tcm::metrics::random_baseline;
use m3tcm::model::{forward, init_params, BoundParams, ModelConfig, Variant};
use m3tcm::store::{ContextWindow, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::synth;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SECS: f64 = 30.0;
const FOCAL_TOL: f64 = 1e-12;
const BASELINE_TOL: f64 = 0.02;
const MULTITASK_MARGIN: f64 = 0.05;
const MULTITASK_SECS: f64 = 600.0;
const CONTEXT_GAIN: f64 = 0.05;
const PLATEAU_TOL: f64 = 0.02;
const ONLINE_TOL: f64 = 0.05;

/// Synthetic runs use the desk model and a learning rate sized for it.
fn suite_cfg(k: usize, variant: Variant, seed: u64, input_width: usize) -> TrainConfig {
    let mut model = ModelConfig::desk(k, input_width);
    model.variant = variant;
    let mut cfg = TrainConfig {
        epochs: 30,
        seed,
        model,
        ..TrainConfig::default()
    };
    cfg.optimizer.lr = 3e-3;
    cfg
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_rows(r, c, (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_rows(r, c, (0..r * c).map(|_| rng.gen_range(0.3..2.0)).collect()).unwrap()
}

fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> m3tcm::Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let w = random(&mut ChaCha8Rng::seed_from_u64(seed), shape[0], shape[1]);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst: (f64, &str) = (0.0, "");
    type Build<'a> = Box<dyn Fn(&mut Graph, &[Var]) -> m3tcm::Result<Var> + 'a>;
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n, p) = (
            rng.gen_range(1..=6),
            rng.gen_range(1..=6),
            rng.gen_range(1..=6),
        );
        let a = random(&mut rng, m, n);
        let b = random(&mut rng, m, n);
        let c = random(&mut rng, n, p);
        let bias = random(&mut rng, 1, n);
        let other = random(&mut rng, m, p);
        let pos = positive(&mut rng, m, n);
        let keep: Vec<bool> = (0..n).map(|j| j == 0 || rng.gen::<bool>()).collect();
        let mask: Vec<f64> = (0..m * n)
            .map(|i| {
                if i == 0 || rng.gen::<bool>() {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let index: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
        let cut = rng.gen_range(0..m);
        let cases: Vec<(&str, Vec<Tensor>, Build)> = vec![
            (
                "matmul",
                vec![a.clone(), c.clone()],
                Box::new(|g, v| g.matmul(v[0], v[1])),
            ),
            (
                "transpose",
                vec![a.clone()],
                Box::new(|g, v| g.transpose(v[0])),
            ),
            (
                "add",
                vec![a.clone(), b.clone()],
                Box::new(|g, v| g.add(v[0], v[1])),
            ),
            (
                "add_row",
                vec![a.clone(), bias.clone()],
                Box::new(|g, v| g.add_row(v[0], v[1])),
            ),
            (
                "mul",
                vec![a.clone(), b.clone()],
                Box::new(|g, v| g.mul(v[0], v[1])),
            ),
            (
                "scale",
                vec![a.clone()],
                Box::new(|g, v| Ok(g.scale(v[0], -1.7))),
            ),
            (
                "add_scalar",
                vec![a.clone()],
                Box::new(|g, v| Ok(g.add_scalar(v[0], 0.3))),
            ),
            ("relu", vec![a.clone()], Box::new(|g, v| Ok(g.relu(v[0])))),
            ("exp", vec![a.clone()], Box::new(|g, v| Ok(g.exp(v[0])))),
            ("log", vec![pos.clone()], Box::new(|g, v| g.log(v[0]))),
            ("pow", vec![pos.clone()], Box::new(|g, v| g.pow(v[0], 2.5))),
            (
                "softmax_rows",
                vec![a.clone()],
                Box::new(|g, v| g.softmax_rows(v[0])),
            ),
            (
                "softmax_rows_masked",
                vec![a.clone()],
                Box::new(|g, v| g.softmax_rows_masked(v[0], Some(&keep))),
            ),
            (
                "log_softmax_rows",
                vec![a.clone()],
                Box::new(|g, v| g.log_softmax_rows(v[0])),
            ),
            (
                "concat_cols",
                vec![a.clone(), other.clone()],
                Box::new(|g, v| g.concat_cols(v[0], v[1])),
            ),
            (
                "concat_rows",
                vec![a.clone(), b.clone()],
                Box::new(|g, v| g.concat_rows(v[0], v[1])),
            ),
            (
                "slice_rows",
                vec![a.clone()],
                Box::new(|g, v| g.slice_rows(v[0], cut, m)),
            ),
            (
                "gather_cols",
                vec![a.clone()],
                Box::new(|g, v| g.gather_cols(v[0], &index)),
            ),
        ];
        for (name, inputs, build) in &cases {
            let err = grad_check(
                |g, v| {
                    let y = build(g, v)?;
                    weighted_sum(g, y, seed ^ 0xabc)
                },
                inputs,
                1e-6,
            )
            .unwrap();
            if err > worst.0 {
                worst = (err, name);
            }
        }
        // reductions produce scalars directly
        let err = grad_check(|g, v| Ok(g.sum(v[0])), std::slice::from_ref(&a), 1e-6).unwrap();
        if err > worst.0 {
            worst = (err, "sum");
        }
        let err = grad_check(
            |g, v| g.mean_masked(v[0], &mask),
            std::slice::from_ref(&a),
            1e-6,
        )
        .unwrap();
        if err > worst.0 {
            worst = (err, "mean_masked");
        }
    }

    // full k=2 model loss, every parameter
    let cfg = ModelConfig {
        k: 2,
        input_width: 6,
        attn_width: 5,
        head_hidden: vec![5, 4],
        ..ModelConfig::default()
    };
    for seed in 0..3u64 {
        let params = init_params(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let window = random_window(&mut rng, &cfg, 2, 1);
        let n_t = params.therapist_head.len() * 2;
        // zero-initialized biases put dead ReLU rows exactly on the kink; probe a generic point
        let mut inputs: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        for bias in inputs.iter_mut().skip(5).step_by(2) {
            bias.data_mut()
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
        let err = grad_check(
            |g, v| {
                let b = BoundParams {
                    w_q: v[0],
                    w_k: v[1],
                    w_v: v[2],
                    positional: v[3],
                    therapist_head: v[4..4 + n_t].chunks(2).map(|c| (c[0], c[1])).collect(),
                    client_head: v[4 + n_t..].chunks(2).map(|c| (c[0], c[1])).collect(),
                };
                let out = forward(g, &b, &window, &cfg)?;
                let lt = focal_loss(
                    g,
                    out.therapist.unwrap(),
                    &window.therapist_labels,
                    2.0,
                    Some(&[0.9, 0.8, 1.6, 0.7]),
                )?;
                let lc = focal_loss(
                    g,
                    out.client.unwrap(),
                    &window.client_labels,
                    2.0,
                    Some(&[1.0, 0.5, 1.5]),
                )?;
                multitask_loss(g, Some(lt), Some(lc), (1.0, 1.0))
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        if err > worst.0 {
            worst = (err, "model loss k=2");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 < GRAD_TOL && secs < GRAD_SECS,
        format!(
            "max relative error {:.2e} ({}) in {secs:.1} s",
            worst.0, worst.1
        ),
    )
}

fn random_window(
    rng: &mut ChaCha8Rng,
    cfg: &ModelConfig,
    real_t: usize,
    real_c: usize,
) -> ContextWindow {
    let (k, width) = (cfg.k, cfg.input_width);
    let mut rows = |real: usize| {
        let data = (0..k * width)
            .map(|i| {
                if i / width < real {
                    rng.gen_range(-1.5..1.5)
                } else {
                    0.0
                }
            })
            .collect();
        Tensor::from_rows(k, width, data).unwrap()
    };
    let therapist_rows = rows(real_t);
    let client_rows = rows(real_c);
    ContextWindow {
        k,
        width,
        session_id: "random".into(),
        therapist_rows,
        client_rows,
        therapist_labels: (0..k)
            .map(|p| (p < real_t).then(|| rng.gen_range(0..4)))
            .collect(),
        client_labels: (0..k)
            .map(|p| (p < real_c).then(|| rng.gen_range(0..3)))
            .collect(),
        scoring: Scoring::All,
    }
}

fn focal_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for n_classes in [3usize, 4] {
        let logits: Vec<f64> = (0..100 * n_classes)
            .map(|_| rng.gen_range(-6.0..6.0))
            .collect();
        let labels: Vec<Option<usize>> = (0..100)
            .map(|_| Some(rng.gen_range(0..n_classes)))
            .collect();
        // cross-entropy by direct log-sum-exp
        let ce = (0..100)
            .map(|r| {
                let row = &logits[r * n_classes..(r + 1) * n_classes];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                lse - row[labels[r].unwrap()]
            })
            .sum::<f64>()
            / 100.0;
        let uniform = vec![1.0; n_classes];
        for alpha in [None, Some(uniform.as_slice())] {
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_rows(100, n_classes, logits.clone()).unwrap());
            let l = focal_loss(&mut g, x, &labels, 0.0, alpha).unwrap();
            worst = worst.max((g.value(l).item() - ce).abs());
        }
    }
    outcome(worst <= FOCAL_TOL, format!("max |focal - CE| {worst:.2e}"))
}

fn random_baseline_reproduction() -> Outcome {
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for (name, priors, macro_target) in [
        ("client", vec![0.63, 0.25, 0.12], 0.33),
        ("therapist", vec![0.31, 0.29, 0.25, 0.15], 0.25),
    ] {
        let labels = proportional_labels(&priors, 10_000);
        let r = random_baseline(&labels, &priors, 1, 20).unwrap();
        for (f, p) in r.f1.iter().zip(&priors) {
            worst = worst.max((f - p).abs());
        }
        worst = worst.max((r.macro_f1 - macro_target).abs());
        details.push(format!("{name} macro {:.4}", r.macro_f1));
    }
    outcome(
        worst <= BASELINE_TOL,
        format!("{}, max deviation {worst:.4}", details.join(", ")),
    )
}

struct SuiteRun {
    full_client: f64,
    single_client: f64,
    online_gap: f64,
}

/// Full and client-only variants at k=10 on the default coupled generator
/// (coupling 0.8, lag 2), one data set and seed per run.
fn coupled_suite(seed: u64) -> SuiteRun {
    let sc = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let width = sc.d_text + sc.d_audio;
    let (ds, _) = synth(sc);
    let full = cross_validate(&ds, &suite_cfg(10, Variant::Full, seed, width)).unwrap();
    let single = cross_validate(&ds, &suite_cfg(10, Variant::SingleTaskC, seed, width)).unwrap();
    let online = full.online(&ds, true).unwrap();
    let online_gap = Role::BOTH
        .iter()
        .map(|&r| {
            (online.task(r).unwrap().macro_mean - full.aggregate.task(r).unwrap().macro_mean).abs()
        })
        .fold(0.0, f64::max);
    SuiteRun {
        full_client: full.aggregate.client.as_ref().unwrap().macro_mean,
        single_client: single.aggregate.client.as_ref().unwrap().macro_mean,
        online_gap,
    }
}

fn multitask_and_online() -> (Outcome, Outcome) {
    let start = Instant::now();
    let runs: Vec<SuiteRun> = [1u64, 2, 3].into_iter().map(coupled_suite).collect();
    let secs = start.elapsed().as_secs_f64();
    let full = runs.iter().map(|r| r.full_client).sum::<f64>() / 3.0;
    let single = runs.iter().map(|r| r.single_client).sum::<f64>() / 3.0;
    let gain = full - single;
    let gap = runs.iter().map(|r| r.online_gap).fold(0.0, f64::max);
    (
        outcome(
            gain >= MULTITASK_MARGIN && secs < MULTITASK_SECS,
            format!("client macro-F1 full {full:.4} vs single task {single:.4}, gain {gain:+.4} in {secs:.0} s"),
        ),
        outcome(gap <= ONLINE_TOL, format!("max |online - offline| macro-F1 {gap:.4} over seeds and tasks")),
    )
}

fn context_benefit() -> Outcome {
    let sc = SynthConfig {
        seed: 1,
        dependency_lag: 5,
        ..SynthConfig::default()
    };
    let width = sc.d_text + sc.d_audio;
    let (ds, _) = synth(sc);
    let points =
        context_sweep(&ds, &suite_cfg(1, Variant::Full, 1, width), &[1, 6, 8, 12]).unwrap();
    let f = |k: usize| {
        points
            .iter()
            .find(|p| p.k == k)
            .and_then(|p| p.offline.client.as_ref())
            .unwrap()
            .macro_mean
    };
    let gain = f(6) - f(1);
    let drift = (f(12) - f(8)).abs();
    outcome(
        gain >= CONTEXT_GAIN && drift < PLATEAU_TOL,
        format!(
            "client macro-F1 k=1 {:.4} k=6 {:.4} k=8 {:.4} k=12 {:.4}; gain {gain:+.4}, |F1(12)-F1(8)| {drift:.4}",
            f(1),
            f(6),
            f(8),
            f(12)
        ),
    )
}

fn leak_free_cv() -> Outcome {
    let mut checked = 0;
    for seed in 0..4u64 {
        let (ds, _) = synth(SynthConfig {
            n_sessions: 23 + seed as usize * 7,
            utterances_per_role: 5,
            seed,
            ..SynthConfig::default()
        });
        let plan = ds.fold_plan(5, seed).unwrap();
        let all: std::collections::BTreeSet<&str> =
            ds.sessions.iter().map(|s| s.session_id.as_str()).collect();
        for split in &plan.splits {
            let sets = [&split.train, &split.val, &split.test];
            let total: usize = sets.iter().map(|s| s.len()).sum();
            let union: std::collections::BTreeSet<&str> = sets
                .iter()
                .flat_map(|s| s.iter().map(String::as_str))
                .collect();
            if total != union.len() || union != all || split.test.is_empty() || split.val.is_empty()
            {
                return outcome(
                    false,
                    format!(
                        "split {} of plan {seed} overlaps or misses sessions",
                        split.test_fold
                    ),
                );
            }
            checked += 1;
        }
        if plan.splits.len() != 5 || !plan.leaks().is_empty() {
            return outcome(false, format!("plan {seed} malformed"));
        }
    }
    outcome(
        true,
        format!("{checked} splits, no session in more than one role"),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.json" {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let sc = SynthConfig {
        n_sessions: 15,
        utterances_per_role: 20,
        seed: 4,
        ..SynthConfig::default()
    };
    let width = sc.d_text + sc.d_audio;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let (ds, _) = synth(sc.clone());
        let mut cfg = suite_cfg(4, Variant::Full, 4, width);
        cfg.epochs = 5;
        let cv = cross_validate(&ds, &cfg).unwrap();
        write_cv_run(d.path(), &cfg, &cv).unwrap();
    }
    let (a, b) = (dir_bytes(dirs[0].path()), dir_bytes(dirs[1].path()));
    let checkpoints = a.iter().filter(|(n, _)| n.ends_with("params.f32")).count();
    outcome(
        a == b && checkpoints == 5,
        format!("{} files compared, {checkpoints} checkpoints", a.len()),
    )
}

fn gradient_isolation() -> Outcome {
    let (ds, _) = synth(SynthConfig {
        n_sessions: 3,
        utterances_per_role: 12,
        seed: 8,
        ..SynthConfig::default()
    });
    let meta = ds.store.meta();
    let cfg = ModelConfig::desk(4, meta.d_audio + meta.d_text);
    let ids: Vec<String> = ds.sessions.iter().map(|s| s.session_id.clone()).collect();
    let data = ds.prepare(&ids, &cfg, StrideMode::Train).unwrap();
    let (mut leaked, mut min_shared) = (0.0f64, f64::INFINITY);
    for (seed, window) in data.windows.iter().enumerate() {
        let params = init_params(&cfg, seed as u64).unwrap();
        let mut g = Graph::new();
        let b = params.bind(&mut g, true);
        let out = forward(&mut g, &b, window, &cfg).unwrap();
        let loss = focal_loss(
            &mut g,
            out.client.unwrap(),
            &window.client_labels,
            2.0,
            None,
        )
        .unwrap();
        let grads = g.backward(loss).unwrap();
        for &(w, bias) in b.head(Role::Therapist) {
            for v in [w, bias] {
                leaked = leaked.max(grads.wrt(v).map_or(0.0, |t| t.max_abs()));
            }
        }
        for v in [b.w_q, b.w_k, b.w_v] {
            min_shared = min_shared.min(grads.wrt(v).unwrap().norm());
        }
    }
    outcome(
        leaked == 0.0 && min_shared > 0.0,
        format!(
            "{} windows: therapist head max |grad| {leaked:e}, smallest shared norm {min_shared:.3e}",
            data.windows.len()
        ),
    )
}

fn main() {
    let (multitask, online) = multitask_and_online();
    let results = [
        ("gradient fidelity", gradient_fidelity()),
        ("focal loss identity", focal_identity()),
        (
            "random baseline reproduction",
            random_baseline_reproduction(),
        ),
        ("multi-task benefit", multitask),
        ("context benefit and plateau", context_benefit()),
        ("online parity", online),
        ("leak-free cross-validation", leak_free_cv()),
        ("determinism", determinism()),
        ("multi-task gradient isolation", gradient_isolation()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
