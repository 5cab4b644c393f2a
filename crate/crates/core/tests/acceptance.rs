//! Acceptance suite. Prints one line per criterion:
//!
//! ```text
//! [PASS] 1 gradient triple agreement ...
//! [PARTIAL] 9 parsers: ...
//! [NOT RUN] 5 semeion 8x8 cross-validation: dataset not found at ...
//! ```
//!
//! Data is looked up under `$DQNN_DATA_DIR` (default: `<workspace>/data`),
//! as `semeion/semeion.data` and `mnist/{train,t10k}-*-ubyte`. Criteria whose
//! data is absent are reported as NOT RUN. The full-scale MNIST run and the
//! three-seed ordering checks run only with `DQNN_ACCEPTANCE_EXTENDED=1`.
//! Exit status is non-zero if any criterion that ran failed.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use dqnn::cli::{cmd_crossval, cmd_gradcheck, cmd_train};
use dqnn::config::ExperimentConfig;
use dqnn::data::{load_mnist_idx, load_semeion, N_CLASSES};
use dqnn::model::ArchSpec;
use dqnn::sim::Observable;
use dqnn::training::{evaluate, init_params, train, CrossValSummary, TrainConfig};
use dqnn::{build_architecture, EnsembleModel, Error, PartitionSpec};

// Tolerances and thresholds, pinned.
const GRAD_SHIFT_TOL: f64 = 1e-10;
const GRAD_FD_TOL: f64 = 1e-4;
const GRAD_TRIALS: usize = 50;
const MONOLITHIC_TOL: f64 = 1e-10;
const MONOLITHIC_INSTANCES: u64 = 20;
const C0_LOSS_TOL: f64 = 1e-12;
const C0_TRAIN_TOL: f64 = 1e-9;
const QUICK_RUNTIME_S: f64 = 60.0;
const SEMEION_2QNN_MIN_ACC: f64 = 0.92;
const SEMEION_1QNN_MIN_ACC: f64 = 0.91;
const SEMEION_16_MIN_ACC: f64 = 0.92;
const MNIST_PROXY_MIN_ACC: f64 = 0.88;
const MNIST_FULL_TARGET: f64 = 0.96140;
const MNIST_FULL_BAND: f64 = 0.015;
const THREAD_LOSS_TOL: f64 = 1e-6;
const SEMEION_SAMPLES: usize = 1593;
const MNIST_TRAIN_HIST: [usize; 10] = [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949];
const MNIST_TEST_HIST: [usize; 10] = [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009];
const ORDERING_SEEDS: [u64; 3] = [1, 2, 3];

enum Outcome {
    Pass(String),
    /// Everything that could run passed, but part of the criterion was skipped.
    Partial(String),
    Fail(String),
    NotRun(String),
}

use Outcome::*;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

struct Env {
    data: PathBuf,
    configs: PathBuf,
    scratch: PathBuf,
    extended: bool,
}

impl Env {
    fn semeion(&self) -> PathBuf {
        self.data.join("semeion/semeion.data")
    }

    fn mnist_present(&self) -> bool {
        ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
            .iter()
            .all(|f| self.data.join("mnist").join(f).exists())
    }

    fn config(&self, name: &str, run: &str) -> dqnn::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(self.configs.join(name))?;
        cfg.out_dir = self.scratch.join(run);
        Ok(cfg)
    }
}

fn c1_gradients(_: &Env) -> dqnn::Result<Outcome> {
    let t = Instant::now();
    let r = cmd_gradcheck(GRAD_TRIALS, GRAD_SHIFT_TOL, 2024, 6)?;
    let secs = t.elapsed().as_secs_f64();
    let ok = r.passed && r.max_params <= 200 && secs < QUICK_RUNTIME_S;
    Ok(check(
        ok,
        format!(
            "{} instances (max {} params): adj/shift {:.2e} (<= {GRAD_SHIFT_TOL:e}), adj/fd {:.2e}, shift/fd {:.2e} (<= {GRAD_FD_TOL:e}); {secs:.1}s",
            r.trials, r.max_params, r.max_adjoint_vs_shift, r.max_adjoint_vs_fd, r.max_shift_vs_fd
        ),
    ))
}

fn c2_monolithic(_: &Env) -> dqnn::Result<Outcome> {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for inst in 0..MONOLITHIC_INSTANCES {
        let p = PartitionSpec::new(2, 10, 2)?;
        let mut m = EnsembleModel::new(p, ArchSpec::new(5, 10), Observable::default_set(), 1.0 + 0.5 * inst as f64)?;
        init_params(&mut m, 100 + inst);
        let x: Vec<f64> = (0..20).map(|i| ((i as u64 * 31 + inst * 7) % 17) as f64 * 0.05).collect();
        let pred = m.forward(&x)?;
        let joint = common::joint_logits(&m, &x);
        for (a, b) in pred.logits.iter().zip(&joint) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(check(
        worst <= MONOLITHIC_TOL && secs < QUICK_RUNTIME_S,
        format!("{MONOLITHIC_INSTANCES} instances, 2x5 shards vs joint 10-qubit register: max |dlogit| {worst:.2e} (<= {MONOLITHIC_TOL:e}); {secs:.1}s"),
    ))
}

fn c3_zero_scale(_: &Env) -> dqnn::Result<Outcome> {
    let raw = common::synthetic_digits(4, 1);
    let spec = dqnn::data::PreprocSpec {
        max_angle: std::f64::consts::FRAC_PI_4,
        pool: dqnn::data::Pool::Avg2x2,
        raw_max: 1.0,
    };
    let data = dqnn::data::preprocess(&raw, &spec)?;
    let p = PartitionSpec::new(8, 8, 2)?;
    let mut m = EnsembleModel::new(p, ArchSpec::new(8, 32).layers(2), Observable::default_set(), 0.0)?;
    init_params(&mut m, 3);
    let mut worst_loss = 0.0f64;
    for i in 0..data.len() {
        let pred = m.forward_with(data.sample(i), Some(data.label(i)), &mut m.workspace()?)?;
        worst_loss = worst_loss.max((pred.loss.unwrap() - std::f64::consts::LN_10).abs());
    }
    let before = evaluate(&m, &data)?.loss;
    let mut cfg = TrainConfig::new(10, 3);
    cfg.lr = 0.05;
    train(&mut m, &data, &cfg, None, &mut |_| {})?;
    let drift = (evaluate(&m, &data)?.loss - before).abs();
    Ok(check(
        worst_loss <= C0_LOSS_TOL && drift <= C0_TRAIN_TOL,
        format!(
            "{} samples: max |loss - ln 10| {worst_loss:.2e} (<= {C0_LOSS_TOL:e}); loss drift over 10 epochs {drift:.2e} (<= {C0_TRAIN_TOL:e})",
            data.len()
        ),
    ))
}

fn c4_architecture(_: &Env) -> dqnn::Result<Outcome> {
    let golden = [
        ((8, 32, 960), include_str!("golden/shard_8x32.txt")),
        ((8, 64, 1600), include_str!("golden/shard_8x64.txt")),
        ((7, 56, 1400), include_str!("golden/shard_7x56.txt")),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for ((n, f, want), text) in golden {
        let arch = build_architecture(n, f)?;
        let stable = arch.listing() == text && build_architecture(n, f)?.listing() == text;
        ok &= arch.n_params() == want && stable;
        parts.push(format!("({n},{f})->{} [{}]", arch.n_params(), if stable { "golden ok" } else { "golden MISMATCH" }));
    }
    Ok(check(ok, parts.join(", ")))
}

fn crossval_run(env: &Env, name: &str, seed: Option<u64>) -> dqnn::Result<(CrossValSummary, f64)> {
    let run = format!("{}_seed{}", name.trim_end_matches(".toml"), seed.map_or("cfg".into(), |s| s.to_string()));
    let mut cfg = env.config(name, &run)?;
    cfg.semeion_path = Some(env.semeion());
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let t = Instant::now();
    let s = cmd_crossval(&cfg)?;
    Ok((s, t.elapsed().as_secs_f64()))
}

fn fmt_cv(s: &CrossValSummary) -> String {
    format!("acc {:.5} ± {:.5}, loss {:.5} ± {:.5}", s.mean_accuracy, s.std_accuracy, s.mean_loss, s.std_loss)
}

/// Runs `a` and `b` over the ordering seeds and reports how often `holds`.
fn ordering(env: &Env, a: &str, b: &str, holds: impl Fn(&CrossValSummary, &CrossValSummary) -> bool) -> dqnn::Result<String> {
    if !env.extended {
        return Ok("ordering over 3 seeds not run (set DQNN_ACCEPTANCE_EXTENDED=1)".into());
    }
    let mut count = 0;
    for seed in ORDERING_SEEDS {
        let (sa, _) = crossval_run(env, a, Some(seed))?;
        let (sb, _) = crossval_run(env, b, Some(seed))?;
        if holds(&sa, &sb) {
            count += 1;
        }
    }
    Ok(format!("ordering held in {count}/{} seeds (soft)", ORDERING_SEEDS.len()))
}

fn c5_semeion_8x8(env: &Env) -> dqnn::Result<Outcome> {
    if !env.semeion().exists() {
        return Ok(NotRun(format!("dataset not found at {}", env.semeion().display())));
    }
    let (two, t2) = crossval_run(env, "semeion_8x8_2qnn.toml", None)?;
    let (one, t1) = crossval_run(env, "semeion_8x8_1qnn.toml", None)?;
    let soft = ordering(env, "semeion_8x8_2qnn.toml", "semeion_8x8_1qnn.toml", |two, one| {
        two.mean_accuracy >= one.mean_accuracy && two.mean_loss <= one.mean_loss
    })?;
    Ok(check(
        two.mean_accuracy >= SEMEION_2QNN_MIN_ACC && one.mean_accuracy >= SEMEION_1QNN_MIN_ACC,
        format!(
            "2-QNN {} (>= {SEMEION_2QNN_MIN_ACC}, {t2:.0}s); 1-QNN {} (>= {SEMEION_1QNN_MIN_ACC}, {t1:.0}s); {soft}",
            fmt_cv(&two),
            fmt_cv(&one)
        ),
    ))
}

fn c6_semeion_16x16(env: &Env) -> dqnn::Result<Outcome> {
    if !env.semeion().exists() {
        return Ok(NotRun(format!("dataset not found at {}", env.semeion().display())));
    }
    let (four, t4) = crossval_run(env, "semeion_16x16_4qnn.toml", None)?;
    let (eight, t8) = crossval_run(env, "semeion_16x16_8qnn.toml", None)?;
    let soft = ordering(env, "semeion_16x16_8qnn.toml", "semeion_16x16_4qnn.toml", |eight, four| {
        eight.mean_loss > four.mean_loss
    })?;
    Ok(check(
        four.mean_accuracy >= SEMEION_16_MIN_ACC && eight.mean_accuracy >= SEMEION_16_MIN_ACC,
        format!(
            "4-QNN {} ({t4:.0}s); 8-QNN {} ({t8:.0}s); both >= {SEMEION_16_MIN_ACC}; 8-QNN loss > 4-QNN loss: {} ; {soft}",
            fmt_cv(&four),
            fmt_cv(&eight),
            eight.mean_loss > four.mean_loss
        ),
    ))
}

fn mnist_run(env: &Env, name: &str) -> dqnn::Result<(dqnn::cli::TrainSummary, usize, f64)> {
    let cfg = env.config(name, name.trim_end_matches(".toml"))?;
    let epochs = cfg.train.epochs;
    let t = Instant::now();
    let (_, summary) = cmd_train(&cfg)?;
    Ok((summary, epochs, t.elapsed().as_secs_f64()))
}

fn c7_mnist_proxy(env: &Env) -> dqnn::Result<Outcome> {
    if !env.mnist_present() {
        return Ok(NotRun(format!("MNIST IDX files not found under {}", env.data.join("mnist").display())));
    }
    let (s, epochs, secs) = mnist_run(env, "mnist_14qnn_proxy.toml")?;
    let test = s.test.expect("proxy config has a test set");
    Ok(check(
        s.n_train == 6000 && s.n_test == Some(10000) && epochs <= 30 && test.accuracy >= MNIST_PROXY_MIN_ACC,
        format!(
            "train {} / test {} samples, {epochs} epochs: test accuracy {:.5} (>= {MNIST_PROXY_MIN_ACC}), test loss {:.5}; {:.1} min",
            s.n_train,
            s.n_test.unwrap_or(0),
            test.accuracy,
            test.loss,
            secs / 60.0
        ),
    ))
}

fn c8_mnist_full(env: &Env) -> dqnn::Result<Outcome> {
    if !env.extended {
        return Ok(NotRun("extended run; set DQNN_ACCEPTANCE_EXTENDED=1 or use scripts/mnist_full.sh".into()));
    }
    if !env.mnist_present() {
        return Ok(NotRun(format!("MNIST IDX files not found under {}", env.data.join("mnist").display())));
    }
    let (s, epochs, secs) = mnist_run(env, "mnist_14qnn.toml")?;
    let test = s.test.expect("full config has a test set");
    Ok(check(
        (test.accuracy - MNIST_FULL_TARGET).abs() <= MNIST_FULL_BAND,
        format!(
            "{} train samples, {epochs} epochs: test accuracy {:.5} (target {MNIST_FULL_TARGET} ± {MNIST_FULL_BAND}), loss {:.5}; {:.1} h",
            s.n_train,
            test.accuracy,
            test.loss,
            secs / 3600.0
        ),
    ))
}

fn c9_parsers(env: &Env) -> dqnn::Result<Outcome> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut ok = true;
    let mut parts = Vec::new();

    let bad = [
        load_semeion(fixtures.join("semeion_short_line.data")).err(),
        load_semeion(fixtures.join("semeion_bad_token.data")).err(),
        load_semeion(fixtures.join("semeion_two_labels.data")).err(),
        load_mnist_idx(fixtures.join("idx_bad_magic-images"), fixtures.join("idx_small-labels")).err(),
        load_mnist_idx(fixtures.join("idx_truncated-images"), fixtures.join("idx_small-labels")).err(),
    ];
    let n_located = bad.into_iter().flatten().filter(|e| matches!(e, Error::Parse { .. } | Error::Format { .. })).count();
    ok &= n_located == 5;
    parts.push(format!("malformed fixtures: {n_located}/5 located errors"));

    if env.mnist_present() {
        let dir = env.data.join("mnist");
        let train = load_mnist_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
        let test = load_mnist_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
        let good = train.len() == 60000
            && test.len() == 10000
            && train.label_histogram() == MNIST_TRAIN_HIST
            && test.label_histogram() == MNIST_TEST_HIST
            && (train.height(), train.width()) == (28, 28);
        ok &= good;
        parts.push(format!(
            "MNIST {}/{} samples, histograms {}",
            train.len(),
            test.len(),
            if good { "match" } else { "MISMATCH" }
        ));
    } else {
        parts.push("MNIST not run (files absent)".into());
    }

    let semeion_ran = env.semeion().exists();
    if semeion_ran {
        let ds = load_semeion(env.semeion())?;
        let hist = ds.label_histogram();
        let good = ds.len() == SEMEION_SAMPLES && hist.iter().all(|&h| h > 0) && hist.len() == N_CLASSES;
        ok &= good;
        parts.push(format!("Semeion {} samples (want {SEMEION_SAMPLES}) histogram {hist:?}", ds.len()));
    } else {
        parts.push(format!("Semeion not run (no file at {})", env.semeion().display()));
    }
    let detail = parts.join("; ");
    Ok(if !ok {
        Fail(detail)
    } else if !semeion_ran || !env.mnist_present() {
        Partial(detail)
    } else {
        Pass(detail)
    })
}

fn c10_determinism(env: &Env) -> dqnn::Result<Outcome> {
    // a shipped config shrunk to minutes: real shard shapes, small subset
    let (base, data_note) = if env.mnist_present() {
        let mut cfg = env.config("mnist_14qnn_proxy.toml", "determinism")?;
        cfg.train_subset = Some(300);
        let m = cfg.mnist.as_mut().unwrap();
        m.test_images = None;
        m.test_labels = None;
        (cfg, "MNIST 14-shard shapes, 300-sample subset")
    } else {
        let path = env.scratch.join("synthetic.data");
        std::fs::create_dir_all(&env.scratch).map_err(|e| Error::io(&env.scratch, e))?;
        dqnn::data::write_semeion(&common::synthetic_digits(10, 5), &path)?;
        let mut cfg = env.config("semeion_8x8_2qnn.toml", "determinism")?;
        cfg.semeion_path = Some(path);
        (cfg, "Semeion 2-shard shapes on synthetic digits (MNIST absent)")
    };
    let run = |tag: &str, threads: usize| -> dqnn::Result<(String, String, CrossValSummary)> {
        let mut cfg = base.clone();
        cfg.out_dir = env.scratch.join(format!("determinism_{tag}"));
        cfg.train.epochs = 2;
        cfg.train.k_folds = 3;
        cfg.train.batch_size = dqnn::training::BatchSize::Fixed(64);
        cfg.threads = threads;
        let s = cmd_crossval(&cfg)?;
        let read = |f: &str| std::fs::read_to_string(cfg.out_dir.join(f)).map_err(|e| Error::io(cfg.out_dir.join(f), e));
        Ok((read("metrics.jsonl")?, read("summary.json")?, s))
    };
    let (m1, s1, a) = run("a", 1)?;
    let (m2, s2, _) = run("b", 1)?;
    let (m8, _, c) = run("t8", 8)?;
    let identical = m1 == m2 && s1 == s2;
    let final_a = a.folds.last().map(|m| m.loss).unwrap_or(f64::NAN);
    let final_c = c.folds.last().map(|m| m.loss).unwrap_or(f64::NAN);
    let dloss = (a.mean_loss - c.mean_loss).abs().max((final_a - final_c).abs());
    Ok(check(
        identical && dloss <= THREAD_LOSS_TOL,
        format!(
            "{data_note}: repeated runs bit-identical: {identical}; threads 1 vs 8 |dloss| {dloss:.2e} (<= {THREAD_LOSS_TOL:e}), metrics files identical: {}",
            m1 == m8
        ),
    ))
}

fn main() {
    let workspace = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let workspace = workspace.canonicalize().unwrap_or(workspace);
    let data = std::env::var_os("DQNN_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace.join("data"));
    // the shipped configs refer to ${DQNN_DATA_DIR}
    std::env::set_var("DQNN_DATA_DIR", &data);
    let env = Env {
        data,
        configs: Path::new(env!("CARGO_MANIFEST_DIR")).join("configs"),
        scratch: PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"),
        extended: std::env::var("DQNN_ACCEPTANCE_EXTENDED").is_ok_and(|v| v == "1"),
    };
    let _ = std::fs::remove_dir_all(&env.scratch);

    type Criterion = fn(&Env) -> dqnn::Result<Outcome>;
    let criteria: [(&str, Criterion); 10] = [
        ("gradient triple agreement", c1_gradients),
        ("monolithic oracle equivalence", c2_monolithic),
        ("c=0 exactness", c3_zero_scale),
        ("architecture counts and golden listings", c4_architecture),
        ("semeion 8x8 cross-validation", c5_semeion_8x8),
        ("semeion 16x16 cross-validation", c6_semeion_16x16),
        ("mnist desk-scale proxy", c7_mnist_proxy),
        ("mnist full reproduction", c8_mnist_full),
        ("parsers", c9_parsers),
        ("determinism", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut pass, mut partial, mut fail, mut not_run) = (0, 0, 0, 0);
    let mut lines = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        eprintln!("running criterion {id}: {name}");
        let outcome = f(&env).unwrap_or_else(|e| Fail(format!("error: {e}")));
        let line = match outcome {
            Pass(d) => {
                pass += 1;
                format!("[PASS] {id} {name}: {d}")
            }
            Partial(d) => {
                partial += 1;
                format!("[PARTIAL] {id} {name}: {d}")
            }
            Fail(d) => {
                fail += 1;
                format!("[FAIL] {id} {name}: {d}")
            }
            NotRun(d) => {
                not_run += 1;
                format!("[NOT RUN] {id} {name}: {d}")
            }
        };
        println!("{line}");
        lines.push(line);
    }
    println!();
    println!("acceptance summary");
    for l in &lines {
        println!("{l}");
    }
    println!("{pass} passed, {partial} partial, {fail} failed, {not_run} not run");
    if fail > 0 {
        std::process::exit(1);
    }
}
