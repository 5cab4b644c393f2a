//! Command implementations behind the `dqnn` binary.
//!
//! Every run directory gets:
//!
//! * `manifest.json`: resolved config, seed, code version, timing
//! * `metrics.jsonl`: one record per epoch and split (deterministic)
//! * `timing.jsonl`: wall-clock seconds for the same records
//! * `summary.json`: final metrics
//! * `checkpoint.json` (train) or `checkpoint_fold{k}.json` (crossval)

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{DatasetKind, ExperimentConfig};
use crate::data::{self, Dataset};
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::gradients::{adjoint_grad, finite_diff_grad, parameter_shift_grad};
use crate::model::ArchSpec;
use crate::sim::Observable;
use crate::training::{self, CrossValSummary, EpochRecord, Metrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

pub const GRADCHECK_FD_STEP: f64 = 1e-4;
pub const GRADCHECK_FD_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_MAX_QUBITS: usize = 6;
pub const GRADCHECK_MAX_PARAMS: usize = 200;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::ConfigList(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out_dir {
            cfg.out_dir = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
    }
}

/// Runs `f` on a dedicated rayon pool with `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

/// Loads and preprocesses the configured dataset. `raw_max = "auto"`
/// resolves to the training file's maximum, and the same value is applied
/// to the test file.
pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let (train_raw, test_raw) = match cfg.dataset {
        DatasetKind::Semeion => {
            let path = cfg
                .semeion_path
                .as_ref()
                .ok_or_else(|| Error::Config("semeion_path not set".into()))?;
            (data::load_semeion(path)?, None)
        }
        DatasetKind::Mnist => {
            let m = cfg
                .mnist
                .as_ref()
                .ok_or_else(|| Error::Config("mnist paths not set".into()))?;
            let train = data::load_mnist_idx(&m.train_images, &m.train_labels)?;
            let test = match (&m.test_images, &m.test_labels) {
                (Some(i), Some(l)) => Some(data::load_mnist_idx(i, l)?),
                _ => None,
            };
            (train, test)
        }
    };
    let spec = cfg.preproc(train_raw.max_value());
    let mut train = data::preprocess(&train_raw, &spec)?;
    if let Some(n) = cfg.train_subset {
        if n < train.len() {
            train = train.stratified_subset(n, cfg.train.seed)?;
        }
    }
    let test = test_raw.map(|t| data::preprocess(&t, &spec)).transpose()?;
    Ok(LoadedData { train, test })
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<EnsembleModel> {
    EnsembleModel::new(cfg.partition()?, cfg.arch_spec(), Observable::default_set(), cfg.c)
}

struct RunFiles {
    dir: PathBuf,
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
}

impl RunFiles {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| Error::io(p, e))
        };
        Ok(RunFiles {
            dir: dir.to_path_buf(),
            metrics: open("metrics.jsonl")?,
            timing: open("timing.jsonl")?,
        })
    }

    fn record(&mut self, r: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(r).map_err(|e| Error::Checkpoint(e.to_string()))?;
        writeln!(self.metrics, "{line}").map_err(|e| Error::io(&self.dir, e))?;
        let t = serde_json::json!({"epoch": r.epoch, "split": r.split, "fold": r.fold, "wall_time": r.wall_time});
        writeln!(self.timing, "{t}").map_err(|e| Error::io(&self.dir, e))?;
        eprintln!(
            "{}epoch {:>4} {:<10} loss {:.5} acc {:.5} ({:.1}s)",
            r.fold.map(|f| format!("fold {f} ")).unwrap_or_default(),
            r.epoch,
            r.split,
            r.loss,
            r.accuracy,
            r.wall_time
        );
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(&self.dir, e))?;
        self.timing.flush().map_err(|e| Error::io(&self.dir, e))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_manifest(cfg: &ExperimentConfig, command: &str, started: SystemTime, elapsed: f64) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "code_version": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        "seed": cfg.train.seed,
        "config": cfg.resolved(),
        "started_unix": started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "elapsed_seconds": elapsed,
        "threads_available": rayon::current_num_threads(),
    });
    write_json(&cfg.out_dir.join("manifest.json"), &manifest)
}

/// Tees records into the run files, remembering the first write error.
fn recorder<'a>(files: &'a mut RunFiles, failed: &'a mut Option<Error>) -> impl FnMut(&EpochRecord) + 'a {
    move |r| {
        if failed.is_none() {
            if let Err(e) = files.record(r) {
                *failed = Some(e);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub train: Metrics,
    pub test: Option<Metrics>,
    pub n_train: usize,
    pub n_test: Option<usize>,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(EnsembleModel, TrainSummary)> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let data = load_data(cfg)?;
    let mut model = build_model(cfg)?;
    training::init_params(&mut model, cfg.train.seed);
    let mut files = RunFiles::create(&cfg.out_dir)?;
    let mut failed = None;
    let summary = with_threads(cfg.threads, || -> Result<TrainSummary> {
        let mut rec = recorder(&mut files, &mut failed);
        training::train(&mut model, &data.train, &cfg.train, data.test.as_ref(), &mut rec)?;
        let train = training::evaluate(&model, &data.train)?;
        let test = data.test.as_ref().map(|t| training::evaluate(&model, t)).transpose()?;
        Ok(TrainSummary {
            train,
            test,
            n_train: data.train.len(),
            n_test: data.test.as_ref().map(Dataset::len),
        })
    })??;
    if let Some(e) = failed {
        return Err(e);
    }
    files.finish()?;
    model.save(cfg.out_dir.join("checkpoint.json"))?;
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    write_manifest(cfg, "train", started, clock.elapsed().as_secs_f64())?;
    Ok((model, summary))
}

pub fn cmd_crossval(cfg: &ExperimentConfig) -> Result<CrossValSummary> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let data = load_data(cfg)?;
    let template = build_model(cfg)?;
    let mut files = RunFiles::create(&cfg.out_dir)?;
    let mut failed = None;
    let (summary, models) = with_threads(cfg.threads, || {
        let mut rec = recorder(&mut files, &mut failed);
        training::cross_validate(&template, &data.train, &cfg.train, &mut rec)
    })??;
    if let Some(e) = failed {
        return Err(e);
    }
    files.finish()?;
    for (k, m) in models.iter().enumerate() {
        m.save(cfg.out_dir.join(format!("checkpoint_fold{}.json", k + 1)))?;
    }
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    write_manifest(cfg, "crossval", started, clock.elapsed().as_secs_f64())?;
    Ok(summary)
}

/// Scores a checkpoint on the configured evaluation set: the test files when
/// present, the full training file otherwise.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Metrics> {
    let model = EnsembleModel::load(checkpoint)?;
    let data = load_data(cfg)?;
    let set = data.test.as_ref().unwrap_or(&data.train);
    let p = model.partition();
    if set.height() != p.grid_h || set.width() != p.grid_w {
        return Err(Error::Shape(format!(
            "checkpoint expects {}x{} grids, dataset provides {}x{}",
            p.grid_h,
            p.grid_w,
            set.height(),
            set.width()
        )));
    }
    let metrics = with_threads(cfg.threads, || training::evaluate(&model, set))??;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_json(&cfg.out_dir.join("evaluation.json"), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_params: usize,
    pub max_adjoint_vs_shift: f64,
    pub max_adjoint_vs_fd: f64,
    pub max_shift_vs_fd: f64,
    pub tolerance: f64,
    pub fd_tolerance: f64,
    pub passed: bool,
    pub warning: Option<String>,
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compares the three gradient engines on `n_trials` random shards of at most
/// `max_qubits` qubits and 200 parameters.
pub fn cmd_gradcheck(n_trials: usize, tolerance: f64, seed: u64, max_qubits: usize) -> Result<GradCheckReport> {
    if !(2..=GRADCHECK_MAX_QUBITS).contains(&max_qubits) {
        return Err(Error::Config(format!(
            "gradcheck shards must have 2..={GRADCHECK_MAX_QUBITS} qubits, got {max_qubits}"
        )));
    }
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(Error::Config(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        trials: n_trials,
        max_params: 0,
        max_adjoint_vs_shift: 0.0,
        max_adjoint_vs_fd: 0.0,
        max_shift_vs_fd: 0.0,
        tolerance,
        fd_tolerance: GRADCHECK_FD_TOLERANCE,
        passed: true,
        warning: None,
    };
    for _ in 0..n_trials {
        let inst = random_instance(&mut rng, max_qubits)?;
        let adj = adjoint_grad(&inst.arch, &inst.params, &inst.features, &[inst.obs])?.remove(0);
        let shift = parameter_shift_grad(&inst.arch, &inst.params, &inst.features, inst.obs)?;
        let fd = finite_diff_grad(&inst.arch, &inst.params, &inst.features, inst.obs, GRADCHECK_FD_STEP)?;
        report.max_params = report.max_params.max(inst.params.len());
        report.max_adjoint_vs_shift = report.max_adjoint_vs_shift.max(max_dev(&adj, &shift));
        report.max_adjoint_vs_fd = report.max_adjoint_vs_fd.max(max_dev(&adj, &fd));
        report.max_shift_vs_fd = report.max_shift_vs_fd.max(max_dev(&shift, &fd));
    }
    if n_trials == 0 {
        report.warning = Some("no trials run; pass is vacuous".into());
    } else {
        report.passed = report.max_adjoint_vs_shift <= tolerance
            && report.max_adjoint_vs_fd <= GRADCHECK_FD_TOLERANCE
            && report.max_shift_vs_fd <= GRADCHECK_FD_TOLERANCE;
    }
    Ok(report)
}

/// A random shard for gradient checks.
pub struct RandomInstance {
    pub arch: crate::model::QnnArchitecture,
    pub params: Vec<f64>,
    pub features: Vec<f64>,
    pub obs: Observable,
}

pub fn random_instance(rng: &mut impl Rng, max_qubits: usize) -> Result<RandomInstance> {
    let n = rng.gen_range(2..=max_qubits);
    let n_enc = rng.gen_range(1..=2);
    let per_layer = (n_enc + 1) * 2 * n;
    let max_layers = (GRADCHECK_MAX_PARAMS / per_layer).max(1);
    let layers = rng.gen_range(1..=max_layers);
    let arch = ArchSpec::new(n, n_enc * 2 * n).layers(layers).min_qubits(1).build()?;
    let params = (0..arch.n_params())
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let features = (0..arch.n_features())
        .map(|_| rng.gen_range(0.0..std::f64::consts::FRAC_PI_4))
        .collect();
    let q = rng.gen_range(1..=n);
    let obs = if rng.gen_bool(0.5) { Observable::x(q) } else { Observable::z(q) };
    Ok(RandomInstance { arch, params, features, obs })
}
