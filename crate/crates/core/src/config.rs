//! Experiment files: flat `key = value` TOML, angles in radians.
//!
//! ```toml
//! dataset = "semeion"
//! semeion_path = "${DQNN_DATA_DIR}/semeion/semeion.data"
//! max_angle_rad = "pi/4"      # number, or "pi/N"
//! pool = "avg2x2"             # or "none"
//! raw_max = "auto"            # or a number; auto = max of the training file
//! n_qc = 2
//! n_qubits = 8
//! c = 1.0
//! epochs = 300
//! batch_size = "full"         # or an integer
//! seed = 1
//! ```
//!
//! `epochs`, `c` and `seed` have no defaults. Path values may reference
//! environment variables as `${NAME}`. Relative paths resolve against the
//! directory of the config file.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use toml::{Table, Value};

use crate::data::{Pool, PreprocSpec};
use crate::ensemble::PartitionSpec;
use crate::error::{Error, Result};
use crate::model::{ArchSpec, RingOmission, RotationSign, DEFAULT_LAYERS_PER_BLOCK};
use crate::training::{BatchSize, TrainConfig, DEFAULT_LR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Semeion,
    Mnist,
}

impl DatasetKind {
    /// Raw grid side length of the on-disk format.
    pub fn raw_side(self) -> usize {
        match self {
            DatasetKind::Semeion => 16,
            DatasetKind::Mnist => 28,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RawMax {
    Fixed(f64),
    /// Largest value in the (training) file.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub semeion_path: Option<PathBuf>,
    pub mnist: Option<MnistPaths>,
    pub max_angle: f64,
    pub pool: Pool,
    pub raw_max: RawMax,
    pub n_qc: usize,
    pub n_qubits: usize,
    pub layers_per_block: usize,
    pub c: f64,
    pub ring_omission: RingOmission,
    pub rotation_sign: RotationSign,
    pub train: TrainConfig,
    /// Stratified training subset size (drawn with the run seed).
    pub train_subset: Option<usize>,
    /// rayon worker count, 0 = all cores.
    pub threads: usize,
    pub out_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "dataset",
    "semeion_path",
    "mnist_train_images",
    "mnist_train_labels",
    "mnist_test_images",
    "mnist_test_labels",
    "max_angle_rad",
    "pool",
    "raw_max",
    "n_qc",
    "n_qubits",
    "layers_per_block",
    "c",
    "omit_final_ring_scope",
    "rotation_sign",
    "epochs",
    "batch_size",
    "seed",
    "lr",
    "k_folds",
    "shuffle",
    "stratified",
    "eval_every",
    "train_subset",
    "threads",
    "out_dir",
];

/// Collects every problem instead of stopping at the first.
struct Reader<'a> {
    table: &'a Table,
    base: &'a Path,
    errors: Vec<String>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &str) -> Option<&'a Value> {
        self.table.get(key)
    }

    fn required<T>(&mut self, key: &str, v: Option<T>) -> Option<T> {
        if v.is_none() && self.table.get(key).is_none() {
            self.errors.push(format!("missing required key '{key}'"));
        }
        v
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.raw(key)? {
            Value::String(s) => Some(s.clone()),
            other => {
                self.errors.push(format!("'{key}' must be a string, got {other}"));
                None
            }
        }
    }

    fn uint(&mut self, key: &str) -> Option<u64> {
        match self.raw(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            other => {
                self.errors.push(format!("'{key}' must be a non-negative integer, got {other}"));
                None
            }
        }
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        match self.raw(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.errors.push(format!("'{key}' must be a number, got {other}"));
                None
            }
        }
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        match self.raw(key)? {
            Value::Boolean(b) => Some(*b),
            other => {
                self.errors.push(format!("'{key}' must be true or false, got {other}"));
                None
            }
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        let s = self.string(key)?;
        match expand_env(&s) {
            Ok(expanded) => {
                let p = PathBuf::from(expanded);
                Some(if p.is_relative() { self.base.join(p) } else { p })
            }
            Err(msg) => {
                self.errors.push(format!("'{key}': {msg}"));
                None
            }
        }
    }

    /// A number or a string of the form `pi`, `pi/N`, `N*pi`.
    fn angle(&mut self, key: &str) -> Option<f64> {
        match self.raw(key)? {
            Value::String(s) => match parse_pi_expr(s) {
                Some(v) => Some(v),
                None => {
                    self.errors.push(format!("'{key}': cannot read '{s}' as an angle"));
                    None
                }
            },
            _ => self.float(key),
        }
    }
}

fn parse_pi_expr(s: &str) -> Option<f64> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let s = s.to_ascii_lowercase();
    if s == "pi" {
        return Some(PI);
    }
    if let Some(d) = s.strip_prefix("pi/") {
        return d.parse::<f64>().ok().filter(|d| *d != 0.0).map(|d| PI / d);
    }
    if let Some(m) = s.strip_suffix("*pi") {
        return m.parse::<f64>().ok().map(|m| m * PI);
    }
    s.parse().ok()
}

/// Replaces `${NAME}` with the value of the environment variable `NAME`.
fn expand_env(s: &str) -> std::result::Result<String, String> {
    let mut out = String::new();
    let mut rest = s;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or_else(|| format!("unterminated '${{' in '{s}'"))?;
        let name = &after[..end];
        let val = std::env::var(name).map_err(|_| format!("environment variable {name} is not set"))?;
        out.push_str(&val);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::ConfigList(vec![e.to_string()]))?;
        let mut r = Reader {
            table: &table,
            base,
            errors: Vec::new(),
        };
        let known: BTreeSet<&str> = KEYS.iter().copied().collect();
        for k in table.keys() {
            if !known.contains(k.as_str()) {
                r.errors.push(format!("unknown key '{k}'"));
            }
        }

        let dataset = match r.string("dataset").as_deref() {
            Some("semeion") => Some(DatasetKind::Semeion),
            Some("mnist") => Some(DatasetKind::Mnist),
            Some(other) => {
                r.errors.push(format!("dataset must be semeion or mnist, got '{other}'"));
                None
            }
            None => {
                r.errors.push("missing required key 'dataset'".into());
                None
            }
        };
        let semeion_path = r.path("semeion_path");
        let train_images = r.path("mnist_train_images");
        let train_labels = r.path("mnist_train_labels");
        let test_images = r.path("mnist_test_images");
        let test_labels = r.path("mnist_test_labels");
        let mnist = match dataset {
            Some(DatasetKind::Mnist) => match (train_images, train_labels) {
                (Some(train_images), Some(train_labels)) => {
                    if test_images.is_some() != test_labels.is_some() {
                        r.errors.push("mnist_test_images and mnist_test_labels go together".into());
                    }
                    Some(MnistPaths {
                        train_images,
                        train_labels,
                        test_images,
                        test_labels,
                    })
                }
                _ => {
                    r.errors.push("mnist needs mnist_train_images and mnist_train_labels".into());
                    None
                }
            },
            _ => None,
        };
        if dataset == Some(DatasetKind::Semeion) && semeion_path.is_none() && !table.contains_key("semeion_path") {
            r.errors.push("semeion needs semeion_path".into());
        }

        let max_angle = r.angle("max_angle_rad");
        let max_angle = r.required("max_angle_rad", max_angle);
        if let Some(a) = max_angle {
            if !(a > 0.0 && a.is_finite()) {
                r.errors.push(format!("max_angle_rad must be positive, got {a}"));
            }
        }
        let pool = match r.string("pool").as_deref() {
            None | Some("none") => Pool::None,
            Some("avg2x2") => Pool::Avg2x2,
            Some(other) => {
                r.errors.push(format!("pool must be none or avg2x2, got '{other}'"));
                Pool::None
            }
        };
        let raw_max = match table.get("raw_max") {
            None => RawMax::Fixed(255.0),
            Some(Value::String(s)) if s == "auto" => RawMax::Auto,
            Some(_) => match r.float("raw_max") {
                Some(v) if v > 0.0 && v.is_finite() => RawMax::Fixed(v),
                Some(v) => {
                    r.errors.push(format!("raw_max must be positive, got {v}"));
                    RawMax::Auto
                }
                None => RawMax::Auto,
            },
        };

        let n_qc = r.uint("n_qc");
        let n_qc = r.required("n_qc", n_qc).unwrap_or(1) as usize;
        let n_qubits = r.uint("n_qubits");
        let n_qubits = r.required("n_qubits", n_qubits).unwrap_or(5) as usize;
        let layers_per_block = r.uint("layers_per_block").unwrap_or(DEFAULT_LAYERS_PER_BLOCK as u64) as usize;
        let c = r.float("c");
        let c = r.required("c", c).unwrap_or(0.0);
        let ring_omission = match r.string("omit_final_ring_scope") {
            None => RingOmission::LastLayer,
            Some(s) => s.parse().unwrap_or_else(|e: Error| {
                r.errors.push(e.to_string());
                RingOmission::LastLayer
            }),
        };
        let rotation_sign = match r.string("rotation_sign") {
            None => RotationSign::Negative,
            Some(s) => s.parse().unwrap_or_else(|e: Error| {
                r.errors.push(e.to_string());
                RotationSign::Negative
            }),
        };

        let epochs = r.uint("epochs");
        let epochs = r.required("epochs", epochs).unwrap_or(1) as usize;
        let seed = r.uint("seed");
        let seed = r.required("seed", seed).unwrap_or(0);
        let batch_size = match table.get("batch_size") {
            None => BatchSize::Full,
            Some(Value::String(s)) if s == "full" => BatchSize::Full,
            Some(_) => match r.uint("batch_size") {
                Some(0) => {
                    r.errors.push("batch_size must be >= 1 or \"full\"".into());
                    BatchSize::Full
                }
                Some(b) => BatchSize::Fixed(b as usize),
                None => BatchSize::Full,
            },
        };
        let lr = r.float("lr").unwrap_or(DEFAULT_LR);
        let k_folds = r.uint("k_folds").unwrap_or(5) as usize;
        let shuffle = r.boolean("shuffle").unwrap_or(true);
        let stratified = r.boolean("stratified").unwrap_or(true);
        let eval_every = r.uint("eval_every").unwrap_or(0) as usize;
        let train_subset = r.uint("train_subset").map(|v| v as usize);
        let threads = r.uint("threads").unwrap_or(0) as usize;
        let out_dir = r.path("out_dir").unwrap_or_else(|| base.join("runs"));

        let train = TrainConfig {
            epochs,
            batch_size,
            seed,
            lr,
            k_folds,
            shuffle,
            stratified,
            eval_every,
        };
        if let Err(Error::ConfigList(list)) = train.validate() {
            r.errors.extend(list);
        }

        let mut errors = r.errors;
        let cfg = ExperimentConfig {
            dataset: dataset.unwrap_or(DatasetKind::Semeion),
            semeion_path,
            mnist,
            max_angle: max_angle.unwrap_or(1.0),
            pool,
            raw_max,
            n_qc,
            n_qubits,
            layers_per_block,
            c,
            ring_omission,
            rotation_sign,
            train,
            train_subset,
            threads,
            out_dir,
        };
        if dataset.is_some() {
            errors.extend(cfg.shape_errors());
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::ConfigList(errors))
        }
    }

    /// Grid side after optional pooling.
    pub fn grid_side(&self) -> usize {
        match self.pool {
            Pool::None => self.dataset.raw_side(),
            Pool::Avg2x2 => self.dataset.raw_side() / 2,
        }
    }

    pub fn features_per_shard(&self) -> Option<usize> {
        let side = self.grid_side();
        (self.n_qc > 0 && side.is_multiple_of(self.n_qc)).then(|| side / self.n_qc * side)
    }

    fn shape_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let side = self.grid_side();
        if self.n_qc == 0 || !side.is_multiple_of(self.n_qc) {
            errs.push(format!(
                "n_qc = {} does not divide the {side} rows of the {side}x{side} grid",
                self.n_qc
            ));
        }
        if self.n_qubits < crate::model::DEFAULT_MIN_QUBITS {
            errs.push(format!(
                "n_qubits = {} is below 5; the readout X1..X5, Z1..Z5 needs five qubits",
                self.n_qubits
            ));
        }
        if let Some(f) = self.features_per_shard() {
            if self.n_qubits > 0 && f % (2 * self.n_qubits) != 0 {
                errs.push(format!(
                    "{f} features per shard is not a multiple of 2 * n_qubits = {}",
                    2 * self.n_qubits
                ));
            }
        }
        if let Some(n) = self.train_subset {
            if n == 0 {
                errs.push("train_subset must be positive".into());
            }
        }
        if self.k_folds_invalid() {
            errs.push(format!("k_folds must be >= 2, got {}", self.train.k_folds));
        }
        errs
    }

    fn k_folds_invalid(&self) -> bool {
        self.train.k_folds < 2
    }

    pub fn partition(&self) -> Result<PartitionSpec> {
        let side = self.grid_side();
        PartitionSpec::new(side, side, self.n_qc)
    }

    pub fn arch_spec(&self) -> ArchSpec {
        ArchSpec::new(self.n_qubits, self.features_per_shard().unwrap_or(0))
            .layers(self.layers_per_block)
            .ring_omission(self.ring_omission)
            .rotation_sign(self.rotation_sign)
    }

    /// Preprocessing with `raw_max` resolved against `observed_max`.
    pub fn preproc(&self, observed_max: f64) -> PreprocSpec {
        PreprocSpec {
            max_angle: self.max_angle,
            pool: self.pool,
            raw_max: match self.raw_max {
                RawMax::Fixed(v) => v,
                RawMax::Auto => observed_max,
            },
        }
    }

    /// Flat record of every resolved setting, for run manifests.
    pub fn resolved(&self) -> serde_json::Value {
        serde_json::json!({
            "dataset": self.dataset,
            "semeion_path": self.semeion_path,
            "mnist": self.mnist,
            "max_angle_rad": self.max_angle,
            "pool": match self.pool { Pool::None => "none", Pool::Avg2x2 => "avg2x2" },
            "raw_max": match self.raw_max { RawMax::Fixed(v) => serde_json::json!(v), RawMax::Auto => serde_json::json!("auto") },
            "n_qc": self.n_qc,
            "n_qubits": self.n_qubits,
            "features_per_shard": self.features_per_shard(),
            "layers_per_block": self.layers_per_block,
            "c": self.c,
            "omit_final_ring_scope": self.ring_omission.to_string(),
            "rotation_sign": self.rotation_sign.to_string(),
            "epochs": self.train.epochs,
            "batch_size": match self.train.batch_size { BatchSize::Full => serde_json::json!("full"), BatchSize::Fixed(b) => serde_json::json!(b) },
            "seed": self.train.seed,
            "lr": self.train.lr,
            "k_folds": self.train.k_folds,
            "shuffle": self.train.shuffle,
            "stratified": self.train.stratified,
            "eval_every": self.train.eval_every,
            "train_subset": self.train_subset,
            "threads": self.threads,
            "out_dir": self.out_dir,
        })
    }
}
