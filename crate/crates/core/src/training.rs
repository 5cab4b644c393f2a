//! Optimisation and evaluation.
//!
//! Batch gradients are reduced in a fixed order that does not depend on the
//! rayon pool size: the batch is cut into chunks of [`REDUCE_CHUNK`]
//! samples, each chunk is summed sequentially, and chunk sums are added in
//! chunk order. Results are therefore bit-identical for any thread count.

use std::f64::consts::PI;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, N_CLASSES};
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};

pub const REDUCE_CHUNK: usize = 8;
pub const DEFAULT_LR: f64 = 0.005;

/// Stream ids for the ChaCha generators derived from one run seed.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state for {} parameters got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    state.step(params, grads)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// splitmix64 of `seed ^ index`; used for per-fold seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws every parameter i.i.d. uniform on `[0, pi)`.
pub fn init_params(model: &mut EnsembleModel, seed: u64) {
    let mut rng = rng_for(seed, INIT_STREAM);
    for p in model.params_mut() {
        *p = rng.gen_range(0.0..PI);
    }
    model.seed_lineage.push(seed);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchSize {
    Full,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub seed: u64,
    pub lr: f64,
    pub k_folds: usize,
    pub shuffle: bool,
    pub stratified: bool,
    /// Evaluate the validation set every this many epochs (and always after
    /// the last one). 0 means only after the last epoch.
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: BatchSize::Full,
            seed,
            lr: DEFAULT_LR,
            k_folds: 5,
            shuffle: true,
            stratified: true,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push("epochs must be >= 1".to_string());
        }
        if self.batch_size == BatchSize::Fixed(0) {
            errs.push("batch_size must be >= 1 or \"full\"".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("lr must be positive, got {}", self.lr));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub loss: f64,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fold: Option<usize>,
    pub loss: f64,
    pub accuracy: f64,
    /// Seconds since the start of this training run. Kept out of the
    /// deterministic metrics file; see `cli`.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Default)]
struct Partial {
    grad: Vec<f64>,
    loss: f64,
    correct: usize,
}

impl Partial {
    fn add(&mut self, other: &Partial) {
        if self.grad.is_empty() {
            self.grad = vec![0.0; other.grad.len()];
        }
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b;
        }
        self.loss += other.loss;
        self.correct += other.correct;
    }
}

fn check_compat(model: &EnsembleModel, data: &Dataset) -> Result<()> {
    let p = model.partition();
    if data.height() != p.grid_h || data.width() != p.grid_w {
        return Err(Error::Shape(format!(
            "dataset grids are {}x{}, model partitions {}x{}",
            data.height(),
            data.width(),
            p.grid_h,
            p.grid_w
        )));
    }
    if model.d_out() < N_CLASSES {
        return Err(Error::Config(format!(
            "{} outputs cannot score {N_CLASSES} classes",
            model.d_out()
        )));
    }
    Ok(())
}

/// Sum of per-sample loss gradients, losses and hits over `indices`.
fn batch_partial(model: &EnsembleModel, data: &Dataset, indices: &[usize], with_grad: bool) -> Result<Partial> {
    let n_params = model.params().len();
    let chunks: Vec<Result<Partial>> = indices
        .par_chunks(REDUCE_CHUNK)
        .map_init(
            || model.workspace(),
            |ws, chunk| {
                let ws = ws.as_mut().map_err(|e| Error::Capacity(e.to_string()))?;
                let mut acc = Partial {
                    grad: if with_grad { vec![0.0; n_params] } else { Vec::new() },
                    ..Default::default()
                };
                let mut g = if with_grad { vec![0.0; n_params] } else { Vec::new() };
                for &i in chunk {
                    let label = data.label(i);
                    let pred = if with_grad {
                        let pred = model.backward_with(data.sample(i), label, ws, &mut g)?;
                        for (a, b) in acc.grad.iter_mut().zip(&g) {
                            *a += b;
                        }
                        pred
                    } else {
                        model.forward_with(data.sample(i), Some(label), ws)?
                    };
                    acc.loss += pred.loss.unwrap_or(0.0);
                    if pred.class() == label {
                        acc.correct += 1;
                    }
                }
                Ok(acc)
            },
        )
        .collect();
    let mut total = Partial {
        grad: if with_grad { vec![0.0; n_params] } else { Vec::new() },
        ..Default::default()
    };
    for c in chunks {
        total.add(&c?);
    }
    Ok(total)
}

/// Accuracy and mean cross-entropy over the whole dataset.
pub fn evaluate(model: &EnsembleModel, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Shape("cannot evaluate on an empty dataset".into()));
    }
    check_compat(model, data)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let p = batch_partial(model, data, &idx, false)?;
    Ok(Metrics {
        accuracy: p.correct as f64 / data.len() as f64,
        loss: p.loss / data.len() as f64,
    })
}

/// Mini-batch Adam on the mean batch loss. Parameters must already be
/// initialised. Emits one `train` record per epoch (loss and accuracy
/// measured on the fly with the pre-step parameters of each batch) and a
/// `validation` record on evaluation epochs when `validation` is given.
pub fn train(
    model: &mut EnsembleModel,
    data: &Dataset,
    config: &TrainConfig,
    validation: Option<&Dataset>,
    on_record: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Shape("cannot train on an empty dataset".into()));
    }
    check_compat(model, data)?;
    if let Some(v) = validation {
        check_compat(model, v)?;
    }
    let start = Instant::now();
    let mut adam = AdamState::new(model.params().len(), config.lr);
    let mut rng = rng_for(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let bs = match config.batch_size {
        BatchSize::Full => data.len(),
        BatchSize::Fixed(b) => b.min(data.len()),
    };
    let mut history = Vec::new();
    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss = 0.0;
        let mut correct = 0;
        for batch in order.chunks(bs) {
            let mut part = batch_partial(model, data, batch, true)?;
            let scale = 1.0 / batch.len() as f64;
            for g in &mut part.grad {
                *g *= scale;
            }
            adam.step(model.params_mut(), &part.grad)?;
            loss += part.loss;
            correct += part.correct;
        }
        let rec = EpochRecord {
            epoch,
            split: "train".into(),
            fold: None,
            loss: loss / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_record(&rec);
        history.push(rec);
        let due = epoch == config.epochs || (config.eval_every > 0 && epoch % config.eval_every == 0);
        if let (Some(v), true) = (validation, due) {
            let m = evaluate(model, v)?;
            let rec = EpochRecord {
                epoch,
                split: "validation".into(),
                fold: None,
                loss: m.loss,
                accuracy: m.accuracy,
                wall_time: start.elapsed().as_secs_f64(),
            };
            on_record(&rec);
            history.push(rec);
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// `k` disjoint validation folds covering the dataset, sizes differing by at
/// most one. Stratified mode deals each class's shuffled members round-robin
/// so per-fold class counts also differ by at most one.
pub fn kfold_split(labels: &[u8], k: usize, seed: u64, stratified: bool) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Range(format!("k-fold needs k >= 2, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Range(format!("{} samples cannot fill {k} folds", labels.len())));
    }
    let mut rng = rng_for(seed, SHUFFLE_STREAM);
    let deal: Vec<usize> = if stratified {
        let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        by_class
            .into_iter()
            .flat_map(|mut members| {
                members.shuffle(&mut rng);
                members
            })
            .collect()
    } else {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut val: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, &i) in deal.iter().enumerate() {
        val[pos % k].push(i);
    }
    Ok(val
        .into_iter()
        .map(|mut v| {
            v.sort_unstable();
            let mut in_val = vec![false; labels.len()];
            for &i in &v {
                in_val[i] = true;
            }
            let train = (0..labels.len()).filter(|&i| !in_val[i]).collect();
            Fold { train, validation: v }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValSummary {
    pub folds: Vec<Metrics>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_loss: f64,
    pub std_loss: f64,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CrossValSummary {
    pub fn from_folds(folds: Vec<Metrics>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|m| m.accuracy).collect();
        let loss: Vec<f64> = folds.iter().map(|m| m.loss).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        let (mean_loss, std_loss) = mean_std(&loss);
        CrossValSummary {
            folds,
            mean_accuracy,
            std_accuracy,
            mean_loss,
            std_loss,
        }
    }
}

/// k-fold cross-validation. Each fold re-initialises a copy of `template`
/// with its own derived seed and reports held-out metrics.
pub fn cross_validate(
    template: &EnsembleModel,
    data: &Dataset,
    config: &TrainConfig,
    on_record: &mut dyn FnMut(&EpochRecord),
) -> Result<(CrossValSummary, Vec<EnsembleModel>)> {
    config.validate()?;
    let folds = kfold_split(data.labels(), config.k_folds, config.seed, config.stratified)?;
    let mut metrics = Vec::with_capacity(folds.len());
    let mut models = Vec::with_capacity(folds.len());
    for (f, fold) in folds.iter().enumerate() {
        let fold_seed = derive_seed(config.seed, f as u64 + 1);
        let train_set = data.subset(&fold.train)?;
        let val_set = data.subset(&fold.validation)?;
        let mut model = template.clone();
        model.seed_lineage.clear();
        init_params(&mut model, fold_seed);
        let cfg = TrainConfig {
            seed: fold_seed,
            ..config.clone()
        };
        let mut tag = |r: &EpochRecord| {
            let mut r = r.clone();
            r.fold = Some(f + 1);
            on_record(&r);
        };
        train(&mut model, &train_set, &cfg, Some(&val_set), &mut tag)?;
        metrics.push(evaluate(&model, &val_set)?);
        models.push(model);
    }
    Ok((CrossValSummary::from_folds(metrics), models))
}
