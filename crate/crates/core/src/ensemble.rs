//! Distributed model: contiguous row bands of the input grid go to
//! independent shards, and the logits are `c` times the shard-wise sum of
//! observable expectations.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::AdjointSweep;
use crate::model::{ArchSpec, QnnArchitecture};
use crate::sim::{Observable, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    pub n_qc: usize,
}

impl PartitionSpec {
    pub fn new(grid_h: usize, grid_w: usize, n_qc: usize) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::Config(format!("empty grid {grid_h}x{grid_w}")));
        }
        if n_qc == 0 || !grid_h.is_multiple_of(n_qc) {
            return Err(Error::Config(format!(
                "{grid_h} rows cannot be split evenly across n_qc = {n_qc} shards"
            )));
        }
        Ok(PartitionSpec { grid_h, grid_w, n_qc })
    }

    pub fn rows_per_shard(&self) -> usize {
        self.grid_h / self.n_qc
    }

    pub fn features_per_shard(&self) -> usize {
        self.rows_per_shard() * self.grid_w
    }

    pub fn sample_len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Half-open row ranges `[start, end)`, one per shard.
    pub fn row_ranges(&self) -> Vec<(usize, usize)> {
        let r = self.rows_per_shard();
        (0..self.n_qc).map(|j| (j * r, (j + 1) * r)).collect()
    }

    /// Shard `j`'s features: its row band of the row-major sample.
    pub fn shard_slice<'a>(&self, sample: &'a [f64], j: usize) -> &'a [f64] {
        let f = self.features_per_shard();
        &sample[j * f..(j + 1) * f]
    }

    fn check_sample(&self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.sample_len() {
            return Err(Error::Shape(format!(
                "sample has {} values, partition expects {}x{} = {}",
                sample.len(),
                self.grid_h,
                self.grid_w,
                self.sample_len()
            )));
        }
        Ok(())
    }
}

pub fn partition_features(sample: &[f64], spec: &PartitionSpec) -> Result<Vec<Vec<f64>>> {
    spec.check_sample(sample)?;
    Ok((0..spec.n_qc).map(|j| spec.shard_slice(sample, j).to_vec()).collect())
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {v}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `-ln(probs[label])`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs
        .get(label)
        .ok_or_else(|| Error::Range(format!("label {label} outside 0..{}", probs.len())))?;
    Ok(-p.ln())
}

/// `logsumexp(logits) - logits[label]`, equal to the cross-entropy of the
/// softmax without forming the log of a rounded probability.
fn log_softmax_loss(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub loss: Option<f64>,
}

impl Prediction {
    pub fn class(&self) -> usize {
        argmax(&self.probs)
    }
}

/// `n_qc` shards of one shared architecture with independent parameters,
/// stored back to back in a single vector.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    partition: PartitionSpec,
    arch: Arc<QnnArchitecture>,
    params: Vec<f64>,
    observables: Vec<Observable>,
    c: f64,
    /// Seeds that produced this model's state (init, then any retraining).
    pub seed_lineage: Vec<u64>,
}

impl EnsembleModel {
    /// Zero-initialised parameters; see `training::init_params`.
    pub fn new(partition: PartitionSpec, arch: ArchSpec, observables: Vec<Observable>, c: f64) -> Result<Self> {
        if arch.n_features != partition.features_per_shard() {
            return Err(Error::Config(format!(
                "shards take {} features but the partition hands out {}",
                arch.n_features,
                partition.features_per_shard()
            )));
        }
        let arch = Arc::new(arch.build()?);
        Self::from_parts(partition, arch, Vec::new(), observables, c)
    }

    /// Assembles a model around an existing architecture. An empty `params`
    /// means all zeros.
    pub fn from_parts(
        partition: PartitionSpec,
        arch: Arc<QnnArchitecture>,
        params: Vec<f64>,
        observables: Vec<Observable>,
        c: f64,
    ) -> Result<Self> {
        if arch.n_features() != partition.features_per_shard() {
            return Err(Error::Config(format!(
                "shards take {} features but the partition hands out {}",
                arch.n_features(),
                partition.features_per_shard()
            )));
        }
        if observables.is_empty() {
            return Err(Error::Config("empty observable list".into()));
        }
        arch.check_observables(&observables)?;
        if !c.is_finite() {
            return Err(Error::Numeric(format!("output scale c = {c}")));
        }
        let total = partition.n_qc * arch.n_params();
        let params = if params.is_empty() { vec![0.0; total] } else { params };
        if params.len() != total {
            return Err(Error::Shape(format!("{} parameters for {total} slots", params.len())));
        }
        Ok(EnsembleModel {
            partition,
            arch,
            params,
            observables,
            c,
            seed_lineage: Vec::new(),
        })
    }

    pub fn partition(&self) -> &PartitionSpec {
        &self.partition
    }

    pub fn arch(&self) -> &QnnArchitecture {
        &self.arch
    }

    pub fn n_shards(&self) -> usize {
        self.partition.n_qc
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn d_out(&self) -> usize {
        self.observables.len()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn set_c(&mut self, c: f64) {
        self.c = c;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn shard_params(&self, j: usize) -> &[f64] {
        let p = self.arch.n_params();
        &self.params[j * p..(j + 1) * p]
    }

    pub fn shard_params_mut(&mut self, j: usize) -> &mut [f64] {
        let p = self.arch.n_params();
        &mut self.params[j * p..(j + 1) * p]
    }

    pub fn workspace(&self) -> Result<Workspace> {
        Workspace::new(self)
    }

    /// Raw per-shard expectation vectors, shard-major.
    pub fn shard_outputs(&self, sample: &[f64], ws: &mut Workspace) -> Result<Vec<Vec<f64>>> {
        self.partition.check_sample(sample)?;
        self.run_shards(sample, ws);
        let d = self.d_out();
        Ok(ws.expect.chunks(d).map(<[f64]>::to_vec).collect())
    }

    fn run_shards(&self, sample: &[f64], ws: &mut Workspace) {
        let d = self.d_out();
        for j in 0..self.n_shards() {
            let state = &mut ws.states[j];
            state.reset();
            self.arch
                .run(state, self.shard_params(j), self.partition.shard_slice(sample, j));
            for (k, o) in self.observables.iter().enumerate() {
                ws.expect[j * d + k] = state.pauli_expectation(o.pauli, o.qubit - 1);
            }
        }
    }

    fn logits_from(&self, ws: &Workspace) -> Vec<f64> {
        let d = self.d_out();
        let mut logits = vec![0.0; d];
        for chunk in ws.expect.chunks(d) {
            for (l, e) in logits.iter_mut().zip(chunk) {
                *l += e;
            }
        }
        for l in &mut logits {
            *l *= self.c;
        }
        logits
    }

    fn check_finite(&self, sample: &[f64]) -> Result<()> {
        self.partition.check_sample(sample)?;
        if let Some(v) = sample.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature {v}")));
        }
        Ok(())
    }

    pub fn forward_with(&self, sample: &[f64], label: Option<usize>, ws: &mut Workspace) -> Result<Prediction> {
        self.check_finite(sample)?;
        if let Some(l) = label {
            if l >= self.d_out() {
                return Err(Error::Range(format!("label {l} outside 0..{}", self.d_out())));
            }
        }
        self.run_shards(sample, ws);
        let logits = self.logits_from(ws);
        let probs = softmax(&logits)?;
        let loss = label.map(|l| log_softmax_loss(&logits, l));
        Ok(Prediction { logits, probs, loss })
    }

    /// Logits `c * sum_j <O_k>_j` and their softmax.
    pub fn forward(&self, sample: &[f64]) -> Result<Prediction> {
        self.forward_with(sample, None, &mut self.workspace()?)
    }

    /// Loss gradient for one labelled sample, written into `grad` (same
    /// layout as `params`). Returns the forward prediction with its loss.
    pub fn backward_with(
        &self,
        sample: &[f64],
        label: usize,
        ws: &mut Workspace,
        grad: &mut [f64],
    ) -> Result<Prediction> {
        if grad.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer of {} for {} parameters",
                grad.len(),
                self.params.len()
            )));
        }
        let pred = self.forward_with(sample, Some(label), ws)?;
        // dL/dlogit_k = p_k - [k == label]; each logit is c * sum_j <O_k>_j
        let weights: Vec<f64> = pred
            .probs
            .iter()
            .enumerate()
            .map(|(k, &p)| self.c * (p - if k == label { 1.0 } else { 0.0 }))
            .collect();
        let p = self.arch.n_params();
        for j in 0..self.n_shards() {
            let out = &mut grad[j * p..(j + 1) * p];
            if self.c == 0.0 {
                out.fill(0.0);
                continue;
            }
            ws.sweep.run(
                &self.arch,
                self.shard_params(j),
                self.partition.shard_slice(sample, j),
                &ws.states[j],
                &self.observables,
                &weights,
                out,
            );
        }
        Ok(pred)
    }

    /// Per-shard loss gradients for one labelled sample.
    pub fn backward(&self, sample: &[f64], label: usize) -> Result<(Prediction, Vec<Vec<f64>>)> {
        let mut ws = self.workspace()?;
        let mut grad = vec![0.0; self.params.len()];
        let pred = self.backward_with(sample, label, &mut ws, &mut grad)?;
        let p = self.arch.n_params();
        Ok((pred, (0..self.n_shards()).map(|j| grad[j * p..(j + 1) * p].to_vec()).collect()))
    }

    // ------------------------------------------------------------ checkpoint

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let spec = self
            .arch
            .spec()
            .ok_or_else(|| Error::Checkpoint("custom architectures cannot be checkpointed".into()))?;
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            partition: self.partition,
            architecture: ArchDescriptor {
                n_qubits: spec.n_qubits,
                n_features: spec.n_features,
                layers_per_block: spec.layers_per_block,
                min_qubits: spec.min_qubits,
                omit_final_ring_scope: spec.ring_omission.to_string(),
                rotation_sign: spec.rotation_sign.to_string(),
                n_params: self.arch.n_params(),
            },
            observables: self.observables.iter().map(ToString::to_string).collect(),
            c: self.c,
            seed_lineage: self.seed_lineage.clone(),
            shards: (0..self.n_shards())
                .map(|j| ShardParams {
                    params: self.shard_params(j).to_vec(),
                })
                .collect(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format '{}'", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let a = &ck.architecture;
        let spec = ArchSpec::new(a.n_qubits, a.n_features)
            .layers(a.layers_per_block)
            .min_qubits(a.min_qubits)
            .ring_omission(a.omit_final_ring_scope.parse()?)
            .rotation_sign(a.rotation_sign.parse()?);
        let partition = PartitionSpec::new(ck.partition.grid_h, ck.partition.grid_w, ck.partition.n_qc)?;
        let arch = Arc::new(spec.build()?);
        if arch.n_params() != a.n_params {
            return Err(Error::Checkpoint(format!(
                "descriptor claims {} parameters per shard, layout has {}",
                a.n_params,
                arch.n_params()
            )));
        }
        if ck.shards.len() != partition.n_qc {
            return Err(Error::Checkpoint(format!(
                "{} shard records for n_qc = {}",
                ck.shards.len(),
                partition.n_qc
            )));
        }
        let mut params = Vec::with_capacity(partition.n_qc * arch.n_params());
        for (j, s) in ck.shards.iter().enumerate() {
            if s.params.len() != arch.n_params() {
                return Err(Error::Checkpoint(format!(
                    "shard {} holds {} parameters, expected {}",
                    j + 1,
                    s.params.len(),
                    arch.n_params()
                )));
            }
            params.extend_from_slice(&s.params);
        }
        let observables = ck
            .observables
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Observable>>>()?;
        let mut model = Self::from_parts(partition, arch, params, observables, ck.c)?;
        model.seed_lineage = ck.seed_lineage.clone();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_checkpoint()?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&ck)
    }
}

/// Per-thread scratch: one state per shard plus the reverse-sweep buffers.
pub struct Workspace {
    states: Vec<StateVector>,
    expect: Vec<f64>,
    sweep: AdjointSweep,
}

impl Workspace {
    pub fn new(model: &EnsembleModel) -> Result<Self> {
        let n = model.arch.n_qubits();
        Ok(Workspace {
            states: (0..model.n_shards())
                .map(|_| StateVector::zero(n))
                .collect::<Result<_>>()?,
            expect: vec![0.0; model.n_shards() * model.d_out()],
            sweep: AdjointSweep::new(n)?,
        })
    }
}

pub const CHECKPOINT_FORMAT: &str = "dqnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model container (JSON). Floats are written in shortest
/// round-trip form, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub partition: PartitionSpec,
    pub architecture: ArchDescriptor,
    pub observables: Vec<String>,
    pub c: f64,
    pub seed_lineage: Vec<u64>,
    pub shards: Vec<ShardParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    pub n_qubits: usize,
    pub n_features: usize,
    pub layers_per_block: usize,
    pub min_qubits: usize,
    pub omit_final_ring_scope: String,
    pub rotation_sign: String,
    pub n_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardParams {
    pub params: Vec<f64>,
}
