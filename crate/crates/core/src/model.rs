//! Per-shard circuit layout.
//!
//! A shard on `n` qubits consuming `F` features is the alternating program
//! `V, E, V, E, ..., E, V` with `F / (2n)` encoding blocks `E` and one more
//! variational block `V`. An encoding block is one layer: RX on every qubit
//! taking features `2n*b + 0..n`, RY taking `2n*b + n..2n`, then a CZ ring.
//! A variational block stacks `layers_per_block` (20 by default) of the same
//! layer shape with trainable angles. The CZ ring of the last layer before
//! measurement is left out.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sim::{AngleSource, GateOp, Observable, RotationAxis, StateVector};

pub const DEFAULT_LAYERS_PER_BLOCK: usize = 20;

/// Lowest qubit count accepted with the default `X1..X5, Z1..Z5` readout.
pub const DEFAULT_MIN_QUBITS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RingOmission {
    /// Only the final layer of the last variational block loses its ring.
    #[default]
    LastLayer,
    /// Every layer of the last variational block loses its ring.
    LastBlock,
}

impl FromStr for RingOmission {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_layer" => Ok(RingOmission::LastLayer),
            "last_block" => Ok(RingOmission::LastBlock),
            other => Err(Error::Config(format!(
                "omit_final_ring_scope must be last_layer or last_block, got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for RingOmission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RingOmission::LastLayer => "last_layer",
            RingOmission::LastBlock => "last_block",
        })
    }
}

/// Sign of the rotation generator. `Negative` is `exp(-i t P / 2)`;
/// `Positive` runs every gate as `exp(+i t P / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RotationSign {
    #[default]
    Negative,
    Positive,
}

impl RotationSign {
    #[inline]
    pub fn factor(self) -> f64 {
        match self {
            RotationSign::Negative => 1.0,
            RotationSign::Positive => -1.0,
        }
    }
}

impl FromStr for RotationSign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(RotationSign::Negative),
            "positive" => Ok(RotationSign::Positive),
            other => Err(Error::Config(format!(
                "rotation_sign must be negative or positive, got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for RotationSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RotationSign::Negative => "negative",
            RotationSign::Positive => "positive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArchSpec {
    pub n_qubits: usize,
    pub n_features: usize,
    pub layers_per_block: usize,
    /// Readout guard. Toy models with injected observables may lower it.
    pub min_qubits: usize,
    pub ring_omission: RingOmission,
    pub rotation_sign: RotationSign,
}

impl ArchSpec {
    pub fn new(n_qubits: usize, n_features: usize) -> Self {
        ArchSpec {
            n_qubits,
            n_features,
            layers_per_block: DEFAULT_LAYERS_PER_BLOCK,
            min_qubits: DEFAULT_MIN_QUBITS,
            ring_omission: RingOmission::LastLayer,
            rotation_sign: RotationSign::Negative,
        }
    }

    pub fn layers(mut self, layers_per_block: usize) -> Self {
        self.layers_per_block = layers_per_block;
        self
    }

    pub fn min_qubits(mut self, min_qubits: usize) -> Self {
        self.min_qubits = min_qubits;
        self
    }

    pub fn ring_omission(mut self, scope: RingOmission) -> Self {
        self.ring_omission = scope;
        self
    }

    pub fn rotation_sign(mut self, sign: RotationSign) -> Self {
        self.rotation_sign = sign;
        self
    }

    pub fn build(self) -> Result<QnnArchitecture> {
        QnnArchitecture::from_spec(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Encoding,
    Variational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub gates: Vec<GateOp>,
}

/// Execution form of the gate list: consecutive CZ gates are diagonal and
/// commute, so each run collapses into one sign-flip table.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Rot {
        axis: RotationAxis,
        bit: usize,
        angle: AngleSource,
    },
    Flip(usize),
}

#[derive(Debug, Clone)]
pub struct QnnArchitecture {
    n_qubits: usize,
    n_features: usize,
    n_params: usize,
    rotation_sign: RotationSign,
    spec: Option<ArchSpec>,
    blocks: Vec<Block>,
    ops: Vec<Op>,
    flips: Vec<Vec<bool>>,
}

/// Builds the standard layout for `n_qubits` and `n_features` with 20-layer
/// variational blocks.
pub fn build_architecture(n_qubits: usize, n_features: usize) -> Result<QnnArchitecture> {
    ArchSpec::new(n_qubits, n_features).build()
}

pub fn num_parameters(arch: &QnnArchitecture) -> usize {
    arch.n_params()
}

fn rotation_row(axis: RotationAxis, n: usize, first: usize, src: fn(usize) -> AngleSource) -> impl Iterator<Item = GateOp> {
    (1..=n).map(move |q| GateOp::Rotation {
        axis,
        qubit: q,
        angle: src(first + q - 1),
    })
}

fn cz_ring(n: usize) -> impl Iterator<Item = GateOp> {
    let len = if n >= 2 { n } else { 0 };
    (1..=len).map(move |i| GateOp::Cz {
        control: i,
        target: (i % n) + 1,
    })
}

impl QnnArchitecture {
    fn from_spec(spec: ArchSpec) -> Result<Self> {
        let n = spec.n_qubits;
        if n < spec.min_qubits {
            return Err(Error::Config(format!(
                "n_qubits = {n} is below {}; the readout needs qubits up to {}",
                spec.min_qubits, spec.min_qubits
            )));
        }
        if n == 0 || n > crate::sim::MAX_QUBITS {
            return Err(Error::Capacity(format!("n_qubits = {n} out of range")));
        }
        if spec.n_features == 0 || !spec.n_features.is_multiple_of(2 * n) {
            return Err(Error::Config(format!(
                "n_features = {} is not a positive multiple of 2 * n_qubits = {}",
                spec.n_features,
                2 * n
            )));
        }
        let n_enc = spec.n_features / (2 * n);
        let n_var = n_enc + 1;
        let mut blocks = Vec::with_capacity(n_enc + n_var);
        let mut next_param = 0;
        for b in 0..n_var {
            let last_block = b + 1 == n_var;
            let mut gates = Vec::with_capacity(spec.layers_per_block * 3 * n);
            for l in 0..spec.layers_per_block {
                gates.extend(rotation_row(RotationAxis::X, n, next_param, AngleSource::Param));
                gates.extend(rotation_row(RotationAxis::Y, n, next_param + n, AngleSource::Param));
                next_param += 2 * n;
                let drop_ring = last_block
                    && match spec.ring_omission {
                        RingOmission::LastLayer => l + 1 == spec.layers_per_block,
                        RingOmission::LastBlock => true,
                    };
                if !drop_ring {
                    gates.extend(cz_ring(n));
                }
            }
            blocks.push(Block {
                kind: BlockKind::Variational,
                gates,
            });
            if !last_block {
                let first = b * 2 * n;
                let mut gates = Vec::with_capacity(3 * n);
                gates.extend(rotation_row(RotationAxis::X, n, first, AngleSource::Feature));
                gates.extend(rotation_row(RotationAxis::Y, n, first + n, AngleSource::Feature));
                gates.extend(cz_ring(n));
                blocks.push(Block {
                    kind: BlockKind::Encoding,
                    gates,
                });
            }
        }
        let mut arch = Self::assemble(n, spec.n_features, blocks, spec.rotation_sign)?;
        arch.spec = Some(spec);
        Ok(arch)
    }

    /// Arbitrary gate program, for toy circuits and tests. Every feature and
    /// parameter index below the given counts must be used exactly once.
    pub fn custom(n_qubits: usize, n_features: usize, blocks: Vec<Block>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > crate::sim::MAX_QUBITS {
            return Err(Error::Capacity(format!("n_qubits = {n_qubits} out of range")));
        }
        Self::assemble(n_qubits, n_features, blocks, RotationSign::Negative)
    }

    fn assemble(n_qubits: usize, n_features: usize, blocks: Vec<Block>, rotation_sign: RotationSign) -> Result<Self> {
        let mut feature_seen = vec![false; n_features];
        let mut param_seen: Vec<bool> = Vec::new();
        for gate in blocks.iter().flat_map(|b| &b.gates) {
            gate.validate(n_qubits)?;
            if let GateOp::Rotation { angle, .. } = *gate {
                let (seen, k) = match angle {
                    AngleSource::Feature(k) => {
                        if k >= n_features {
                            return Err(Error::Shape(format!(
                                "feature index {} beyond n_features = {n_features}",
                                k + 1
                            )));
                        }
                        (&mut feature_seen, k)
                    }
                    AngleSource::Param(k) => {
                        if k >= param_seen.len() {
                            param_seen.resize(k + 1, false);
                        }
                        (&mut param_seen, k)
                    }
                };
                if seen[k] {
                    return Err(Error::Config(format!("angle source {angle:?} used twice")));
                }
                seen[k] = true;
            }
        }
        if let Some(k) = feature_seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("feature {} is never encoded", k + 1)));
        }
        if let Some(k) = param_seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("parameter {} is never used", k + 1)));
        }

        let dim = 1usize << n_qubits;
        let mut ops = Vec::new();
        let mut flips: Vec<Vec<bool>> = Vec::new();
        let mut pending: Option<Vec<bool>> = None;
        for gate in blocks.iter().flat_map(|b| &b.gates) {
            match *gate {
                GateOp::Rotation { axis, qubit, angle } => {
                    if let Some(table) = pending.take() {
                        ops.push(Op::Flip(flips.len()));
                        flips.push(table);
                    }
                    ops.push(Op::Rot {
                        axis,
                        bit: qubit - 1,
                        angle,
                    });
                }
                GateOp::Cz { control, target } => {
                    let table = pending.get_or_insert_with(|| vec![false; dim]);
                    let mask = (1usize << (control - 1)) | (1usize << (target - 1));
                    for (i, f) in table.iter_mut().enumerate() {
                        if i & mask == mask {
                            *f = !*f;
                        }
                    }
                }
            }
        }
        if let Some(table) = pending.take() {
            ops.push(Op::Flip(flips.len()));
            flips.push(table);
        }

        Ok(QnnArchitecture {
            n_qubits,
            n_features,
            n_params: param_seen.len(),
            rotation_sign,
            spec: None,
            blocks,
            ops,
            flips,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn rotation_sign(&self) -> RotationSign {
        self.rotation_sign
    }

    /// The construction parameters, when built by [`ArchSpec::build`].
    pub fn spec(&self) -> Option<&ArchSpec> {
        self.spec.as_ref()
    }

    pub fn gates(&self) -> impl Iterator<Item = &GateOp> {
        self.blocks.iter().flat_map(|b| &b.gates)
    }

    pub fn count_blocks(&self, kind: BlockKind) -> usize {
        self.blocks.iter().filter(|b| b.kind == kind).count()
    }

    pub(crate) fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub(crate) fn flip_table(&self, idx: usize) -> &[bool] {
        &self.flips[idx]
    }

    pub(crate) fn check_inputs(&self, params: &[f64], features: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        if features.len() != self.n_features {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.n_features,
                features.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_observables(&self, observables: &[Observable]) -> Result<()> {
        for o in observables {
            if o.qubit == 0 || o.qubit > self.n_qubits {
                return Err(Error::Wiring(format!(
                    "observable {o} outside a {}-qubit shard",
                    self.n_qubits
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn angle(&self, src: AngleSource, params: &[f64], features: &[f64]) -> f64 {
        let raw = match src {
            AngleSource::Feature(k) => features[k],
            AngleSource::Param(k) => params[k],
        };
        self.rotation_sign.factor() * raw
    }

    /// Runs the program on `state` (which must hold `|0...0>` or whatever
    /// initial state the caller wants) without input checks.
    pub(crate) fn run(&self, state: &mut StateVector, params: &[f64], features: &[f64]) {
        for op in &self.ops {
            match *op {
                Op::Rot { axis, bit, angle } => {
                    state.rotate(axis, bit, self.angle(angle, params, features));
                }
                Op::Flip(t) => state.flip_signs(&self.flips[t]),
            }
        }
    }

    /// Final state `|psi_f>` of the shard program applied to `|0...0>`.
    pub fn final_state(&self, params: &[f64], features: &[f64]) -> Result<StateVector> {
        self.check_inputs(params, features)?;
        if let Some(bad) = params.iter().chain(features).find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite angle {bad}")));
        }
        let mut state = StateVector::zero(self.n_qubits)?;
        self.run(&mut state, params, features);
        Ok(state)
    }

    /// Deterministic textual gate listing, one gate per line.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# shard n_qubits={} n_features={} n_params={} blocks={}",
            self.n_qubits,
            self.n_features,
            self.n_params,
            self.blocks.len()
        );
        if let Some(spec) = &self.spec {
            let _ = writeln!(
                out,
                "# layers_per_block={} omit_final_ring_scope={} rotation_sign={}",
                spec.layers_per_block, spec.ring_omission, spec.rotation_sign
            );
        }
        for (i, block) in self.blocks.iter().enumerate() {
            let kind = match block.kind {
                BlockKind::Encoding => "encoding",
                BlockKind::Variational => "variational",
            };
            let _ = writeln!(out, "block {} {kind} gates={}", i + 1, block.gates.len());
            for g in &block.gates {
                let _ = writeln!(out, "  {g}");
            }
        }
        out
    }
}

/// `<psi_f|O_k|psi_f>` for each observable, in order.
pub fn shard_forward(
    arch: &QnnArchitecture,
    params: &[f64],
    features: &[f64],
    observables: &[Observable],
) -> Result<Vec<f64>> {
    arch.check_observables(observables)?;
    let state = arch.final_state(params, features)?;
    Ok(observables
        .iter()
        .map(|o| state.pauli_expectation(o.pauli, o.qubit - 1))
        .collect())
}
