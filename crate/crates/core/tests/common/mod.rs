//! Independent reference implementations used as test oracles.
//!
//! Gates are applied as explicit 2^n x 2^n matrices built from Kronecker
//! products, so nothing here shares code with the pair-update kernels.

#![allow(dead_code)]

use num_complex::Complex64 as C;

use dqnn::data::Dataset;
use dqnn::model::RotationSign;
use dqnn::sim::{AngleSource, GateOp, Pauli, RotationAxis};
use dqnn::sim::Observable;
use dqnn::{EnsembleModel, QnnArchitecture, StateVector};

pub type Mat = Vec<Vec<C>>;

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

pub fn identity(dim: usize) -> Mat {
    (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect())
        .collect()
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ra, rb) = (a.len(), b.len());
    let mut out = vec![vec![c(0.0, 0.0); ra * rb]; ra * rb];
    for i in 0..ra {
        for j in 0..ra {
            for k in 0..rb {
                for l in 0..rb {
                    out[i * rb + k][j * rb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn pauli_x() -> Mat {
    vec![vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]]
}

pub fn pauli_y() -> Mat {
    vec![vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]]
}

pub fn pauli_z() -> Mat {
    vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(-1.0, 0.0)]]
}

/// exp(-i theta P / 2) = cos(theta/2) I - i sin(theta/2) P for a Pauli P.
pub fn pauli_rotation(p: &Mat, theta: f64) -> Mat {
    let (co, si) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let id = identity(2);
    (0..2)
        .map(|i| (0..2).map(|j| id[i][j] * co + p[i][j] * c(0.0, -si)).collect())
        .collect()
}

/// Lifts a one-qubit matrix onto qubit `q` (1-based, little-endian) of `n`.
/// The most significant qubit is the leftmost Kronecker factor.
pub fn lift(u: &Mat, q: usize, n: usize) -> Mat {
    let mut m = identity(1);
    for k in (1..=n).rev() {
        let f = if k == q { u.clone() } else { identity(2) };
        m = kron(&m, &f);
    }
    m
}

pub fn cz_matrix(a: usize, b: usize, n: usize) -> Mat {
    let dim = 1 << n;
    let mut m = identity(dim);
    for (i, row) in m.iter_mut().enumerate() {
        if (i >> (a - 1)) & 1 == 1 && (i >> (b - 1)) & 1 == 1 {
            row[i] = c(-1.0, 0.0);
        }
    }
    m
}

pub fn matvec(m: &Mat, v: &[C]) -> Vec<C> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn zero_state(n: usize) -> Vec<C> {
    let mut v = vec![c(0.0, 0.0); 1 << n];
    v[0] = c(1.0, 0.0);
    v
}

pub fn expectation(v: &[C], p: Pauli, q: usize, n: usize) -> f64 {
    let m = match p {
        Pauli::X => lift(&pauli_x(), q, n),
        Pauli::Z => lift(&pauli_z(), q, n),
    };
    let w = matvec(&m, v);
    v.iter().zip(&w).map(|(a, b)| a.conj() * b).sum::<C>().re
}

pub fn gate_matrix(g: &GateOp, theta: f64, n: usize) -> Mat {
    match *g {
        GateOp::Rotation { axis, qubit, .. } => {
            let p = match axis {
                RotationAxis::X => pauli_x(),
                RotationAxis::Y => pauli_y(),
            };
            lift(&pauli_rotation(&p, theta), qubit, n)
        }
        GateOp::Cz { control, target } => cz_matrix(control, target, n),
    }
}

/// Runs a shard's gate list through dense matrices.
pub fn dense_shard_state(arch: &QnnArchitecture, params: &[f64], features: &[f64]) -> Vec<C> {
    let n = arch.n_qubits();
    let sign = match arch.rotation_sign() {
        RotationSign::Negative => 1.0,
        RotationSign::Positive => -1.0,
    };
    let mut v = zero_state(n);
    for g in arch.gates() {
        let theta = match *g {
            GateOp::Rotation { angle: AngleSource::Feature(k), .. } => sign * features[k],
            GateOp::Rotation { angle: AngleSource::Param(k), .. } => sign * params[k],
            GateOp::Cz { .. } => 0.0,
        };
        v = matvec(&gate_matrix(g, theta, n), &v);
    }
    v
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// A small synthetic 16x16 dataset in which each class lights a distinct
/// pattern of rows and columns, plus a deterministic speckle.
pub fn synthetic_digits(per_class: usize, seed: u64) -> Dataset {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as u32
    };
    for k in 0..per_class {
        for class in 0..10usize {
            for r in 0..16 {
                for col in 0..16 {
                    let on = r == class || r == 15 - class || col == class + 3 || (r + col + k) % 11 == class;
                    let speckle = next() % 17 == 0;
                    values.push(if on ^ speckle { 1.0 } else { 0.0 });
                }
            }
            labels.push(class as u8);
        }
    }
    Dataset::new(16, 16, values, labels).unwrap()
}

/// Both shards laid side by side on one 10-qubit register: shard j's qubit
/// q becomes joint qubit q + 5j.
pub fn joint_logits(m: &EnsembleModel, x: &[f64]) -> Vec<f64> {
    let arch = m.arch();
    let n = arch.n_qubits();
    let sign = match arch.rotation_sign() {
        RotationSign::Negative => 1.0,
        RotationSign::Positive => -1.0,
    };
    let mut s = StateVector::zero(n * m.n_shards()).unwrap();
    for j in 0..m.n_shards() {
        let params = m.shard_params(j);
        let feats = m.partition().shard_slice(x, j);
        for g in arch.gates() {
            match *g {
                GateOp::Rotation { axis, qubit, angle } => {
                    let theta = match angle {
                        AngleSource::Feature(k) => feats[k],
                        AngleSource::Param(k) => params[k],
                    };
                    s.apply_rotation(axis, qubit + n * j, sign * theta).unwrap();
                }
                GateOp::Cz { control, target } => s.apply_cz(control + n * j, target + n * j).unwrap(),
            }
        }
    }
    m.observables()
        .iter()
        .map(|o| {
            let total: f64 = (0..m.n_shards())
                .map(|j| s.expectation(Observable { pauli: o.pauli, qubit: o.qubit + n * j }).unwrap())
                .sum();
            m.c() * total
        })
        .collect()
}

