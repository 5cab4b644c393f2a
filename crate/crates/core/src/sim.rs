//! Dense statevector simulation restricted to the gate set the models use:
//! RX, RY and CZ, plus single-qubit Pauli X/Z expectation values.
//!
//! Qubits are numbered from 1 in every public signature. Qubit `q` lives at
//! bit `q - 1` of the basis-state index (little-endian), so on two qubits the
//! amplitude order is `|q2 q1> = 00, 01, 10, 11`.
//!
//! Rotations follow `RX(t) = exp(-i t X / 2)` and `RY(t) = exp(-i t Y / 2)`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register accepted by [`StateVector::zero`]; 2^24 amplitudes is 256 MiB.
pub const MAX_QUBITS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotationAxis {
    X,
    Y,
}

impl fmt::Display for RotationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RotationAxis::X => f.write_str("RX"),
            RotationAxis::Y => f.write_str("RY"),
        }
    }
}

/// Where a rotation gate takes its angle from. Indices are 0-based positions
/// into the feature vector or the trainable parameter vector of a shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AngleSource {
    Feature(usize),
    Param(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateOp {
    Rotation {
        axis: RotationAxis,
        qubit: usize,
        angle: AngleSource,
    },
    Cz {
        control: usize,
        target: usize,
    },
}

impl GateOp {
    pub fn qubits(&self) -> (usize, Option<usize>) {
        match *self {
            GateOp::Rotation { qubit, .. } => (qubit, None),
            GateOp::Cz { control, target } => (target, Some(control)),
        }
    }

    /// Checks the qubit indices against a register of `n_qubits`.
    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        match *self {
            GateOp::Rotation { qubit, .. } => check_qubit(qubit, n_qubits),
            GateOp::Cz { control, target } => {
                check_qubit(control, n_qubits)?;
                check_qubit(target, n_qubits)?;
                if control == target {
                    return Err(Error::Wiring(format!("CZ control equals target ({control})")));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for GateOp {
    /// One-based everywhere, e.g. `RX q3 x17`, `RY q1 p320`, `CZ c8 t1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            GateOp::Rotation { axis, qubit, angle } => {
                let src = match angle {
                    AngleSource::Feature(k) => format!("x{}", k + 1),
                    AngleSource::Param(k) => format!("p{}", k + 1),
                };
                write!(f, "{axis} q{qubit} {src}")
            }
            GateOp::Cz { control, target } => write!(f, "CZ c{control} t{target}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    X,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observable {
    pub pauli: Pauli,
    pub qubit: usize,
}

impl Observable {
    pub const fn x(qubit: usize) -> Self {
        Observable {
            pauli: Pauli::X,
            qubit,
        }
    }

    pub const fn z(qubit: usize) -> Self {
        Observable {
            pauli: Pauli::Z,
            qubit,
        }
    }

    /// `X1..X5, Z1..Z5`, the ten-class output set.
    pub fn default_set() -> Vec<Observable> {
        (1..=5)
            .map(Observable::x)
            .chain((1..=5).map(Observable::z))
            .collect()
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.pauli {
            Pauli::X => 'X',
            Pauli::Z => 'Z',
        };
        write!(f, "{p}{}", self.qubit)
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut chars = s.chars();
        let pauli = match chars.next() {
            Some('X') | Some('x') => Pauli::X,
            Some('Z') | Some('z') => Pauli::Z,
            _ => return Err(Error::Config(format!("unknown observable '{s}'"))),
        };
        let qubit: usize = chars
            .as_str()
            .parse()
            .map_err(|_| Error::Config(format!("bad qubit index in observable '{s}'")))?;
        if qubit == 0 {
            return Err(Error::Config(format!("observable '{s}': qubits are 1-based")));
        }
        Ok(Observable { pauli, qubit })
    }
}

fn check_qubit(qubit: usize, n_qubits: usize) -> Result<()> {
    if qubit == 0 || qubit > n_qubits {
        return Err(Error::Wiring(format!(
            "qubit {qubit} outside 1..={n_qubits}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!(
                "n_qubits must be in 1..={MAX_QUBITS}, got {n_qubits}"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector { n_qubits, amps })
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Shape(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!("{n_qubits} qubits exceeds {MAX_QUBITS}")));
        }
        Ok(StateVector { n_qubits, amps })
    }

    /// Resets to `|0...0>` without reallocating.
    pub fn reset(&mut self) {
        self.amps.fill(Complex64::new(0.0, 0.0));
        self.amps[0] = Complex64::new(1.0, 0.0);
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn apply_rotation(&mut self, axis: RotationAxis, qubit: usize, theta: f64) -> Result<()> {
        check_qubit(qubit, self.n_qubits)?;
        if !theta.is_finite() {
            return Err(Error::Numeric(format!("rotation angle {theta} is not finite")));
        }
        self.rotate(axis, qubit - 1, theta);
        Ok(())
    }

    pub fn apply_cz(&mut self, control: usize, target: usize) -> Result<()> {
        GateOp::Cz { control, target }.validate(self.n_qubits)?;
        self.cz(control - 1, target - 1);
        Ok(())
    }

    /// `<psi|O|psi>`, real part only; the imaginary part of a Hermitian
    /// expectation is rounding residue.
    pub fn expectation(&self, obs: Observable) -> Result<f64> {
        check_qubit(obs.qubit, self.n_qubits)?;
        Ok(self.pauli_expectation(obs.pauli, obs.qubit - 1))
    }

    // ---- unchecked kernels; `bit` is the 0-based bit position ----

    pub(crate) fn rotate(&mut self, axis: RotationAxis, bit: usize, theta: f64) {
        let (s, c) = (0.5 * theta).sin_cos();
        rotate_pairs(&mut self.amps, axis, bit, c, s);
    }

    pub(crate) fn cz(&mut self, bit_a: usize, bit_b: usize) {
        let mask = (1usize << bit_a) | (1usize << bit_b);
        for (i, a) in self.amps.iter_mut().enumerate() {
            if i & mask == mask {
                *a = -*a;
            }
        }
    }

    /// Negates every amplitude whose entry in `flips` is set. Used for
    /// pre-compiled rings of commuting CZ gates.
    pub(crate) fn flip_signs(&mut self, flips: &[bool]) {
        debug_assert_eq!(flips.len(), self.amps.len());
        for (a, &f) in self.amps.iter_mut().zip(flips) {
            if f {
                *a = -*a;
            }
        }
    }

    pub(crate) fn pauli_expectation(&self, pauli: Pauli, bit: usize) -> f64 {
        let mask = 1usize << bit;
        match pauli {
            Pauli::Z => self
                .amps
                .iter()
                .enumerate()
                .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum(),
            Pauli::X => {
                let mut acc = 0.0;
                for chunk in self.amps.chunks_exact(2 * mask) {
                    let (lo, hi) = chunk.split_at(mask);
                    for (a0, a1) in lo.iter().zip(hi) {
                        acc += a0.re * a1.re + a0.im * a1.im;
                    }
                }
                2.0 * acc
            }
        }
    }

    /// Accumulates `weight * P|src>` into `self`, with `P` a Pauli on `bit`.
    pub(crate) fn add_scaled_pauli(&mut self, src: &StateVector, pauli: Pauli, bit: usize, weight: f64) {
        let mask = 1usize << bit;
        match pauli {
            Pauli::Z => {
                for (i, (d, s)) in self.amps.iter_mut().zip(&src.amps).enumerate() {
                    if i & mask == 0 {
                        *d += s * weight;
                    } else {
                        *d -= s * weight;
                    }
                }
            }
            Pauli::X => {
                for (i, d) in self.amps.iter_mut().enumerate() {
                    *d += src.amps[i ^ mask] * weight;
                }
            }
        }
    }

    pub(crate) fn fill_zero(&mut self) {
        self.amps.fill(Complex64::new(0.0, 0.0));
    }
}

/// Calls `f(a0, a1)` for every amplitude pair differing only in bit `mask`.
#[inline(always)]
fn for_pairs(amps: &mut [Complex64], mask: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
    if mask == 1 {
        for p in amps.chunks_exact_mut(2) {
            let (a0, a1) = p.split_at_mut(1);
            f(&mut a0[0], &mut a1[0]);
        }
    } else {
        for chunk in amps.chunks_exact_mut(2 * mask) {
            let (lo, hi) = chunk.split_at_mut(mask);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                f(a0, a1);
            }
        }
    }
}

/// Pair iteration over two states of equal size in lockstep.
#[inline(always)]
fn for_pairs2(
    a: &mut [Complex64],
    b: &mut [Complex64],
    mask: usize,
    mut f: impl FnMut(&mut Complex64, &mut Complex64, &mut Complex64, &mut Complex64),
) {
    if mask == 1 {
        for (pa, pb) in a.chunks_exact_mut(2).zip(b.chunks_exact_mut(2)) {
            let (a0, a1) = pa.split_at_mut(1);
            let (b0, b1) = pb.split_at_mut(1);
            f(&mut a0[0], &mut a1[0], &mut b0[0], &mut b1[0]);
        }
    } else {
        for (ca, cb) in a.chunks_exact_mut(2 * mask).zip(b.chunks_exact_mut(2 * mask)) {
            let (a0s, a1s) = ca.split_at_mut(mask);
            let (b0s, b1s) = cb.split_at_mut(mask);
            for ((a0, a1), (b0, b1)) in a0s.iter_mut().zip(a1s.iter_mut()).zip(b0s.iter_mut().zip(b1s.iter_mut())) {
                f(a0, a1, b0, b1);
            }
        }
    }
}

// RX(theta) = [c, -is; -is, c]
#[inline(always)]
fn rx_pair(a0: &mut Complex64, a1: &mut Complex64, c: f64, s: f64) {
    let (x0, y0, x1, y1) = (a0.re, a0.im, a1.re, a1.im);
    *a0 = Complex64::new(c * x0 + s * y1, c * y0 - s * x1);
    *a1 = Complex64::new(c * x1 + s * y0, c * y1 - s * x0);
}

// RY(theta) = [c, -s; s, c]
#[inline(always)]
fn ry_pair(a0: &mut Complex64, a1: &mut Complex64, c: f64, s: f64) {
    let (v0, v1) = (*a0, *a1);
    *a0 = Complex64::new(c * v0.re - s * v1.re, c * v0.im - s * v1.im);
    *a1 = Complex64::new(s * v0.re + c * v1.re, s * v0.im + c * v1.im);
}

/// One backward step of the adjoint sweep: returns `Im<lambda|G|psi>` for the
/// rotation generator, then un-applies the rotation `theta` to both states.
pub(crate) fn adjoint_step(
    lambda: &mut StateVector,
    psi: &mut StateVector,
    axis: RotationAxis,
    bit: usize,
    theta: f64,
) -> f64 {
    debug_assert_eq!(lambda.amps.len(), psi.amps.len());
    let (s, c) = (-0.5 * theta).sin_cos();
    let mask = 1usize << bit;
    let mut acc = 0.0;
    match axis {
        RotationAxis::X => for_pairs2(&mut lambda.amps, &mut psi.amps, mask, |l0, l1, r0, r1| {
            acc += (l0.re * r1.im - l0.im * r1.re) + (l1.re * r0.im - l1.im * r0.re);
            rx_pair(l0, l1, c, s);
            rx_pair(r0, r1, c, s);
        }),
        RotationAxis::Y => for_pairs2(&mut lambda.amps, &mut psi.amps, mask, |l0, l1, r0, r1| {
            acc += (l1.re * r0.re + l1.im * r0.im) - (l0.re * r1.re + l0.im * r1.im);
            ry_pair(l0, l1, c, s);
            ry_pair(r0, r1, c, s);
        }),
    }
    acc
}

#[inline]
fn rotate_pairs(amps: &mut [Complex64], axis: RotationAxis, bit: usize, c: f64, s: f64) {
    let mask = 1usize << bit;
    match axis {
        RotationAxis::X => for_pairs(amps, mask, |a0, a1| rx_pair(a0, a1, c, s)),
        RotationAxis::Y => for_pairs(amps, mask, |a0, a1| ry_pair(a0, a1, c, s)),
    }
}
