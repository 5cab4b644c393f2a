//! Gradients of shard expectation values with respect to the trainable
//! angles. The adjoint sweep is what training uses; parameter-shift and
//! central differences are independent checks for it.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::model::{Op, QnnArchitecture};
use crate::sim::{adjoint_step, AngleSource, Observable, StateVector};

pub const FINITE_DIFF_STEP_RANGE: (f64, f64) = (1e-7, 1e-2);

fn expectation_at(
    arch: &QnnArchitecture,
    params: &[f64],
    features: &[f64],
    obs: Observable,
    state: &mut StateVector,
) -> f64 {
    state.reset();
    arch.run(state, params, features);
    state.pauli_expectation(obs.pauli, obs.qubit - 1)
}

fn shifted_difference(
    arch: &QnnArchitecture,
    params: &[f64],
    features: &[f64],
    obs: Observable,
    shift: f64,
) -> Result<Vec<f64>> {
    arch.check_inputs(params, features)?;
    arch.check_observables(&[obs])?;
    let mut state = StateVector::zero(arch.n_qubits())?;
    let mut shifted = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        shifted[k] = params[k] + shift;
        let plus = expectation_at(arch, &shifted, features, obs, &mut state);
        shifted[k] = params[k] - shift;
        let minus = expectation_at(arch, &shifted, features, obs, &mut state);
        shifted[k] = params[k];
        grad.push(plus - minus);
    }
    Ok(grad)
}

/// `(<O>(t_k + pi/2) - <O>(t_k - pi/2)) / 2` for every parameter.
pub fn parameter_shift_grad(
    arch: &QnnArchitecture,
    params: &[f64],
    features: &[f64],
    obs: Observable,
) -> Result<Vec<f64>> {
    let diffs = shifted_difference(arch, params, features, obs, FRAC_PI_2)?;
    Ok(diffs.into_iter().map(|d| 0.5 * d).collect())
}

/// Central differences with step `h`, which must lie in `[1e-7, 1e-2]`.
pub fn finite_diff_grad(
    arch: &QnnArchitecture,
    params: &[f64],
    features: &[f64],
    obs: Observable,
    h: f64,
) -> Result<Vec<f64>> {
    let (lo, hi) = FINITE_DIFF_STEP_RANGE;
    if !(lo..=hi).contains(&h) {
        return Err(Error::Range(format!("finite-difference step {h} outside [{lo}, {hi}]")));
    }
    let diffs = shifted_difference(arch, params, features, obs, h)?;
    Ok(diffs.into_iter().map(|d| d / (2.0 * h)).collect())
}

/// One gradient vector per observable, each from a single reverse sweep.
pub fn adjoint_grad(
    arch: &QnnArchitecture,
    params: &[f64],
    features: &[f64],
    observables: &[Observable],
) -> Result<Vec<Vec<f64>>> {
    arch.check_observables(observables)?;
    let psi = arch.final_state(params, features)?;
    let mut sweep = AdjointSweep::new(arch.n_qubits())?;
    let mut weights = vec![0.0; observables.len()];
    let mut out = Vec::with_capacity(observables.len());
    for k in 0..observables.len() {
        weights.fill(0.0);
        weights[k] = 1.0;
        let mut grad = vec![0.0; arch.n_params()];
        sweep.run(arch, params, features, &psi, observables, &weights, &mut grad);
        out.push(grad);
    }
    Ok(out)
}

/// Gradient of `sum_k w_k <O_k>` in one reverse sweep. `final_state` must be
/// the forward result for the same `params` and `features`.
pub fn adjoint_grad_weighted(
    arch: &QnnArchitecture,
    params: &[f64],
    features: &[f64],
    final_state: &StateVector,
    observables: &[Observable],
    weights: &[f64],
) -> Result<Vec<f64>> {
    arch.check_inputs(params, features)?;
    arch.check_observables(observables)?;
    if weights.len() != observables.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} observables",
            weights.len(),
            observables.len()
        )));
    }
    if final_state.n_qubits() != arch.n_qubits() {
        return Err(Error::Shape("final state register size mismatch".into()));
    }
    let mut sweep = AdjointSweep::new(arch.n_qubits())?;
    let mut grad = vec![0.0; arch.n_params()];
    sweep.run(arch, params, features, final_state, observables, weights, &mut grad);
    Ok(grad)
}

/// Scratch buffers for the reverse sweep, reusable across calls on shards
/// of the same width.
pub(crate) struct AdjointSweep {
    psi: StateVector,
    lambda: StateVector,
}

impl AdjointSweep {
    pub(crate) fn new(n_qubits: usize) -> Result<Self> {
        Ok(AdjointSweep {
            psi: StateVector::zero(n_qubits)?,
            lambda: StateVector::zero(n_qubits)?,
        })
    }

    /// Writes `d/dparam sum_k w_k <O_k>` into `grad` (overwriting it).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn run(
        &mut self,
        arch: &QnnArchitecture,
        params: &[f64],
        features: &[f64],
        final_state: &StateVector,
        observables: &[Observable],
        weights: &[f64],
        grad: &mut [f64],
    ) {
        self.psi.clone_from(final_state);
        self.lambda.fill_zero();
        for (o, &w) in observables.iter().zip(weights) {
            if w != 0.0 {
                self.lambda.add_scaled_pauli(final_state, o.pauli, o.qubit - 1, w);
            }
        }
        grad.fill(0.0);
        let sign = arch.rotation_sign().factor();
        for op in arch.ops().iter().rev() {
            match *op {
                Op::Rot { axis, bit, angle } => {
                    let theta = arch.angle(angle, params, features);
                    let g = adjoint_step(&mut self.lambda, &mut self.psi, axis, bit, theta);
                    if let AngleSource::Param(k) = angle {
                        grad[k] = sign * g;
                    }
                }
                Op::Flip(t) => {
                    let table = arch.flip_table(t);
                    self.psi.flip_signs(table);
                    self.lambda.flip_signs(table);
                }
            }
        }
    }
}
