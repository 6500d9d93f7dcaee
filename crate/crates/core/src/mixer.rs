//! Heisenberg mixing of the pair.
//!
//! The coupling is the cylindrical-symmetry exchange Hamiltonian
//!
//! ```text
//! H = -2 J_z s1z s2z - J_xy (s1+ s2- + s1- s2+)
//! ```
//!
//! with `hbar = 1`. It is diagonal in the basis
//! `(|++>, (|+-> + |-+>)/√2, (|+-> - |-+>)/√2, |-->)`, whose change-of-basis
//! matrix `Q` is real, symmetric and its own inverse. Evolution over `dt` is
//! therefore `M = Q D Q` with `D = diag(exp(-i w_k dt))` and
//!
//! ```text
//! w1 = w4 = -J_z/2,   w2 = J_z/2 - J_xy,   w3 = J_z/2 + J_xy.
//! ```
//!
//! For `J_xy = 0` this is the Ising coupling `-2J s1z s2z`.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::linalg::{apply4, diag4, mul4, Mat4, C64, ONE, ZERO};
use crate::qstate::PairState;
use crate::{Error, Result};

/// Coupling strengths and elapsed time `dt = t - t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub j_z: f64,
    pub j_xy: f64,
    pub dt: f64,
}

impl CouplingParams {
    pub fn new(j_z: f64, j_xy: f64, dt: f64) -> Result<Self> {
        if !(j_z.is_finite() && j_xy.is_finite() && dt.is_finite()) || dt < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "coupling needs finite values and dt >= 0, got J_z = {j_z}, J_xy = {j_xy}, dt = {dt}"
            )));
        }
        Ok(Self { j_z, j_xy, dt })
    }

    /// Same coupling after a different elapsed time.
    pub fn at_time(&self, dt: f64) -> Result<Self> {
        Self::new(self.j_z, self.j_xy, dt)
    }

    /// `Delta_E = -J_xy dt`.
    pub fn delta_e(&self) -> f64 {
        -self.j_xy * self.dt
    }
}

/// A 4x4 unitary acting on standard-basis amplitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingMatrix {
    pub m: Mat4,
}

impl MixingMatrix {
    pub fn apply(&self, psi: &PairState) -> PairState {
        PairState::from_unitary_image(apply4(&self.m, &psi.amplitudes()))
    }

    pub fn unitarity_defect(&self) -> f64 {
        crate::linalg::unitarity_defect(&self.m)
    }
}

/// `Q11 = Q44 = 1`, `Q22 = -Q33 = Q23 = Q32 = 1/√2`, all else zero.
pub fn q_matrix() -> MixingMatrix {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    MixingMatrix {
        m: [
            [ONE, ZERO, ZERO, ZERO],
            [ZERO, h, h, ZERO],
            [ZERO, h, -h, ZERO],
            [ZERO, ZERO, ZERO, ONE],
        ],
    }
}

/// Energies `(w1, w2, w3, w4)` of the coupling in the `Q` basis.
pub fn omega_frequencies(p: &CouplingParams) -> [f64; 4] {
    let half = 0.5 * p.j_z;
    [-half, half - p.j_xy, half + p.j_xy, -half]
}

/// `Q diag(phases) Q`.
pub(crate) fn q_diag_q(phases: [C64; 4]) -> MixingMatrix {
    let q = q_matrix().m;
    MixingMatrix {
        m: mul4(&mul4(&q, &diag4(phases)), &q),
    }
}

/// `M = Q D Q` with `D_kk = exp(-i w_k dt)`.
pub fn mixing_matrix(p: &CouplingParams) -> MixingMatrix {
    let w = omega_frequencies(p);
    q_diag_q(w.map(|wk| C64::from_polar(1.0, -wk * p.dt)))
}

/// State at the mixer output.
pub fn mix(psi0: &PairState, p: &CouplingParams) -> PairState {
    mixing_matrix(p).apply(psi0)
}

/// `v = sgn(cos Delta_E) sin Delta_E`, taking `sgn(0) = +1`.
pub fn mixing_parameter_v(p: &CouplingParams) -> f64 {
    let d = p.delta_e();
    let sign = if d.cos() >= 0.0 { 1.0 } else { -1.0 };
    sign * d.sin()
}

/// Closed-form `zz` probabilities `(p1, p2, p4)` at the mixer output for the
/// product source `(r1|+> + sqrt(1-r1^2)|->) ⊗ (r2|+> + sqrt(1-r2^2) e^{i Delta_I}|->)`:
///
/// ```text
/// p1 = r1^2 r2^2
/// p4 = (1 - r1^2)(1 - r2^2)
/// p2 = r1^2 (1-r2^2)(1-v^2) + (1-r1^2) r2^2 v^2
///      - 2 r1 r2 sqrt(1-r1^2) sqrt(1-r2^2) sqrt(1-v^2) v sin(Delta_I)
/// ```
pub fn closed_form_probs(r1: f64, r2: f64, delta_i: f64, p: &CouplingParams) -> Result<(f64, f64, f64)> {
    if !(0.0..=1.0).contains(&r1) || !(0.0..=1.0).contains(&r2) || !delta_i.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "closed form needs r1, r2 in [0, 1] and finite Delta_I, got ({r1}, {r2}, {delta_i})"
        )));
    }
    let v = mixing_parameter_v(p);
    let (a1, a2) = (r1 * r1, r2 * r2);
    let (b1, b2) = (1.0 - a1, 1.0 - a2);
    let p1 = a1 * a2;
    let p4 = b1 * b2;
    let p2 = a1 * b2 * (1.0 - v * v) + b1 * a2 * v * v
        - 2.0 * r1 * r2 * b1.sqrt() * b2.sqrt() * (1.0 - v * v).max(0.0).sqrt() * v * delta_i.sin();
    Ok((p1, p2, p4))
}
