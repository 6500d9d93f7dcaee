//! Pure-state algebra for one and two qubits.
//!
//! Kets are expanded in the `s_z` eigenbasis. For a single qubit the basis is
//! `(|+>, |->)`; for the pair it is `(|++>, |+->, |-+>, |-->)` and the
//! amplitudes are written `c1..c4`.
//!
//! A pure pair state is a product state exactly when `c1 c4 = c2 c3`. The
//! modulus `|c1 c4 - c2 c3|` is exposed as the *tangle*; it lies in `[0, 1/2]`
//! and twice its value is the concurrence.
//!
//! # Eigenbasis phase convention
//!
//! For a direction `u(theta, phi)` the spin-up eigenket is
//! `|+u> = cos(theta/2)|+> + sin(theta/2) e^{i phi}|->` and the spin-down
//! eigenket is fixed as `|-u> = sin(theta/2)|+> - cos(theta/2) e^{i phi}|->`.
//! This gives the usual `|±x> = (|+> ± |->)/√2` and `|±y> = (|+> ± i|->)/√2`.
//! For the named [`Axis::Z`] the standard basis itself is used, so `|-z> = |->`
//! rather than the `-|->` the general formula would give at `theta = 0`.
//! Only moduli of amplitudes and of `c1 c4 - c2 c3` are ever compared, so the
//! choice of phase is immaterial to every criterion.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{hermitian2_eigenvalues, Mat2, C64, I, ONE, ZERO};
use crate::{Error, Result};

/// Tolerance on `|1 - norm^2|` accepted by the checked constructors.
pub const NORM_TOL: f64 = 1e-12;

fn check_finite(amps: &[C64]) -> Result<()> {
    if amps.iter().all(|a| a.re.is_finite() && a.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Single-qubit pure state `a_plus |+> + a_minus |->`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleState {
    a_plus: C64,
    a_minus: C64,
}

impl SingleState {
    pub fn new(a_plus: C64, a_minus: C64) -> Result<Self> {
        check_finite(&[a_plus, a_minus])?;
        let norm_sqr = a_plus.norm_sqr() + a_minus.norm_sqr();
        if (norm_sqr - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm_sqr });
        }
        Ok(Self { a_plus, a_minus })
    }

    /// Rescales a non-zero vector to unit norm.
    pub fn normalized(a_plus: C64, a_minus: C64) -> Result<Self> {
        check_finite(&[a_plus, a_minus])?;
        let norm = (a_plus.norm_sqr() + a_minus.norm_sqr()).sqrt();
        if norm == 0.0 {
            return Err(Error::NotNormalized { norm_sqr: 0.0 });
        }
        Ok(Self {
            a_plus: a_plus / norm,
            a_minus: a_minus / norm,
        })
    }

    pub fn plus() -> Self {
        Self {
            a_plus: ONE,
            a_minus: ZERO,
        }
    }

    pub fn minus() -> Self {
        Self {
            a_plus: ZERO,
            a_minus: ONE,
        }
    }

    /// `r|+> + sqrt(1 - r^2) e^{i phi}|->`, with `r` in `[0, 1]`.
    pub fn from_polar(r: f64, phi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) || !phi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "polar form needs r in [0, 1] and finite phi, got r = {r}, phi = {phi}"
            )));
        }
        let s = (1.0 - r * r).max(0.0).sqrt();
        Ok(Self {
            a_plus: C64::new(r, 0.0),
            a_minus: C64::from_polar(s, phi),
        })
    }

    /// Haar-random single-qubit state.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            if let Ok(s) = Self::normalized(C64::new(v[0], v[1]), C64::new(v[2], v[3])) {
                return s;
            }
        }
    }

    pub fn a_plus(&self) -> C64 {
        self.a_plus
    }

    pub fn a_minus(&self) -> C64 {
        self.a_minus
    }

    pub fn amplitudes(&self) -> [C64; 2] {
        [self.a_plus, self.a_minus]
    }

    /// Polar parameters `(r, phi)` after removing the global phase of `a_plus`
    /// (or of `a_minus` when `a_plus` vanishes, in which case `phi = 0`).
    pub fn polar(&self) -> (f64, f64) {
        let r = self.a_plus.norm().min(1.0);
        let phi = if self.a_plus.norm() > 0.0 && self.a_minus.norm() > 0.0 {
            let rel = self.a_minus.arg() - self.a_plus.arg();
            rel.rem_euclid(2.0 * PI)
        } else {
            0.0
        };
        (r, phi)
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.a_plus.conj() * other.a_plus + self.a_minus.conj() * other.a_minus
    }

    /// `|<self|other>|`.
    pub fn fidelity(&self, other: &Self) -> f64 {
        self.inner(other).norm()
    }

    /// Tensor product `self ⊗ other`.
    pub fn tensor(&self, other: &Self) -> PairState {
        product(self, other)
    }
}

/// Unit vector `u(theta, phi)` on the sphere, in spherical angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinDirection {
    theta: f64,
    phi: f64,
}

impl SpinDirection {
    /// `theta` in `[0, pi]`, `phi` in `[0, 2 pi)`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta) || !(0.0..2.0 * PI).contains(&phi) {
            return Err(Error::InvalidDirection { theta, phi });
        }
        Ok(Self { theta, phi })
    }

    /// Builds a direction from arbitrary finite angles by folding them into
    /// the canonical ranges.
    pub fn wrapped(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::InvalidDirection { theta, phi });
        }
        let mut t = theta.rem_euclid(2.0 * PI);
        let mut p = phi;
        if t > PI {
            t = 2.0 * PI - t;
            p += PI;
        }
        p = p.rem_euclid(2.0 * PI);
        if p >= 2.0 * PI {
            p = 0.0;
        }
        Self::new(t, p)
    }

    pub fn x() -> Self {
        Self {
            theta: PI / 2.0,
            phi: 0.0,
        }
    }

    pub fn y() -> Self {
        Self {
            theta: PI / 2.0,
            phi: PI / 2.0,
        }
    }

    pub fn z() -> Self {
        Self {
            theta: 0.0,
            phi: 0.0,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Cartesian components.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }
}

/// `cos(theta/2)|+> + sin(theta/2) e^{i phi}|->`, the `+1/2` eigenket of the
/// spin component along `dir`. Its `+1/2` probability along `z` is
/// `cos^2(theta/2)`.
pub fn plus_state_along(dir: SpinDirection) -> SingleState {
    let (s, c) = (dir.theta / 2.0).sin_cos();
    SingleState {
        a_plus: C64::new(c, 0.0),
        a_minus: C64::from_polar(s, dir.phi),
    }
}

/// `sin(theta/2)|+> - cos(theta/2) e^{i phi}|->`; see the module docs for the
/// phase convention.
pub fn minus_state_along(dir: SpinDirection) -> SingleState {
    let (s, c) = (dir.theta / 2.0).sin_cos();
    SingleState {
        a_plus: C64::new(s, 0.0),
        a_minus: -C64::from_polar(c, dir.phi),
    }
}

/// Measurement axis for one qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
    Direction(SpinDirection),
}

impl Axis {
    /// `(|+axis>, |-axis>)` expressed in the standard basis.
    pub fn eigenbasis(&self) -> (SingleState, SingleState) {
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        match self {
            Axis::Z => (SingleState::plus(), SingleState::minus()),
            Axis::X => (
                SingleState {
                    a_plus: h,
                    a_minus: h,
                },
                SingleState {
                    a_plus: h,
                    a_minus: -h,
                },
            ),
            Axis::Y => (
                SingleState {
                    a_plus: h,
                    a_minus: I * h,
                },
                SingleState {
                    a_plus: h,
                    a_minus: -I * h,
                },
            ),
            Axis::Direction(d) => (plus_state_along(*d), minus_state_along(*d)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Axis::X => "x".into(),
            Axis::Y => "y".into(),
            Axis::Z => "z".into(),
            Axis::Direction(d) => format!("u({:.6},{:.6})", d.theta, d.phi),
        }
    }
}

/// Normalized pure state of the pair, `c1|++> + c2|+-> + c3|-+> + c4|-->`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    c: [C64; 4],
}

impl PairState {
    pub fn new(c: [C64; 4]) -> Result<Self> {
        check_finite(&c)?;
        let norm_sqr: f64 = c.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm_sqr });
        }
        Ok(Self { c })
    }

    /// Rescales a non-zero vector to unit norm.
    pub fn normalized(c: [C64; 4]) -> Result<Self> {
        check_finite(&c)?;
        let norm = c.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::NotNormalized { norm_sqr: 0.0 });
        }
        Ok(Self {
            c: c.map(|a| a / norm),
        })
    }

    /// Output of a unitary map; skips the norm check.
    pub(crate) fn from_unitary_image(c: [C64; 4]) -> Self {
        Self { c }
    }

    /// Normalized state from 8 real coordinates `(re c1, im c1, ..., im c4)`.
    pub fn from_real_coords(x: [f64; 8]) -> Result<Self> {
        Self::normalized(std::array::from_fn(|k| C64::new(x[2 * k], x[2 * k + 1])))
    }

    /// Haar-random pair state.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let x: [f64; 8] = std::array::from_fn(|_| rng.sample(StandardNormal));
            if let Ok(s) = Self::from_real_coords(x) {
                return s;
            }
        }
    }

    /// `|++>`.
    pub fn plus_plus() -> Self {
        Self {
            c: [ONE, ZERO, ZERO, ZERO],
        }
    }

    /// `(|++> + |-->)/√2`.
    pub fn bell() -> Self {
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        Self {
            c: [h, ZERO, ZERO, h],
        }
    }

    /// `(i|++> - i|+-> + |-+> + |-->)/2`: entangled, yet its `zz`, `xx` and
    /// `yy` outcome probabilities all satisfy `P1 P4 = P2 P3`.
    pub fn same_component_counterexample() -> Self {
        Self {
            c: [
                C64::new(0.0, 0.5),
                C64::new(0.0, -0.5),
                C64::new(0.5, 0.0),
                C64::new(0.5, 0.0),
            ],
        }
    }

    pub fn amplitudes(&self) -> [C64; 4] {
        self.c
    }

    pub fn amplitude(&self, k: usize) -> C64 {
        self.c[k]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.c.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.c.iter().zip(&other.c).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|<self|other>|`, insensitive to global phase.
    pub fn fidelity(&self, other: &Self) -> f64 {
        self.inner(other).norm()
    }

    /// Equality up to a global phase: `|<self|other>| >= 1 - tol`.
    pub fn approx_eq_up_to_phase(&self, other: &Self, tol: f64) -> bool {
        self.fidelity(other) >= 1.0 - tol
    }

    /// `c1 c4 - c2 c3`.
    pub fn product_defect(&self) -> C64 {
        self.c[0] * self.c[3] - self.c[1] * self.c[2]
    }

    /// `|c1 c4 - c2 c3|`, zero exactly for product states.
    pub fn tangle(&self) -> f64 {
        self.product_defect().norm()
    }

    /// `2 |c1 c4 - c2 c3|`.
    pub fn concurrence(&self) -> f64 {
        2.0 * self.tangle()
    }

    pub fn is_unentangled(&self, tol: f64) -> bool {
        self.tangle() <= tol
    }

    /// Reduced state of qubit 1 (trace over qubit 2).
    pub fn reduced_first(&self) -> Mat2 {
        let [c1, c2, c3, c4] = self.c;
        [
            [
                C64::new(c1.norm_sqr() + c2.norm_sqr(), 0.0),
                c1 * c3.conj() + c2 * c4.conj(),
            ],
            [
                c3 * c1.conj() + c4 * c2.conj(),
                C64::new(c3.norm_sqr() + c4.norm_sqr(), 0.0),
            ],
        ]
    }

    /// Reduced state of qubit 2 (trace over qubit 1).
    pub fn reduced_second(&self) -> Mat2 {
        let [c1, c2, c3, c4] = self.c;
        [
            [
                C64::new(c1.norm_sqr() + c3.norm_sqr(), 0.0),
                c1 * c2.conj() + c3 * c4.conj(),
            ],
            [
                c2 * c1.conj() + c4 * c3.conj(),
                C64::new(c2.norm_sqr() + c4.norm_sqr(), 0.0),
            ],
        ]
    }

    /// `Tr rho1^2` from the explicit partial trace over qubit 2.
    pub fn purity(&self) -> f64 {
        purity_of(&self.reduced_first())
    }

    /// Number of eigenvalues of the reduced state above `tol` (1 or 2).
    pub fn schmidt_number(&self, tol: f64) -> usize {
        let rho = self.reduced_first();
        // Smallest eigenvalue as det / lambda_max avoids the cancellation in
        // mean - half_gap for nearly pure reduced states.
        let [_, lambda_max] = hermitian2_eigenvalues(&rho);
        let det = (rho[0][0] * rho[1][1] - rho[0][1] * rho[1][0]).re.max(0.0);
        let lambda_min = if lambda_max > 0.0 { det / lambda_max } else { 0.0 };
        if lambda_min > tol {
            2
        } else {
            1
        }
    }

    /// Splits a product state into its two factors.
    ///
    /// The largest-modulus amplitude is used as pivot. With `c1` as pivot this
    /// is `c1 (|+> + (c3/c1)|->) ⊗ (|+> + (c2/c1)|->)`; when `c1` vanishes the
    /// pivot moves to `c2`, `c3` or `c4`, which covers the three `c1 = 0`
    /// cases (`c2 = 0`, `c3 = 0`, or both).
    pub fn factorize(&self, tol: f64) -> Result<(SingleState, SingleState)> {
        let tangle = self.tangle();
        if tangle > tol {
            return Err(Error::NotAProductState { tangle, tol });
        }
        let [c1, c2, c3, c4] = self.c;
        let pivot = (0..4)
            .max_by(|&a, &b| self.c[a].norm_sqr().total_cmp(&self.c[b].norm_sqr()))
            .unwrap_or(0);
        // Row k of the 2x2 amplitude matrix [[c1, c2], [c3, c4]] belongs to
        // qubit 1, column to qubit 2; the pivot's column and row give the
        // factors up to phase.
        let (first, second) = match pivot {
            0 => ((c1, c3), (c1, c2)),
            1 => ((c2, c4), (c1, c2)),
            2 => ((c1, c3), (c3, c4)),
            _ => ((c2, c4), (c3, c4)),
        };
        let s1 = SingleState::normalized(first.0, first.1)?;
        let s2 = SingleState::normalized(second.0, second.1)?;
        Ok((s1, s2))
    }

    /// Amplitudes over the eigenbasis of `(s_1u, s_2v)`, ordered
    /// `(+u+v, +u-v, -u+v, -u-v)`.
    pub fn basis_change(&self, u: Axis, v: Axis) -> PairState {
        let (up, um) = u.eigenbasis();
        let (vp, vm) = v.eigenbasis();
        let bra = |a: &SingleState, b: &SingleState| -> C64 {
            let a = a.amplitudes();
            let b = b.amplitudes();
            let mut acc = ZERO;
            for i in 0..2 {
                for j in 0..2 {
                    acc += (a[i] * b[j]).conj() * self.c[2 * i + j];
                }
            }
            acc
        };
        PairState {
            c: [bra(&up, &vp), bra(&up, &vm), bra(&um, &vp), bra(&um, &vm)],
        }
    }
}

/// `Tr rho^2` of a 2x2 density matrix.
pub fn purity_of(rho: &Mat2) -> f64 {
    rho[0][0].norm_sqr() + rho[1][1].norm_sqr() + rho[0][1].norm_sqr() + rho[1][0].norm_sqr()
}

/// `s1 ⊗ s2 = (a c, a d, b c, b d)` for `s1 = (a, b)`, `s2 = (c, d)`.
pub fn product(s1: &SingleState, s2: &SingleState) -> PairState {
    let (a, b) = (s1.a_plus, s1.a_minus);
    let (c, d) = (s2.a_plus, s2.a_minus);
    PairState {
        c: [a * c, a * d, b * c, b * d],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Purity straight from the density matrix `|psi><psi|`, tracing out qubit
    /// 2 index by index.
    fn purity_oracle(psi: &PairState) -> f64 {
        let a = psi.amplitudes();
        let mut rho = [[ZERO; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                rho[i][j] = a[i] * a[j].conj();
            }
        }
        let mut red = [[ZERO; 2]; 2];
        for i1 in 0..2 {
            for j1 in 0..2 {
                for k in 0..2 {
                    red[i1][j1] += rho[2 * i1 + k][2 * j1 + k];
                }
            }
        }
        let mut tr = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                tr += (red[i][j] * red[j][i]).re;
            }
        }
        tr
    }

    fn random_product(rng: &mut impl Rng) -> PairState {
        product(&SingleState::random(rng), &SingleState::random(rng))
    }

    #[test]
    fn product_of_basis_states() {
        let p = product(&SingleState::plus(), &SingleState::plus());
        assert_eq!(p.amplitudes(), [ONE, ZERO, ZERO, ZERO]);
    }

    #[test]
    fn product_of_superposition_and_basis() {
        let h = SingleState::normalized(ONE, ONE).unwrap();
        let p = product(&h, &SingleState::plus());
        let e = [c(FRAC_1_SQRT_2, 0.0), ZERO, c(FRAC_1_SQRT_2, 0.0), ZERO];
        for k in 0..4 {
            assert_abs_diff_eq!((p.amplitude(k) - e[k]).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn product_of_polar_states_matches_direct_multiplication() {
        let s1 = SingleState::from_polar(0.6, 0.0).unwrap();
        let s2 = SingleState::from_polar(0.8, PI / 2.0).unwrap();
        let p = product(&s1, &s2);
        // (0.6|+> + 0.8|->) ⊗ (0.8|+> + 0.6 i|->)
        let e = [c(0.48, 0.0), c(0.0, 0.36), c(0.64, 0.0), c(0.0, 0.48)];
        for k in 0..4 {
            assert_abs_diff_eq!((p.amplitude(k) - e[k]).norm(), 0.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(p.norm_sqr(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.product_defect().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn checked_constructors_reject_bad_norm() {
        assert!(matches!(
            SingleState::new(ONE, ONE),
            Err(Error::NotNormalized { .. })
        ));
        assert!(PairState::new([ONE, ONE, ZERO, ZERO]).is_err());
        assert!(PairState::normalized([ZERO; 4]).is_err());
        assert!(SingleState::from_polar(1.5, 0.0).is_err());
        assert!(PairState::new([c(f64::NAN, 0.0), ZERO, ZERO, ZERO]).is_err());
    }

    #[test]
    fn tangle_examples() {
        assert_eq!(PairState::plus_plus().tangle(), 0.0);
        assert_abs_diff_eq!(PairState::bell().tangle(), 0.5, epsilon = 1e-15);
        let psi = PairState::same_component_counterexample();
        assert_abs_diff_eq!(psi.tangle(), 0.5, epsilon = 1e-15);
        // c1 c4 = -c2 c3 for this state
        let [c1, c2, c3, c4] = psi.amplitudes();
        assert_abs_diff_eq!((c1 * c4 + c2 * c3).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn is_unentangled_examples() {
        assert!(PairState::plus_plus().is_unentangled(1e-10));
        assert!(!PairState::bell().is_unentangled(1e-10));
    }

    #[test]
    fn purity_examples() {
        assert_abs_diff_eq!(PairState::plus_plus().purity(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(PairState::bell().purity(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(purity_oracle(&PairState::bell()), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn purity_matches_concurrence_identity_on_random_states() {
        let mut rng = stream_rng(11, 0);
        for _ in 0..10_000 {
            let psi = PairState::random(&mut rng);
            let oracle = purity_oracle(&psi);
            let cc = psi.concurrence();
            assert_abs_diff_eq!(psi.purity(), oracle, epsilon = 1e-12);
            assert_abs_diff_eq!(oracle, 1.0 - cc * cc / 2.0, epsilon = 1e-10);
            assert_abs_diff_eq!(
                purity_of(&psi.reduced_first()),
                purity_of(&psi.reduced_second()),
                epsilon = 1e-12
            );
            assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&psi.purity()));
            assert!(psi.tangle() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn schmidt_number_examples() {
        assert_eq!(PairState::plus_plus().schmidt_number(1e-12), 1);
        assert_eq!(PairState::bell().schmidt_number(1e-12), 2);
        // cos(a)|++> + sin(a)|--> has tangle sin(2a)/2; pick tangle = 1e-3
        let a = (2e-3f64).asin() / 2.0;
        let weak = PairState::new([c(a.cos(), 0.0), ZERO, ZERO, c(a.sin(), 0.0)]).unwrap();
        assert_abs_diff_eq!(weak.tangle(), 1e-3, epsilon = 1e-15);
        assert_eq!(weak.schmidt_number(1e-12), 2);
    }

    #[test]
    fn schmidt_eigenvalues_match_nalgebra() {
        let mut rng = stream_rng(12, 0);
        for _ in 0..200 {
            let psi = PairState::random(&mut rng);
            let r = psi.reduced_first();
            let m = nalgebra::Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1]);
            let mut oracle: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            oracle.sort_by(f64::total_cmp);
            let ours = hermitian2_eigenvalues(&r);
            assert_abs_diff_eq!(ours[0], oracle[0], epsilon = 1e-12);
            assert_abs_diff_eq!(ours[1], oracle[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn criteria_agree_on_random_states() {
        let mut rng = stream_rng(13, 0);
        for k in 0..20_000 {
            let psi = if k % 2 == 0 {
                random_product(&mut rng)
            } else {
                PairState::random(&mut rng)
            };
            let by_tangle = psi.is_unentangled(1e-10);
            let by_schmidt = psi.schmidt_number(1e-10) == 1;
            let by_purity = (1.0 - psi.purity()).abs() <= 1e-10;
            assert_eq!(by_tangle, by_schmidt);
            assert_eq!(by_tangle, by_purity);
            assert_eq!(by_tangle, k % 2 == 0);
        }
    }

    #[test]
    fn factorize_uniform_superposition() {
        let psi = PairState::new([c(0.5, 0.0); 4]).unwrap();
        let (s1, s2) = psi.factorize(1e-10).unwrap();
        let h = SingleState::normalized(ONE, ONE).unwrap();
        assert_abs_diff_eq!(s1.fidelity(&h), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s2.fidelity(&h), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn factorize_c1_zero_branches() {
        let (c3, c4) = (c(0.6, 0.0), c(0.0, 0.8));
        let psi = PairState::new([ZERO, ZERO, c3, c4]).unwrap();
        let (s1, s2) = psi.factorize(1e-10).unwrap();
        assert_abs_diff_eq!(s1.fidelity(&SingleState::minus()), 1.0, epsilon = 1e-15);
        let expected = SingleState::new(c3, c4).unwrap();
        assert_abs_diff_eq!(s2.fidelity(&expected), 1.0, epsilon = 1e-15);

        let psi = PairState::new([ZERO, c(0.6, 0.0), ZERO, c(0.0, 0.8)]).unwrap();
        let (s1, s2) = psi.factorize(1e-10).unwrap();
        assert_abs_diff_eq!(s2.fidelity(&SingleState::minus()), 1.0, epsilon = 1e-15);
        assert!(product(&s1, &s2).approx_eq_up_to_phase(&psi, 1e-14));

        let psi = PairState::new([ZERO, ZERO, ZERO, c(0.0, 1.0)]).unwrap();
        let (s1, s2) = psi.factorize(1e-10).unwrap();
        assert!(product(&s1, &s2).approx_eq_up_to_phase(&psi, 1e-14));
    }

    #[test]
    fn factorize_rejects_entangled_states() {
        assert!(matches!(
            PairState::bell().factorize(1e-10),
            Err(Error::NotAProductState { .. })
        ));
        // c1 = c4 = 0 with both c2, c3 present is entangled
        let psi = PairState::new([ZERO, c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0), ZERO]).unwrap();
        assert!(psi.factorize(1e-10).is_err());
    }

    #[test]
    fn plus_state_examples() {
        let s = plus_state_along(SpinDirection::z());
        assert_eq!(s, SingleState::plus());
        let s = plus_state_along(SpinDirection::x());
        assert_abs_diff_eq!(s.a_plus().re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!((s.a_minus() - c(FRAC_1_SQRT_2, 0.0)).norm(), 0.0, epsilon = 1e-15);
        let s = plus_state_along(SpinDirection::new(2.0 * PI / 3.0, 1.0).unwrap());
        assert_abs_diff_eq!(s.a_plus().norm_sqr(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn eigenbases_are_orthonormal() {
        let mut rng = stream_rng(14, 0);
        let mut axes = vec![Axis::X, Axis::Y, Axis::Z];
        for _ in 0..50 {
            let d = SpinDirection::new(rng.random_range(0.0..=PI), rng.random_range(0.0..2.0 * PI))
                .unwrap();
            axes.push(Axis::Direction(d));
        }
        for a in axes {
            let (p, m) = a.eigenbasis();
            assert_abs_diff_eq!(p.inner(&p).re, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(m.inner(&m).re, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(p.inner(&m).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn general_direction_matches_named_x_and_y() {
        for (named, dir) in [(Axis::X, SpinDirection::x()), (Axis::Y, SpinDirection::y())] {
            let (np, nm) = named.eigenbasis();
            let (dp, dm) = Axis::Direction(dir).eigenbasis();
            assert_abs_diff_eq!((np.a_plus() - dp.a_plus()).norm(), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!((np.a_minus() - dp.a_minus()).norm(), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!((nm.a_plus() - dm.a_plus()).norm(), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!((nm.a_minus() - dm.a_minus()).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn basis_change_examples() {
        let mut rng = stream_rng(15, 0);
        let psi = PairState::random(&mut rng);
        assert_eq!(psi.basis_change(Axis::Z, Axis::Z), psi);

        let out = PairState::same_component_counterexample().basis_change(Axis::X, Axis::X);
        let e = [c(0.5, 0.0), c(0.0, 0.5), c(-0.5, 0.0), c(0.0, 0.5)];
        for k in 0..4 {
            assert_abs_diff_eq!((out.amplitude(k) - e[k]).norm(), 0.0, epsilon = 1e-15);
        }

        // |+x> = (|+> + |->)/√2, so <±x|+> = 1/√2 for both signs
        let out = PairState::plus_plus().basis_change(Axis::X, Axis::X);
        for k in 0..4 {
            assert_abs_diff_eq!((out.amplitude(k) - c(0.5, 0.0)).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn tangle_is_invariant_under_local_basis_change() {
        let mut rng = stream_rng(16, 0);
        let mut dir = || {
            Axis::Direction(
                SpinDirection::new(rng.random_range(0.0..=PI), rng.random_range(0.0..2.0 * PI))
                    .unwrap(),
            )
        };
        let dirs: Vec<(Axis, Axis)> = (0..100).map(|_| (dir(), dir())).collect();
        let mut rng = stream_rng(16, 1);
        for _ in 0..100 {
            let psi = PairState::random(&mut rng);
            for &(u, v) in &dirs {
                let out = psi.basis_change(u, v);
                assert_abs_diff_eq!(out.norm_sqr(), 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(out.tangle(), psi.tangle(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn wrapped_direction_folds_angles() {
        let d = SpinDirection::wrapped(-0.5, 7.0).unwrap();
        assert!((0.0..=PI).contains(&d.theta()) && (0.0..2.0 * PI).contains(&d.phi()));
        let a = d.unit_vector();
        let (st, ct) = (-0.5f64).sin_cos();
        let (sp, cp) = 7.0f64.sin_cos();
        let b = [st * cp, st * sp, ct];
        for k in 0..3 {
            assert_abs_diff_eq!(a[k], b[k], epsilon = 1e-12);
        }
        assert!(SpinDirection::new(4.0, 0.0).is_err());
        assert!(SpinDirection::new(1.0, 2.0 * PI).is_err());
    }

    /// Real rank of the finite-difference Jacobian of `params -> state`, with
    /// the state mapped to 8 real coordinates after fixing the global phase
    /// (amplitude `pivot` real and positive).
    fn local_rank<F: Fn(&[f64]) -> PairState>(f: F, x0: &[f64]) -> usize {
        let base = f(x0);
        let pivot = (0..4)
            .max_by(|&a, &b| base.amplitude(a).norm().total_cmp(&base.amplitude(b).norm()))
            .unwrap();
        let coords = |x: &[f64]| -> Vec<f64> {
            let s = f(x);
            let ph = s.amplitude(pivot).conj() / s.amplitude(pivot).norm();
            s.amplitudes()
                .iter()
                .flat_map(|a| {
                    let a = a * ph;
                    [a.re, a.im]
                })
                .collect()
        };
        let h = 1e-6;
        let n = x0.len();
        let mut jac = nalgebra::DMatrix::<f64>::zeros(8, n);
        for j in 0..n {
            let mut xp = x0.to_vec();
            let mut xm = x0.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (coords(&xp), coords(&xm));
            for i in 0..8 {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let sv = jac.singular_values();
        let smax = sv.max();
        sv.iter().filter(|&&s| s > 1e-6 * smax).count()
    }

    #[test]
    fn parameter_counting_generic_and_product() {
        let mut rng = stream_rng(17, 0);
        for _ in 0..10 {
            let x: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let generic =
                |p: &[f64]| PairState::from_real_coords(p.try_into().unwrap()).unwrap();
            assert_eq!(local_rank(generic, &x), 6);

            let y = [
                rng.random_range(0.2..0.9),
                rng.random_range(0.5..5.5),
                rng.random_range(0.2..0.9),
                rng.random_range(0.5..5.5),
            ];
            let prod = |p: &[f64]| {
                product(
                    &SingleState::from_polar(p[0], p[1]).unwrap(),
                    &SingleState::from_polar(p[2], p[3]).unwrap(),
                )
            };
            assert_eq!(local_rank(prod, &y), 4);
        }
    }

    proptest! {
        #[test]
        fn factorize_inverts_product(
            r1 in 0.0f64..=1.0, p1 in 0.0f64..6.28,
            r2 in 0.0f64..=1.0, p2 in 0.0f64..6.28,
            g1 in 0.0f64..6.28, g2 in 0.0f64..6.28,
        ) {
            let s1 = SingleState::from_polar(r1, p1).unwrap();
            let s2 = SingleState::from_polar(r2, p2).unwrap();
            // arbitrary phases on the factors must not matter
            let s1 = SingleState::new(s1.a_plus() * C64::from_polar(1.0, g1), s1.a_minus() * C64::from_polar(1.0, g1)).unwrap();
            let s2 = SingleState::new(s2.a_plus() * C64::from_polar(1.0, g2), s2.a_minus() * C64::from_polar(1.0, g2)).unwrap();
            let psi = product(&s1, &s2);
            prop_assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
            prop_assert!(psi.tangle() < 1e-15);
            let (f1, f2) = psi.factorize(1e-10).unwrap();
            prop_assert!((f1.fidelity(&s1) - 1.0).abs() < 1e-12);
            prop_assert!((f2.fidelity(&s2) - 1.0).abs() < 1e-12);
            prop_assert!(product(&f1, &f2).approx_eq_up_to_phase(&psi, 1e-12));
        }
    }
}
