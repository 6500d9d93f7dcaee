//! Random product sources.
//!
//! Each qubit is prepared as the `+1/2` eigenstate of the spin component along
//! a field direction `(theta_E, phi_E)`; in the standard basis that state is
//! `r|+> + sqrt(1 - r^2) e^{i phi}|->` with `r = cos(theta_E / 2)` and
//! `phi = phi_E`. Random field directions thus induce random sources
//! `(r1, phi1, r2, phi2)`, independent whenever the directions are.
//!
//! Default laws: `theta_E` with density `sin(theta)/2` on `[0, pi]` (directions
//! uniform on the sphere) and `phi_E` uniform on `[0, 2 pi)`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{hermitian2_eigenvalues, mul2, trace2, Mat2, C64, ZERO};
use crate::qstate::{product, PairState, SingleState};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Law of a single angle, given by its quantile function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum AngleLaw {
    Fixed { value: f64 },
    /// Uniform on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// Polar angle of a direction uniform on the spherical zone
    /// `min <= theta <= max`: `cos(theta)` is uniform.
    Sphere { min: f64, max: f64 },
}

impl AngleLaw {
    pub fn full_sphere() -> Self {
        AngleLaw::Sphere { min: 0.0, max: PI }
    }

    pub fn full_turn() -> Self {
        AngleLaw::Uniform { lo: 0.0, hi: 2.0 * PI }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            AngleLaw::Fixed { value } => (value, value),
            AngleLaw::Uniform { lo, hi } => (lo, hi),
            AngleLaw::Sphere { min, max } => (min, max),
        }
    }

    /// Value at quantile `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            AngleLaw::Fixed { value } => value,
            AngleLaw::Uniform { lo, hi } => lo + u * (hi - lo),
            AngleLaw::Sphere { min, max } => {
                let (c0, c1) = (min.cos(), max.cos());
                (c0 - u * (c0 - c1)).clamp(-1.0, 1.0).acos()
            }
        }
    }

    /// Exact mean of `cos^2(theta / 2)` under this law.
    pub fn mean_cos2_half(&self) -> f64 {
        match *self {
            AngleLaw::Fixed { value } => (value / 2.0).cos().powi(2),
            AngleLaw::Uniform { lo, hi } => {
                if hi == lo {
                    (lo / 2.0).cos().powi(2)
                } else {
                    0.5 + (hi.sin() - lo.sin()) / (2.0 * (hi - lo))
                }
            }
            AngleLaw::Sphere { min, max } => {
                // cos^2(t/2) = (1 + cos t)/2 with cos t uniform on [cos max, cos min]
                0.5 + 0.25 * (min.cos() + max.cos())
            }
        }
    }
}

/// Law of a field direction.
///
/// With `independent = false` the two angles are driven by one shared uniform
/// variate (comonotone coupling), so `phi_E` is an increasing function of
/// `theta_E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionDistribution {
    pub theta: AngleLaw,
    pub phi: AngleLaw,
    pub independent: bool,
}

impl Default for DirectionDistribution {
    fn default() -> Self {
        Self {
            theta: AngleLaw::full_sphere(),
            phi: AngleLaw::full_turn(),
            independent: true,
        }
    }
}

impl DirectionDistribution {
    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.theta.support();
        let (p0, p1) = self.phi.support();
        let ok = t0.is_finite() && t1.is_finite() && p0.is_finite() && p1.is_finite()
            && 0.0 <= t0 && t0 <= t1 && t1 <= PI
            && 0.0 <= p0 && p0 <= p1 && p1 <= 2.0 * PI;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "direction law needs theta within [0, pi] and phi within [0, 2 pi], got {self:?}"
            )))
        }
    }

    /// Draws `(theta_E, phi_E)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let u: f64 = rng.random();
        let w: f64 = if self.independent { rng.random() } else { u };
        let phi = self.phi.quantile(w).rem_euclid(2.0 * PI);
        (self.theta.quantile(u), phi)
    }
}

/// How the two qubits' field directions relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    Independent,
    /// `theta_2E` is a copy of `theta_1E`; `phi_2E` is drawn separately.
    SharedTheta,
    /// Both spins see the same direction.
    SharedDirection,
}

/// Writer-side generator of random product sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub first: DirectionDistribution,
    pub second: DirectionDistribution,
    pub pairing: Pairing,
    /// Fix `phi1 = 0`, leaving the relative phase in `phi2`.
    pub phi1_zero: bool,
}

impl Default for SourceModel {
    fn default() -> Self {
        Self {
            first: DirectionDistribution::default(),
            second: DirectionDistribution::default(),
            pairing: Pairing::Independent,
            phi1_zero: false,
        }
    }
}

impl SourceModel {
    /// Sphere-uniform directions restricted so that both `r` lie in
    /// `[r_min, r_max]`.
    pub fn bounded_moduli(r_min: f64, r_max: f64) -> Result<Self> {
        if !(0.0 <= r_min && r_min <= r_max && r_max <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= r_min <= r_max <= 1, got [{r_min}, {r_max}]"
            )));
        }
        let dir = DirectionDistribution {
            theta: AngleLaw::Sphere {
                min: 2.0 * r_max.acos(),
                max: 2.0 * r_min.acos(),
            },
            ..Default::default()
        };
        Ok(Self {
            first: dir,
            second: dir,
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.first.validate()?;
        self.second.validate()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SourcePair {
        let (t1, p1) = self.first.sample(rng);
        let (t2, p2) = match self.pairing {
            Pairing::Independent => self.second.sample(rng),
            Pairing::SharedTheta => (t1, self.second.sample(rng).1),
            Pairing::SharedDirection => (t1, p1),
        };
        let p1 = if self.phi1_zero { 0.0 } else { p1 };
        SourcePair::from_directions(t1, p1, t2, p2)
    }
}

/// Source parameters of one prepared pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePair {
    pub r1: f64,
    pub phi1: f64,
    pub r2: f64,
    pub phi2: f64,
}

impl SourcePair {
    pub fn new(r1: f64, phi1: f64, r2: f64, phi2: f64) -> Result<Self> {
        let ok_r = |r: f64| (0.0..=1.0).contains(&r);
        let ok_phi = |p: f64| (0.0..2.0 * PI).contains(&p);
        if ok_r(r1) && ok_r(r2) && ok_phi(phi1) && ok_phi(phi2) {
            Ok(Self { r1, phi1, r2, phi2 })
        } else {
            Err(Error::InvalidArgument(format!(
                "source needs r in [0, 1] and phi in [0, 2 pi), got ({r1}, {phi1}, {r2}, {phi2})"
            )))
        }
    }

    /// `r_i = cos(theta_iE / 2)`, `phi_i = phi_iE`.
    pub fn from_directions(theta1: f64, phi1: f64, theta2: f64, phi2: f64) -> Self {
        Self {
            r1: (theta1 / 2.0).cos().clamp(0.0, 1.0),
            phi1: phi1.rem_euclid(2.0 * PI),
            r2: (theta2 / 2.0).cos().clamp(0.0, 1.0),
            phi2: phi2.rem_euclid(2.0 * PI),
        }
    }

    pub fn first(&self) -> SingleState {
        polar_state(self.r1, self.phi1)
    }

    pub fn second(&self) -> SingleState {
        polar_state(self.r2, self.phi2)
    }

    pub fn state(&self) -> PairState {
        product(&self.first(), &self.second())
    }
}

fn polar_state(r: f64, phi: f64) -> SingleState {
    // SourcePair keeps r in [0, 1]
    SingleState::from_polar(r, phi).expect("source modulus within [0, 1]")
}

/// One source drawn from stream 0 of `seed`.
pub fn sample_source(model: &SourceModel, seed: u64) -> SourcePair {
    model.sample(&mut stream_rng(seed, 0))
}

/// `count` consecutive sources from stream 0 of `seed`.
pub fn sample_sources(model: &SourceModel, count: usize, seed: u64) -> Vec<SourcePair> {
    let mut rng = stream_rng(seed, 0);
    (0..count).map(|_| model.sample(&mut rng)).collect()
}

/// The product ket of a source.
pub fn source_state(s: &SourcePair) -> PairState {
    s.state()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceVariable {
    R1,
    Phi1,
    R2,
    Phi2,
}

impl SourceVariable {
    pub const ALL: [SourceVariable; 4] = [Self::R1, Self::Phi1, Self::R2, Self::Phi2];

    fn of(&self, s: &SourcePair) -> f64 {
        match self {
            Self::R1 => s.r1,
            Self::Phi1 => s.phi1,
            Self::R2 => s.r2,
            Self::Phi2 => s.phi2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub a: SourceVariable,
    pub b: SourceVariable,
    /// Pearson correlation; `None` when either column has zero variance.
    pub value: Option<f64>,
    /// Standard error under the no-correlation hypothesis, `1 / sqrt(N)`.
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub samples: usize,
    pub pairs: Vec<Correlation>,
    pub zero_variance: Vec<SourceVariable>,
}

impl CorrelationSummary {
    pub fn get(&self, a: SourceVariable, b: SourceVariable) -> Option<&Correlation> {
        self.pairs.iter().find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
    }

    /// Largest `|corr|` between a qubit-1 variable and a qubit-2 variable.
    pub fn max_cross_qubit(&self) -> Option<f64> {
        use SourceVariable::*;
        self.pairs
            .iter()
            .filter(|c| matches!((c.a, c.b), (R1 | Phi1, R2 | Phi2)))
            .filter_map(|c| c.value.map(f64::abs))
            .reduce(f64::max)
    }
}

/// Pairwise sample correlations among `r1, phi1, r2, phi2`.
pub fn independence_stats(samples: &[SourcePair]) -> Result<CorrelationSummary> {
    const MIN_SAMPLES: usize = 100;
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "independence statistics need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let cols: Vec<Vec<f64>> = SourceVariable::ALL
        .iter()
        .map(|v| samples.iter().map(|s| v.of(s)).collect())
        .collect();
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let vars: Vec<f64> = cols
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
        .collect();
    // relative to the column scale, to tolerate rounding in constant columns
    let scale: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0))
        .collect();
    let degenerate: Vec<bool> = vars.iter().zip(&scale).map(|(v, s)| *v <= 1e-24 * s * s).collect();

    let mut pairs = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            let value = if degenerate[i] || degenerate[j] {
                None
            } else {
                let cov = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(x, y)| (x - means[i]) * (y - means[j]))
                    .sum::<f64>()
                    / n;
                Some((cov / (vars[i] * vars[j]).sqrt()).clamp(-1.0, 1.0))
            };
            pairs.push(Correlation {
                a: SourceVariable::ALL[i],
                b: SourceVariable::ALL[j],
                value,
                std_err: 1.0 / n.sqrt(),
            });
        }
    }
    let zero_variance = (0..4).filter(|&k| degenerate[k]).map(|k| SourceVariable::ALL[k]).collect();
    Ok(CorrelationSummary {
        samples: samples.len(),
        pairs,
        zero_variance,
    })
}

/// Single-qubit density operator in the `(|+>, |->)` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    pub rho: Mat2,
}

impl DensityMatrix {
    /// `Tr(rho O)`.
    pub fn expectation(&self, observable: &Mat2) -> C64 {
        trace2(&mul2(&self.rho, observable))
    }

    pub fn trace(&self) -> C64 {
        trace2(&self.rho)
    }

    /// `max |rho_ij - conj(rho_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.rho[i][j] - self.rho[j][i].conj()).norm());
            }
        }
        worst
    }

    /// Ascending eigenvalues (of the Hermitian part).
    pub fn eigenvalues(&self) -> [f64; 2] {
        hermitian2_eigenvalues(&self.rho)
    }
}

/// Ensemble-averaged density operator, `rho_lk = mean(f_l conj(f_k))`.
pub fn ensemble_density(samples: &[SingleState]) -> Result<DensityMatrix> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = samples.len() as f64;
    let mut rho = [[ZERO; 2]; 2];
    for s in samples {
        let f = s.amplitudes();
        for l in 0..2 {
            for k in 0..2 {
                rho[l][k] += f[l] * f[k].conj();
            }
        }
    }
    for row in rho.iter_mut() {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    Ok(DensityMatrix { rho })
}

/// Sample mean of `<psi|O|psi>`.
pub fn mean_expectation(samples: &[SingleState], observable: &Mat2) -> Result<C64> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: C64 = samples
        .iter()
        .map(|s| {
            let f = s.amplitudes();
            let mut acc = ZERO;
            for k in 0..2 {
                for l in 0..2 {
                    acc += f[k].conj() * observable[k][l] * f[l];
                }
            }
            acc
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// Spin component `s . u = (sigma . u) / 2` along a unit vector.
pub fn spin_component(u: [f64; 3]) -> Mat2 {
    let [x, y, z] = u;
    [
        [C64::new(0.5 * z, 0.0), C64::new(0.5 * x, -0.5 * y)],
        [C64::new(0.5 * x, 0.5 * y), C64::new(-0.5 * z, 0.0)],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ONE;
    use crate::measurement::{outcome_probabilities, Setting};
    use crate::qstate::SpinDirection;
    use approx::assert_abs_diff_eq;

    #[test]
    fn point_mass_theta_gives_r_one() {
        let model = SourceModel {
            first: DirectionDistribution {
                theta: AngleLaw::Fixed { value: 0.0 },
                ..Default::default()
            },
            ..Default::default()
        };
        for s in sample_sources(&model, 100, 1) {
            assert_eq!(s.r1, 1.0);
        }
    }

    #[test]
    fn uniform_theta_mean_spin_up_probability() {
        // E[cos^2(theta/2)] for theta ~ U[0, pi]: 1/2 + sin(pi)/(2 pi) = 1/2
        let law = AngleLaw::Uniform { lo: 0.0, hi: PI };
        let steps = 100_000;
        let quad: f64 = (0..steps)
            .map(|k| {
                let t = PI * (k as f64 + 0.5) / steps as f64;
                (t / 2.0).cos().powi(2)
            })
            .sum::<f64>()
            / steps as f64;
        assert_abs_diff_eq!(quad, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(law.mean_cos2_half(), quad, epsilon = 1e-9);

        let model = SourceModel {
            first: DirectionDistribution {
                theta: law,
                ..Default::default()
            },
            ..Default::default()
        };
        let n = 100_000;
        let draws: Vec<f64> = sample_sources(&model, n, 2).iter().map(|s| s.r1 * s.r1).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - quad).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn sphere_law_mean_matches_quadrature() {
        let law = AngleLaw::Sphere { min: 0.3, max: 2.5 };
        let steps = 200_000;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..steps {
            let t = 0.3 + 2.2 * (k as f64 + 0.5) / steps as f64;
            num += t.sin() * (t / 2.0).cos().powi(2);
            den += t.sin();
        }
        assert_abs_diff_eq!(law.mean_cos2_half(), num / den, epsilon = 1e-9);
    }

    #[test]
    fn independent_directions_are_uncorrelated() {
        let samples = sample_sources(&SourceModel::default(), 100_000, 3);
        let stats = independence_stats(&samples).unwrap();
        let bound = 3.0 / (samples.len() as f64).sqrt();
        assert!(stats.max_cross_qubit().unwrap() < bound);
        // theta and phi are independent within a qubit as well
        let c = stats.get(SourceVariable::R1, SourceVariable::Phi1).unwrap();
        assert!(c.value.unwrap().abs() < bound);
    }

    #[test]
    fn shared_theta_gives_perfect_r_correlation() {
        let model = SourceModel {
            pairing: Pairing::SharedTheta,
            ..Default::default()
        };
        let stats = independence_stats(&sample_sources(&model, 1000, 4)).unwrap();
        let c = stats.get(SourceVariable::R1, SourceVariable::R2).unwrap().value.unwrap();
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_phi_is_flagged() {
        let model = SourceModel {
            phi1_zero: true,
            ..Default::default()
        };
        let stats = independence_stats(&sample_sources(&model, 500, 5)).unwrap();
        assert_eq!(stats.zero_variance, vec![SourceVariable::Phi1]);
        assert!(stats.get(SourceVariable::Phi1, SourceVariable::R2).unwrap().value.is_none());
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(independence_stats(&sample_sources(&SourceModel::default(), 50, 6)).is_err());
    }

    #[test]
    fn comonotone_direction_law() {
        let d = DirectionDistribution {
            theta: AngleLaw::Uniform { lo: 0.0, hi: PI },
            phi: AngleLaw::Uniform { lo: 0.0, hi: PI },
            independent: false,
        };
        let mut rng = stream_rng(7, 0);
        for _ in 0..100 {
            let (t, p) = d.sample(&mut rng);
            assert_abs_diff_eq!(t, p, epsilon = 1e-15);
        }
    }

    #[test]
    fn invalid_laws_rejected() {
        let bad = DirectionDistribution {
            theta: AngleLaw::Uniform { lo: 0.0, hi: 4.0 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(SourceModel::bounded_moduli(0.5, 0.2).is_err());
        assert!(SourcePair::new(1.2, 0.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn source_state_examples() {
        let s = SourcePair::new(1.0, 0.3, 1.0, 2.0).unwrap();
        assert!(s.state().approx_eq_up_to_phase(&PairState::plus_plus(), 1e-15));

        for s in sample_sources(&SourceModel::default(), 1000, 8) {
            let psi = source_state(&s);
            assert!(psi.is_unentangled(1e-12));
            let q = outcome_probabilities(&psi, Setting::ZZ);
            let (a1, a2) = (s.r1 * s.r1, s.r2 * s.r2);
            let e = [a1 * a2, a1 * (1.0 - a2), (1.0 - a1) * a2, (1.0 - a1) * (1.0 - a2)];
            for k in 0..4 {
                assert_abs_diff_eq!(q.get(k), e[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn factorization_recovers_source_parameters() {
        for s in sample_sources(&SourceModel::bounded_moduli(0.1, 0.99).unwrap(), 500, 9) {
            let (f1, f2) = s.state().factorize(1e-10).unwrap();
            let (r1, phi1) = f1.polar();
            let (r2, phi2) = f2.polar();
            assert_abs_diff_eq!(r1, s.r1, epsilon = 1e-10);
            assert_abs_diff_eq!(r2, s.r2, epsilon = 1e-10);
            let dist = |a: f64, b: f64| {
                let d = (a - b).rem_euclid(2.0 * PI);
                d.min(2.0 * PI - d)
            };
            assert!(dist(phi1, s.phi1) < 1e-9);
            assert!(dist(phi2, s.phi2) < 1e-9);
        }
    }

    #[test]
    fn bounded_moduli_respected() {
        for s in sample_sources(&SourceModel::bounded_moduli(0.2, 0.98).unwrap(), 2000, 10) {
            assert!((0.2 - 1e-12..=0.98 + 1e-12).contains(&s.r1));
            assert!((0.2 - 1e-12..=0.98 + 1e-12).contains(&s.r2));
        }
    }

    #[test]
    fn determinism() {
        let a = sample_sources(&SourceModel::default(), 10, 42);
        let b = sample_sources(&SourceModel::default(), 10, 42);
        assert_eq!(a, b);
        assert_eq!(sample_source(&SourceModel::default(), 42), a[0]);
    }

    #[test]
    fn ensemble_density_examples() {
        let rho = ensemble_density(&[SingleState::plus(); 5]).unwrap();
        assert_eq!(rho.rho, [[ONE, ZERO], [ZERO, ZERO]]);
        let rho = ensemble_density(&[SingleState::plus(), SingleState::minus()]).unwrap();
        assert_eq!(rho.rho, [[C64::new(0.5, 0.0), ZERO], [ZERO, C64::new(0.5, 0.0)]]);
        assert!(ensemble_density(&[]).is_err());
    }

    #[test]
    fn ensemble_density_two_path_agreement() {
        let mut rng = stream_rng(11, 0);
        let sz = spin_component(SpinDirection::z().unit_vector());
        for _ in 0..100 {
            let ens: Vec<SingleState> = (0..1000).map(|_| SingleState::random(&mut rng)).collect();
            let rho = ensemble_density(&ens).unwrap();
            assert!(rho.hermiticity_defect() < 1e-15);
            assert_abs_diff_eq!(rho.trace().re, 1.0, epsilon = 1e-12);
            assert!(rho.eigenvalues()[0] >= -1e-12);
            let a = mean_expectation(&ens, &sz).unwrap();
            let b = rho.expectation(&sz);
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }
}
