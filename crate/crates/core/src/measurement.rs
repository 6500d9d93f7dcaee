//! Joint spin-component measurements on the pair.
//!
//! A [`Setting`] measures `s_1a` on qubit 1 and `s_2b` on qubit 2. The four
//! outcome probabilities are always ordered `(+,+), (+,-), (-,+), (-,-)`.
//!
//! Besides exact probabilities and finite-shot sampling this module carries
//! the probability form of the unentanglement test: a pure state is a product
//! state iff `P1 P4 = P2 P3` holds for the three settings `zz`, `zx` and `zy`.
//! Comparing only same-component settings (`zz`, `xx`, `yy`) is *not*
//! sufficient, see [`same_component_criterion`].
//!
//! [`reconstruct_state`] recovers all four amplitudes, up to global phase, from
//! the outcome probabilities of five settings (`zz`, `zx`, `zy`, `xz`, `yz`).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::linalg::C64;
use crate::qstate::PairState;
use crate::rng::stream_rng;
use crate::{Error, Result};

pub use crate::qstate::Axis;

/// Modulus threshold below which an amplitude is treated as zero during
/// reconstruction.
pub const DEFAULT_MODULUS_TOL: f64 = 1e-6;

const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub axis1: Axis,
    pub axis2: Axis,
}

impl Setting {
    pub const ZZ: Setting = Setting::new(Axis::Z, Axis::Z);
    pub const ZX: Setting = Setting::new(Axis::Z, Axis::X);
    pub const ZY: Setting = Setting::new(Axis::Z, Axis::Y);
    pub const XZ: Setting = Setting::new(Axis::X, Axis::Z);
    pub const YZ: Setting = Setting::new(Axis::Y, Axis::Z);
    pub const XX: Setting = Setting::new(Axis::X, Axis::X);
    pub const YY: Setting = Setting::new(Axis::Y, Axis::Y);

    pub const fn new(axis1: Axis, axis2: Axis) -> Self {
        Self { axis1, axis2 }
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.axis1.label(), self.axis2.label())
    }
}

/// Outcome probabilities of one setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityQuad {
    p: [f64; 4],
}

impl ProbabilityQuad {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        if p.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "probabilities must lie in [0, 1], got {p:?}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(Self { p })
    }

    pub fn probabilities(&self) -> [f64; 4] {
        self.p
    }

    pub fn get(&self, k: usize) -> f64 {
        self.p[k]
    }

    /// `P1 P4 - P2 P3`.
    pub fn product_mismatch(&self) -> f64 {
        self.p[0] * self.p[3] - self.p[1] * self.p[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    n: [u64; 4],
    total: u64,
}

impl OutcomeCounts {
    pub fn new(n: [u64; 4]) -> Result<Self> {
        let total: u64 = n.iter().sum();
        if total == 0 {
            return Err(Error::InvalidArgument("outcome counts are all zero".into()));
        }
        Ok(Self { n, total })
    }

    pub fn counts(&self) -> [u64; 4] {
        self.n
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Empirical frequencies.
    pub fn quad(&self) -> ProbabilityQuad {
        let t = self.total as f64;
        ProbabilityQuad {
            p: self.n.map(|k| k as f64 / t),
        }
    }
}

/// `p_k = |c_k|^2` in the eigenbasis of the setting.
pub fn outcome_probabilities(psi: &PairState, setting: Setting) -> ProbabilityQuad {
    let rotated = psi.basis_change(setting.axis1, setting.axis2);
    let raw = rotated.amplitudes().map(|a| a.norm_sqr());
    // rounding can leave the sum a few ulps off 1
    let sum: f64 = raw.iter().sum();
    ProbabilityQuad {
        p: raw.map(|x| (x / sum).clamp(0.0, 1.0)),
    }
}

/// Draws `shots` i.i.d. outcomes from the setting's distribution, using
/// stream 0 of `seed`.
pub fn sample_outcomes(psi: &PairState, setting: Setting, shots: u64, seed: u64) -> Result<OutcomeCounts> {
    sample_outcomes_on_stream(psi, setting, shots, seed, 0)
}

/// Same as [`sample_outcomes`] on an explicit stream, for fan-out across
/// settings or trials.
pub fn sample_outcomes_on_stream(
    psi: &PairState,
    setting: Setting,
    shots: u64,
    seed: u64,
    stream: u64,
) -> Result<OutcomeCounts> {
    let quad = outcome_probabilities(psi, setting);
    let mut rng = stream_rng(seed, stream);
    sample_counts(&quad, shots, &mut rng)
}

/// Multinomial draw of `shots` outcomes, realized as a chain of conditional
/// binomials: `n1 ~ B(N, p1)`, `n2 ~ B(N - n1, p2 / (1 - p1))`, ...
pub fn sample_counts<R: Rng + ?Sized>(quad: &ProbabilityQuad, shots: u64, rng: &mut R) -> Result<OutcomeCounts> {
    if shots == 0 {
        return Err(Error::InvalidArgument("number of shots must be at least 1".into()));
    }
    let mut n = [0u64; 4];
    let mut remaining = shots;
    let mut mass_left = 1.0;
    for k in 0..3 {
        if remaining == 0 {
            break;
        }
        let p = if mass_left > 0.0 {
            (quad.p[k] / mass_left).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = Binomial::new(remaining, p)
            .map_err(|e| Error::InvalidArgument(format!("binomial parameters: {e}")))?
            .sample(rng);
        n[k] = draw;
        remaining -= draw;
        mass_left -= quad.p[k];
    }
    n[3] = remaining;
    OutcomeCounts::new(n)
}

/// `|P1 P4 - P2 P3| <= tol` for the `zz`, `zx` and `zy` quads of one state.
/// This is equivalent to `c1 c4 = c2 c3`.
pub fn probability_criterion(pzz: &ProbabilityQuad, pzx: &ProbabilityQuad, pzy: &ProbabilityQuad, tol: f64) -> bool {
    [pzz, pzx, pzy].iter().all(|q| q.product_mismatch().abs() <= tol)
}

/// `|P1 P4 - P2 P3| <= tol` for the `zz`, `xx` and `yy` quads.
///
/// Not an unentanglement test: every product state passes, but so does the
/// entangled [`PairState::same_component_counterexample`].
pub fn same_component_criterion(pzz: &ProbabilityQuad, pxx: &ProbabilityQuad, pyy: &ProbabilityQuad, tol: f64) -> bool {
    [pzz, pxx, pyy].iter().all(|q| q.product_mismatch().abs() <= tol)
}

/// Outcome probabilities of the five settings used for reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionQuads {
    pub zz: ProbabilityQuad,
    pub zx: ProbabilityQuad,
    pub zy: ProbabilityQuad,
    pub xz: ProbabilityQuad,
    pub yz: ProbabilityQuad,
}

impl ReconstructionQuads {
    pub const SETTINGS: [Setting; 5] = [Setting::ZZ, Setting::ZX, Setting::ZY, Setting::XZ, Setting::YZ];

    pub fn exact(psi: &PairState) -> Self {
        let [zz, zx, zy, xz, yz] = Self::SETTINGS.map(|s| outcome_probabilities(psi, s));
        Self { zz, zx, zy, xz, yz }
    }

    /// Empirical quads from `shots` samples per setting; setting `k` uses
    /// stream `k` of `seed`.
    pub fn sampled(psi: &PairState, shots: u64, seed: u64) -> Result<Self> {
        let mut quads = Vec::with_capacity(5);
        for (k, s) in Self::SETTINGS.iter().enumerate() {
            quads.push(sample_outcomes_on_stream(psi, *s, shots, seed, k as u64)?.quad());
        }
        Ok(Self {
            zz: quads[0],
            zx: quads[1],
            zy: quads[2],
            xz: quads[3],
            yz: quads[4],
        })
    }
}

/// One measured relative phase `psi_a - psi_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseLink {
    /// Zero-based amplitude indices `(a, b)`.
    pub pair: (usize, usize),
    /// `psi_a - psi_b` in `(-pi, pi]`.
    pub difference: f64,
    /// `1 / (2 sqrt(P_a P_b))`, the factor amplifying probability errors.
    pub condition: f64,
    /// `cos^2 + sin^2 - 1` of the raw estimates.
    pub residual: f64,
    /// Whether this link fixed a phase in the returned state.
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub state: PairState,
    /// Amplitudes whose modulus fell below the tolerance; their phase is
    /// reported as 0 and they are zero in `state`.
    pub degenerate: [bool; 4],
    /// `psi_k` with the gauge `psi_3 = 0` (or `psi_1 = 0` when `c3` vanishes).
    pub phases: [f64; 4],
    /// Non-degenerate amplitudes whose phase no measured interference term
    /// ties to the gauge (e.g. `c4` when `c2 = c3 = 0`); their phase is set
    /// to 0, so the result is exact only up to that relative phase.
    pub unresolved: [bool; 4],
    pub links: Vec<PhaseLink>,
}

/// Raw `(cos, sin)` numerators of `psi_a - psi_b` and the shared denominator
/// `2 sqrt(P_a P_b)`, from `P_re = |c_a + c_b|^2 / 2` and
/// `P_im = |c_a - i c_b|^2 / 2`.
fn phase_terms(pa: f64, pb: f64, p_re: f64, p_im: f64) -> (f64, f64, f64) {
    let cos_num = 2.0 * p_re - pa - pb;
    let sin_num = -(2.0 * p_im - pa - pb);
    (cos_num, sin_num, 2.0 * (pa * pb).sqrt())
}

fn wrap_half_open(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// `(psi1 - psi2, psi3 - psi4)` from the `zz`, `zx` and `zy` quads, each in
/// `(-pi, pi]`.
pub fn phase_differences(pzz: &ProbabilityQuad, pzx: &ProbabilityQuad, pzy: &ProbabilityQuad) -> Result<(f64, f64)> {
    if pzz.p.iter().any(|p| p.sqrt() < DEFAULT_MODULUS_TOL) {
        return Err(Error::Degenerate(format!(
            "phase differences need every |c_k| >= {DEFAULT_MODULUS_TOL}, zz quad is {:?}",
            pzz.p
        )));
    }
    let (c12, s12, _) = phase_terms(pzz.p[0], pzz.p[1], pzx.p[0], pzy.p[0]);
    let (c34, s34, _) = phase_terms(pzz.p[2], pzz.p[3], pzx.p[2], pzy.p[2]);
    Ok((wrap_half_open(s12.atan2(c12)), wrap_half_open(s34.atan2(c34))))
}

/// Pure-state reconstruction from five measurement settings.
///
/// Moduli come from `zz`: `|c_k| = sqrt(P_k,zz)`. Relative phases come from
/// interference terms: `zx`/`zy` give `psi1 - psi2` and `psi3 - psi4`,
/// `xz`/`yz` give `psi1 - psi3` and, as a fallback, `psi2 - psi4`. The gauge
/// is `psi3 = 0`, moved to `psi1 = 0` if `|c3| < tol`.
///
/// Amplitudes with modulus below `tol` are zeroed and flagged. Fails when
/// a link touching such an amplitude carries a numerator larger than the
/// vanishing modulus allows, or when the surviving links cannot connect all
/// significant amplitudes to the gauge.
pub fn reconstruct_state(quads: &ReconstructionQuads, tol: f64) -> Result<Reconstruction> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let pzz = quads.zz.p;
    let moduli = pzz.map(f64::sqrt);
    let degenerate = moduli.map(|r| r < tol);

    // Preference order: the three links of the standard chain, then (2, 4).
    let specs: [((usize, usize), f64, f64); 4] = [
        ((0, 2), quads.xz.p[0], quads.yz.p[0]),
        ((0, 1), quads.zx.p[0], quads.zy.p[0]),
        ((2, 3), quads.zx.p[2], quads.zy.p[2]),
        ((1, 3), quads.xz.p[1], quads.yz.p[1]),
    ];

    let mut links = Vec::new();
    for &((a, b), p_re, p_im) in &specs {
        let (cos_num, sin_num, denom) = phase_terms(pzz[a], pzz[b], p_re, p_im);
        if degenerate[a] || degenerate[b] {
            // |numerator| <= 2 |c_a| |c_b| for a genuine pure state
            let bound = 4.0 * tol;
            if cos_num.abs() > bound || sin_num.abs() > bound {
                return Err(Error::Degenerate(format!(
                    "link psi{} - psi{} has numerators ({cos_num:.3e}, {sin_num:.3e}) but a modulus below {tol}",
                    a + 1,
                    b + 1
                )));
            }
            continue;
        }
        let (c, s) = (cos_num / denom, sin_num / denom);
        links.push(PhaseLink {
            pair: (a, b),
            difference: wrap_half_open(sin_num.atan2(cos_num)),
            condition: 1.0 / denom,
            residual: c * c + s * s - 1.0,
            used: false,
        });
    }

    let anchor = if !degenerate[2] {
        2
    } else if !degenerate[0] {
        0
    } else {
        (0..4)
            .find(|&k| !degenerate[k])
            .ok_or_else(|| Error::Degenerate("all moduli are below tolerance".into()))?
    };
    let mut phase: [Option<f64>; 4] = [None; 4];
    phase[anchor] = Some(0.0);
    loop {
        let mut progressed = false;
        for link in links.iter_mut().filter(|l| !l.used) {
            let (a, b) = link.pair;
            match (phase[a], phase[b]) {
                (Some(pa), None) => phase[b] = Some(pa - link.difference),
                (None, Some(pb)) => phase[a] = Some(pb + link.difference),
                _ => continue,
            }
            link.used = true;
            progressed = true;
            break;
        }
        if !progressed {
            break;
        }
    }
    let unresolved: [bool; 4] = std::array::from_fn(|k| !degenerate[k] && phase[k].is_none());

    let phases = phase.map(|p| p.map(wrap_half_open).unwrap_or(0.0));
    let mut c = [C64::new(0.0, 0.0); 4];
    for k in 0..4 {
        if !degenerate[k] {
            c[k] = C64::from_polar(moduli[k], phases[k]);
        }
    }
    Ok(Reconstruction {
        state: PairState::normalized(c)?,
        degenerate,
        phases,
        unresolved,
        links,
    })
}
