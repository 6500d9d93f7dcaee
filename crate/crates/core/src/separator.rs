//! The separating system: inverting block `U = Q D~ Q` with
//! `D~ = diag(e^{i gamma_k})`, disentanglement costs and blind adaptation of
//! the four phases `gamma_k`.
//!
//! Composed with the mixer, `U M = Q diag(e^{i delta_k}) Q` where
//! `delta_k = gamma_k - w_k dt`. The output is a product state for *every*
//! product source iff
//!
//! ```text
//! delta_3 - delta_2 = m pi             (m integer)
//! delta_1 + delta_4 = 2 delta_2 + 2 k pi   (k integer)
//! ```
//!
//! The second condition is only probed by sources with `c2 c3 != 0`; a
//! training batch without such sources leaves it unconstrained.
//!
//! Adaptation is blind: [`adapt`] sees the mixer only through [`MixOracle`],
//! i.e. by passing states through it.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::C64;
use crate::measurement::{outcome_probabilities, sample_outcomes_on_stream, ProbabilityQuad, Setting};
use crate::mixer::{mix, omega_frequencies, q_diag_q, CouplingParams, MixingMatrix};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::qstate::PairState;
use crate::rng::{stream_rng, StreamRng};
use crate::sources::SourceModel;
use crate::{Error, Result};

/// `|c2 c3|` below which a training source does not constrain
/// `delta_1 + delta_4 - 2 delta_2`.
pub const UNDERCONSTRAINED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnmixerParams {
    pub gamma: [f64; 4],
}

impl UnmixerParams {
    pub fn new(gamma: [f64; 4]) -> Result<Self> {
        if gamma.iter().all(|g| g.is_finite()) {
            Ok(Self { gamma })
        } else {
            Err(Error::InvalidArgument(format!("non-finite phase in {gamma:?}")))
        }
    }

    /// The exact inverse of the mixer, `gamma_k = w_k dt`.
    pub fn perfect_inverse(p: &CouplingParams) -> Self {
        Self {
            gamma: omega_frequencies(p).map(|w| w * p.dt),
        }
    }

    /// Phases folded into `[0, 2 pi)`.
    pub fn wrapped(&self) -> Self {
        Self {
            gamma: self.gamma.map(|g| g.rem_euclid(2.0 * PI)),
        }
    }
}

pub fn unmixing_matrix(g: &UnmixerParams) -> MixingMatrix {
    q_diag_q(g.gamma.map(|x| C64::from_polar(1.0, x)))
}

/// Output of the inverting block.
pub fn unmix(psi: &PairState, g: &UnmixerParams) -> PairState {
    unmixing_matrix(g).apply(psi)
}

/// `delta_k = gamma_k - w_k dt`. Non-blind: reads the true coupling.
pub fn deltas(g: &UnmixerParams, p: &CouplingParams) -> [f64; 4] {
    let w = omega_frequencies(p);
    std::array::from_fn(|k| g.gamma[k] - w[k] * p.dt)
}

/// Distance from `x` to the nearest multiple of `period`.
fn lattice_distance(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    r.min(period - r).abs()
}

/// Distances of `delta_3 - delta_2` to `pi Z` and of
/// `delta_1 + delta_4 - 2 delta_2` to `2 pi Z`.
pub fn residuals_from_deltas(d: [f64; 4]) -> (f64, f64) {
    (
        lattice_distance(d[2] - d[1], PI),
        lattice_distance(d[0] + d[3] - 2.0 * d[1], 2.0 * PI),
    )
}

/// Disentanglement residuals of `g` against the true coupling.
pub fn delta_residuals(g: &UnmixerParams, p: &CouplingParams) -> (f64, f64) {
    residuals_from_deltas(deltas(g, p))
}

/// Mean squared tangle over a batch of inverting-block outputs.
pub fn cost_amplitude(batch: &[PairState]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(batch.iter().map(|s| s.tangle().powi(2)).sum::<f64>() / batch.len() as f64)
}

/// How outcome probabilities are obtained for [`cost_probability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Estimate {
    Exact,
    /// `shots` samples per setting; state `i`, setting `j` uses stream `3i + j`.
    Sampled { shots: u64, seed: u64 },
}

const CRITERION_SETTINGS: [Setting; 3] = [Setting::ZZ, Setting::ZX, Setting::ZY];

/// Mean over the batch and over `j in {z, x, y}` of `(P1zj P4zj - P2zj P3zj)^2`.
pub fn cost_probability(batch: &[PairState], estimate: Estimate) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per_state: Result<Vec<f64>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, psi)| {
            let mut acc = 0.0;
            for (j, s) in CRITERION_SETTINGS.iter().enumerate() {
                let quad: ProbabilityQuad = match estimate {
                    Estimate::Exact => outcome_probabilities(psi, *s),
                    Estimate::Sampled { shots, seed } => {
                        sample_outcomes_on_stream(psi, *s, shots, seed, (3 * i + j) as u64)?.quad()
                    }
                };
                acc += quad.product_mismatch().powi(2);
            }
            Ok(acc / 3.0)
        })
        .collect();
    Ok(per_state?.iter().sum::<f64>() / batch.len() as f64)
}

/// Black-box access to the mixer.
pub trait MixOracle {
    fn transform(&self, psi: &PairState) -> PairState;
}

impl<F> MixOracle for F
where
    F: Fn(&PairState) -> PairState,
{
    fn transform(&self, psi: &PairState) -> PairState {
        self(psi)
    }
}

/// The Heisenberg mixer behind an opaque interface.
#[derive(Clone)]
pub struct BlindMixer {
    params: CouplingParams,
}

impl BlindMixer {
    pub fn new(params: CouplingParams) -> Self {
        Self { params }
    }
}

impl std::fmt::Debug for BlindMixer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BlindMixer { .. }")
    }
}

impl MixOracle for BlindMixer {
    fn transform(&self, psi: &PairState) -> PairState {
        mix(psi, &self.params)
    }
}

/// Emits known product states during the adaptation phase.
pub trait SourceSampler {
    fn draw(&self, rng: &mut StreamRng) -> PairState;
}

impl SourceSampler for SourceModel {
    fn draw(&self, rng: &mut StreamRng) -> PairState {
        self.sample(rng).state()
    }
}

/// A fixed list of training states, drawn cyclically.
#[derive(Debug, Clone)]
pub struct FixedSources {
    states: Vec<PairState>,
    next: std::cell::Cell<usize>,
}

impl FixedSources {
    pub fn new(states: Vec<PairState>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(Self {
            states,
            next: std::cell::Cell::new(0),
        })
    }
}

impl SourceSampler for FixedSources {
    fn draw(&self, _rng: &mut StreamRng) -> PairState {
        let k = self.next.get();
        self.next.set((k + 1) % self.states.len());
        self.states[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CostKind {
    /// Mean squared tangle of the outputs.
    Amplitude,
    /// Probability-triplet mismatch; exact probabilities when `shots` is `None`.
    Probability { shots: Option<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    pub batch_size: usize,
    pub restarts: usize,
    /// Iteration cap per optimizer run.
    pub max_iterations: usize,
    /// Cost at or below which a run counts as converged.
    pub target: f64,
    pub cost: CostKind,
    /// Starting point of the first restart; the others start at random.
    pub initial_gamma: Option<[f64; 4]>,
    pub initial_step: f64,
    /// Number of times a finished run is restarted in place with a fresh,
    /// smaller simplex.
    pub polish_rounds: usize,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            restarts: 8,
            max_iterations: 4000,
            target: 1e-10,
            cost: CostKind::Amplitude,
            initial_gamma: None,
            initial_step: 0.5,
            polish_rounds: 2,
        }
    }
}

impl AdaptationConfig {
    /// Settings for the sampled probability cost, whose floor is set by shot
    /// noise.
    pub fn sampled(shots: u64) -> Self {
        Self {
            target: 1e-4,
            cost: CostKind::Probability { shots: Some(shots) },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.restarts == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "batch size, restarts and iterations must be positive".into(),
            ));
        }
        if !(self.target >= 0.0) || !(self.initial_step > 0.0) {
            return Err(Error::InvalidArgument("target must be >= 0 and step > 0".into()));
        }
        if let CostKind::Probability { shots: Some(0) } = self.cost {
            return Err(Error::InvalidArgument("shots must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub initial_gamma: [f64; 4],
    pub final_cost: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub final_cost: f64,
    /// Optimizer iterations summed over restarts and polish rounds.
    pub iterations: usize,
    pub gamma: UnmixerParams,
    /// Filled by [`AdaptationReport::check_against`]; adaptation itself never
    /// sees the coupling.
    pub delta_residuals: Option<(f64, f64)>,
    pub converged: bool,
    /// No training source had `|c2 c3| >= UNDERCONSTRAINED_TOL`, so only the
    /// `delta_3 - delta_2` condition was exercised.
    pub underconstrained: bool,
    pub restarts: Vec<RestartOutcome>,
    /// Best cost per iteration of the winning restart.
    pub cost_history: Vec<f64>,
}

impl AdaptationReport {
    /// Non-blind check of the adapted phases against the true coupling.
    pub fn check_against(&mut self, p: &CouplingParams) -> (f64, f64) {
        let r = delta_residuals(&self.gamma, p);
        self.delta_residuals = Some(r);
        r
    }
}

fn batch_cost(mixed: &[PairState], g: &UnmixerParams, cost: CostKind, seed: u64) -> f64 {
    let u = unmixing_matrix(g);
    let out: Vec<PairState> = mixed.iter().map(|s| u.apply(s)).collect();
    let value = match cost {
        CostKind::Amplitude => cost_amplitude(&out),
        CostKind::Probability { shots: None } => cost_probability(&out, Estimate::Exact),
        CostKind::Probability { shots: Some(shots) } => cost_probability(&out, Estimate::Sampled { shots, seed }),
    };
    value.unwrap_or(f64::INFINITY)
}

/// Blind adaptation of the inverting block.
///
/// Draws `config.batch_size` training sources (stream 0 of `seed`), passes
/// them once through the mixer, then minimizes the chosen cost over `gamma`
/// with Nelder-Mead from `config.restarts` starting points (random ones from
/// stream 1). Each run continues past `config.target` until the simplex
/// collapses, so a converged answer sits as close to the solution manifold
/// as rounding allows. Failing to reach the target is reported through
/// `converged = false`, not as an error.
pub fn adapt<M, S>(mix_oracle: &M, source_sampler: &S, config: &AdaptationConfig, seed: u64) -> Result<AdaptationReport>
where
    M: MixOracle + ?Sized,
    S: SourceSampler + ?Sized,
{
    config.validate()?;
    let mut source_rng = stream_rng(seed, 0);
    let training: Vec<PairState> = (0..config.batch_size).map(|_| source_sampler.draw(&mut source_rng)).collect();
    let underconstrained = training.iter().all(|s| {
        let c = s.amplitudes();
        (c[1] * c[2]).norm() < UNDERCONSTRAINED_TOL
    });
    let mixed: Vec<PairState> = training.iter().map(|s| mix_oracle.transform(s)).collect();

    let cost_seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let objective = |x: &[f64]| -> f64 {
        let g = UnmixerParams {
            gamma: [x[0], x[1], x[2], x[3]],
        };
        batch_cost(&mixed, &g, config.cost, cost_seed)
    };

    let mut init_rng = stream_rng(seed, 1);
    let mut restarts = Vec::with_capacity(config.restarts);
    let mut best: Option<(Vec<f64>, f64, Vec<f64>)> = None;
    let mut total_iterations = 0;

    for r in 0..config.restarts {
        let start: [f64; 4] = match (r, config.initial_gamma) {
            (0, Some(g)) => g,
            _ => std::array::from_fn(|_| init_rng.random_range(0.0..2.0 * PI)),
        };
        let mut opts = NelderMeadOptions {
            max_iterations: config.max_iterations,
            f_target: 0.0,
            f_tol: -1.0,
            x_tol: 1e-12,
            initial_step: config.initial_step,
        };
        let mut run = nelder_mead(objective, &start, &opts);
        let mut iterations = run.iterations;
        let mut history = run.history.clone();
        for _ in 0..config.polish_rounds {
            opts.initial_step = (opts.initial_step * 1e-2).max(1e-6);
            let polish = nelder_mead(objective, &run.x, &opts);
            iterations += polish.iterations;
            history.extend(&polish.history);
            if polish.f <= run.f {
                run = polish;
            }
        }
        total_iterations += iterations;
        restarts.push(RestartOutcome {
            initial_gamma: start,
            final_cost: run.f,
            iterations,
        });
        if best.as_ref().is_none_or(|(_, f, _)| run.f < *f) {
            best = Some((run.x, run.f, history));
        }
    }

    let (x, final_cost, cost_history) = best.expect("at least one restart");
    let gamma = UnmixerParams {
        gamma: [x[0], x[1], x[2], x[3]],
    }
    .wrapped();
    Ok(AdaptationReport {
        final_cost,
        iterations: total_iterations,
        gamma,
        delta_residuals: None,
        converged: final_cost <= config.target,
        underconstrained,
        restarts,
        cost_history,
    })
}
