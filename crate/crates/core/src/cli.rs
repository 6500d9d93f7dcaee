//! Scenario runner behind the `bqss` binary.
//!
//! Settings come from an optional flat TOML file (`--config`) overlaid by
//! command-line flags with the same kebab-case names. Each scenario runs its
//! trials in parallel with per-trial derived seeds and produces a [`Report`]
//! whose numerical content depends only on the resolved config.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::measurement::{
    outcome_probabilities, probability_criterion, reconstruct_state, same_component_criterion, ReconstructionQuads,
    Setting, DEFAULT_MODULUS_TOL,
};
use crate::mixer::{closed_form_probs, mix, CouplingParams};
use crate::qstate::{product, PairState, SingleState};
use crate::rng::stream_rng;
use crate::separator::{adapt, unmix, AdaptationConfig, BlindMixer};
use crate::sources::{sample_sources, AngleLaw, DirectionDistribution, SourceModel};
use crate::DEFAULT_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    CriterionEquivalence,
    Counterexample,
    Reconstruction,
    MixingClosedForm,
    IsingInvariance,
    Adaptation,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::CriterionEquivalence,
        Scenario::Counterexample,
        Scenario::Reconstruction,
        Scenario::MixingClosedForm,
        Scenario::IsingInvariance,
        Scenario::Adaptation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::CriterionEquivalence => "criterion-equivalence",
            Scenario::Counterexample => "counterexample",
            Scenario::Reconstruction => "reconstruction",
            Scenario::MixingClosedForm => "mixing-closed-form",
            Scenario::IsingInvariance => "ising-invariance",
            Scenario::Adaptation => "adaptation",
        }
    }

    fn default_trials(self) -> usize {
        match self {
            Scenario::CriterionEquivalence => 10_000,
            Scenario::Counterexample => 1,
            Scenario::Reconstruction => 1000,
            Scenario::MixingClosedForm => 10,
            Scenario::IsingInvariance => 20,
            Scenario::Adaptation => 1,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Scenario::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Scenario::ALL.iter().map(|x| x.name()).collect();
            ConfigError(format!("unknown scenario `{s}` (known: {})", known.join(", ")))
        })
    }
}

/// Invalid or unreadable configuration; maps to exit status 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl From<crate::Error> for ConfigError {
    fn from(e: crate::Error) -> Self {
        ConfigError(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaLaw {
    /// `cos(theta)` uniform between the bounds.
    Sphere,
    /// `theta` uniform between the bounds.
    Uniform,
}

/// Partially specified settings: one layer of the config file or the flags.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub samples_per_setting: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub j_z: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub j_xy: Option<f64>,
    /// Interaction time; the time horizon for ising-invariance.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub time_points: Option<usize>,
    #[arg(long, value_enum)]
    pub theta_law: Option<ThetaLaw>,
    #[arg(long)]
    pub theta_min: Option<f64>,
    #[arg(long)]
    pub theta_max: Option<f64>,
    #[arg(long)]
    pub phi_min: Option<f64>,
    #[arg(long)]
    pub phi_max: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long)]
    pub held_out: Option<usize>,
}

impl Settings {
    /// Fields set in `top` win.
    pub fn overlay(self, top: Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: top.$f.or(self.$f)),* } };
        }
        pick!(
            scenario,
            seed,
            trials,
            samples_per_setting,
            j_z,
            j_xy,
            dt,
            time_points,
            theta_law,
            theta_min,
            theta_max,
            phi_min,
            phi_max,
            batch_size,
            restarts,
            max_iterations,
            target,
            held_out
        )
    }

    pub fn from_toml(text: &str) -> Result<Settings, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Settings, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Fully resolved settings of one run; echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub trials: usize,
    pub samples_per_setting: u64,
    pub j_z: f64,
    pub j_xy: f64,
    pub dt: f64,
    pub time_points: usize,
    pub theta_law: ThetaLaw,
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub batch_size: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub target: f64,
    pub held_out: usize,
}

impl ExperimentConfig {
    /// Fills unset fields with scenario defaults and validates.
    pub fn resolve(s: Settings) -> Result<Self, ConfigError> {
        let scenario: Scenario = s
            .scenario
            .as_deref()
            .ok_or_else(|| ConfigError("no scenario given".into()))?
            .parse()?;
        let ising = scenario == Scenario::IsingInvariance;
        let adaptation = AdaptationConfig::default();
        let config = Self {
            scenario,
            seed: s.seed.unwrap_or(1),
            trials: s.trials.unwrap_or(scenario.default_trials()),
            samples_per_setting: s.samples_per_setting.unwrap_or(1_000_000),
            j_z: s.j_z.unwrap_or(0.83),
            j_xy: s.j_xy.unwrap_or(if ising { 0.0 } else { 1.27 }),
            dt: s.dt.unwrap_or(if ising { 10.0 } else { 1.9 }),
            time_points: s.time_points.unwrap_or(50),
            theta_law: s.theta_law.unwrap_or(ThetaLaw::Sphere),
            // moduli r = cos(theta / 2) within [0.2, 0.98]
            theta_min: s.theta_min.unwrap_or(2.0 * 0.98f64.acos()),
            theta_max: s.theta_max.unwrap_or(2.0 * 0.2f64.acos()),
            phi_min: s.phi_min.unwrap_or(0.0),
            phi_max: s.phi_max.unwrap_or(2.0 * PI),
            batch_size: s.batch_size.unwrap_or(adaptation.batch_size),
            restarts: s.restarts.unwrap_or(adaptation.restarts),
            max_iterations: s.max_iterations.unwrap_or(adaptation.max_iterations),
            target: s.target.unwrap_or(adaptation.target),
            held_out: s.held_out.unwrap_or(100),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("trials", self.trials),
            ("samples-per-setting", self.samples_per_setting as usize),
            ("time-points", self.time_points),
            ("batch-size", self.batch_size),
            ("restarts", self.restarts),
            ("max-iterations", self.max_iterations),
            ("held-out", self.held_out),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError(format!("{name} must be positive")));
        }
        if self.time_points < 2 {
            return Err(ConfigError("time-points must be at least 2".into()));
        }
        if !(self.target >= 0.0) {
            return Err(ConfigError("target must be non-negative".into()));
        }
        if self.scenario == Scenario::IsingInvariance && self.j_xy != 0.0 {
            return Err(ConfigError("ising-invariance requires j-xy = 0".into()));
        }
        self.coupling()?;
        self.source_model()?;
        Ok(())
    }

    pub fn coupling(&self) -> Result<CouplingParams, ConfigError> {
        Ok(CouplingParams::new(self.j_z, self.j_xy, self.dt)?)
    }

    /// Both qubits draw their field direction from the same law.
    pub fn direction_distribution(&self) -> DirectionDistribution {
        let theta = match self.theta_law {
            ThetaLaw::Sphere => AngleLaw::Sphere {
                min: self.theta_min,
                max: self.theta_max,
            },
            ThetaLaw::Uniform => AngleLaw::Uniform {
                lo: self.theta_min,
                hi: self.theta_max,
            },
        };
        DirectionDistribution {
            theta,
            phi: AngleLaw::Uniform {
                lo: self.phi_min,
                hi: self.phi_max,
            },
            independent: true,
        }
    }

    pub fn source_model(&self) -> Result<SourceModel, ConfigError> {
        let d = self.direction_distribution();
        let model = SourceModel {
            first: d,
            second: d,
            ..Default::default()
        };
        model.validate()?;
        Ok(model)
    }

    pub fn adaptation(&self) -> AdaptationConfig {
        AdaptationConfig {
            batch_size: self.batch_size,
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            target: self.target,
            ..Default::default()
        }
    }
}

/// Named values of one trial; booleans are stored as 0 or 1.
pub type Record = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub values: Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `<`, `<=`, `>`, `>=` or `==`, read as `value <relation> threshold`.
    pub relation: String,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, relation: &str, threshold: f64) -> Self {
        let passed = match relation {
            "<" => value < threshold,
            "<=" => value <= threshold,
            ">" => value > threshold,
            ">=" => value >= threshold,
            _ => value == threshold,
        };
        Self {
            name: name.into(),
            value,
            relation: relation.into(),
            threshold,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: Scenario,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub summary: Record,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub wall_clock_seconds: f64,
    /// Seconds since the Unix epoch at completion.
    pub timestamp: u64,
    /// Trajectory rows for the flat table; not part of the structured report.
    #[serde(skip)]
    pub table: Vec<Record>,
}

impl Report {
    /// The report with its timing fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Report {
        Report {
            wall_clock_seconds: 0.0,
            timestamp: 0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Comma-separated table, one row per record, columns sorted by name.
    pub fn table_csv(&self) -> Result<String, ConfigError> {
        let mut columns: Vec<&String> = self.table.iter().flat_map(|r| r.keys()).collect();
        columns.sort();
        columns.dedup();
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| ConfigError(format!("table: {e}"));
        w.write_record(&columns).map_err(err)?;
        for row in &self.table {
            let cells: Vec<String> = columns
                .iter()
                .map(|c| row.get(*c).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            w.write_record(&cells).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| ConfigError(format!("table: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Human summary for stdout.
    pub fn summary_text(&self) -> String {
        let mut out = format!(
            "scenario {} (seed {}, {} trials): {}\n",
            self.scenario,
            self.config.seed,
            self.config.trials,
            if self.passed { "PASS" } else { "FAIL" }
        );
        for c in &self.checks {
            out.push_str(&format!(
                "  [{}] {}: {:.6e} {} {:.6e}\n",
                if c.passed { "ok" } else { "!!" },
                c.name,
                c.value,
                c.relation,
                c.threshold
            ));
        }
        out.push_str(&format!("  wall clock {:.3} s\n", self.wall_clock_seconds));
        out
    }
}

struct Outcome {
    trials: Vec<TrialRecord>,
    summary: Record,
    checks: Vec<Check>,
    table: Vec<Record>,
}

/// Seed of trial `index`, derived from the run seed.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    stream_rng(seed, index as u64 + 1).random()
}

fn run_trials<F>(config: &ExperimentConfig, f: F) -> Vec<TrialRecord>
where
    F: Fn(u64) -> Record + Sync,
{
    (0..config.trials)
        .into_par_iter()
        .map(|index| {
            let seed = trial_seed(config.seed, index);
            TrialRecord {
                index,
                seed,
                values: f(seed),
            }
        })
        .collect()
}

fn record(pairs: &[(&str, f64)]) -> Record {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn column<'a>(trials: &'a [TrialRecord], key: &str) -> impl Iterator<Item = f64> + 'a {
    let key = key.to_string();
    trials.iter().map(move |t| t.values[&key])
}

fn max_of(trials: &[TrialRecord], key: &str) -> f64 {
    column(trials, key).fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(trials: &[TrialRecord], key: &str) -> f64 {
    column(trials, key).fold(f64::INFINITY, f64::min)
}

fn sum_of(trials: &[TrialRecord], key: &str) -> f64 {
    column(trials, key).sum()
}

fn trial_table(trials: &[TrialRecord]) -> Vec<Record> {
    trials
        .iter()
        .map(|t| {
            let mut row = t.values.clone();
            row.insert("trial".into(), t.index as f64);
            row
        })
        .collect()
}

/// Votes of the four unentanglement tests on one state.
fn criterion_votes(psi: &PairState) -> [bool; 4] {
    let q = |s| outcome_probabilities(psi, s);
    [
        psi.is_unentangled(DEFAULT_TOL),
        (psi.purity() - 1.0).abs() <= DEFAULT_TOL,
        psi.schmidt_number(DEFAULT_TOL) == 1,
        probability_criterion(&q(Setting::ZZ), &q(Setting::ZX), &q(Setting::ZY), DEFAULT_TOL),
    ]
}

fn criterion_equivalence(config: &ExperimentConfig) -> Outcome {
    let trials = run_trials(config, |seed| {
        let mut rng = stream_rng(seed, 0);
        let prod = product(&SingleState::random(&mut rng), &SingleState::random(&mut rng));
        let generic = PairState::random(&mut rng);
        let disagreements = |v: [bool; 4]| {
            let amp = flag(!(v[0] == v[1] && v[1] == v[2]));
            let prob = flag(v[0] != v[3]);
            (amp, prob)
        };
        let (pa, pp) = disagreements(criterion_votes(&prod));
        let (ga, gp) = disagreements(criterion_votes(&generic));
        record(&[
            ("product_tangle", prod.tangle()),
            ("product_purity_deviation", (prod.purity() - 1.0).abs()),
            ("generic_tangle", generic.tangle()),
            ("amplitude_disagreements", pa + ga),
            ("probability_disagreements", pp + gp),
        ])
    });
    let summary = record(&[
        ("max_product_tangle", max_of(&trials, "product_tangle")),
        ("max_product_purity_deviation", max_of(&trials, "product_purity_deviation")),
        ("min_generic_tangle", min_of(&trials, "generic_tangle")),
        ("amplitude_disagreements", sum_of(&trials, "amplitude_disagreements")),
        ("probability_disagreements", sum_of(&trials, "probability_disagreements")),
    ]);
    let checks = vec![
        Check::new("max product tangle", summary["max_product_tangle"], "<", 1e-12),
        Check::new(
            "max product purity deviation",
            summary["max_product_purity_deviation"],
            "<=",
            1e-12,
        ),
        Check::new(
            "tangle/purity/Schmidt disagreements",
            summary["amplitude_disagreements"],
            "==",
            0.0,
        ),
        Check::new(
            "probability-triplet disagreements",
            summary["probability_disagreements"],
            "==",
            0.0,
        ),
    ];
    Outcome {
        table: trial_table(&trials),
        trials,
        summary,
        checks,
    }
}

fn counterexample(config: &ExperimentConfig) -> Outcome {
    let trials = run_trials(config, |_| {
        let psi = PairState::same_component_counterexample();
        let q = |s| outcome_probabilities(&psi, s);
        let quarter_dev = |s| {
            q(s).probabilities()
                .iter()
                .map(|p| (p - 0.25).abs())
                .fold(0.0, f64::max)
        };
        record(&[
            ("tangle", psi.tangle()),
            ("zz_mismatch", q(Setting::ZZ).product_mismatch().abs()),
            ("xx_mismatch", q(Setting::XX).product_mismatch().abs()),
            ("yy_mismatch", q(Setting::YY).product_mismatch().abs()),
            ("zx_mismatch", q(Setting::ZX).product_mismatch().abs()),
            ("zy_mismatch", q(Setting::ZY).product_mismatch().abs()),
            ("xx_quarter_deviation", quarter_dev(Setting::XX)),
            ("yy_quarter_deviation", quarter_dev(Setting::YY)),
            (
                "same_component_passes",
                flag(same_component_criterion(
                    &q(Setting::ZZ),
                    &q(Setting::XX),
                    &q(Setting::YY),
                    DEFAULT_TOL,
                )),
            ),
            (
                "probability_criterion_passes",
                flag(probability_criterion(
                    &q(Setting::ZZ),
                    &q(Setting::ZX),
                    &q(Setting::ZY),
                    DEFAULT_TOL,
                )),
            ),
        ])
    });
    let v = &trials[0].values;
    let summary = v.clone();
    let checks = vec![
        Check::new("same-component criterion accepts", v["same_component_passes"], "==", 1.0),
        Check::new("xx quad deviation from 1/4", v["xx_quarter_deviation"], "<=", 1e-15),
        Check::new("yy quad deviation from 1/4", v["yy_quarter_deviation"], "<=", 1e-15),
        Check::new("tangle deviation from 1/2", (v["tangle"] - 0.5).abs(), "<=", 1e-15),
        Check::new("zx mismatch", v["zx_mismatch"], "==", 0.25),
        Check::new(
            "probability-triplet criterion accepts",
            v["probability_criterion_passes"],
            "==",
            0.0,
        ),
    ];
    Outcome {
        table: trial_table(&trials),
        trials,
        summary,
        checks,
    }
}

/// Random pure state with every modulus at least `floor`.
fn random_state_with_floor(rng: &mut crate::rng::StreamRng, floor: f64) -> PairState {
    loop {
        let psi = PairState::random(rng);
        if psi.amplitudes().iter().all(|c| c.norm() >= floor) {
            return psi;
        }
    }
}

fn reconstruction(config: &ExperimentConfig) -> Outcome {
    let shots = config.samples_per_setting;
    let trials = run_trials(config, |seed| {
        let mut rng = stream_rng(seed, 0);
        let psi = PairState::random(&mut rng);
        let exact = reconstruct_state(&ReconstructionQuads::exact(&psi), DEFAULT_MODULUS_TOL)
            .map(|r| r.state.fidelity(&psi))
            .unwrap_or(0.0);
        let bounded = random_state_with_floor(&mut rng, 0.05);
        let sampled = ReconstructionQuads::sampled(&bounded, shots, seed)
            .and_then(|q| reconstruct_state(&q, DEFAULT_MODULUS_TOL))
            .map(|r| r.state.fidelity(&bounded))
            .unwrap_or(0.0);
        record(&[("exact_fidelity", exact), ("sampled_fidelity", sampled)])
    });
    let good = column(&trials, "sampled_fidelity").filter(|f| *f >= 0.995).count();
    let summary = record(&[
        ("min_exact_fidelity", min_of(&trials, "exact_fidelity")),
        ("min_sampled_fidelity", min_of(&trials, "sampled_fidelity")),
        ("mean_sampled_fidelity", sum_of(&trials, "sampled_fidelity") / trials.len() as f64),
        ("sampled_fraction_above_0.995", good as f64 / trials.len() as f64),
    ]);
    let checks = vec![
        Check::new("min exact fidelity", summary["min_exact_fidelity"], ">=", 1.0 - 1e-12),
        Check::new(
            "fraction of sampled fidelities >= 0.995",
            summary["sampled_fraction_above_0.995"],
            ">=",
            0.95,
        ),
    ];
    Outcome {
        table: trial_table(&trials),
        trials,
        summary,
        checks,
    }
}

const GRID: usize = 10;

fn mixing_closed_form(config: &ExperimentConfig) -> Outcome {
    let trials = run_trials(config, |seed| {
        let mut rng = stream_rng(seed, 0);
        let p = CouplingParams::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.0..5.0),
        )
        .expect("finite parameters");
        let mut worst: f64 = 0.0;
        for i in 0..GRID {
            let r1 = i as f64 / (GRID - 1) as f64;
            for j in 0..GRID {
                let r2 = j as f64 / (GRID - 1) as f64;
                for k in 0..GRID {
                    let delta_i = 2.0 * PI * k as f64 / GRID as f64;
                    let src = product(
                        &SingleState::from_polar(r1, 0.0).expect("r in [0, 1]"),
                        &SingleState::from_polar(r2, delta_i).expect("r in [0, 1]"),
                    );
                    let q = outcome_probabilities(&mix(&src, &p), Setting::ZZ);
                    let (p1, p2, p4) = closed_form_probs(r1, r2, delta_i, &p).expect("r in [0, 1]");
                    worst = worst
                        .max((p1 - q.get(0)).abs())
                        .max((p2 - q.get(1)).abs())
                        .max((p4 - q.get(3)).abs());
                }
            }
        }
        record(&[("j_z", p.j_z), ("j_xy", p.j_xy), ("dt", p.dt), ("max_deviation", worst)])
    });
    let summary = record(&[("max_deviation", max_of(&trials, "max_deviation"))]);
    let checks = vec![Check::new("max closed-form deviation", summary["max_deviation"], "<", 1e-12)];
    Outcome {
        table: trial_table(&trials),
        trials,
        summary,
        checks,
    }
}

/// Distance from `x` to the nearest multiple of `pi`.
fn distance_to_pi_multiple(x: f64) -> f64 {
    let r = x.rem_euclid(PI);
    r.min(PI - r)
}

fn ising_invariance(config: &ExperimentConfig) -> Outcome {
    let model = config.source_model().expect("validated");
    let base = config.coupling().expect("validated");
    let times: Vec<f64> = (0..config.time_points)
        .map(|k| config.dt * k as f64 / (config.time_points - 1) as f64)
        .collect();
    let per_trial: Vec<(TrialRecord, Vec<Record>)> = (0..config.trials)
        .into_par_iter()
        .map(|index| {
            let seed = trial_seed(config.seed, index);
            let src = sample_sources(&model, 1, seed)[0];
            let psi0 = src.state();
            let mut max_mismatch: f64 = 0.0;
            let mut min_tangle = f64::INFINITY;
            let mut rows = Vec::with_capacity(times.len());
            for &t in &times {
                let p = base.at_time(t).expect("non-negative time");
                let out = mix(&psi0, &p);
                let mismatch = outcome_probabilities(&out, Setting::ZZ).product_mismatch().abs();
                let tangle = out.tangle();
                max_mismatch = max_mismatch.max(mismatch);
                if distance_to_pi_multiple(base.j_z * t) >= 0.1 {
                    min_tangle = min_tangle.min(tangle);
                }
                rows.push(record(&[
                    ("trial", index as f64),
                    ("t", t),
                    ("zz_mismatch", mismatch),
                    ("tangle", tangle),
                ]));
            }
            let values = record(&[
                ("r1", src.r1),
                ("r2", src.r2),
                ("max_zz_mismatch", max_mismatch),
                ("min_tangle", min_tangle),
            ]);
            (TrialRecord { index, seed, values }, rows)
        })
        .collect();
    let table = per_trial.iter().flat_map(|(_, rows)| rows.clone()).collect();
    let trials: Vec<TrialRecord> = per_trial.into_iter().map(|(t, _)| t).collect();
    let summary = record(&[
        ("max_zz_mismatch", max_of(&trials, "max_zz_mismatch")),
        ("min_tangle_away_from_revivals", min_of(&trials, "min_tangle")),
    ]);
    let checks = vec![
        Check::new("max |p1 p4 - p2 p3|", summary["max_zz_mismatch"], "<", 1e-12),
        Check::new(
            "min tangle with J t mod pi >= 0.1",
            summary["min_tangle_away_from_revivals"],
            ">",
            1e-3,
        ),
    ];
    Outcome {
        trials,
        summary,
        checks,
        table,
    }
}

fn adaptation(config: &ExperimentConfig) -> Outcome {
    let model = config.source_model().expect("validated");
    let p = config.coupling().expect("validated");
    let adapt_config = config.adaptation();
    let per_trial: Vec<(TrialRecord, Vec<Record>)> = (0..config.trials)
        .into_par_iter()
        .map(|index| {
            let seed = trial_seed(config.seed, index);
            let (values, rows) = match adapt(&BlindMixer::new(p), &model, &adapt_config, seed) {
                Ok(mut report) => {
                    let (r1, r2) = report.check_against(&p);
                    let held_out_seed = stream_rng(seed, 2).random();
                    let max_tangle = sample_sources(&model, config.held_out, held_out_seed)
                        .iter()
                        .map(|s| unmix(&mix(&s.state(), &p), &report.gamma).tangle())
                        .fold(0.0, f64::max);
                    let best_restart = report
                        .restarts
                        .iter()
                        .filter(|r| r.final_cost <= adapt_config.target)
                        .count();
                    let mut values = record(&[
                        ("final_cost", report.final_cost),
                        ("iterations", report.iterations as f64),
                        ("converged", flag(report.converged)),
                        ("converged_restarts", best_restart as f64),
                        ("underconstrained", flag(report.underconstrained)),
                        ("residual_singlet_triplet", r1),
                        ("residual_balance", r2),
                        ("held_out_max_tangle", max_tangle),
                    ]);
                    for (k, g) in report.gamma.gamma.iter().enumerate() {
                        values.insert(format!("gamma{}", k + 1), *g);
                    }
                    let rows = report
                        .cost_history
                        .iter()
                        .enumerate()
                        .map(|(it, c)| record(&[("trial", index as f64), ("iteration", it as f64), ("cost", *c)]))
                        .collect();
                    (values, rows)
                }
                Err(_) => (
                    record(&[
                        ("final_cost", f64::INFINITY),
                        ("converged", 0.0),
                        ("residual_singlet_triplet", f64::INFINITY),
                        ("residual_balance", f64::INFINITY),
                        ("held_out_max_tangle", f64::INFINITY),
                    ]),
                    Vec::new(),
                ),
            };
            (TrialRecord { index, seed, values }, rows)
        })
        .collect();
    let table = per_trial.iter().flat_map(|(_, rows)| rows.clone()).collect();
    let trials: Vec<TrialRecord> = per_trial.into_iter().map(|(t, _)| t).collect();
    let summary = record(&[
        ("max_final_cost", max_of(&trials, "final_cost")),
        ("converged_trials", sum_of(&trials, "converged")),
        ("max_residual_singlet_triplet", max_of(&trials, "residual_singlet_triplet")),
        ("max_residual_balance", max_of(&trials, "residual_balance")),
        ("max_held_out_tangle", max_of(&trials, "held_out_max_tangle")),
    ]);
    let checks = vec![
        Check::new("max final cost", summary["max_final_cost"], "<=", config.target),
        Check::new(
            "max (delta3 - delta2) mod pi residual",
            summary["max_residual_singlet_triplet"],
            "<",
            1e-5,
        ),
        Check::new(
            "max (delta1 + delta4 - 2 delta2) mod 2pi residual",
            summary["max_residual_balance"],
            "<",
            1e-5,
        ),
        Check::new("max held-out output tangle", summary["max_held_out_tangle"], "<", 1e-8),
    ];
    Outcome {
        trials,
        summary,
        checks,
        table,
    }
}

/// Runs one scenario.
pub fn run(config: &ExperimentConfig) -> Result<Report, ConfigError> {
    config.validate()?;
    let start = Instant::now();
    let outcome = match config.scenario {
        Scenario::CriterionEquivalence => criterion_equivalence(config),
        Scenario::Counterexample => counterexample(config),
        Scenario::Reconstruction => reconstruction(config),
        Scenario::MixingClosedForm => mixing_closed_form(config),
        Scenario::IsingInvariance => ising_invariance(config),
        Scenario::Adaptation => adaptation(config),
    };
    let passed = outcome.checks.iter().all(|c| c.passed);
    Ok(Report {
        scenario: config.scenario,
        config: config.clone(),
        trials: outcome.trials,
        summary: outcome.summary,
        checks: outcome.checks,
        passed,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        table: outcome.table,
    })
}

/// Runs blind quantum source separation experiments.
#[derive(Debug, Parser)]
#[command(name = "bqss", version)]
pub struct Cli {
    /// Flat TOML file with the same keys as the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the structured JSON report here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write the per-trial or trajectory table (CSV) here.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

impl Cli {
    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let base = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        ExperimentConfig::resolve(base.overlay(self.settings.clone()))
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), ConfigError> {
    std::fs::write(path, text).map_err(|e| ConfigError(format!("cannot write {}: {e}", path.display())))
}

/// Exit statuses.
pub const EXIT_PASS: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

/// Parses arguments, runs, writes outputs and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    match execute(&cli) {
        Ok(report) => {
            print!("{}", report.summary_text());
            if report.passed {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("configuration error: {e}");
            EXIT_CONFIG
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Report, ConfigError> {
    let config = cli.resolve()?;
    let report = run(&config)?;
    if let Some(path) = &cli.output {
        write_file(path, &report.to_json())?;
    }
    if let Some(path) = &cli.table {
        write_file(path, &report.table_csv()?)?;
    }
    Ok(report)
}
