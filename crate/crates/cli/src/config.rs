//! Experiment configuration: a TOML file with sections, then the
//! PAMSHIFT_OUT environment variable, then command-line flags. Every knob has
//! a default and the fully resolved value is echoed into the report.

use std::path::Path;

use pamshift::feynman_kac::Mode;
use pamshift::fields::Mollifier;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Configuration failures; the CLI exits with status 2 on any of them.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub potential: PotentialSection,
    pub initial: InitialSection,
    pub solver: SolverSection,
    pub study: StudySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Master seed; every random object derives its stream from it.
    pub seed: u64,
    pub out: String,
    /// Worker threads, 0 = all cores.
    pub threads: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "pamshift".into(),
            seed: 1,
            out: "pamshift-out".into(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    pub hurst: f64,
    /// Sobolev index: V in H^{-eta}.
    pub eta: f64,
    /// Number of spatial derivatives in the Hurst budget.
    pub order: u32,
    /// Evaluation time.
    pub t: f64,
    /// Path horizon; 0 means t.
    pub horizon: f64,
    /// Dyadic level of the time grid.
    pub level: u32,
    /// Grid nodes per axis.
    pub nodes: usize,
    pub side: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d: 1,
            hurst: 0.2,
            eta: 0.75,
            order: 0,
            t: 0.1,
            horizon: 0.0,
            level: 10,
            nodes: 256,
            side: 8.0,
        }
    }
}

impl ModelSection {
    pub fn horizon(&self) -> f64 {
        if self.horizon > 0.0 {
            self.horizon
        } else {
            self.t
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Zero,
    Constant,
    /// cos(2 pi x_1).
    Cos1,
    WhiteNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: PotentialKind,
    /// Level of the constant potential.
    pub value: f64,
    /// Mollification width; 0 leaves the potential rough.
    pub epsilon: f64,
    pub mollifier: Mollifier,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self {
            kind: PotentialKind::WhiteNoise,
            value: 1.0,
            epsilon: 0.1,
            mollifier: Mollifier::GaussianMultiplier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    /// cos(2 pi x_1).
    Cos1,
    One,
    OnePlusCos1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub f: InitialKind,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { f: InitialKind::Cos1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub paths: usize,
    pub mode: Mode,
    pub substeps: usize,
    pub antithetic: bool,
    /// Exponent slack of the sewing audits.
    pub delta: f64,
    /// Start points along axis 0.
    pub x: Vec<f64>,
    /// Standard errors allowed between estimate and reference.
    pub sigmas: f64,
    /// solve only: average over study.realisations shifts instead of
    /// fixing one. Exploratory; no criterion uses it.
    pub annealed: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            paths: 10_000,
            mode: Mode::Sewing,
            substeps: 32,
            antithetic: true,
            delta: 0.05,
            x: vec![0.0, 0.25],
            sigmas: 3.0,
            annealed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    /// Independent shift (or path) realisations.
    pub realisations: usize,
    pub lambda: f64,
    pub gamma_min: f64,
    /// "resolved" (|xi| <= dt^-H) or "full".
    pub band: String,
    pub scales: Vec<u32>,
    pub starts: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub probe_half_width: f64,
    pub derivative_order: u32,
    pub h: f64,
    /// Time level and node count of the coarse solution grid.
    pub coarse_level: u32,
    pub coarse_nodes: usize,
    pub batches: usize,
    pub times: Vec<f64>,
    /// Shift level of the Monte Carlo part of the weak-residual study.
    pub fk_level: u32,
    /// Refinement ladder: (level, nodes) pairs as two lists.
    pub levels: Vec<u32>,
    pub nodes: Vec<usize>,
    pub gamma: f64,
    pub a: f64,
    /// Generic absolute or relative tolerance of the study's main check.
    pub tolerance: f64,
    /// Largest admissible ratio under refinement.
    pub ratio: f64,
    /// Relative tolerance against closed forms.
    pub rel_tolerance: f64,
    /// Largest admissible max / min spread of normalised gaps.
    pub spread: f64,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            realisations: 20,
            lambda: 2.0,
            gamma_min: 0.65,
            band: "resolved".into(),
            scales: vec![2, 8],
            starts: vec![0.0, 0.25, 0.5],
            epsilons: (2..=7).map(|j| 2f64.powi(-j)).collect(),
            probe_half_width: 1.0,
            derivative_order: 1,
            h: 2f64.powi(-7),
            coarse_level: 3,
            coarse_nodes: 64,
            batches: 10,
            times: vec![0.05, 0.1],
            fk_level: 10,
            levels: vec![8, 10],
            nodes: vec![],
            gamma: 0.4,
            a: 1.0,
            tolerance: 1e-3,
            ratio: 0.7,
            rel_tolerance: 0.05,
            spread: 10.0,
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `section.key=value` pairs, TOML-typed values (bare words are strings).
    pub set: Vec<String>,
    pub eta: Option<f64>,
    pub d: Option<usize>,
    pub n: Option<u32>,
    pub potential: Option<String>,
    pub f: Option<String>,
    pub t: Option<f64>,
    pub paths: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<String>,
    pub seed: Option<u64>,
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), ConfigError> {
    let (section, field) = key
        .split_once('.')
        .ok_or_else(|| ConfigError(format!("override `{key}`: expected section.key")))?;
    let entry = table.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
    match entry {
        Value::Table(t) => {
            t.insert(field.to_string(), value);
            Ok(())
        }
        _ => Err(ConfigError(format!("override `{key}`: `{section}` is not a section"))),
    }
}

impl ExperimentConfig {
    /// Resolve file, environment and flags, in increasing precedence.
    pub fn load(path: Option<&Path>, env_out: Option<String>, o: &Overrides) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                // Deserialise the file alone first: its errors carry line and column.
                toml::from_str::<ExperimentConfig>(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                text.parse::<Table>().map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        if let Some(out) = env_out {
            set_path(&mut table, "experiment.out", Value::String(out))?;
        }
        let mut flags: Vec<(&str, Value)> = Vec::new();
        if let Some(v) = o.eta {
            flags.push(("model.eta", Value::Float(v)));
        }
        if let Some(v) = o.d {
            flags.push(("model.d", Value::Integer(v as i64)));
        }
        if let Some(v) = o.n {
            flags.push(("model.order", Value::Integer(v as i64)));
        }
        if let Some(v) = &o.potential {
            flags.push(("potential.kind", Value::String(v.clone())));
        }
        if let Some(v) = &o.f {
            flags.push(("initial.f", Value::String(v.clone())));
        }
        if let Some(v) = o.t {
            flags.push(("model.t", Value::Float(v)));
        }
        if let Some(v) = o.paths {
            flags.push(("solver.paths", Value::Integer(v as i64)));
        }
        if let Some(v) = o.threads {
            flags.push(("experiment.threads", Value::Integer(v as i64)));
        }
        if let Some(v) = &o.out {
            flags.push(("experiment.out", Value::String(v.clone())));
        }
        if let Some(v) = o.seed {
            flags.push(("experiment.seed", Value::Integer(v as i64)));
        }
        for s in &o.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override `{s}`: expected section.key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        for (k, v) in flags {
            set_path(&mut table, k, v)?;
        }
        // Round trip through text so type errors point at the offending key.
        let merged = toml::to_string(&table).map_err(|e| ConfigError(format!("after overrides: {e}")))?;
        let cfg: ExperimentConfig =
            toml::from_str(&merged).map_err(|e| ConfigError(format!("after overrides:\n{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        let bad = |field: &str, why: &str| Err(ConfigError(format!("field `{field}`: {why}")));
        if m.d == 0 || m.d > 3 {
            return bad("model.d", "must be 1, 2 or 3");
        }
        if !(m.hurst > 0.0 && m.hurst < 1.0) {
            return bad("model.hurst", "must lie in (0, 1)");
        }
        if !(m.t > 0.0) || m.horizon() < m.t {
            return bad("model.t", "must be positive and at most the horizon");
        }
        if !(m.side > 0.0) {
            return bad("model.side", "must be positive");
        }
        if m.nodes < 2 {
            return bad("model.nodes", "needs at least 2 nodes");
        }
        if self.solver.paths == 0 {
            return bad("solver.paths", "must be positive");
        }
        if self.solver.x.is_empty() {
            return bad("solver.x", "needs at least one start point");
        }
        if !matches!(self.study.band.as_str(), "resolved" | "full") {
            return bad("study.band", "must be \"resolved\" or \"full\"");
        }
        if self.study.levels.len() != self.study.nodes.len() && !self.study.nodes.is_empty() {
            return bad("study.nodes", "must be empty or as long as study.levels");
        }
        if self.study.scales.len() != 2 || self.study.scales[0] > self.study.scales[1] {
            return bad("study.scales", "must be [first, last] with first <= last");
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serialises")
    }
}
