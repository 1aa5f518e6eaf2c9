//! Experiment configuration: schema, overrides, unknown-key detection and hashing.

use std::path::Path;

use becker_doring::analysis::perturbation::{SignPattern, TailWeight};
use becker_doring::dynamics::IntegratorConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Equilibrium,
    Simulate,
    Spectrum,
    Dissipativity,
    InterpCheck,
    LinearDecay,
    NonlinearDecay,
    Duhamel,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Equilibrium => "equilibrium",
            Kind::Simulate => "simulate",
            Kind::Spectrum => "spectrum",
            Kind::Dissipativity => "dissipativity",
            Kind::InterpCheck => "interp-check",
            Kind::LinearDecay => "linear-decay",
            Kind::NonlinearDecay => "nonlinear-decay",
            Kind::Duhamel => "duhamel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `a_i = i^alpha`, `b_i = a_i (z_s + q / i^(1 - mu))`.
    Penrose { alpha: f64, mu: f64, q: f64, z_s: f64 },
    /// `a_i = a`, `b_i = b` for every `i`.
    Constant { a: f64, b: f64 },
    /// Explicit sequences of length `N`.
    Custom { a: Vec<f64>, b: Vec<f64> },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Penrose { alpha: 0.5, mu: 0.5, q: 1.0, z_s: 2.0 }
    }
}

/// How the equilibrium is selected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSpec {
    /// `z` as a fraction of `z_s`.
    ZFraction(f64),
    Z(f64),
    Rho(f64),
}

impl Default for StateSpec {
    fn default() -> Self {
        StateSpec::ZFraction(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// Evenly spaced in `ln(1 + t)`.
    Log,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeGrid {
    pub t_max: f64,
    pub points: usize,
    pub spacing: GridKind,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { t_max: 100.0, points: 100, spacing: GridKind::Log }
    }
}

impl TimeGrid {
    /// Grid starting at `0`, with `points` further times up to `t_max`.
    pub fn times(&self) -> Vec<f64> {
        match self.spacing {
            GridKind::Log => becker_doring::analysis::fit::log_grid(self.t_max, self.points),
            GridKind::Linear => (0..=self.points).map(|j| self.t_max * j as f64 / self.points as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// Equilibrium plus the configured perturbation.
    Perturbed,
    /// All mass in monomers.
    Monomers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailSpec {
    pub p: f64,
    pub amplitude: f64,
    pub signs: SignPattern,
    pub weight: TailWeight,
}

impl Default for TailSpec {
    fn default() -> Self {
        Self { p: 7.0, amplitude: 1e-2, signs: SignPattern::Positive, weight: TailWeight::Concentration }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub k: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpSpec {
    pub r: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
    pub s_points: usize,
    pub quad_tol: f64,
}

impl Default for InterpSpec {
    fn default() -> Self {
        Self { r: vec![1.0, 2.0, 3.0], s_min: -30.0, s_max: 30.0, s_points: 61, quad_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub model: ModelSpec,
    #[serde(rename = "N")]
    pub n: usize,
    pub state: StateSpec,
    pub integrator: IntegratorConfig,
    pub grid: TimeGrid,
    pub initial: InitialKind,
    pub perturbation: TailSpec,
    /// Decay exponents; `k` also selects the weights of the dissipativity scan.
    pub pairs: Vec<Pair>,
    /// Amplitude ratio of the second run in the Duhamel experiment.
    pub halving: f64,
    pub samples: usize,
    pub seed: u64,
    pub interp: InterpSpec,
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: Kind::Equilibrium,
            model: ModelSpec::default(),
            n: 200,
            state: StateSpec::default(),
            integrator: IntegratorConfig::default(),
            grid: TimeGrid::default(),
            initial: InitialKind::Perturbed,
            perturbation: TailSpec::default(),
            pairs: vec![Pair { k: 3.0, m: 1.0 }],
            halving: 0.5,
            samples: 1000,
            seed: 0,
            interp: InterpSpec::default(),
            out: "out".into(),
        }
    }
}

impl ExperimentConfig {
    /// Read `path`, apply `KEY=VALUE` overrides and validate.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let raw: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {} is not valid JSON: {e}", path.display())))?;
        Self::from_value(raw, overrides)
    }

    pub fn from_value(mut raw: Value, overrides: &[String]) -> Result<Self, CliError> {
        if !raw.is_object() {
            return Err(CliError::Validation("config must be a JSON object".into()));
        }
        let defaults = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
        for ov in overrides {
            apply_override(&mut raw, &defaults, ov)?;
        }
        if raw.get("kind").is_none() {
            return Err(CliError::Validation("missing key: kind".into()));
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(raw.clone()).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        let resolved = serde_json::to_value(&cfg).expect("config serializes");
        let mut unknown = Vec::new();
        unknown_keys(&raw, &resolved, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::Validation(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.n < becker_doring::model::MIN_EXPERIMENT_SIZE {
            problems.push(format!("N = {} is below {}", self.n, becker_doring::model::MIN_EXPERIMENT_SIZE));
        }
        if let ModelSpec::Custom { a, b } = &self.model {
            if a.len() != self.n || b.len() != self.n {
                problems.push(format!("custom sequences have lengths {} and {}, N = {}", a.len(), b.len(), self.n));
            }
        }
        if !(self.grid.t_max > 0.0) || self.grid.points < 2 {
            problems.push("grid needs t_max > 0 and at least 2 points".into());
        }
        if !(self.integrator.rtol > 0.0 && self.integrator.atol > 0.0) {
            problems.push("integrator tolerances must be positive".into());
        }
        if !(self.halving > 0.0 && self.halving < 1.0) {
            problems.push(format!("halving = {} must lie in (0, 1)", self.halving));
        }
        if self.samples == 0 {
            problems.push("samples must be positive".into());
        }
        for p in &self.pairs {
            if !(p.m > 0.0 && p.k > p.m) {
                problems.push(format!("pair (k, m) = ({}, {}) needs k > m > 0", p.k, p.m));
            }
        }
        if self.pairs.is_empty() && matches!(self.kind, Kind::LinearDecay | Kind::NonlinearDecay) {
            problems.push("decay experiments need at least one (k, m) pair".into());
        }
        if self.interp.s_points < 2 || !(self.interp.s_min < self.interp.s_max) {
            problems.push("interp needs s_min < s_max and at least 2 points".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(problems.join("; ")))
        }
    }

    /// SHA-256 of the canonical JSON of the resolved config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&serde_json::to_value(self).expect("config serializes")).expect("value serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Set a dotted key to a JSON-parsed value, or to the raw string if it does not parse.
/// Sections absent from the file start from their defaults.
fn apply_override(raw: &mut Value, defaults: &Value, spec: &str) -> Result<(), CliError> {
    let (key, value) =
        spec.split_once('=').ok_or_else(|| CliError::Validation(format!("override {spec:?} is not KEY=VALUE")))?;
    if key.is_empty() {
        return Err(CliError::Validation(format!("override {spec:?} has an empty key")));
    }
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let mut node = raw;
    let mut fallback = Some(defaults);
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        fallback = fallback.and_then(|d| d.get(*part));
        let obj = node.as_object_mut().ok_or_else(|| CliError::Validation(format!("override {key}: {part} is not an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| fallback.cloned().unwrap_or_else(|| Value::Object(Map::new())));
    }
    let obj = node.as_object_mut().ok_or_else(|| CliError::Validation(format!("override {key}: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Keys of `raw` with no counterpart in the re-serialized config.
fn unknown_keys(raw: &Value, resolved: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(r), Value::Object(s)) = (raw, resolved) {
        for (key, value) in r {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match s.get(key) {
                Some(inner) => unknown_keys(value, inner, &path, out),
                None => out.push(path),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = ExperimentConfig::from_value(json!({"kind": "spectrum"}), &[]).unwrap();
        assert_eq!(cfg.kind, Kind::Spectrum);
        assert_eq!(cfg.n, 200);
        assert_eq!(cfg.model, ModelSpec::default());
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = ExperimentConfig::from_value(json!({"kind": "spectrum", "foo": 1, "grid": {"bar": 2}}), &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("foo") && msg.contains("grid.bar"), "{msg}");
    }

    #[test]
    fn overrides_are_dotted_and_typed() {
        let cfg = ExperimentConfig::from_value(
            json!({"kind": "spectrum"}),
            &["N=800".into(), "integrator.rtol=1e-10".into(), "model.alpha=0.7".into()],
        )
        .unwrap();
        assert_eq!(cfg.n, 800);
        assert_eq!(cfg.integrator.rtol, 1e-10);
        assert!(matches!(cfg.model, ModelSpec::Penrose { alpha, .. } if alpha == 0.7));
        assert!(ExperimentConfig::from_value(json!({"kind": "spectrum"}), &["N".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_value(json!({"kind": "spectrum"}), &[]).unwrap();
        let b = ExperimentConfig::from_value(json!({"kind": "spectrum", "N": 200}), &[]).unwrap();
        let c = ExperimentConfig::from_value(json!({"kind": "spectrum", "N": 201}), &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_collects_problems() {
        let err = ExperimentConfig::from_value(json!({"kind": "linear-decay", "N": 4, "pairs": []}), &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("N = 4") && msg.contains("pair"), "{msg}");
    }
}
