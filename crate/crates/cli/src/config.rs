//! Experiment configs: parsing, per-operation checks and seed resolution.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use soficlab_core::microstate::Bound;
use soficlab_core::oracle::SerialDistribution;
use soficlab_core::schema::{ModelSpec, OracleSpec};
use soficlab_core::Group;

/// Environment variable consulted when a randomized op has no `seed`.
pub const SEED_ENV: &str = "SOFICLAB_SEED";

pub const DEFAULT_BUDGET: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Goodness,
    SequenceGoodness,
    Distance,
    Fit,
    Search,
    Entropy,
    Trace,
    Dq,
    ProductCheck,
    Witness,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Goodness => "goodness",
            Op::SequenceGoodness => "sequence_goodness",
            Op::Distance => "distance",
            Op::Fit => "fit",
            Op::Search => "search",
            Op::Entropy => "entropy",
            Op::Trace => "trace",
            Op::Dq => "dq",
            Op::ProductCheck => "product_check",
            Op::Witness => "witness",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    #[default]
    Exact,
    Montecarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    /// Uniform labels over the oracle alphabet.
    Uniform,
    Iid { base: BTreeMap<String, f64> },
    Explicit { states: Vec<String>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub op: Op,
    #[serde(default)]
    pub group: Option<Group>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub sequence: Option<Vec<ModelSpec>>,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    /// The oracle searched over by `witness` (the target is `oracle`).
    #[serde(default)]
    pub source: Option<OracleSpec>,
    #[serde(default)]
    pub left: Option<SerialDistribution>,
    #[serde(default)]
    pub right: Option<SerialDistribution>,
    #[serde(default)]
    pub microstate: Option<String>,
    #[serde(default)]
    pub left_microstate: Option<String>,
    #[serde(default)]
    pub right_microstate: Option<String>,
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub bound: Bound,
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub pairs: Option<u64>,
    #[serde(default)]
    pub mode: CountMode,
    #[serde(default)]
    pub samples: Option<u64>,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub csv: Option<String>,
}

/// A config problem, reported with exit status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn missing(op: Op, field: &str) -> ConfigError {
    ConfigError(format!("op {:?} requires field `{field}`", op.name()))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
    }

    pub fn is_randomized(&self) -> bool {
        match self.op {
            Op::Search | Op::Trace | Op::Dq | Op::Witness => true,
            Op::Entropy => self.mode == CountMode::Montecarlo,
            Op::ProductCheck => self.left_microstate.is_none() || self.right_microstate.is_none(),
            _ => false,
        }
    }

    /// Config seed, else `SOFICLAB_SEED`, for randomized ops.
    pub fn resolve_seed(&mut self, env_seed: Option<&str>) -> Result<(), ConfigError> {
        if self.seed.is_some() || !self.is_randomized() {
            return Ok(());
        }
        match env_seed {
            Some(s) => {
                let seed = s
                    .trim()
                    .parse()
                    .map_err(|_| ConfigError(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
                self.seed = Some(seed);
                Ok(())
            }
            None => Err(ConfigError(format!(
                "op {:?} is randomized and needs field `seed` (or {SEED_ENV})",
                self.op.name()
            ))),
        }
    }

    pub fn require<'a, T>(&'a self, value: &'a Option<T>, field: &str) -> Result<&'a T, ConfigError> {
        value.as_ref().ok_or_else(|| missing(self.op, field))
    }

    /// Field presence per op, numeric ranges, and the group declared by
    /// `group` against the one implied by the models.
    pub fn check(&self) -> Result<Vec<String>, ConfigError> {
        let op = self.op;
        let need = |present: bool, field: &str| if present { Ok(()) } else { Err(missing(op, field)) };
        let mut warnings = Vec::new();
        match op {
            Op::Goodness => {
                need(self.model.is_some(), "model")?;
                need(self.k.is_some(), "k")?;
            }
            Op::SequenceGoodness => {
                need(self.sequence.is_some(), "sequence")?;
                need(self.k_max.is_some(), "k_max")?;
            }
            Op::Distance => {
                need(self.left.is_some(), "left")?;
                need(self.right.is_some(), "right")?;
            }
            Op::Fit => {
                need(self.model.is_some(), "model")?;
                need(self.oracle.is_some(), "oracle")?;
                need(self.microstate.is_some(), "microstate")?;
                need(self.m.is_some(), "m")?;
            }
            Op::Search | Op::Entropy | Op::Dq => {
                need(self.model.is_some(), "model")?;
                need(self.oracle.is_some(), "oracle")?;
            }
            Op::Trace => {
                need(self.sequence.is_some(), "sequence")?;
                need(self.oracle.is_some(), "oracle")?;
            }
            Op::ProductCheck => {
                need(matches!(self.model, Some(ModelSpec::Product { .. })), "model (of kind product)")?;
                need(self.m.is_some(), "m")?;
            }
            Op::Witness => {
                need(self.oracle.is_some(), "oracle")?;
                need(self.source.is_some(), "source")?;
                need(self.window.is_some(), "window")?;
            }
        }
        if matches!(op, Op::Search | Op::Entropy | Op::Dq | Op::Trace | Op::Witness) {
            need(self.m.is_some(), "m")?;
            need(self.epsilon.is_some(), "epsilon")?;
        }
        if op == Op::Dq {
            need(self.pairs.is_some(), "pairs")?;
            need(self.sampler.is_some(), "sampler")?;
        }
        if op == Op::Entropy && self.mode == CountMode::Montecarlo {
            need(self.samples.is_some(), "samples")?;
        }
        if self.m == Some(0) {
            return Err(ConfigError("field `m` must be >= 1".into()));
        }
        if self.budget == Some(0) {
            return Err(ConfigError("field `budget` must be >= 1".into()));
        }
        if self.pairs == Some(0) {
            return Err(ConfigError("field `pairs` must be >= 1".into()));
        }
        if let Some(eps) = self.epsilon {
            if !eps.is_finite() || eps < 0.0 {
                return Err(ConfigError("field `epsilon` must be a finite number >= 0".into()));
            }
            if let Some(m) = self.m {
                if eps <= 1.0 / (m + 1) as f64 {
                    warnings.push(format!(
                        "epsilon {eps} <= 1/(m+1) = {:.6}: unattainable for the sound upper bound l_m + 1/(m+1){}",
                        1.0 / (m + 1) as f64,
                        if self.bound == Bound::Sound { "; no microstate can pass" } else { "" }
                    ));
                }
            }
        }
        if self.csv.is_some() && op != Op::Trace {
            return Err(ConfigError("field `csv` only applies to op \"trace\"".into()));
        }
        if let Some(declared) = &self.group {
            let implied = self.model.iter().chain(self.sequence.iter().flatten()).map(ModelSpec::group);
            for g in implied {
                if &g != declared {
                    return Err(ConfigError(format!("field `group` is {declared} but a model acts by {g}")));
                }
            }
        }
        Ok(warnings)
    }

    /// The acting group: declared, else implied by the model or sequence,
    /// else the integers.
    pub fn acting_group(&self) -> Group {
        if let Some(g) = &self.group {
            return g.clone();
        }
        self.model
            .as_ref()
            .or_else(|| self.sequence.as_ref().and_then(|s| s.first()))
            .map(ModelSpec::group)
            .unwrap_or_else(Group::integers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_field_is_named() {
        let err = ExperimentConfig::parse(r#"{"op":"goodness","modle":{"kind":"cyclic","n":4},"k":2}"#).unwrap_err();
        assert!(err.0.contains("modle"), "{err}");
    }

    #[test]
    fn missing_field_is_named() {
        let c = ExperimentConfig::parse(r#"{"op":"goodness","model":{"kind":"cyclic","n":4}}"#).unwrap();
        assert!(c.check().unwrap_err().0.contains("`k`"));
    }

    #[test]
    fn seed_resolution() {
        let text = r#"{"op":"search","model":{"kind":"cyclic","n":4},"oracle":{"kind":"bernoulli","base":{"a":1.0}},"m":1,"epsilon":0.5}"#;
        let mut c = ExperimentConfig::parse(text).unwrap();
        assert!(c.clone().resolve_seed(None).unwrap_err().0.contains("seed"));
        c.resolve_seed(Some("17")).unwrap();
        assert_eq!(c.seed, Some(17));
        let mut seeded = ExperimentConfig::parse(&text.replace("\"m\":1", "\"m\":1,\"seed\":3")).unwrap();
        seeded.resolve_seed(Some("17")).unwrap();
        assert_eq!(seeded.seed, Some(3));
    }

    #[test]
    fn small_epsilon_warns() {
        let c = ExperimentConfig::parse(
            r#"{"op":"entropy","model":{"kind":"cyclic","n":4},"oracle":{"kind":"bernoulli","base":{"a":1.0}},"m":1,"epsilon":0.1}"#,
        )
        .unwrap();
        let w = c.check().unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("unattainable"));
    }

    #[test]
    fn declared_group_must_match() {
        let c = ExperimentConfig::parse(
            r#"{"op":"goodness","group":{"family":"free","rank":2},"model":{"kind":"cyclic","n":4},"k":2}"#,
        )
        .unwrap();
        assert!(c.check().unwrap_err().0.contains("group"));
    }
}
