//! Dispatch from a checked config to the library operations.

use std::sync::Arc;

use serde_json::{json, Value};
use soficlab_core::microstate::{
    self, approximability_trace, dq_test, entropy_estimate, search_microstate, weak_containment_witness,
    Closeness, EntropyMode, MicrostateSampler, TraceReport,
};
use soficlab_core::model::{goodness, sequence_goodness, ModelKind};
use soficlab_core::oracle::SerialDistribution;
use soficlab_core::{kantorovich, Alphabet, CylinderOracle, FiniteModel, Microstate, SoficApproximationSeq};
use soficlab_core::{Error, WindowDistribution};

use crate::config::{ConfigError, CountMode, ExperimentConfig, Op, SamplerSpec, DEFAULT_BUDGET};

/// Failure of a run: bad input (exit 2) or a runtime failure (exit 3).
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Runtime(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

/// Library errors other than size overflows mean the inputs do not fit
/// together and are config errors; overflows are runtime failures.
fn building(field: &str) -> impl Fn(Error) -> RunError + '_ {
    move |e| match e {
        Error::SizeOverflow(_) => RunError::Runtime(format!("{field}: {e}")),
        _ => RunError::Config(ConfigError(format!("{field}: {e}"))),
    }
}

fn running(e: Error) -> RunError {
    building("run")(e)
}

/// Everything a config refers to, built and validated.
pub struct Prepared {
    pub config: ExperimentConfig,
    model: Option<Arc<FiniteModel>>,
    sequence: Option<SoficApproximationSeq>,
    oracle: Option<Arc<CylinderOracle>>,
    source: Option<Arc<CylinderOracle>>,
    distributions: Option<(WindowDistribution, WindowDistribution)>,
}

/// Checks fields and builds the referenced models, oracles and
/// distributions without running the operation.
pub fn prepare(mut config: ExperimentConfig, env_seed: Option<&str>) -> Result<(Prepared, Vec<String>), RunError> {
    let warnings = config.check()?;
    config.resolve_seed(env_seed)?;
    let group = config.acting_group();
    let model = config.model.as_ref().map(|s| s.build()).transpose().map_err(building("model"))?;
    let sequence = match &config.sequence {
        Some(specs) => {
            let models = specs
                .iter()
                .enumerate()
                .map(|(i, s)| s.build().map_err(building(&format!("sequence[{i}]"))))
                .collect::<Result<Vec<_>, _>>()?;
            Some(SoficApproximationSeq::new(models).map_err(building("sequence"))?)
        }
        None => None,
    };
    let oracle = config.oracle.as_ref().map(|s| s.build(&group)).transpose().map_err(building("oracle"))?;
    let source = config.source.as_ref().map(|s| s.build(&group)).transpose().map_err(building("source"))?;
    let distributions = match (&config.left, &config.right) {
        (Some(l), Some(r)) => Some(distribution_pair(l, r)?),
        _ => None,
    };
    Ok((Prepared { config, model, sequence, oracle, source, distributions }, warnings))
}

/// Distributions without an explicit alphabet share the union of the
/// characters appearing in either.
fn distribution_pair(l: &SerialDistribution, r: &SerialDistribution) -> Result<(WindowDistribution, WindowDistribution), RunError> {
    let (mut l, mut r) = (l.clone(), r.clone());
    if l.alphabet.is_none() && r.alphabet.is_none() {
        let mut chars: Vec<char> =
            l.mass.keys().chain(r.mass.keys()).flat_map(|k| k.chars()).filter(|c| !c.is_whitespace()).collect();
        chars.sort_unstable();
        chars.dedup();
        let labels: Vec<String> = chars.into_iter().map(String::from).collect();
        l.alphabet = Some(labels.clone());
        r.alphabet = Some(labels);
    }
    let d1 = WindowDistribution::from_serial(&l).map_err(building("left"))?;
    let d2 = WindowDistribution::from_serial(&r).map_err(building("right"))?;
    Ok((d1, d2))
}

/// Result payload, plus the trace report for CSV output when op = trace.
pub fn execute(p: &Prepared) -> Result<(Value, Option<TraceReport>), RunError> {
    let c = &p.config;
    let closeness = || Closeness::new(c.epsilon.expect("checked"), c.bound);
    let m = || c.m.expect("checked");
    let seed = || c.seed.expect("resolved");
    let budget = c.budget.unwrap_or(DEFAULT_BUDGET);
    let model = || p.model.as_ref().expect("checked");
    let oracle = || p.oracle.as_ref().expect("checked");

    let value = match c.op {
        Op::Goodness => to_value(goodness(model(), c.k.expect("checked")).map_err(building("k"))?),
        Op::SequenceGoodness => {
            let rows = sequence_goodness(p.sequence.as_ref().expect("checked"), c.k_max.expect("checked"))
                .map_err(building("k_max"))?;
            json!({ "rows": rows })
        }
        Op::Distance => {
            let (d1, d2) = p.distributions.as_ref().expect("checked");
            to_value(kantorovich(d1, d2).map_err(building("left/right"))?.summary())
        }
        Op::Fit => {
            let tau = Microstate::parse(oracle().alphabet().clone(), c.microstate.as_deref().expect("checked"))
                .map_err(building("microstate"))?;
            let cert = microstate::fit(model(), &tau, oracle(), m()).map_err(building("microstate"))?;
            let mut v = to_value(cert.summary());
            if let Some(eps) = c.epsilon {
                v["close"] = json!(Closeness::new(eps, c.bound).is_close(&cert));
            }
            v
        }
        Op::Search => {
            let out = search_microstate(model(), oracle(), m(), closeness(), budget, seed()).map_err(running)?;
            json!({
                "seed": seed(),
                "budget": budget,
                "microstate": out.microstate.format(),
                "fit": out.certificate.summary(),
                "close": out.close,
                "evaluations": out.evaluations,
                "history": out.history,
            })
        }
        Op::Entropy => {
            let mode = match c.mode {
                CountMode::Exact => EntropyMode::Exact,
                CountMode::Montecarlo => EntropyMode::Montecarlo { samples: c.samples.expect("checked"), seed: seed() },
            };
            to_value(entropy_estimate(model(), oracle(), m(), closeness(), mode).map_err(running)?)
        }
        Op::Trace => {
            let seq = p.sequence.as_ref().expect("checked");
            let report = approximability_trace(seq, oracle(), m(), closeness(), budget, seed()).map_err(running)?;
            let mut v = to_value(&report);
            v["seed"] = json!(seed());
            v["budget"] = json!(budget);
            return Ok((v, Some(report)));
        }
        Op::Dq => {
            let sampler = build_sampler(c.sampler.as_ref().expect("checked"), oracle().alphabet())?;
            let r = dq_test(model(), &sampler, oracle(), m(), closeness(), c.pairs.expect("checked"), seed())
                .map_err(running)?;
            to_value(r)
        }
        Op::ProductCheck => product_check(p)?,
        Op::Witness => {
            let w = c.window.expect("checked");
            let found = weak_containment_witness(
                oracle(),
                p.source.as_ref().expect("checked"),
                m(),
                closeness(),
                w,
                budget,
                seed(),
            )
            .map_err(building("window"))?;
            match found {
                Some(wit) => json!({
                    "found": true,
                    "window": w,
                    "code": wit.code.entries().into_iter().collect::<std::collections::BTreeMap<_, _>>(),
                    "fit": wit.certificate.summary(),
                    "evaluations": wit.evaluations,
                }),
                None => json!({ "found": false, "window": w, "budget": budget }),
            }
        }
    };
    Ok((value, None))
}

fn to_value<T: serde::Serialize>(x: T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn build_sampler(spec: &SamplerSpec, alphabet: &Alphabet) -> Result<MicrostateSampler, RunError> {
    let field = building("sampler");
    match spec {
        SamplerSpec::Uniform => Ok(MicrostateSampler::uniform(alphabet.clone())),
        SamplerSpec::Iid { base } => {
            let mut weights = vec![0.0; alphabet.len()];
            for (label, &w) in base {
                let s = alphabet
                    .index_of(label)
                    .ok_or_else(|| ConfigError(format!("sampler: symbol {label:?} not in {alphabet}")))?;
                weights[s as usize] = w;
            }
            MicrostateSampler::iid(alphabet.clone(), weights).map_err(field)
        }
        SamplerSpec::Explicit { states, weights } => {
            let states = states
                .iter()
                .map(|s| Microstate::parse(alphabet.clone(), s))
                .collect::<Result<Vec<_>, _>>()
                .map_err(&field)?;
            MicrostateSampler::explicit(states, weights.clone()).map_err(field)
        }
    }
}

fn product_check(p: &Prepared) -> Result<Value, RunError> {
    let c = &p.config;
    let model = p.model.as_ref().expect("checked");
    let ModelKind::Product(left, right) = model.kind() else {
        return Err(ConfigError("field `model` must be of kind product".into()).into());
    };
    let ab = Alphabet::new(["a", "b"]).expect("static alphabet");
    let mut draws = 0u64;
    let mut pick = |given: &Option<String>, n: usize| -> Result<Microstate, RunError> {
        match given {
            Some(text) => {
                let chars: std::collections::BTreeSet<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
                let alphabet = Alphabet::new(chars.into_iter().map(String::from)).map_err(building("microstate"))?;
                Microstate::parse(alphabet, text).map_err(building("microstate"))
            }
            None => {
                let seed = microstate::derive_seed(c.seed.expect("resolved"), draws);
                draws += 1;
                Ok(Microstate::uniform_random(ab.clone(), n, seed))
            }
        }
    };
    let t1 = pick(&c.left_microstate, left.size())?;
    let t2 = pick(&c.right_microstate, right.size())?;
    let holds = microstate::product_identity_check(left, right, &t1, &t2, c.m.expect("checked")).map_err(building("left_microstate/right_microstate"))?;
    Ok(json!({
        "holds": holds,
        "m": c.m,
        "left_microstate": t1.format(),
        "right_microstate": t2.format(),
    }))
}
