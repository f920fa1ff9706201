//! JSON forms of models and oracles.
//!
//! ```json
//! {"kind":"free_random","rank":2,"n":500,"seed":7}
//! {"kind":"block_code","parent":{"kind":"bernoulli","base":{"a":0.5,"b":0.5}},
//!  "window":2,"code":{"aa":"x","ab":"y","ba":"y","bb":"x"}}
//! ```
//!
//! Unknown fields are rejected so typos surface as errors naming the field.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::group::Group;
use crate::model::{FiniteModel, Permutation};
use crate::oracle::{Alphabet, BlockCode, CylinderOracle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Cyclic {
        n: usize,
    },
    Lattice {
        dim: usize,
        side: usize,
    },
    FreeRandom {
        rank: usize,
        n: usize,
        seed: u64,
    },
    Product {
        left: Box<ModelSpec>,
        right: Box<ModelSpec>,
    },
    /// Elements are written in the group's text form; `n` may be omitted
    /// when at least one permutation is listed.
    Table {
        group: Group,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
        #[serde(default)]
        perms: BTreeMap<String, Vec<u32>>,
    },
}

impl ModelSpec {
    pub fn group(&self) -> Group {
        match self {
            ModelSpec::Cyclic { .. } => Group::integers(),
            ModelSpec::Lattice { dim, .. } => Group::lattice(*dim),
            ModelSpec::FreeRandom { rank, .. } => Group::free(*rank),
            ModelSpec::Product { left, .. } => left.group(),
            ModelSpec::Table { group, .. } => group.clone(),
        }
    }

    pub fn build(&self) -> Result<Arc<FiniteModel>> {
        let model = match self {
            ModelSpec::Cyclic { n } => FiniteModel::cyclic(*n)?,
            ModelSpec::Lattice { dim, side } => FiniteModel::lattice(*dim, *side)?,
            ModelSpec::FreeRandom { rank, n, seed } => FiniteModel::free_random(*rank, *n, *seed)?,
            ModelSpec::Product { left, right } => FiniteModel::product(left.build()?, right.build()?)?,
            ModelSpec::Table { group, n, perms } => {
                group.validate()?;
                let n = match (n, perms.values().next()) {
                    (Some(n), _) => *n,
                    (None, Some(p)) => p.len(),
                    (None, None) => return invalid("table model needs n or at least one permutation"),
                };
                let mut table = HashMap::new();
                for (key, images) in perms {
                    let g = group.parse(key)?;
                    let p = Permutation::new(images.clone())
                        .map_err(|e| Error::Invalid(format!("perms[{key:?}]: {e}")))?;
                    if table.insert(g, p).is_some() {
                        return invalid(format!("perms lists the element {key:?} twice"));
                    }
                }
                FiniteModel::table(group.clone(), n, table)?
            }
        };
        Ok(Arc::new(model))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    /// The alphabet is the sorted key set of `base`.
    Bernoulli { base: BTreeMap<String, f64> },
    /// Point mass at `symbol`; the alphabet defaults to `[symbol]`.
    Dirac {
        symbol: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alphabet: Option<Vec<String>>,
    },
    /// States default to a, b, c, … in row order.
    Markov {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        states: Option<Vec<String>>,
        transition: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stationary: Option<Vec<f64>>,
    },
    /// Output alphabet defaults to the sorted set of code values.
    BlockCode {
        parent: Box<OracleSpec>,
        window: usize,
        code: BTreeMap<String, String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alphabet: Option<Vec<String>>,
    },
    Product {
        left: Box<OracleSpec>,
        right: Box<OracleSpec>,
    },
}

impl OracleSpec {
    pub fn build(&self, group: &Group) -> Result<Arc<CylinderOracle>> {
        let oracle = match self {
            OracleSpec::Bernoulli { base } => {
                let alphabet = Alphabet::new(base.keys().cloned())?;
                CylinderOracle::bernoulli(group.clone(), alphabet, base.values().copied().collect())?
            }
            OracleSpec::Dirac { symbol, alphabet } => {
                let alphabet = Alphabet::new(alphabet.clone().unwrap_or_else(|| vec![symbol.clone()]))?;
                let s = alphabet
                    .index_of(symbol)
                    .ok_or_else(|| Error::Invalid(format!("dirac symbol {symbol:?} not in {alphabet}")))?;
                CylinderOracle::dirac(group.clone(), alphabet, s)?
            }
            OracleSpec::Markov { states, transition, stationary } => {
                let states = match states {
                    Some(s) => s.clone(),
                    None => default_states(transition.len())?,
                };
                CylinderOracle::markov(group.clone(), Alphabet::new(states)?, transition.clone(), stationary.clone())?
            }
            OracleSpec::BlockCode { parent, window, code, alphabet } => {
                let parent = parent.build(group)?;
                let output = match alphabet {
                    Some(a) => Alphabet::new(a.clone())?,
                    None => Alphabet::new(code.values().cloned().collect::<BTreeSet<_>>())?,
                };
                let code = BlockCode::from_entries(
                    parent.alphabet().clone(),
                    output,
                    *window,
                    code.iter().map(|(k, v)| (k.as_str(), v.as_str())),
                )?;
                CylinderOracle::block_code(parent, code)?
            }
            OracleSpec::Product { left, right } => CylinderOracle::product(left.build(group)?, right.build(group)?)?,
        };
        Ok(Arc::new(oracle))
    }
}

fn default_states(k: usize) -> Result<Vec<String>> {
    if k == 0 || k > 26 {
        return invalid("markov chains without explicit states need 1..=26 rows");
    }
    Ok((b'a'..b'a' + k as u8).map(|c| (c as char).to_string()).collect())
}
