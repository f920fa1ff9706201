//! Microstates: labelings τ: V → A pushed through a model to empirical
//! distributions on A^{W_m}, compared with target oracles, searched, counted
//! and tensored.
//!
//! The empirical distribution of τ under σ is the uniform average over v of
//! the Dirac mass at θ_v(τ) = (τ(σ^{γ_1} v), …, τ(σ^{γ_m} v)). Its masses are
//! multiples of 1/|V| and are kept as integer counts wherever exactness
//! matters.
//!
//! Randomized loops (Monte-Carlo counting, pair sampling) split their work
//! into fixed chunks and give chunk c the ChaCha8 stream c of the run seed,
//! so results do not depend on the number of worker threads.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, usage, Error, Result};
use crate::model::{FiniteModel, Permutation};
use crate::oracle::{decode, Alphabet, BlockCode, CylinderOracle, ObservableTower, Pattern, Symbol, SymbolMap, WindowDistribution};
use crate::transport::{kantorovich, DistanceCertificate};

/// Slack on ε-threshold comparisons; values within it of ε count as close.
pub const CLOSE_TOL: f64 = 1e-9;

/// Exhaustive counting is limited to |A|^|V| ≤ 2^24 microstates.
pub const EXACT_LIMIT: u64 = 1 << 24;

const CHUNK: u64 = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Microstate {
    alphabet: Alphabet,
    labels: Vec<Symbol>,
}

impl Microstate {
    pub fn new(alphabet: Alphabet, labels: Vec<Symbol>) -> Result<Self> {
        if labels.iter().any(|&s| s as usize >= alphabet.len()) {
            return invalid("microstate label outside the alphabet");
        }
        Ok(Microstate { alphabet, labels })
    }

    pub fn constant(alphabet: Alphabet, symbol: Symbol, n: usize) -> Result<Self> {
        Self::new(alphabet, vec![symbol; n])
    }

    /// Labels drawn uniformly and independently from a ChaCha8 stream.
    pub fn uniform_random(alphabet: Alphabet, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = alphabet.len() as Symbol;
        let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
        Microstate { alphabet, labels }
    }

    /// Parses one label per vertex, e.g. `"abab"` or `"(a,x) (b,y)"`.
    pub fn parse(alphabet: Alphabet, text: &str) -> Result<Self> {
        let labels = alphabet.parse_pattern(text)?;
        Self::new(alphabet, labels)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn labels(&self) -> &[Symbol] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn format(&self) -> String {
        self.alphabet.format_pattern(&self.labels)
    }

    /// Number of vertices where the labels differ.
    pub fn disagreements(&self, other: &Microstate) -> Result<usize> {
        if self.len() != other.len() || self.alphabet != other.alphabet {
            return usage("microstates over different vertex sets or alphabets");
        }
        Ok(self.labels.iter().zip(&other.labels).filter(|(a, b)| a != b).count())
    }
}

fn check_fits(model: &FiniteModel, tau: &Microstate) -> Result<()> {
    if tau.len() != model.size() {
        return usage(format!("microstate has {} labels, model has {} vertices", tau.len(), model.size()));
    }
    Ok(())
}

/// θ_v(τ) on the first `m` enumerated elements.
pub fn theta(model: &FiniteModel, tau: &Microstate, v: usize, m: usize) -> Result<Pattern> {
    check_fits(model, tau)?;
    if v >= model.size() {
        return usage(format!("vertex {v} outside 0..{}", model.size()));
    }
    Ok(model.window(m)?.iter().map(|p| tau.labels[p.apply(v)]).collect())
}

/// Empirical distribution as exact pattern counts over |V| vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalCounts {
    pub m: usize,
    pub vertices: u64,
    pub alphabet: Alphabet,
    pub counts: BTreeMap<Pattern, u64>,
}

impl EmpiricalCounts {
    pub fn to_distribution(&self) -> Result<WindowDistribution> {
        WindowDistribution::from_counts(self.m, self.alphabet.clone(), &self.counts)
    }

    /// Exact pushforward under a symbol map.
    pub fn pushforward(&self, map: &SymbolMap) -> Result<EmpiricalCounts> {
        if map.from_alphabet() != &self.alphabet {
            return usage("map domain differs from the empirical alphabet");
        }
        let mut counts = BTreeMap::new();
        for (p, &c) in &self.counts {
            *counts.entry(map.apply_pattern(p)).or_insert(0) += c;
        }
        Ok(EmpiricalCounts { m: self.m, vertices: self.vertices, alphabet: map.to_alphabet().clone(), counts })
    }
}

pub fn empirical_counts(model: &FiniteModel, tau: &Microstate, m: usize) -> Result<EmpiricalCounts> {
    check_fits(model, tau)?;
    let window = model.window(m)?;
    let mut counts = BTreeMap::new();
    let mut pattern = vec![0 as Symbol; m];
    for v in 0..model.size() {
        for (slot, p) in pattern.iter_mut().zip(&window) {
            *slot = tau.labels[p.apply(v)];
        }
        *counts.entry(pattern.clone()).or_insert(0u64) += 1;
    }
    Ok(EmpiricalCounts { m, vertices: model.size() as u64, alphabet: tau.alphabet.clone(), counts })
}

/// Θ_σ(δ_τ) restricted to the window W_m.
pub fn empirical(model: &FiniteModel, tau: &Microstate, m: usize) -> Result<WindowDistribution> {
    empirical_counts(model, tau, m)?.to_distribution()
}

/// Which end of the truncation sandwich ε-closeness is judged on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// The window value l_m.
    #[default]
    Window,
    /// l_m + 1/(m+1), an upper bound for the untruncated distance.
    Sound,
}

/// The predicate "fit < ε" on a distance certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Closeness {
    pub epsilon: f64,
    #[serde(default)]
    pub bound: Bound,
}

impl Closeness {
    pub fn new(epsilon: f64, bound: Bound) -> Self {
        Closeness { epsilon, bound }
    }

    pub fn window(epsilon: f64) -> Self {
        Self::new(epsilon, Bound::Window)
    }

    pub fn judged(&self, cert: &DistanceCertificate) -> f64 {
        match self.bound {
            Bound::Window => cert.value,
            Bound::Sound => cert.upper,
        }
    }

    pub fn is_close(&self, cert: &DistanceCertificate) -> bool {
        self.judged(cert) < self.epsilon + CLOSE_TOL
    }

    /// Whether any certificate at window `m` can pass.
    pub fn attainable(&self, m: usize) -> bool {
        match self.bound {
            Bound::Window => self.epsilon > 0.0,
            Bound::Sound => self.epsilon > 1.0 / (m + 1) as f64,
        }
    }
}

fn check_target(model: &FiniteModel, alphabet: &Alphabet, oracle: &CylinderOracle) -> Result<()> {
    if model.group() != oracle.group() {
        return usage(format!("model of {} against an oracle over {}", model.group(), oracle.group()));
    }
    if alphabet != oracle.alphabet() {
        return usage(format!("microstate alphabet {alphabet} differs from oracle alphabet {}", oracle.alphabet()));
    }
    Ok(())
}

/// Kantorovich distance between Θ_σ(δ_τ) and the oracle on W_m.
pub fn fit(model: &FiniteModel, tau: &Microstate, oracle: &CylinderOracle, m: usize) -> Result<DistanceCertificate> {
    check_target(model, &tau.alphabet, oracle)?;
    kantorovich(&empirical(model, tau, m)?, &*oracle.marginal(m)?)
}

/// Deterministic sub-seed for task `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

fn draw(cumulative: &[f64], rng: &mut impl Rng) -> Symbol {
    let u: f64 = rng.random::<f64>() * cumulative.last().copied().unwrap_or(1.0);
    cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1) as Symbol
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

/// Pattern counts with patterns packed as base-|A| integers (first window
/// coordinate most significant, so integer order is lexicographic order).
struct PackedEvaluator {
    window: Vec<Vec<u32>>,
    base: u64,
    m: usize,
    alphabet: Alphabet,
    target: Arc<WindowDistribution>,
    closeness: Closeness,
}

type PackedCounts = Vec<(u64, u32)>;

impl PackedEvaluator {
    fn new(model: &FiniteModel, alphabet: &Alphabet, oracle: &CylinderOracle, m: usize, closeness: Closeness) -> Result<Self> {
        check_target(model, alphabet, oracle)?;
        let base = alphabet.len() as u64;
        if base.checked_pow(m as u32).is_none_or(|x| x > u64::MAX / 2) {
            return Err(Error::SizeOverflow(format!("{base}^{m} window patterns")));
        }
        let window = model.window(m)?.iter().map(|p| p.images().to_vec()).collect();
        Ok(PackedEvaluator { window, base, m, alphabet: alphabet.clone(), target: oracle.marginal(m)?, closeness })
    }

    fn counts(&self, labels: &[Symbol], scratch: &mut HashMap<u64, u32>) -> PackedCounts {
        scratch.clear();
        for v in 0..labels.len() {
            let code = self.window.iter().fold(0u64, |acc, img| acc * self.base + labels[img[v] as usize] as u64);
            *scratch.entry(code).or_insert(0) += 1;
        }
        let mut out: PackedCounts = scratch.iter().map(|(&k, &c)| (k, c)).collect();
        out.sort_unstable();
        out
    }

    fn distribution(&self, counts: &[(u64, u64)]) -> Result<WindowDistribution> {
        let map: BTreeMap<Pattern, u64> =
            counts.iter().map(|&(code, c)| (decode(code as usize, self.base as usize, self.m), c)).collect();
        WindowDistribution::from_counts(self.m, self.alphabet.clone(), &map)
    }

    fn certificate(&self, counts: &[(u64, u64)]) -> Result<DistanceCertificate> {
        kantorovich(&self.distribution(counts)?, &self.target)
    }

    fn is_close(&self, counts: &PackedCounts, cache: &mut HashMap<PackedCounts, bool>) -> Result<bool> {
        if let Some(&hit) = cache.get(counts) {
            return Ok(hit);
        }
        let wide: Vec<(u64, u64)> = counts.iter().map(|&(k, c)| (k, c as u64)).collect();
        let close = self.closeness.is_close(&self.certificate(&wide)?);
        cache.insert(counts.clone(), close);
        Ok(close)
    }
}

/// Greedy single-site relabeling with incremental pattern counts.
struct SearchState {
    window: Vec<Arc<Permutation>>,
    inverse: Vec<Permutation>,
    labels: Vec<Symbol>,
    patterns: Vec<Pattern>,
    counts: BTreeMap<Pattern, u64>,
    alphabet: Alphabet,
    m: usize,
}

impl SearchState {
    fn new(model: &FiniteModel, alphabet: Alphabet, labels: Vec<Symbol>, m: usize) -> Result<Self> {
        let window = model.window(m)?;
        let inverse = window.iter().map(|p| p.inverse()).collect();
        let patterns: Vec<Pattern> =
            (0..labels.len()).map(|v| window.iter().map(|p| labels[p.apply(v)]).collect()).collect();
        let mut counts = BTreeMap::new();
        for p in &patterns {
            *counts.entry(p.clone()).or_insert(0) += 1;
        }
        Ok(SearchState { window, inverse, labels, patterns, counts, alphabet, m })
    }

    /// Sets τ(v) = symbol, updating the ≤ m affected patterns.
    fn relabel(&mut self, v: usize, symbol: Symbol) {
        self.labels[v] = symbol;
        let mut affected: Vec<usize> = self.inverse.iter().map(|p| p.apply(v)).collect();
        affected.sort_unstable();
        affected.dedup();
        for u in affected {
            let old = std::mem::take(&mut self.patterns[u]);
            if let Some(c) = self.counts.get_mut(&old) {
                *c -= 1;
                if *c == 0 {
                    self.counts.remove(&old);
                }
            }
            let new: Pattern = self.window.iter().map(|p| self.labels[p.apply(u)]).collect();
            *self.counts.entry(new.clone()).or_insert(0) += 1;
            self.patterns[u] = new;
        }
    }

    fn distribution(&self) -> Result<WindowDistribution> {
        WindowDistribution::from_counts(self.m, self.alphabet.clone(), &self.counts)
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub microstate: Microstate,
    pub certificate: DistanceCertificate,
    pub close: bool,
    /// Candidate relabelings evaluated.
    pub evaluations: u64,
    /// Window fit value after initialization and after each accepted move.
    pub history: Vec<f64>,
}

/// Seeded i.i.d. start from the oracle's one-site marginal, then greedy
/// single-site relabeling (vertices in order, symbols in order) accepting
/// strict decreases of the fit. Stops when close, when `budget` candidates
/// have been evaluated, or at a local minimum.
pub fn search_microstate(
    model: &FiniteModel,
    oracle: &CylinderOracle,
    m: usize,
    closeness: Closeness,
    budget: u64,
    seed: u64,
) -> Result<SearchOutcome> {
    if budget == 0 {
        return invalid("search budget must be >= 1");
    }
    let alphabet = oracle.alphabet().clone();
    check_target(model, &alphabet, oracle)?;
    let target = oracle.marginal(m)?;
    let one_site = oracle.marginal(1)?;
    let weights: Vec<f64> = (0..alphabet.len() as Symbol).map(|s| one_site.mass_of(&[s])).collect();
    let cdf = cumulative(&weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Symbol> = (0..model.size()).map(|_| draw(&cdf, &mut rng)).collect();

    let mut state = SearchState::new(model, alphabet.clone(), labels, m)?;
    let mut best = kantorovich(&state.distribution()?, &target)?;
    let mut history = vec![best.value];
    let mut evaluations = 0u64;
    let k = alphabet.len() as Symbol;

    'search: while !closeness.is_close(&best) {
        let mut improved = false;
        for v in 0..model.size() {
            for s in 0..k {
                let current = state.labels[v];
                if s == current {
                    continue;
                }
                if evaluations >= budget {
                    break 'search;
                }
                state.relabel(v, s);
                evaluations += 1;
                let cert = kantorovich(&state.distribution()?, &target)?;
                if cert.value < best.value - 1e-12 {
                    best = cert;
                    history.push(best.value);
                    improved = true;
                    if closeness.is_close(&best) {
                        break 'search;
                    }
                } else {
                    state.relabel(v, current);
                }
            }
        }
        if !improved {
            break;
        }
    }
    let close = closeness.is_close(&best);
    Ok(SearchOutcome {
        microstate: Microstate::new(alphabet, state.labels)?,
        certificate: best,
        close,
        evaluations,
        history,
    })
}

/// (v', v'') ↦ (τ'(v'), τ''(v'')) in row-major vertex order.
pub fn tensor_microstate(left: &Microstate, right: &Microstate) -> Microstate {
    let inner = right.alphabet.len() as Symbol;
    let labels = left
        .labels
        .iter()
        .flat_map(|&a| right.labels.iter().map(move |&b| a * inner + b))
        .collect();
    Microstate { alphabet: left.alphabet.product(&right.alphabet), labels }
}

/// Checks exactly, on integer counts, that the empirical distribution of
/// τ' ⊗ τ'' under `joint` equals the tensor of the factor empiricals.
pub fn tensor_identity_holds(
    joint: &FiniteModel,
    left_model: &FiniteModel,
    right_model: &FiniteModel,
    left: &Microstate,
    right: &Microstate,
    m: usize,
) -> Result<bool> {
    if joint.size() != left_model.size() * right_model.size() {
        return usage("joint model must live on V' × V''");
    }
    let xi = tensor_microstate(left, right);
    let whole = empirical_counts(joint, &xi, m)?;
    let c1 = empirical_counts(left_model, left, m)?;
    let c2 = empirical_counts(right_model, right, m)?;
    let inner = right.alphabet.len() as Symbol;
    for (p, &c) in &whole.counts {
        let p1: Pattern = p.iter().map(|s| s / inner).collect();
        let p2: Pattern = p.iter().map(|s| s % inner).collect();
        let expect = c1.counts.get(&p1).copied().unwrap_or(0) * c2.counts.get(&p2).copied().unwrap_or(0);
        if c != expect {
            return Ok(false);
        }
    }
    Ok(whole.counts.len() == c1.counts.len() * c2.counts.len())
}

/// The exact tensor identity on the product model of `left_model` and
/// `right_model`.
pub fn product_identity_check(
    left_model: &Arc<FiniteModel>,
    right_model: &Arc<FiniteModel>,
    left: &Microstate,
    right: &Microstate,
    m: usize,
) -> Result<bool> {
    let product = FiniteModel::product(Arc::clone(left_model), Arc::clone(right_model))?;
    tensor_identity_holds(&product, left_model, right_model, left, right, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EntropyMode {
    Exact,
    Montecarlo { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub bound: Bound,
    pub mode: EntropyMode,
    pub alphabet_size: usize,
    /// Exact number of good microstates (exact mode).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    /// Good samples (Monte-Carlo mode).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub good_samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    /// (1/n)·log₂ of the (estimated) count; `None` when nothing is good.
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    /// Set when fewer than 100 samples were good.
    pub high_variance: bool,
}

/// Counts microstates τ ∈ A^V whose fit to the oracle is ε-close, exactly or
/// by uniform Monte-Carlo sampling of A^V.
pub fn entropy_estimate(
    model: &FiniteModel,
    oracle: &CylinderOracle,
    m: usize,
    closeness: Closeness,
    mode: EntropyMode,
) -> Result<EntropyEstimate> {
    let alphabet = oracle.alphabet().clone();
    let eval = PackedEvaluator::new(model, &alphabet, oracle, m, closeness)?;
    let n = model.size();
    let k = alphabet.len() as u64;
    let log_states = n as f64 * (k as f64).log2();
    let mut est = EntropyEstimate {
        n,
        m,
        epsilon: closeness.epsilon,
        bound: closeness.bound,
        mode,
        alphabet_size: k as usize,
        count: None,
        good_samples: None,
        fraction: None,
        value: None,
        std_error: None,
        high_variance: false,
    };
    match mode {
        EntropyMode::Exact => {
            let total = k
                .checked_pow(n as u32)
                .filter(|&t| t <= EXACT_LIMIT)
                .ok_or_else(|| Error::SizeOverflow(format!("{k}^{n} microstates exceed 2^24 for exact counting")))?;
            let chunks = total.div_ceil(CHUNK);
            let count = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut cache = HashMap::new();
                    let mut scratch = HashMap::new();
                    let mut labels = vec![0 as Symbol; n];
                    let mut good = 0u64;
                    for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                        let mut rest = idx;
                        for slot in labels.iter_mut() {
                            *slot = (rest % k) as Symbol;
                            rest /= k;
                        }
                        if eval.is_close(&eval.counts(&labels, &mut scratch), &mut cache)? {
                            good += 1;
                        }
                    }
                    Ok(good)
                })
                .collect::<Result<Vec<u64>>>()?
                .into_iter()
                .sum::<u64>();
            est.count = Some(count);
            est.value = (count > 0).then(|| (count as f64).log2() / n as f64);
        }
        EntropyMode::Montecarlo { samples, seed } => {
            if samples == 0 {
                return invalid("montecarlo mode needs samples >= 1");
            }
            let chunks = samples.div_ceil(CHUNK);
            let good = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = chunk_rng(seed, c);
                    let mut cache = HashMap::new();
                    let mut scratch = HashMap::new();
                    let mut labels = vec![0 as Symbol; n];
                    let mut good = 0u64;
                    for _ in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                        for slot in labels.iter_mut() {
                            *slot = rng.random_range(0..k) as Symbol;
                        }
                        if eval.is_close(&eval.counts(&labels, &mut scratch), &mut cache)? {
                            good += 1;
                        }
                    }
                    Ok(good)
                })
                .collect::<Result<Vec<u64>>>()?
                .into_iter()
                .sum::<u64>();
            let f = good as f64 / samples as f64;
            est.good_samples = Some(good);
            est.fraction = Some(f);
            est.high_variance = good < 100;
            if good > 0 {
                est.value = Some((f.log2() + log_states) / n as f64);
                let se_f = (f * (1.0 - f) / samples as f64).sqrt();
                est.std_error = Some(se_f / (f * std::f64::consts::LN_2 * n as f64));
            }
        }
    }
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub index: usize,
    pub n: usize,
    pub fit_lower: f64,
    pub fit_upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub m: usize,
    pub epsilon: f64,
    pub bound: Bound,
    pub rows: Vec<TraceRow>,
    pub all_pass: bool,
    /// Least index from which every later model passes.
    pub eventually_from: Option<usize>,
    pub passing_indices: Vec<usize>,
    /// Some index passes, i.e. the finite sequence offers a passing subsequence.
    pub subsequence_pass: bool,
}

/// Runs [`search_microstate`] on every model of the sequence; model i uses
/// seed `derive_seed(seed, i)`.
pub fn approximability_trace(
    seq: &crate::model::SoficApproximationSeq,
    oracle: &CylinderOracle,
    m: usize,
    closeness: Closeness,
    budget: u64,
    seed: u64,
) -> Result<TraceReport> {
    let rows: Vec<TraceRow> = seq
        .models()
        .par_iter()
        .enumerate()
        .map(|(index, model)| {
            let out = search_microstate(model, oracle, m, closeness, budget, derive_seed(seed, index as u64))?;
            Ok(TraceRow {
                index,
                n: model.size(),
                fit_lower: out.certificate.lower,
                fit_upper: out.certificate.upper,
                pass: out.close,
            })
        })
        .collect::<Result<_>>()?;
    let passing_indices: Vec<usize> = rows.iter().filter(|r| r.pass).map(|r| r.index).collect();
    let tail = rows.iter().rposition(|r| !r.pass).map_or(0, |i| i + 1);
    Ok(TraceReport {
        m,
        epsilon: closeness.epsilon,
        bound: closeness.bound,
        all_pass: !rows.is_empty() && passing_indices.len() == rows.len(),
        eventually_from: (tail < rows.len()).then_some(tail),
        subsequence_pass: !passing_indices.is_empty(),
        passing_indices,
        rows,
    })
}

/// A law η on microstates A^V.
#[derive(Debug, Clone)]
pub enum MicrostateSampler {
    /// Independent labels with the given symbol weights.
    Iid { alphabet: Alphabet, base: Vec<f64> },
    /// A finite list of microstates with weights.
    Explicit { states: Vec<Microstate>, weights: Vec<f64> },
}

impl MicrostateSampler {
    pub fn iid(alphabet: Alphabet, base: Vec<f64>) -> Result<Self> {
        check_weights(&base, alphabet.len())?;
        Ok(MicrostateSampler::Iid { alphabet, base })
    }

    pub fn uniform(alphabet: Alphabet) -> Self {
        let k = alphabet.len();
        MicrostateSampler::Iid { alphabet, base: vec![1.0 / k as f64; k] }
    }

    pub fn explicit(states: Vec<Microstate>, weights: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return invalid("explicit sampler needs at least one microstate");
        }
        check_weights(&weights, states.len())?;
        if states.iter().any(|s| s.alphabet != states[0].alphabet || s.len() != states[0].len()) {
            return invalid("explicit sampler microstates must share alphabet and size");
        }
        Ok(MicrostateSampler::Explicit { states, weights })
    }

    pub fn dirac(state: Microstate) -> Self {
        MicrostateSampler::Explicit { states: vec![state], weights: vec![1.0] }
    }

    pub fn alphabet(&self) -> &Alphabet {
        match self {
            MicrostateSampler::Iid { alphabet, .. } => alphabet,
            MicrostateSampler::Explicit { states, .. } => &states[0].alphabet,
        }
    }

    fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Symbol>> {
        match self {
            MicrostateSampler::Iid { base, .. } => {
                let cdf = cumulative(base);
                Ok((0..n).map(|_| draw(&cdf, rng)).collect())
            }
            MicrostateSampler::Explicit { states, weights } => {
                let pick = draw(&cumulative(weights), rng) as usize;
                if states[pick].len() != n {
                    return usage(format!("sampler microstates have {} labels, model has {n}", states[pick].len()));
                }
                Ok(states[pick].labels.clone())
            }
        }
    }
}

fn check_weights(w: &[f64], len: usize) -> Result<()> {
    if w.len() != len || w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return invalid("weights must be nonnegative, one per entry");
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > crate::oracle::MASS_TOL {
        return invalid(format!("weights sum to {total}, expected 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DQReport {
    pub m: usize,
    pub epsilon: f64,
    pub bound: Bound,
    pub pairs: u64,
    pub seed: u64,
    /// Pairs whose paired microstate is ε-close to the product target.
    pub good_pairs: u64,
    /// Estimate of η⊗η(W_ε).
    pub w_mass: f64,
    /// Fit of the pooled empirical average of all pairs.
    pub pooled_fit_lower: f64,
    pub pooled_fit_upper: f64,
    pub pooled_close: bool,
}

/// Doubly-quenched test on one model: draws `pairs` independent pairs
/// (τ₁, τ₂) from the sampler, forms ξ(v) = (τ₁(v), τ₂(v)) and fits ξ against
/// the product of the oracle with itself.
pub fn dq_test(
    model: &FiniteModel,
    sampler: &MicrostateSampler,
    oracle: &Arc<CylinderOracle>,
    m: usize,
    closeness: Closeness,
    pairs: u64,
    seed: u64,
) -> Result<DQReport> {
    if pairs == 0 {
        return invalid("dq_test needs pairs >= 1");
    }
    if sampler.alphabet() != oracle.alphabet() {
        return usage("sampler alphabet differs from the oracle alphabet");
    }
    let target = CylinderOracle::product(Arc::clone(oracle), Arc::clone(oracle))?;
    let paired = target.alphabet().clone();
    let eval = PackedEvaluator::new(model, &paired, &target, m, closeness)?;
    let n = model.size();
    let inner = sampler.alphabet().len() as Symbol;

    let chunks = pairs.div_ceil(CHUNK);
    let partials = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let mut cache = HashMap::new();
            let mut scratch = HashMap::new();
            let mut pooled: BTreeMap<u64, u64> = BTreeMap::new();
            let mut good = 0u64;
            for _ in c * CHUNK..((c + 1) * CHUNK).min(pairs) {
                let t1 = sampler.sample(n, &mut rng)?;
                let t2 = sampler.sample(n, &mut rng)?;
                let xi: Vec<Symbol> = t1.iter().zip(&t2).map(|(&a, &b)| a * inner + b).collect();
                let counts = eval.counts(&xi, &mut scratch);
                for &(code, cnt) in &counts {
                    *pooled.entry(code).or_insert(0) += cnt as u64;
                }
                if eval.is_close(&counts, &mut cache)? {
                    good += 1;
                }
            }
            Ok((good, pooled))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut good = 0u64;
    let mut pooled: BTreeMap<u64, u64> = BTreeMap::new();
    for (g, part) in partials {
        good += g;
        for (code, c) in part {
            *pooled.entry(code).or_insert(0) += c;
        }
    }
    let pooled: Vec<(u64, u64)> = pooled.into_iter().collect();
    let cert = eval.certificate(&pooled)?;
    Ok(DQReport {
        m,
        epsilon: closeness.epsilon,
        bound: closeness.bound,
        pairs,
        seed,
        good_pairs: good,
        w_mass: good as f64 / pairs as f64,
        pooled_fit_lower: cert.lower,
        pooled_fit_upper: cert.upper,
        pooled_close: closeness.is_close(&cert),
    })
}

/// Applies a symbol map to every vertex label.
pub fn project_microstate(tau: &Microstate, map: &SymbolMap) -> Result<Microstate> {
    if map.from_alphabet() != &tau.alphabet {
        return usage(format!("microstate symbols over {} are outside the map domain {}", tau.alphabet, map.from_alphabet()));
    }
    Ok(Microstate { alphabet: map.to_alphabet().clone(), labels: map.apply_pattern(&tau.labels) })
}

#[derive(Debug, Clone)]
pub struct DiagonalLevel {
    pub model: Arc<FiniteModel>,
    pub microstate: Microstate,
    pub target: Arc<CylinderOracle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalCell {
    pub level: usize,
    pub projected_to: usize,
    pub projected_fit: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalTable {
    pub m: usize,
    pub level_fits: Vec<f64>,
    pub cells: Vec<DiagonalCell>,
    pub all_pass: bool,
}

/// For every pair of levels j < i checks that the level-i microstate,
/// projected to A_j, fits the level-j target within ε_i plus its own level-i
/// fit.
pub fn diagonal_sequence(
    tower: &ObservableTower,
    levels: &[DiagonalLevel],
    epsilons: &[f64],
    m: usize,
) -> Result<DiagonalTable> {
    if levels.len() != tower.levels() || epsilons.len() != tower.levels() {
        return usage(format!(
            "tower has {} levels, got {} level inputs and {} tolerances",
            tower.levels(),
            levels.len(),
            epsilons.len()
        ));
    }
    for (i, lvl) in levels.iter().enumerate() {
        let a = tower.alphabet(i).expect("level in range");
        if lvl.microstate.alphabet() != a || lvl.target.alphabet() != a {
            return usage(format!("level {i} microstate or target is not over the tower alphabet {a}"));
        }
    }
    let level_fits: Vec<f64> = levels
        .iter()
        .map(|l| fit(&l.model, &l.microstate, &l.target, m).map(|c| c.value))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (i, lvl) in levels.iter().enumerate() {
        for (j, coarse) in levels[..i].iter().enumerate() {
            let projected = project_microstate(&lvl.microstate, tower.projection(i, j)?)?;
            let projected_fit = fit(&lvl.model, &projected, &coarse.target, m)?.value;
            let bound = level_fits[i] + epsilons[i];
            cells.push(DiagonalCell { level: i, projected_to: j, projected_fit, bound, pass: projected_fit <= bound + CLOSE_TOL });
        }
    }
    let all_pass = cells.iter().all(|c| c.pass);
    Ok(DiagonalTable { m, level_fits, cells, all_pass })
}

#[derive(Debug, Clone)]
pub struct Witness {
    pub code: BlockCode,
    pub certificate: DistanceCertificate,
    pub evaluations: u64,
}

/// Searches for a block code c over `o2` whose factor is ε-close to `o1` on
/// W_m. Exhaustive when |A₁|^(|A₂|^w) ≤ budget, otherwise seeded coordinate
/// descent on code entries. `None` means no witness was found within budget.
pub fn weak_containment_witness(
    o1: &CylinderOracle,
    o2: &Arc<CylinderOracle>,
    m: usize,
    closeness: Closeness,
    w: usize,
    budget: u64,
    seed: u64,
) -> Result<Option<Witness>> {
    if w == 0 {
        return invalid("code window must be >= 1");
    }
    if o1.group() != o2.group() {
        return usage("oracles over different groups");
    }
    let target = o1.marginal(m)?;
    let (input, output) = (o2.alphabet().clone(), o1.alphabet().clone());
    let domain = crate::oracle::code_domain_size(input.len(), w)?;
    let k = output.len();
    let evaluate = |table: &[Symbol]| -> Result<DistanceCertificate> {
        let code = BlockCode::new(input.clone(), output.clone(), w, table.to_vec())?;
        let factor = CylinderOracle::block_code(Arc::clone(o2), code)?;
        kantorovich(&*factor.marginal(m)?, &target)
    };
    let mut evaluations = 0u64;
    let found = |table: Vec<Symbol>, cert: DistanceCertificate, evaluations: u64| -> Result<Option<Witness>> {
        Ok(Some(Witness { code: BlockCode::new(input.clone(), output.clone(), w, table)?, certificate: cert, evaluations }))
    };

    let space = (k as u128).checked_pow(domain as u32);
    if space.is_some_and(|s| s <= budget as u128) {
        let space = space.expect("checked") as usize;
        for idx in 0..space {
            let table = decode(idx, k, domain);
            let cert = evaluate(&table)?;
            evaluations += 1;
            if closeness.is_close(&cert) {
                return found(table, cert, evaluations);
            }
        }
        return Ok(None);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table: Vec<Symbol> = (0..domain).map(|_| rng.random_range(0..k) as Symbol).collect();
    let mut best = evaluate(&table)?;
    evaluations += 1;
    'descent: loop {
        if closeness.is_close(&best) {
            return found(table, best, evaluations);
        }
        let mut improved = false;
        for slot in 0..domain {
            for s in 0..k as Symbol {
                if s == table[slot] {
                    continue;
                }
                if evaluations >= budget {
                    break 'descent;
                }
                let old = table[slot];
                table[slot] = s;
                let cert = evaluate(&table)?;
                evaluations += 1;
                if cert.value < best.value - 1e-12 {
                    best = cert;
                    improved = true;
                } else {
                    table[slot] = old;
                }
            }
        }
        if !improved {
            break;
        }
    }
    if closeness.is_close(&best) {
        return found(table, best, evaluations);
    }
    Ok(None)
}
