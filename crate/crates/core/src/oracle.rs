//! Target actions represented through their observable distributions.
//!
//! A shift-invariant measure on A^G is only ever touched through its window
//! marginals: the law of (x(γ_1), …, x(γ_m)). Oracles compute these exactly
//! for Bernoulli shifts, stationary Markov chains on ℤ, sliding block codes
//! of other oracles, and products.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, usage, Error, Result};
use crate::group::{Element, Group};

/// Index of a symbol inside its [`Alphabet`].
pub type Symbol = u16;

/// A window pattern: one symbol per enumerated group element.
pub type Pattern = Vec<Symbol>;

/// Normalization tolerance for probability vectors.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alphabet {
    labels: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return invalid("alphabet must be nonempty");
        }
        if labels.len() > Symbol::MAX as usize {
            return invalid("alphabet too large");
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.chars().any(char::is_whitespace) {
                return invalid(format!("bad symbol label {l:?}"));
            }
            if labels[..i].contains(l) {
                return invalid(format!("duplicate symbol label {l:?}"));
            }
        }
        Ok(Alphabet { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, s: Symbol) -> &str {
        &self.labels[s as usize]
    }

    pub fn index_of(&self, label: &str) -> Option<Symbol> {
        self.labels.iter().position(|l| l == label).map(|i| i as Symbol)
    }

    /// A × B with labels "(a,b)"; symbol index a·|B| + b.
    pub fn product(&self, other: &Alphabet) -> Alphabet {
        let labels = self
            .labels
            .iter()
            .flat_map(|a| other.labels.iter().map(move |b| format!("({a},{b})")))
            .collect();
        Alphabet { labels }
    }

    /// Single-character alphabets print patterns as plain strings ("abba");
    /// otherwise labels are space separated.
    fn compact(&self) -> bool {
        self.labels.iter().all(|l| l.chars().count() == 1)
    }

    pub fn format_pattern(&self, p: &[Symbol]) -> String {
        let parts: Vec<&str> = p.iter().map(|&s| self.label(s)).collect();
        if self.compact() {
            parts.concat()
        } else {
            parts.join(" ")
        }
    }

    pub fn parse_pattern(&self, s: &str) -> Result<Pattern> {
        let lookup = |t: &str| {
            self.index_of(t).ok_or_else(|| Error::Invalid(format!("symbol {t:?} not in alphabet")))
        };
        if self.compact() && !s.contains(' ') {
            s.chars().map(|c| lookup(&c.to_string())).collect()
        } else {
            s.split_whitespace().map(lookup).collect()
        }
    }
}

impl fmt::Display for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.labels.join(","))
    }
}

/// Map between two alphabets, applied symbol-wise to patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolMap {
    from: Alphabet,
    to: Alphabet,
    image: Vec<Symbol>,
}

impl SymbolMap {
    pub fn new(from: Alphabet, to: Alphabet, image: Vec<Symbol>) -> Result<Self> {
        if image.len() != from.len() || image.iter().any(|&s| s as usize >= to.len()) {
            return invalid(format!("symbol map {from} -> {to} is not total"));
        }
        Ok(SymbolMap { from, to, image })
    }

    pub fn from_labels(from: Alphabet, to: Alphabet, pairs: &[(&str, &str)]) -> Result<Self> {
        let mut image = vec![Symbol::MAX; from.len()];
        for (a, b) in pairs {
            let i = from.index_of(a).ok_or_else(|| Error::Invalid(format!("{a:?} not in {from}")))?;
            let j = to.index_of(b).ok_or_else(|| Error::Invalid(format!("{b:?} not in {to}")))?;
            image[i as usize] = j;
        }
        Self::new(from, to, image)
    }

    pub fn identity(alphabet: Alphabet) -> Self {
        let image = (0..alphabet.len() as Symbol).collect();
        SymbolMap { from: alphabet.clone(), to: alphabet, image }
    }

    pub fn from_alphabet(&self) -> &Alphabet {
        &self.from
    }

    pub fn to_alphabet(&self) -> &Alphabet {
        &self.to
    }

    #[inline]
    pub fn apply(&self, s: Symbol) -> Symbol {
        self.image[s as usize]
    }

    pub fn apply_pattern(&self, p: &[Symbol]) -> Pattern {
        p.iter().map(|&s| self.apply(s)).collect()
    }

    /// `after ∘ self`.
    pub fn then(&self, after: &SymbolMap) -> Result<SymbolMap> {
        if self.to != after.from {
            return usage(format!("cannot compose {} -> {} with {} -> {}", self.from, self.to, after.from, after.to));
        }
        let image = self.image.iter().map(|&s| after.apply(s)).collect();
        Ok(SymbolMap { from: self.from.clone(), to: after.to.clone(), image })
    }

    /// Componentwise map on product alphabets.
    pub fn pair(&self, other: &SymbolMap) -> SymbolMap {
        let inner = other.to.len() as Symbol;
        let image = self
            .image
            .iter()
            .flat_map(|&a| other.image.iter().map(move |&b| a * inner + b))
            .collect();
        SymbolMap { from: self.from.product(&other.from), to: self.to.product(&other.to), image }
    }
}

/// A probability distribution on A^{W_m}, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDistribution {
    m: usize,
    alphabet: Alphabet,
    mass: BTreeMap<Pattern, f64>,
}

impl WindowDistribution {
    pub fn new(m: usize, alphabet: Alphabet, mass: BTreeMap<Pattern, f64>) -> Result<Self> {
        let mut total = 0.0;
        for (p, &w) in &mass {
            if p.len() != m {
                return invalid(format!("pattern of length {} in a window of size {m}", p.len()));
            }
            if p.iter().any(|&s| s as usize >= alphabet.len()) {
                return invalid("pattern symbol outside the alphabet");
            }
            if w < 0.0 || !w.is_finite() {
                return invalid(format!("mass {w} is not a nonnegative number"));
            }
            total += w;
        }
        if (total - 1.0).abs() > MASS_TOL {
            return invalid(format!("masses sum to {total}, expected 1"));
        }
        Ok(WindowDistribution { m, alphabet, mass })
    }

    pub fn dirac(alphabet: Alphabet, pattern: Pattern) -> Result<Self> {
        let m = pattern.len();
        Self::new(m, alphabet, BTreeMap::from([(pattern, 1.0)]))
    }

    /// Distribution with masses count / total.
    pub fn from_counts(m: usize, alphabet: Alphabet, counts: &BTreeMap<Pattern, u64>) -> Result<Self> {
        let total: u64 = counts.values().sum();
        if total == 0 {
            return invalid("empty count table");
        }
        let mass = counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(p, &c)| (p.clone(), c as f64 / total as f64))
            .collect();
        Self::new(m, alphabet, mass)
    }

    pub fn window(&self) -> usize {
        self.m
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn masses(&self) -> &BTreeMap<Pattern, f64> {
        &self.mass
    }

    pub fn mass_of(&self, p: &[Symbol]) -> f64 {
        self.mass.get(p).copied().unwrap_or(0.0)
    }

    /// Patterns with strictly positive mass, in lexicographic order.
    pub fn support(&self) -> impl Iterator<Item = (&Pattern, f64)> {
        self.mass.iter().filter(|(_, &w)| w > 0.0).map(|(p, &w)| (p, w))
    }

    /// Law of the first `k` coordinates.
    pub fn restrict(&self, k: usize) -> Result<Self> {
        if k > self.m {
            return usage(format!("cannot restrict a window of {} to {k}", self.m));
        }
        let mut mass = BTreeMap::new();
        for (p, &w) in &self.mass {
            *mass.entry(p[..k].to_vec()).or_insert(0.0) += w;
        }
        Ok(WindowDistribution { m: k, alphabet: self.alphabet.clone(), mass })
    }

    /// Pushforward under a symbol-wise map.
    pub fn pushforward(&self, map: &SymbolMap) -> Result<Self> {
        if map.from != self.alphabet {
            return usage(format!("map domain {} differs from alphabet {}", map.from, self.alphabet));
        }
        let mut mass = BTreeMap::new();
        for (p, &w) in &self.mass {
            *mass.entry(map.apply_pattern(p)).or_insert(0.0) += w;
        }
        Ok(WindowDistribution { m: self.m, alphabet: map.to.clone(), mass })
    }

    /// Product law on (A × B)^{W_m}, coordinates paired position by position.
    pub fn tensor(&self, other: &WindowDistribution) -> Result<Self> {
        if self.m != other.m {
            return usage(format!("tensor of windows {} and {}", self.m, other.m));
        }
        let inner = other.alphabet.len() as Symbol;
        let mut mass = BTreeMap::new();
        for (p, w) in self.support() {
            for (q, v) in other.support() {
                let paired = p.iter().zip(q).map(|(&a, &b)| a * inner + b).collect();
                mass.insert(paired, w * v);
            }
        }
        Ok(WindowDistribution { m: self.m, alphabet: self.alphabet.product(&other.alphabet), mass })
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.values().sum()
    }

    /// Serialized form `{"m": 2, "alphabet": [...], "mass": {"ab": 0.25, ...}}`.
    pub fn to_serial(&self) -> SerialDistribution {
        SerialDistribution {
            m: self.m,
            alphabet: Some(self.alphabet.labels.clone()),
            mass: self.support().map(|(p, w)| (self.alphabet.format_pattern(p), w)).collect(),
        }
    }

    pub fn from_serial(s: &SerialDistribution) -> Result<Self> {
        let alphabet = match &s.alphabet {
            Some(labels) => Alphabet::new(labels.clone())?,
            None => {
                // infer a single-character alphabet, sorted
                let mut chars: Vec<char> = s.mass.keys().flat_map(|k| k.chars()).filter(|c| !c.is_whitespace()).collect();
                chars.sort_unstable();
                chars.dedup();
                Alphabet::new(chars.into_iter().map(String::from))?
            }
        };
        let mut mass = BTreeMap::new();
        for (k, &w) in &s.mass {
            *mass.entry(alphabet.parse_pattern(k)?).or_insert(0.0) += w;
        }
        Self::new(s.m, alphabet, mass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialDistribution {
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphabet: Option<Vec<String>>,
    pub mass: BTreeMap<String, f64>,
}

/// A sliding block code B^{W_w} → A; input patterns are indexed in base |B|
/// with the first window coordinate most significant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCode {
    input: Alphabet,
    output: Alphabet,
    window: usize,
    table: Vec<Symbol>,
}

impl BlockCode {
    pub fn new(input: Alphabet, output: Alphabet, window: usize, table: Vec<Symbol>) -> Result<Self> {
        if window == 0 {
            return invalid("block code window must be >= 1");
        }
        let size = code_domain_size(input.len(), window)?;
        if table.len() != size {
            return invalid(format!("block code table has {} entries, expected {size}", table.len()));
        }
        if table.iter().any(|&s| s as usize >= output.len()) {
            return invalid("block code output symbol outside the alphabet");
        }
        Ok(BlockCode { input, output, window, table })
    }

    /// Builds a code from `pattern -> symbol` entries; must be total.
    pub fn from_entries<'a>(
        input: Alphabet,
        output: Alphabet,
        window: usize,
        entries: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let size = code_domain_size(input.len(), window)?;
        let mut table = vec![Symbol::MAX; size];
        for (pat, sym) in entries {
            let p = input.parse_pattern(pat)?;
            if p.len() != window {
                return invalid(format!("code key {pat:?} has length {}, expected {window}", p.len()));
            }
            let s = output.index_of(sym).ok_or_else(|| Error::Invalid(format!("{sym:?} not in {output}")))?;
            table[encode(&p, input.len())] = s;
        }
        if let Some(missing) = table.iter().position(|&s| s == Symbol::MAX) {
            let p = decode(missing, input.len(), window);
            return invalid(format!("block code is not total: no entry for {:?}", input.format_pattern(&p)));
        }
        Self::new(input, output, window, table)
    }

    /// The code x ↦ x(identity) on a window of one.
    pub fn identity(alphabet: Alphabet) -> Self {
        let table = (0..alphabet.len() as Symbol).collect();
        BlockCode { input: alphabet.clone(), output: alphabet, window: 1, table }
    }

    pub fn input(&self) -> &Alphabet {
        &self.input
    }

    pub fn output(&self) -> &Alphabet {
        &self.output
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn table(&self) -> &[Symbol] {
        &self.table
    }

    pub fn apply(&self, block: &[Symbol]) -> Symbol {
        self.table[encode(block, self.input.len())]
    }

    /// `(input pattern, output symbol)` rows in table order.
    pub fn entries(&self) -> Vec<(String, String)> {
        (0..self.table.len())
            .map(|i| {
                let p = decode(i, self.input.len(), self.window);
                (self.input.format_pattern(&p), self.output.label(self.table[i]).to_string())
            })
            .collect()
    }
}

pub(crate) fn code_domain_size(base: usize, window: usize) -> Result<usize> {
    base.checked_pow(window as u32)
        .filter(|&s| s <= 1 << 24)
        .ok_or_else(|| Error::SizeOverflow(format!("{base}^{window} code inputs")))
}

pub(crate) fn encode(p: &[Symbol], base: usize) -> usize {
    p.iter().fold(0, |acc, &s| acc * base + s as usize)
}

pub(crate) fn decode(mut idx: usize, base: usize, len: usize) -> Pattern {
    let mut p = vec![0; len];
    for slot in p.iter_mut().rev() {
        *slot = (idx % base) as Symbol;
        idx /= base;
    }
    p
}

/// A refining sequence of alphabets with projections π_{i,j}: A_i → A_j for
/// i > j (level 0 is the coarsest).
#[derive(Debug, Clone)]
pub struct ObservableTower {
    alphabets: Vec<Alphabet>,
    maps: BTreeMap<(usize, usize), SymbolMap>,
}

impl ObservableTower {
    /// Tower from consecutive steps: `steps[i]` maps level i+1 onto level i.
    /// The remaining projections are the composites, so the composition law
    /// holds by construction.
    pub fn from_steps(alphabets: Vec<Alphabet>, steps: Vec<SymbolMap>) -> Result<Self> {
        if alphabets.is_empty() {
            return invalid("tower needs at least one level");
        }
        if steps.len() + 1 != alphabets.len() {
            return invalid("tower needs exactly one step map between consecutive levels");
        }
        for (i, s) in steps.iter().enumerate() {
            if s.from != alphabets[i + 1] || s.to != alphabets[i] {
                return invalid(format!("step {i} does not map level {} onto level {i}", i + 1));
            }
        }
        let mut maps = BTreeMap::new();
        for i in 1..alphabets.len() {
            let mut acc = steps[i - 1].clone();
            maps.insert((i, i - 1), acc.clone());
            for j in (0..i - 1).rev() {
                acc = acc.then(&steps[j])?;
                maps.insert((i, j), acc.clone());
            }
        }
        Ok(ObservableTower { alphabets, maps })
    }

    /// Tower from every projection π_{i,j}; rejects tables that violate the
    /// composition law.
    pub fn from_maps(alphabets: Vec<Alphabet>, maps: BTreeMap<(usize, usize), SymbolMap>) -> Result<Self> {
        let levels = alphabets.len();
        for i in 0..levels {
            for j in 0..i {
                let m = maps.get(&(i, j)).ok_or_else(|| Error::Invalid(format!("missing projection ({i},{j})")))?;
                if m.from != alphabets[i] || m.to != alphabets[j] {
                    return invalid(format!("projection ({i},{j}) has the wrong alphabets"));
                }
            }
        }
        let tower = ObservableTower { alphabets, maps };
        if !tower.composition_law_holds() {
            return invalid("projections violate the composition law");
        }
        Ok(tower)
    }

    pub fn levels(&self) -> usize {
        self.alphabets.len()
    }

    pub fn alphabet(&self, level: usize) -> Option<&Alphabet> {
        self.alphabets.get(level)
    }

    pub fn projection(&self, i: usize, j: usize) -> Result<&SymbolMap> {
        if i <= j || i >= self.levels() {
            return usage(format!("projection ({i},{j}) needs {j} < {i} < {}", self.levels()));
        }
        Ok(&self.maps[&(i, j)])
    }

    /// π_{j,i} ∘ π_{k,j} = π_{k,i} for every i < j < k, checked exhaustively.
    pub fn composition_law_holds(&self) -> bool {
        let n = self.levels();
        for k in 0..n {
            for j in 0..k {
                for i in 0..j {
                    let (outer, inner, direct) = (&self.maps[&(j, i)], &self.maps[&(k, j)], &self.maps[&(k, i)]);
                    let ok = (0..self.alphabets[k].len() as Symbol)
                        .all(|s| outer.apply(inner.apply(s)) == direct.apply(s));
                    if !ok {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn project_pattern(&self, i: usize, j: usize, p: &[Symbol]) -> Result<Pattern> {
        Ok(self.projection(i, j)?.apply_pattern(p))
    }

    pub fn project_distribution(&self, i: usize, j: usize, d: &WindowDistribution) -> Result<WindowDistribution> {
        d.pushforward(self.projection(i, j)?)
    }
}

/// Level-wise product of two towers of equal length.
pub fn product_tower(t1: &ObservableTower, t2: &ObservableTower) -> Result<ObservableTower> {
    if t1.levels() != t2.levels() {
        return usage(format!("towers of lengths {} and {}", t1.levels(), t2.levels()));
    }
    let alphabets = t1.alphabets.iter().zip(&t2.alphabets).map(|(a, b)| a.product(b)).collect();
    let maps = t1
        .maps
        .iter()
        .map(|(key, m)| (*key, m.pair(&t2.maps[key])))
        .collect();
    Ok(ObservableTower { alphabets, maps })
}

#[derive(Debug, Clone)]
pub enum MarginalRule {
    Bernoulli { base: Vec<f64> },
    /// Stationary chain on ℤ, read left to right.
    Markov { transition: Vec<Vec<f64>>, stationary: Vec<f64> },
    BlockCode { parent: Arc<CylinderOracle>, code: BlockCode },
    Product(Arc<CylinderOracle>, Arc<CylinderOracle>),
}

/// A shift-invariant measure on A^G answering window-marginal queries.
#[derive(Debug)]
pub struct CylinderOracle {
    group: Group,
    alphabet: Alphabet,
    rule: MarginalRule,
    memo: RwLock<HashMap<usize, Arc<WindowDistribution>>>,
}

type Law = BTreeMap<Pattern, f64>;

impl CylinderOracle {
    fn from_rule(group: Group, alphabet: Alphabet, rule: MarginalRule) -> Self {
        CylinderOracle { group, alphabet, rule, memo: RwLock::new(HashMap::new()) }
    }

    pub fn bernoulli(group: Group, alphabet: Alphabet, base: Vec<f64>) -> Result<Self> {
        check_probability(&base, alphabet.len(), "bernoulli base")?;
        Ok(Self::from_rule(group, alphabet, MarginalRule::Bernoulli { base }))
    }

    /// Point mass on the constant configuration.
    pub fn dirac(group: Group, alphabet: Alphabet, symbol: Symbol) -> Result<Self> {
        let mut base = vec![0.0; alphabet.len()];
        *base.get_mut(symbol as usize).ok_or_else(|| Error::Invalid("symbol outside alphabet".into()))? = 1.0;
        Self::bernoulli(group, alphabet, base)
    }

    /// Stationary Markov chain on ℤ. Computes the stationary vector when
    /// `stationary` is `None`, otherwise checks it.
    pub fn markov(
        group: Group,
        alphabet: Alphabet,
        transition: Vec<Vec<f64>>,
        stationary: Option<Vec<f64>>,
    ) -> Result<Self> {
        if group != Group::Integers {
            return Err(Error::Unsupported(format!("markov oracles need the integers group, got {group}")));
        }
        let k = alphabet.len();
        if transition.len() != k {
            return invalid(format!("transition matrix has {} rows, alphabet has {k} symbols", transition.len()));
        }
        for row in &transition {
            check_probability(row, k, "transition row")?;
        }
        let stationary = match stationary {
            Some(pi) => {
                check_probability(&pi, k, "stationary vector")?;
                let moved = step(&pi, &transition);
                if moved.iter().zip(&pi).any(|(a, b)| (a - b).abs() > MASS_TOL) {
                    return invalid("stationary vector is not invariant under the transition matrix");
                }
                pi
            }
            None => stationary_vector(&transition)?,
        };
        Ok(Self::from_rule(group, alphabet, MarginalRule::Markov { transition, stationary }))
    }

    /// Factor y(g) = code(x(γ_1·g), …, x(γ_w·g)) of `parent`.
    pub fn block_code(parent: Arc<CylinderOracle>, code: BlockCode) -> Result<Self> {
        if code.input != parent.alphabet {
            return usage(format!("code input {} differs from parent alphabet {}", code.input, parent.alphabet));
        }
        let group = parent.group.clone();
        group.enumerate(code.window)?;
        let alphabet = code.output.clone();
        Ok(Self::from_rule(group, alphabet, MarginalRule::BlockCode { parent, code }))
    }

    /// Product measure on (A' × A'')^G.
    pub fn product(left: Arc<CylinderOracle>, right: Arc<CylinderOracle>) -> Result<Self> {
        if left.group != right.group {
            return usage(format!("product of oracles over {} and {}", left.group, right.group));
        }
        let group = left.group.clone();
        let alphabet = left.alphabet.product(&right.alphabet);
        Ok(Self::from_rule(group, alphabet, MarginalRule::Product(left, right)))
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn rule(&self) -> &MarginalRule {
        &self.rule
    }

    /// Law of (x(γ_1), …, x(γ_m)).
    pub fn marginal(&self, m: usize) -> Result<Arc<WindowDistribution>> {
        if m == 0 {
            return invalid("window size must be >= 1");
        }
        if let Some(d) = self.memo.read().expect("memo lock").get(&m) {
            return Ok(Arc::clone(d));
        }
        let positions = self.group.enumerate(m)?;
        let law = self.joint(&positions)?;
        let d = Arc::new(WindowDistribution { m, alphabet: self.alphabet.clone(), mass: law });
        self.memo.write().expect("memo lock").entry(m).or_insert_with(|| Arc::clone(&d));
        Ok(d)
    }

    /// Joint law of the coordinates at the given distinct positions, in the
    /// given order.
    pub fn joint(&self, positions: &[Element]) -> Result<BTreeMap<Pattern, f64>> {
        for (i, p) in positions.iter().enumerate() {
            if !self.group.contains(p) {
                return usage(format!("position {p:?} is not an element of {}", self.group));
            }
            if positions[..i].contains(p) {
                return usage(format!("position {} repeated", self.group.format(p)));
            }
        }
        Ok(self.law(positions))
    }

    fn law(&self, positions: &[Element]) -> Law {
        match &self.rule {
            MarginalRule::Bernoulli { base } => {
                let mut law: Law = BTreeMap::from([(Vec::new(), 1.0)]);
                for _ in positions {
                    let mut next = BTreeMap::new();
                    for (p, w) in &law {
                        for (s, &b) in base.iter().enumerate() {
                            if b > 0.0 {
                                let mut q = p.clone();
                                q.push(s as Symbol);
                                next.insert(q, w * b);
                            }
                        }
                    }
                    law = next;
                }
                law
            }
            MarginalRule::Markov { transition, stationary } => markov_law(transition, stationary, positions),
            MarginalRule::BlockCode { parent, code } => {
                let offsets = self.group.enumerate(code.window).expect("code window checked at construction");
                let mut needed: Vec<Element> = Vec::new();
                let mut index: HashMap<Element, usize> = HashMap::new();
                let mut lookup: Vec<Vec<usize>> = Vec::with_capacity(positions.len());
                for p in positions {
                    let row = offsets
                        .iter()
                        .map(|off| {
                            let q = self.group.mul_unchecked(off, p);
                            *index.entry(q.clone()).or_insert_with(|| {
                                needed.push(q);
                                needed.len() - 1
                            })
                        })
                        .collect();
                    lookup.push(row);
                }
                let parent_law = parent.law(&needed);
                let mut law = BTreeMap::new();
                let mut block = vec![0 as Symbol; code.window];
                for (x, w) in parent_law {
                    let y: Pattern = lookup
                        .iter()
                        .map(|row| {
                            for (slot, &k) in block.iter_mut().zip(row) {
                                *slot = x[k];
                            }
                            code.apply(&block)
                        })
                        .collect();
                    *law.entry(y).or_insert(0.0) += w;
                }
                law
            }
            MarginalRule::Product(left, right) => {
                let (a, b) = (left.law(positions), right.law(positions));
                let inner = right.alphabet.len() as Symbol;
                let mut law = BTreeMap::new();
                for (p, &w) in &a {
                    for (q, &v) in &b {
                        let paired = p.iter().zip(q).map(|(&s, &t)| s * inner + t).collect();
                        law.insert(paired, w * v);
                    }
                }
                law
            }
        }
    }

    /// Total-variation gap between marginal(m) restricted to its first m−1
    /// coordinates and marginal(m−1).
    pub fn consistency_defect(&self, m: usize) -> Result<f64> {
        if m < 2 {
            return Ok(0.0);
        }
        let big = self.marginal(m)?.restrict(m - 1)?;
        let small = self.marginal(m - 1)?;
        crate::transport::total_variation(&big, &small)
    }
}

fn check_probability(v: &[f64], len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return invalid(format!("{what} has {} entries, expected {len}", v.len()));
    }
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return invalid(format!("{what} has a negative or non-finite entry"));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return invalid(format!("{what} sums to {total}, expected 1"));
    }
    Ok(())
}

fn step(dist: &[f64], transition: &[Vec<f64>]) -> Vec<f64> {
    let k = dist.len();
    (0..k).map(|j| (0..k).map(|i| dist[i] * transition[i][j]).sum()).collect()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = a.len();
    (0..k)
        .map(|i| (0..k).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

fn mat_pow(p: &[Vec<f64>], mut e: u64) -> Vec<Vec<f64>> {
    let k = p.len();
    let mut result: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut base = p.to_vec();
    while e > 0 {
        if e & 1 == 1 {
            result = mat_mul(&result, &base);
        }
        base = mat_mul(&base, &base);
        e >>= 1;
    }
    result
}

/// Solves π P = π, Σπ = 1 by Gaussian elimination with partial pivoting.
fn stationary_vector(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = transition.len();
    // rows: (Pᵀ − I) with the last row replaced by the normalization
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| transition[j][i] - if i == j { 1.0 } else { 0.0 }).collect();
            row.push(0.0);
            row
        })
        .collect();
    a[k - 1] = vec![1.0; k + 1];
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("nonempty");
        if a[pivot][col].abs() < 1e-12 {
            return invalid("transition matrix has no unique stationary distribution; pass one explicitly");
        }
        a.swap(col, pivot);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let pi: Vec<f64> = (0..k).map(|i| (a[i][k] / a[i][i]).max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    Ok(pi.into_iter().map(|x| x / total).collect())
}

fn markov_law(transition: &[Vec<f64>], stationary: &[f64], positions: &[Element]) -> Law {
    let ints: Vec<i64> = positions
        .iter()
        .map(|p| match p {
            Element::Int(a) => *a,
            _ => unreachable!("markov oracles live on the integers"),
        })
        .collect();
    if ints.is_empty() {
        return BTreeMap::from([(Vec::new(), 1.0)]);
    }
    let mut order: Vec<usize> = (0..ints.len()).collect();
    order.sort_by_key(|&i| ints[i]);
    let k = stationary.len();
    let mut powers: HashMap<u64, Vec<Vec<f64>>> = HashMap::new();

    // paths in increasing position order
    let mut paths: Vec<(Pattern, f64)> = (0..k)
        .filter(|&s| stationary[s] > 0.0)
        .map(|s| (vec![s as Symbol], stationary[s]))
        .collect();
    for w in order.windows(2) {
        let gap = (ints[w[1]] - ints[w[0]]) as u64;
        let pk = powers.entry(gap).or_insert_with(|| mat_pow(transition, gap));
        let mut next = Vec::with_capacity(paths.len() * k);
        for (p, weight) in &paths {
            let last = *p.last().expect("nonempty path") as usize;
            for t in 0..k {
                let pr = pk[last][t];
                if pr > 0.0 {
                    let mut q = p.clone();
                    q.push(t as Symbol);
                    next.push((q, weight * pr));
                }
            }
        }
        paths = next;
    }
    let mut law = BTreeMap::new();
    for (sorted, w) in paths {
        let mut p = vec![0 as Symbol; sorted.len()];
        for (rank, &orig) in order.iter().enumerate() {
            p[orig] = sorted[rank];
        }
        *law.entry(p).or_insert(0.0) += w;
    }
    law
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::total_variation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ab() -> Alphabet {
        Alphabet::new(["a", "b"]).unwrap()
    }

    fn pat(a: &Alphabet, s: &str) -> Pattern {
        a.parse_pattern(s).unwrap()
    }

    #[test]
    fn alphabet_validation() {
        assert!(Alphabet::new(Vec::<String>::new()).is_err());
        assert!(Alphabet::new(["a", "a"]).is_err());
        let p = ab().product(&Alphabet::new(["x", "y"]).unwrap());
        assert_eq!(p.labels(), ["(a,x)", "(a,y)", "(b,x)", "(b,y)"]);
        assert_eq!(p.format_pattern(&[0, 3]), "(a,x) (b,y)");
        assert_eq!(p.parse_pattern("(a,x) (b,y)").unwrap(), vec![0, 3]);
    }

    #[test]
    fn bernoulli_marginals() {
        let o = CylinderOracle::bernoulli(Group::integers(), ab(), vec![0.5, 0.5]).unwrap();
        let d = o.marginal(2).unwrap();
        for s in ["aa", "ab", "ba", "bb"] {
            assert_eq!(d.mass_of(&pat(&ab(), s)), 0.25);
        }
        let dirac = CylinderOracle::dirac(Group::free(2), ab(), 0).unwrap();
        for m in 1..6 {
            let d = dirac.marginal(m).unwrap();
            assert_eq!(d.masses().len(), 1);
            assert_eq!(d.mass_of(&vec![0; m]), 1.0);
        }
        assert!(CylinderOracle::bernoulli(Group::integers(), ab(), vec![0.5, 0.6]).is_err());
        assert!(CylinderOracle::bernoulli(Group::integers(), ab(), vec![1.0]).is_err());
    }

    #[test]
    fn markov_two_state_example() {
        let o = CylinderOracle::markov(Group::integers(), ab(), vec![vec![0.9, 0.1], vec![0.1, 0.9]], None).unwrap();
        let d = o.marginal(2).unwrap();
        let expect = [("aa", 0.45), ("ab", 0.05), ("ba", 0.05), ("bb", 0.45)];
        for (s, w) in expect {
            assert!((d.mass_of(&pat(&ab(), s)) - w).abs() < 1e-12, "{s}");
        }
        let err = CylinderOracle::markov(Group::free(2), ab(), vec![vec![1.0, 0.0], vec![0.0, 1.0]], None);
        assert!(matches!(err, Err(Error::Unsupported(_))));
        assert!(CylinderOracle::markov(
            Group::integers(),
            ab(),
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            Some(vec![0.9, 0.1])
        )
        .is_err());
    }

    #[test]
    fn markov_window_follows_enumeration_order() {
        // window (0, 1, −1): an asymmetric chain distinguishes the orders
        let t = vec![vec![0.2, 0.8], vec![0.6, 0.4]];
        let o = CylinderOracle::markov(Group::integers(), ab(), t.clone(), None).unwrap();
        let pi = stationary_vector(&t).unwrap();
        let d = o.marginal(3).unwrap();
        for x in 0..2usize {
            for y in 0..2usize {
                for z in 0..2usize {
                    // positions: x at 0, y at 1, z at −1; chain z → x → y
                    let expect = pi[z] * t[z][x] * t[x][y];
                    let got = d.mass_of(&[x as Symbol, y as Symbol, z as Symbol]);
                    assert!((got - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_block_code_preserves_marginals() {
        let parent = Arc::new(
            CylinderOracle::markov(Group::integers(), ab(), vec![vec![0.7, 0.3], vec![0.4, 0.6]], None).unwrap(),
        );
        let coded = CylinderOracle::block_code(parent.clone(), BlockCode::identity(ab())).unwrap();
        for m in 1..6 {
            let (a, b) = (coded.marginal(m).unwrap(), parent.marginal(m).unwrap());
            assert!(total_variation(&a, &b).unwrap() < 1e-12);
        }
    }

    #[test]
    fn block_code_window_two_xor() {
        // y(n) = x(n) xor x(n+1) on an iid fair coin is again an iid fair coin
        let parent = Arc::new(CylinderOracle::bernoulli(Group::integers(), ab(), vec![0.5, 0.5]).unwrap());
        let code = BlockCode::from_entries(ab(), ab(), 2, [("aa", "a"), ("ab", "b"), ("ba", "b"), ("bb", "a")]).unwrap();
        let coded = CylinderOracle::block_code(parent, code).unwrap();
        let d = coded.marginal(3).unwrap();
        assert_eq!(d.masses().len(), 8);
        for (_, w) in d.support() {
            assert!((w - 0.125).abs() < 1e-12);
        }
        let partial = BlockCode::from_entries(ab(), ab(), 2, [("aa", "a")]);
        assert!(partial.is_err());
    }

    #[test]
    fn block_code_uses_left_multiplied_offsets_on_free_groups() {
        // code reads x(b·g); with a Markov-free parent the check is structural:
        // the coded value at g = a must read the parent at b·a, a new coordinate
        let f2 = Group::free(2);
        let parent = Arc::new(CylinderOracle::bernoulli(f2.clone(), ab(), vec![0.5, 0.5]).unwrap());
        // table index is base-2 with γ_1 most significant; output = coordinate γ_4
        let table: Vec<Symbol> = (0..16).map(|i| decode(i, 2, 4)[3]).collect();
        let code = BlockCode::new(ab(), ab(), 4, table).unwrap();
        // the code projects onto coordinate γ_4 = b, so y(g) = x(b·g)
        let coded = CylinderOracle::block_code(parent, code).unwrap();
        let d = coded.marginal(2).unwrap();
        // y(1) = x(b), y(a) = x(ba): distinct coordinates, so independent
        for (_, w) in d.support() {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn product_oracle_examples() {
        let xy = Alphabet::new(["x", "y"]).unwrap();
        let z = Group::integers();
        let d1 = Arc::new(CylinderOracle::dirac(z.clone(), ab(), 1).unwrap());
        let d2 = Arc::new(CylinderOracle::dirac(z.clone(), xy.clone(), 0).unwrap());
        let prod = CylinderOracle::product(d1, d2).unwrap();
        let m = prod.marginal(3).unwrap();
        assert_eq!(m.masses().len(), 1);
        assert_eq!(prod.alphabet().format_pattern(m.masses().keys().next().unwrap()), "(b,x) (b,x) (b,x)");

        let b1 = Arc::new(CylinderOracle::bernoulli(z.clone(), ab(), vec![0.3, 0.7]).unwrap());
        let b2 = Arc::new(CylinderOracle::bernoulli(z.clone(), xy.clone(), vec![0.6, 0.4]).unwrap());
        let prod = CylinderOracle::product(b1.clone(), b2.clone()).unwrap();
        let direct = CylinderOracle::bernoulli(z.clone(), ab().product(&xy), vec![0.18, 0.12, 0.42, 0.28]).unwrap();
        for m in 1..4 {
            let gap = total_variation(&prod.marginal(m).unwrap(), &direct.marginal(m).unwrap()).unwrap();
            assert!(gap < 1e-12);
        }
        let other = Arc::new(CylinderOracle::dirac(Group::free(1), ab(), 0).unwrap());
        assert!(CylinderOracle::product(b1, other).is_err());
    }

    fn random_oracles(rng: &mut ChaCha8Rng) -> Vec<Arc<CylinderOracle>> {
        let z = Group::integers();
        let mut probs = |k: usize| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let t: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / t).collect::<Vec<f64>>()
        };
        let abc = Alphabet::new(["a", "b", "c"]).unwrap();
        let bern = Arc::new(CylinderOracle::bernoulli(z.clone(), abc.clone(), probs(3)).unwrap());
        let markov = Arc::new(
            CylinderOracle::markov(z.clone(), ab(), vec![probs(2), probs(2)], None).unwrap(),
        );
        let code = BlockCode::from_entries(
            ab(),
            ab(),
            2,
            [("aa", "a"), ("ab", "b"), ("ba", "a"), ("bb", "a")],
        )
        .unwrap();
        let coded = Arc::new(CylinderOracle::block_code(markov.clone(), code).unwrap());
        let prod = Arc::new(CylinderOracle::product(markov.clone(), coded.clone()).unwrap());
        let free_bern = Arc::new(CylinderOracle::bernoulli(Group::free(2), ab(), probs(2)).unwrap());
        vec![bern, markov, coded, prod, free_bern]
    }

    #[test]
    fn marginal_consistency_for_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..3 {
            for o in random_oracles(&mut rng) {
                let top = if o.alphabet().len() > 3 { 5 } else { 7 };
                for m in 1..=top {
                    let d = o.marginal(m).unwrap();
                    assert!((d.total_mass() - 1.0).abs() < MASS_TOL);
                    assert!(o.consistency_defect(m).unwrap() < MASS_TOL, "m = {m}");
                }
            }
        }
    }

    #[test]
    fn tensor_law_for_product_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let os = random_oracles(&mut rng);
        let prod = CylinderOracle::product(os[1].clone(), os[2].clone()).unwrap();
        for m in 1..5 {
            let lhs = prod.marginal(m).unwrap();
            let rhs = os[1].marginal(m).unwrap().tensor(&os[2].marginal(m).unwrap()).unwrap();
            for (p, w) in lhs.masses() {
                assert!((w - rhs.mass_of(p)).abs() < 1e-12);
            }
            assert_eq!(lhs.support().count(), rhs.support().count());
        }
    }

    #[test]
    fn shift_invariance_on_the_integers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let os = random_oracles(&mut rng);
        for o in &os[..4] {
            let base = o.joint(&[Element::Int(0), Element::Int(1)]).unwrap();
            for g in [-7i64, -2, 3, 11] {
                let moved = o.joint(&[Element::Int(g), Element::Int(g + 1)]).unwrap();
                for (p, w) in &base {
                    assert!((w - moved.get(p).copied().unwrap_or(0.0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn block_code_continuity_bound() {
        // two codes that disagree on parent-patterns of mass δ give window-m
        // factor marginals within m·δ in total variation
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let os = random_oracles(&mut rng);
            let parent = if rng.random_bool(0.5) { os[0].clone() } else { os[1].clone() };
            let k = parent.alphabet().len();
            let w = rng.random_range(1..=2);
            let size = k.pow(w as u32);
            let t1: Vec<Symbol> = (0..size).map(|_| rng.random_range(0..2)).collect();
            let mut t2 = t1.clone();
            for slot in t2.iter_mut() {
                if rng.random_bool(0.3) {
                    *slot = rng.random_range(0..2);
                }
            }
            let c1 = BlockCode::new(parent.alphabet().clone(), ab(), w, t1.clone()).unwrap();
            let c2 = BlockCode::new(parent.alphabet().clone(), ab(), w, t2.clone()).unwrap();
            let wlaw = parent.marginal(w).unwrap();
            let delta: f64 = wlaw
                .support()
                .filter(|(p, _)| {
                    let i = encode(p, k);
                    t1[i] != t2[i]
                })
                .map(|(_, w)| w)
                .sum();
            let f1 = CylinderOracle::block_code(parent.clone(), c1).unwrap();
            let f2 = CylinderOracle::block_code(parent.clone(), c2).unwrap();
            for m in 1..=4 {
                let tv = total_variation(&f1.marginal(m).unwrap(), &f2.marginal(m).unwrap()).unwrap();
                assert!(tv <= m as f64 * delta + 1e-12, "tv {tv} > {m}·{delta}");
            }
        }
    }

    fn collapse_tower() -> ObservableTower {
        let a0 = Alphabet::new(["x", "y"]).unwrap();
        let a1 = Alphabet::new(["a", "b", "c"]).unwrap();
        let a2 = Alphabet::new(["p", "q", "r", "s"]).unwrap();
        let s0 = SymbolMap::from_labels(a1.clone(), a0.clone(), &[("a", "x"), ("b", "x"), ("c", "y")]).unwrap();
        let s1 = SymbolMap::from_labels(a2.clone(), a1.clone(), &[("p", "a"), ("q", "b"), ("r", "c"), ("s", "c")])
            .unwrap();
        ObservableTower::from_steps(vec![a0, a1, a2], vec![s0, s1]).unwrap()
    }

    #[test]
    fn tower_projection_examples() {
        let t = collapse_tower();
        let a1 = t.alphabet(1).unwrap().clone();
        let out = t.project_pattern(1, 0, &pat(&a1, "abc")).unwrap();
        assert_eq!(t.alphabet(0).unwrap().format_pattern(&out), "xxy");

        let mut mass = BTreeMap::new();
        for s in ["a", "b", "c"] {
            mass.insert(pat(&a1, s), 1.0 / 3.0);
        }
        let uniform = WindowDistribution::new(1, a1, mass).unwrap();
        let pushed = t.project_distribution(1, 0, &uniform).unwrap();
        let a0 = t.alphabet(0).unwrap();
        assert!((pushed.mass_of(&pat(a0, "x")) - 2.0 / 3.0).abs() < 1e-15);
        assert!((pushed.mass_of(&pat(a0, "y")) - 1.0 / 3.0).abs() < 1e-15);

        assert!(t.composition_law_holds());
        let direct = t.projection(2, 0).unwrap();
        let routed = t.projection(2, 1).unwrap().then(t.projection(1, 0).unwrap()).unwrap();
        assert_eq!(direct, &routed);
        assert!(t.projection(0, 1).is_err());
        assert!(t.projection(3, 0).is_err());
    }

    #[test]
    fn tower_rejects_broken_composition() {
        let t = collapse_tower();
        let mut maps: BTreeMap<(usize, usize), SymbolMap> = BTreeMap::new();
        for i in 0..3 {
            for j in 0..i {
                maps.insert((i, j), t.projection(i, j).unwrap().clone());
            }
        }
        assert!(ObservableTower::from_maps((0..3).map(|l| t.alphabet(l).unwrap().clone()).collect(), maps.clone()).is_ok());
        let broken = SymbolMap::new(t.alphabet(2).unwrap().clone(), t.alphabet(0).unwrap().clone(), vec![1, 1, 1, 1]).unwrap();
        maps.insert((2, 0), broken);
        assert!(ObservableTower::from_maps((0..3).map(|l| t.alphabet(l).unwrap().clone()).collect(), maps).is_err());
    }

    /// Every tower with 3 levels over alphabets of size ≤ 4 built from steps.
    fn all_small_towers() -> Vec<ObservableTower> {
        let alpha = |k: usize| Alphabet::new((0..k).map(|i| format!("{}", (b'a' + i as u8) as char))).unwrap();
        let mut out = Vec::new();
        for k0 in 1..=2usize {
            for k1 in 1..=3usize {
                for k2 in 1..=4usize {
                    let (a0, a1, a2) = (alpha(k0), alpha(k1), alpha(k2));
                    // a few step maps per shape, enumerated exhaustively when small
                    let maps1 = k0.pow(k1 as u32);
                    let maps2 = k1.pow(k2 as u32);
                    for i in 0..maps1.min(8) {
                        for j in 0..maps2.min(16) {
                            let s0 = SymbolMap::new(a1.clone(), a0.clone(), decode(i, k0, k1)).unwrap();
                            let s1 = SymbolMap::new(a2.clone(), a1.clone(), decode(j, k1, k2)).unwrap();
                            out.push(ObservableTower::from_steps(vec![a0.clone(), a1.clone(), a2.clone()], vec![s0, s1]).unwrap());
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn product_tower_composition_law() {
        let towers = all_small_towers();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..400 {
            let t1 = &towers[rng.random_range(0..towers.len())];
            let t2 = &towers[rng.random_range(0..towers.len())];
            let p = product_tower(t1, t2).unwrap();
            assert!(p.composition_law_holds());
            // componentwise projection of a pair pattern
            let top = p.alphabet(2).unwrap().len();
            let pattern: Pattern = (0..3).map(|_| rng.random_range(0..top) as Symbol).collect();
            let inner2 = t2.alphabet(2).unwrap().len() as Symbol;
            let inner0 = t2.alphabet(0).unwrap().len() as Symbol;
            let got = p.project_pattern(2, 0, &pattern).unwrap();
            for (s, g) in pattern.iter().zip(&got) {
                let (a, b) = (s / inner2, s % inner2);
                let expect = t1.projection(2, 0).unwrap().apply(a) * inner0 + t2.projection(2, 0).unwrap().apply(b);
                assert_eq!(*g, expect);
            }
        }
    }

    #[test]
    fn product_with_constant_tower() {
        let t = collapse_tower();
        let one = Alphabet::new(["o"]).unwrap();
        let id = SymbolMap::identity(one.clone());
        let constant = ObservableTower::from_steps(vec![one.clone(), one.clone(), one], vec![id.clone(), id]).unwrap();
        let p = product_tower(&t, &constant).unwrap();
        for i in 0..3 {
            assert_eq!(p.alphabet(i).unwrap().len(), t.alphabet(i).unwrap().len());
            for j in 0..i {
                let (pm, tm) = (p.projection(i, j).unwrap(), t.projection(i, j).unwrap());
                for s in 0..t.alphabet(i).unwrap().len() as Symbol {
                    assert_eq!(pm.apply(s), tm.apply(s));
                }
            }
        }
        assert!(product_tower(&t, &ObservableTower::from_steps(vec![ab()], vec![]).unwrap()).is_err());
    }

    #[test]
    fn serial_round_trip() {
        let o = CylinderOracle::bernoulli(Group::integers(), ab(), vec![0.25, 0.75]).unwrap();
        let d = o.marginal(2).unwrap();
        let back = WindowDistribution::from_serial(&d.to_serial()).unwrap();
        assert_eq!(*d, back);
        let inferred = SerialDistribution {
            m: 2,
            alphabet: None,
            mass: BTreeMap::from([("ab".to_string(), 0.5), ("ba".to_string(), 0.5)]),
        };
        let d = WindowDistribution::from_serial(&inferred).unwrap();
        assert_eq!(d.alphabet(), &ab());
        let bad = SerialDistribution { m: 3, alphabet: None, mass: BTreeMap::from([("ab".to_string(), 1.0)]) };
        assert!(WindowDistribution::from_serial(&bad).is_err());
    }
}
