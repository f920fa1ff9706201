//! Finite permutation models σ: G → Sym(V) and their sofic diagnostics.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, usage, Error, Result};
use crate::group::{Element, Group};

/// A permutation of {0, …, n−1} stored as its image array.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    images: Vec<u32>,
}

impl Permutation {
    pub fn new(images: Vec<u32>) -> Result<Self> {
        let n = images.len();
        let mut seen = vec![false; n];
        for &x in &images {
            let x = x as usize;
            if x >= n || seen[x] {
                return invalid(format!("image array is not a permutation of 0..{n}"));
            }
            seen[x] = true;
        }
        Ok(Permutation { images })
    }

    pub fn identity(n: usize) -> Self {
        Permutation { images: (0..n as u32).collect() }
    }

    /// v ↦ v + shift mod n.
    pub fn rotation(n: usize, shift: i64) -> Self {
        let s = shift.rem_euclid(n as i64) as usize;
        Permutation { images: (0..n).map(|v| ((v + s) % n) as u32).collect() }
    }

    pub fn random<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut images: Vec<u32> = (0..n as u32).collect();
        images.shuffle(rng);
        Permutation { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    #[inline]
    pub fn apply(&self, v: usize) -> usize {
        self.images[v] as usize
    }

    pub fn images(&self) -> &[u32] {
        &self.images
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation> {
        if self.len() != other.len() {
            return usage(format!("cannot compose permutations of {} and {} points", self.len(), other.len()));
        }
        Ok(Permutation { images: other.images.iter().map(|&v| self.images[v as usize]).collect() })
    }

    pub fn inverse(&self) -> Permutation {
        let mut images = vec![0u32; self.len()];
        for (v, &w) in self.images.iter().enumerate() {
            images[w as usize] = v as u32;
        }
        Permutation { images }
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(v, &w)| v as u32 == w)
    }

    /// Number of points where the two permutations disagree.
    pub fn mismatches(&self, other: &Permutation) -> Result<usize> {
        if self.len() != other.len() {
            return usage(format!("size mismatch: {} vs {} points", self.len(), other.len()));
        }
        Ok(self.images.iter().zip(&other.images).filter(|(a, b)| a != b).count())
    }
}

/// Normalised Hamming distance |{v : p(v) ≠ q(v)}| / |V|.
pub fn hamming(p: &Permutation, q: &Permutation) -> Result<f64> {
    let diff = p.mismatches(q)?;
    if p.is_empty() {
        return Ok(0.0);
    }
    Ok(diff as f64 / p.len() as f64)
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    /// ℤ acting on ℤ/n by rotations.
    Cyclic,
    /// ℤ^d acting on the discrete torus (ℤ/side)^d, vertices indexed row-major.
    Lattice { side: usize },
    /// Free group with independent uniform generator images, extended as an
    /// exact homomorphism.
    FreeRandom { seed: u64, generators: Vec<Permutation>, inverses: Vec<Permutation> },
    /// Componentwise action on V' × V'', vertex index v'·|V''| + v''.
    Product(Arc<FiniteModel>, Arc<FiniteModel>),
    /// Arbitrary map; elements absent from the table go to the identity.
    Table(HashMap<Element, Permutation>),
}

/// A map σ from a group to Sym(V), evaluated lazily and memoized.
#[derive(Debug)]
pub struct FiniteModel {
    group: Group,
    size: usize,
    kind: ModelKind,
    memo: RwLock<HashMap<Element, Arc<Permutation>>>,
}

impl Clone for FiniteModel {
    fn clone(&self) -> Self {
        FiniteModel {
            group: self.group.clone(),
            size: self.size,
            kind: self.kind.clone(),
            memo: RwLock::new(HashMap::new()),
        }
    }
}

impl FiniteModel {
    fn from_kind(group: Group, size: usize, kind: ModelKind) -> Self {
        FiniteModel { group, size, kind, memo: RwLock::new(HashMap::new()) }
    }

    /// Rotation model of ℤ on n points.
    pub fn cyclic(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("cyclic model needs n >= 1");
        }
        Ok(Self::from_kind(Group::integers(), n, ModelKind::Cyclic))
    }

    /// ℤ^dim acting by coordinate rotations on a side^dim torus grid.
    pub fn lattice(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 || side == 0 {
            return invalid("lattice model needs dim >= 1 and side >= 1");
        }
        let size = side
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::SizeOverflow(format!("{side}^{dim} vertices")))?;
        Ok(Self::from_kind(Group::lattice(dim), size, ModelKind::Lattice { side }))
    }

    /// F_rank with generator images drawn uniformly from Sym(n) by a ChaCha8
    /// stream seeded with `seed`, generators in order a, b, c, ….
    pub fn free_random(rank: usize, n: usize, seed: u64) -> Result<Self> {
        if rank == 0 || n == 0 {
            return invalid("free_random model needs rank >= 1 and n >= 1");
        }
        let group = Group::free(rank);
        group.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generators: Vec<Permutation> = (0..rank).map(|_| Permutation::random(n, &mut rng)).collect();
        let inverses = generators.iter().map(Permutation::inverse).collect();
        Ok(Self::from_kind(group, n, ModelKind::FreeRandom { seed, generators, inverses }))
    }

    pub fn product(left: Arc<FiniteModel>, right: Arc<FiniteModel>) -> Result<Self> {
        if left.group != right.group {
            return usage(format!("product of models of {} and {}", left.group, right.group));
        }
        let size = left
            .size
            .checked_mul(right.size)
            .ok_or_else(|| Error::SizeOverflow("product model size".into()))?;
        let group = left.group.clone();
        Ok(Self::from_kind(group, size, ModelKind::Product(left, right)))
    }

    /// Explicit table on `n` points; unlisted elements act as the identity.
    pub fn table(group: Group, n: usize, perms: HashMap<Element, Permutation>) -> Result<Self> {
        if n == 0 {
            return invalid("table model needs n >= 1");
        }
        group.validate()?;
        for (g, p) in &perms {
            if !group.contains(g) {
                return invalid(format!("table key {g} is not an element of {group}"));
            }
            if p.len() != n {
                return invalid(format!("table entry for {g} has {} points, expected {n}", p.len()));
            }
        }
        Ok(Self::from_kind(group, n, ModelKind::Table(perms)))
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    /// |V|.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    /// σ^g.
    pub fn eval(&self, g: &Element) -> Result<Arc<Permutation>> {
        if !self.group.contains(g) {
            return usage(format!("element {g:?} does not belong to {}", self.group));
        }
        if let Some(p) = self.memo.read().expect("memo lock").get(g) {
            return Ok(Arc::clone(p));
        }
        let p = Arc::new(self.compute(g)?);
        self.memo.write().expect("memo lock").entry(g.clone()).or_insert_with(|| Arc::clone(&p));
        Ok(p)
    }

    fn compute(&self, g: &Element) -> Result<Permutation> {
        let n = self.size;
        Ok(match (&self.kind, g) {
            (ModelKind::Cyclic, Element::Int(a)) => Permutation::rotation(n, *a),
            (ModelKind::Lattice { side }, Element::Vector(shift)) => {
                let side = *side;
                let images = (0..n)
                    .map(|v| {
                        let mut rest = v;
                        let mut out = 0usize;
                        let mut scale = 1usize;
                        for s in shift.iter().rev() {
                            let coord = rest % side;
                            rest /= side;
                            let moved = (coord as i64 + s).rem_euclid(side as i64) as usize;
                            out += moved * scale;
                            scale *= side;
                        }
                        out as u32
                    })
                    .collect();
                Permutation { images }
            }
            (ModelKind::FreeRandom { generators, inverses, .. }, Element::Word(word)) => {
                // σ^{x1…xk} = σ^{x1} ∘ … ∘ σ^{xk}: apply the last letter first
                let mut images: Vec<u32> = (0..n as u32).collect();
                for &letter in word.iter().rev() {
                    let idx = (letter / 2) as usize;
                    let p = if letter & 1 == 0 { &generators[idx] } else { &inverses[idx] };
                    for x in images.iter_mut() {
                        *x = p.images[*x as usize];
                    }
                }
                Permutation { images }
            }
            (ModelKind::Product(left, right), g) => {
                let (p, q) = (left.eval(g)?, right.eval(g)?);
                let inner = right.size;
                let images = (0..n)
                    .map(|v| (p.apply(v / inner) * inner + q.apply(v % inner)) as u32)
                    .collect();
                Permutation { images }
            }
            (ModelKind::Table(table), g) => {
                table.get(g).cloned().unwrap_or_else(|| Permutation::identity(n))
            }
            _ => unreachable!("group membership checked in eval"),
        })
    }

    /// σ^{γ_1}, …, σ^{γ_m} for the first `m` enumerated elements.
    pub fn window(&self, m: usize) -> Result<Vec<Arc<Permutation>>> {
        self.group.enumerate(m)?.iter().map(|g| self.eval(g)).collect()
    }

    pub fn goodness(&self, k: usize) -> Result<GoodnessReport> {
        goodness(self, k)
    }
}

/// Result of the k-goodness test: the first k enumerated elements must be
/// (1 − 1/k)-separated and every pairwise product must have defect < 1/k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessReport {
    pub k: usize,
    pub pass: bool,
    /// min over i < j ≤ k of d_H(σ^{γ_i}, σ^{γ_j}); 1.0 when k = 1.
    pub separation_min: f64,
    /// max over i, j ≤ k of d_H(σ^{γ_i} ∘ σ^{γ_j}, σ^{γ_i γ_j}).
    pub defect_max: f64,
}

/// Computes the k-goodness report in O(k² n). Thresholds are compared in
/// integer arithmetic so that boundary cases are decided exactly.
pub fn goodness(model: &FiniteModel, k: usize) -> Result<GoodnessReport> {
    if k == 0 {
        return invalid("goodness needs k >= 1");
    }
    let n = model.size();
    let group = model.group();
    let elems = group.enumerate(k)?;
    let perms: Vec<Arc<Permutation>> = elems.iter().map(|g| model.eval(g)).collect::<Result<_>>()?;

    let mut min_sep = usize::MAX;
    for i in 0..k {
        for j in i + 1..k {
            min_sep = min_sep.min(perms[i].mismatches(&perms[j])?);
        }
    }
    let mut max_defect = 0usize;
    for i in 0..k {
        for j in 0..k {
            let composed = perms[i].compose(&perms[j])?;
            let direct = model.eval(&group.mul_unchecked(&elems[i], &elems[j]))?;
            max_defect = max_defect.max(composed.mismatches(&direct)?);
        }
    }
    let (n128, k128) = (n as u128, k as u128);
    // d > 1 − 1/k  ⇔  count·k > n·(k − 1);  d < 1/k  ⇔  count·k < n
    let separated = min_sep == usize::MAX || (min_sep as u128) * k128 > n128 * (k128 - 1);
    let multiplicative = (max_defect as u128) * k128 < n128;
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(GoodnessReport {
        k,
        pass: separated && multiplicative,
        separation_min: if min_sep == usize::MAX { 1.0 } else { frac(min_sep) },
        defect_max: frac(max_defect),
    })
}

/// An ordered list of models of one group with nondecreasing sizes.
#[derive(Debug, Clone)]
pub struct SoficApproximationSeq {
    models: Vec<Arc<FiniteModel>>,
}

impl SoficApproximationSeq {
    pub fn new(models: Vec<Arc<FiniteModel>>) -> Result<Self> {
        if let Some(first) = models.first() {
            for pair in models.windows(2) {
                if pair[1].size() < pair[0].size() {
                    return invalid("model sizes must be nondecreasing");
                }
            }
            if models.iter().any(|m| m.group() != first.group()) {
                return invalid("all models of a sequence must share one group");
            }
        }
        Ok(SoficApproximationSeq { models })
    }

    pub fn models(&self) -> &[Arc<FiniteModel>] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceGoodnessRow {
    pub k: usize,
    /// Least index i₀ such that every model from i₀ on is k-good.
    pub attained_from: Option<usize>,
    pub reports: Vec<GoodnessReport>,
}

pub fn sequence_goodness(seq: &SoficApproximationSeq, k_max: usize) -> Result<Vec<SequenceGoodnessRow>> {
    (1..=k_max)
        .map(|k| {
            let reports: Vec<GoodnessReport> =
                seq.models().iter().map(|m| goodness(m, k)).collect::<Result<_>>()?;
            let tail_start = reports.iter().rposition(|r| !r.pass).map_or(0, |i| i + 1);
            let attained_from = (tail_start < reports.len()).then_some(tail_start);
            Ok(SequenceGoodnessRow { k, attained_from, reports })
        })
        .collect()
}
