//! Countable groups with a fixed element enumeration and exact word arithmetic.
//!
//! Every group carries a documented enumeration γ_1, γ_2, … with γ_1 the
//! identity. Downstream metrics weight coordinate i by 1/i, so these orders
//! are part of the observable behaviour and must never change:
//!
//! * integers: 0, 1, −1, 2, −2, …
//! * integer lattice ℤ^d: max-norm shells of increasing radius, each shell in
//!   lexicographic order of the coordinate vectors;
//! * free group: reduced words by length, then lexicographically with the
//!   letter order a < a⁻¹ < b < b⁻¹ < …;
//! * finite cyclic ℤ/q: 0, 1, …, q−1;
//! * direct product: Cantor diagonal pairing of the factor enumerations,
//!   pair (i, j) of factor indices ranked (i+j)(i+j+1)/2 + j.
//!
//! Free-group words are written with lowercase letters for generators and
//! uppercase for their inverses (`"aB"` is a·b⁻¹); the empty word is `"1"`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, usage, Error, Result};

/// A free-group letter: `2 * generator + (1 if inverse)`. The numeric order
/// of the codes is the lexicographic letter order a < A < b < B < ….
pub type Letter = u16;

const MAX_FREE_RANK: usize = 26;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Group {
    Integers,
    IntLattice { dim: usize },
    Free { rank: usize },
    Cyclic { order: u64 },
    Product { left: Box<Group>, right: Box<Group> },
}

/// Canonical element representation. Uniqueness of the canonical form makes
/// structural equality coincide with group equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    Int(i64),
    Vector(Vec<i64>),
    Word(Vec<Letter>),
    Residue(u64),
    Pair(Box<Element>, Box<Element>),
}

impl Group {
    pub fn integers() -> Self {
        Group::Integers
    }

    pub fn lattice(dim: usize) -> Self {
        Group::IntLattice { dim }
    }

    pub fn free(rank: usize) -> Self {
        Group::Free { rank }
    }

    pub fn cyclic(order: u64) -> Self {
        Group::Cyclic { order }
    }

    pub fn product(left: Group, right: Group) -> Self {
        Group::Product { left: Box::new(left), right: Box::new(right) }
    }

    /// Checks the family parameters (positive rank, dimension, order).
    pub fn validate(&self) -> Result<()> {
        match self {
            Group::Integers => Ok(()),
            Group::IntLattice { dim } if *dim == 0 => invalid("lattice dimension must be >= 1"),
            Group::Free { rank } if *rank == 0 || *rank > MAX_FREE_RANK => {
                invalid(format!("free group rank must be in 1..={MAX_FREE_RANK}"))
            }
            Group::Cyclic { order } if *order == 0 => invalid("cyclic order must be >= 1"),
            Group::Product { left, right } => {
                left.validate()?;
                right.validate()
            }
            _ => Ok(()),
        }
    }

    /// Number of elements, or `None` for infinite groups.
    pub fn order(&self) -> Option<u64> {
        match self {
            Group::Cyclic { order } => Some(*order),
            Group::Product { left, right } => Some(left.order()?.checked_mul(right.order()?)?),
            _ => None,
        }
    }

    pub fn identity(&self) -> Element {
        match self {
            Group::Integers => Element::Int(0),
            Group::IntLattice { dim } => Element::Vector(vec![0; *dim]),
            Group::Free { .. } => Element::Word(Vec::new()),
            Group::Cyclic { .. } => Element::Residue(0),
            Group::Product { left, right } => {
                Element::Pair(Box::new(left.identity()), Box::new(right.identity()))
            }
        }
    }

    /// Whether `g` is a canonical element of this group.
    pub fn contains(&self, g: &Element) -> bool {
        match (self, g) {
            (Group::Integers, Element::Int(_)) => true,
            (Group::IntLattice { dim }, Element::Vector(v)) => v.len() == *dim,
            (Group::Free { rank }, Element::Word(w)) => {
                w.iter().all(|&l| ((l / 2) as usize) < *rank)
                    && w.windows(2).all(|p| p[0] ^ 1 != p[1])
            }
            (Group::Cyclic { order }, Element::Residue(r)) => r < order,
            (Group::Product { left, right }, Element::Pair(a, b)) => {
                left.contains(a) && right.contains(b)
            }
            _ => false,
        }
    }

    fn check(&self, g: &Element) -> Result<()> {
        if self.contains(g) {
            Ok(())
        } else {
            usage(format!("element {g:?} does not belong to {self}"))
        }
    }

    pub fn multiply(&self, g: &Element, h: &Element) -> Result<Element> {
        self.check(g)?;
        self.check(h)?;
        Ok(self.mul_unchecked(g, h))
    }

    pub(crate) fn mul_unchecked(&self, g: &Element, h: &Element) -> Element {
        match (self, g, h) {
            (Group::Integers, Element::Int(a), Element::Int(b)) => Element::Int(a + b),
            (Group::IntLattice { .. }, Element::Vector(a), Element::Vector(b)) => {
                Element::Vector(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            (Group::Free { .. }, Element::Word(a), Element::Word(b)) => {
                let mut out = a.clone();
                for &l in b {
                    if out.last() == Some(&(l ^ 1)) {
                        out.pop();
                    } else {
                        out.push(l);
                    }
                }
                Element::Word(out)
            }
            (Group::Cyclic { order }, Element::Residue(a), Element::Residue(b)) => {
                Element::Residue(((*a as u128 + *b as u128) % *order as u128) as u64)
            }
            (Group::Product { left, right }, Element::Pair(a1, b1), Element::Pair(a2, b2)) => {
                Element::Pair(
                    Box::new(left.mul_unchecked(a1, a2)),
                    Box::new(right.mul_unchecked(b1, b2)),
                )
            }
            _ => unreachable!("membership checked by caller"),
        }
    }

    pub fn inverse(&self, g: &Element) -> Result<Element> {
        self.check(g)?;
        Ok(self.inv_unchecked(g))
    }

    fn inv_unchecked(&self, g: &Element) -> Element {
        match (self, g) {
            (Group::Integers, Element::Int(a)) => Element::Int(-a),
            (Group::IntLattice { .. }, Element::Vector(v)) => {
                Element::Vector(v.iter().map(|x| -x).collect())
            }
            (Group::Free { .. }, Element::Word(w)) => {
                Element::Word(w.iter().rev().map(|l| l ^ 1).collect())
            }
            (Group::Cyclic { order }, Element::Residue(r)) => {
                Element::Residue((order - r) % order)
            }
            (Group::Product { left, right }, Element::Pair(a, b)) => {
                Element::Pair(Box::new(left.inv_unchecked(a)), Box::new(right.inv_unchecked(b)))
            }
            _ => unreachable!("membership checked by caller"),
        }
    }

    /// The first `k` elements γ_1..γ_k of the documented enumeration.
    ///
    /// Fails only for finite groups asked for more elements than they have.
    pub fn enumerate(&self, k: usize) -> Result<Vec<Element>> {
        if let Some(order) = self.order() {
            if k as u128 > order as u128 {
                return usage(format!("{self} has only {order} elements, asked for {k}"));
            }
        }
        Ok(self.enumerate_prefix(k))
    }

    /// Enumeration prefix of length `min(k, |G|)`.
    fn enumerate_prefix(&self, k: usize) -> Vec<Element> {
        match self {
            Group::Integers => (0..k as i64)
                .map(|i| Element::Int(if i % 2 == 1 { (i + 1) / 2 } else { -(i / 2) }))
                .collect(),
            Group::IntLattice { dim } => lattice_prefix(*dim, k),
            Group::Free { rank } => free_prefix(*rank, k),
            Group::Cyclic { order } => (0..(k as u64).min(*order)).map(Element::Residue).collect(),
            Group::Product { left, right } => {
                let lhs = left.enumerate_prefix(k);
                let rhs = right.enumerate_prefix(k);
                let mut out = Vec::with_capacity(k);
                let max_diag = lhs.len() + rhs.len();
                'outer: for s in 0..max_diag {
                    for j in 0..=s {
                        let i = s - j;
                        if i < lhs.len() && j < rhs.len() {
                            if out.len() == k {
                                break 'outer;
                            }
                            out.push(Element::Pair(
                                Box::new(lhs[i].clone()),
                                Box::new(rhs[j].clone()),
                            ));
                        }
                    }
                }
                out
            }
        }
    }

    /// Canonical text form of an element.
    pub fn format(&self, g: &Element) -> String {
        format_element(g)
    }

    /// Parses the canonical text form (whitespace is ignored).
    pub fn parse(&self, s: &str) -> Result<Element> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let g = self.parse_compact(&compact)?;
        self.check(&g).map_err(|_| Error::Invalid(format!("'{s}' is not an element of {self}")))?;
        Ok(g)
    }

    fn parse_compact(&self, s: &str) -> Result<Element> {
        let bad = || Error::Invalid(format!("cannot parse '{s}' as an element of {self}"));
        match self {
            Group::Integers => s.parse().map(Element::Int).map_err(|_| bad()),
            Group::Cyclic { .. } => s.parse().map(Element::Residue).map_err(|_| bad()),
            Group::IntLattice { .. } => {
                let inner = s.strip_prefix('[').and_then(|t| t.strip_suffix(']')).unwrap_or(s);
                inner
                    .split(',')
                    .map(|t| t.parse::<i64>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()
                    .map(Element::Vector)
            }
            Group::Free { .. } => {
                if s.is_empty() || s == "1" {
                    return Ok(Element::Word(Vec::new()));
                }
                let mut word: Vec<Letter> = Vec::new();
                for c in s.chars() {
                    let letter = match c {
                        'a'..='z' => 2 * (c as u16 - 'a' as u16),
                        'A'..='Z' => 2 * (c as u16 - 'A' as u16) + 1,
                        _ => return Err(bad()),
                    };
                    // accept non-reduced input and reduce it
                    if word.last() == Some(&(letter ^ 1)) {
                        word.pop();
                    } else {
                        word.push(letter);
                    }
                }
                Ok(Element::Word(word))
            }
            Group::Product { left, right } => {
                let inner = s.strip_prefix('(').and_then(|t| t.strip_suffix(')')).ok_or_else(bad)?;
                let split = top_level_comma(inner).ok_or_else(bad)?;
                let a = left.parse_compact(&inner[..split])?;
                let b = right.parse_compact(&inner[split + 1..])?;
                Ok(Element::Pair(Box::new(a), Box::new(b)))
            }
        }
    }

    /// A random element whose "size" (absolute value, coordinates, word
    /// length) is at most `scale`. Used by property tests.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R, scale: u32) -> Element {
        let scale = scale.max(1) as i64;
        match self {
            Group::Integers => Element::Int(rng.random_range(-scale..=scale)),
            Group::IntLattice { dim } => {
                Element::Vector((0..*dim).map(|_| rng.random_range(-scale..=scale)).collect())
            }
            Group::Free { rank } => {
                let len = rng.random_range(0..=scale);
                let mut word: Vec<Letter> = Vec::new();
                while (word.len() as i64) < len {
                    let l = rng.random_range(0..(2 * *rank) as Letter);
                    if word.last() != Some(&(l ^ 1)) {
                        word.push(l);
                    }
                }
                Element::Word(word)
            }
            Group::Cyclic { order } => Element::Residue(rng.random_range(0..*order)),
            Group::Product { left, right } => Element::Pair(
                Box::new(left.random_element(rng, scale as u32)),
                Box::new(right.random_element(rng, scale as u32)),
            ),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Integers => write!(f, "Z"),
            Group::IntLattice { dim } => write!(f, "Z^{dim}"),
            Group::Free { rank } => write!(f, "F_{rank}"),
            Group::Cyclic { order } => write!(f, "Z/{order}"),
            Group::Product { left, right } => write!(f, "({left} x {right})"),
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_element(self))
    }
}

fn format_element(g: &Element) -> String {
    match g {
        Element::Int(a) => a.to_string(),
        Element::Residue(r) => r.to_string(),
        Element::Vector(v) => {
            let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            format!("[{}]", parts.join(","))
        }
        Element::Word(w) if w.is_empty() => "1".to_string(),
        Element::Word(w) => w
            .iter()
            .map(|&l| {
                let base = if l & 1 == 0 { b'a' } else { b'A' };
                (base + (l / 2) as u8) as char
            })
            .collect(),
        Element::Pair(a, b) => format!("({},{})", format_element(a), format_element(b)),
    }
}

fn top_level_comma(s: &str) -> Option<usize> {
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

fn lattice_prefix(dim: usize, k: usize) -> Vec<Element> {
    let mut out = Vec::with_capacity(k);
    let mut radius: i64 = 0;
    while out.len() < k {
        // vectors of [-r, r]^d in lexicographic order, kept when on the shell
        let side = (2 * radius + 1) as u64;
        let total = side.pow(dim as u32);
        for idx in 0..total {
            let mut rest = idx;
            let mut v = vec![0i64; dim];
            for slot in v.iter_mut().rev() {
                *slot = (rest % side) as i64 - radius;
                rest /= side;
            }
            if v.iter().any(|x| x.abs() == radius) {
                out.push(Element::Vector(v));
                if out.len() == k {
                    return out;
                }
            }
        }
        radius += 1;
    }
    out
}

fn free_prefix(rank: usize, k: usize) -> Vec<Element> {
    let mut out = Vec::with_capacity(k);
    if k == 0 {
        return out;
    }
    let letters = (2 * rank) as Letter;
    let mut layer: Vec<Vec<Letter>> = vec![Vec::new()];
    out.push(Element::Word(Vec::new()));
    while out.len() < k {
        let mut next = Vec::new();
        for w in &layer {
            for l in 0..letters {
                if w.last() == Some(&(l ^ 1)) {
                    continue;
                }
                let mut nw = w.clone();
                nw.push(l);
                out.push(Element::Word(nw.clone()));
                if out.len() == k {
                    return out;
                }
                next.push(nw);
            }
        }
        layer = next;
    }
    out
}
