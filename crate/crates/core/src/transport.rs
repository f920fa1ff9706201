//! Exact Kantorovich distance between window distributions.
//!
//! Ground metric on A^{W_m}: cost(s, t) = max_{i ≤ m} (1/i)·[s_i ≠ t_i], the
//! truncation of the weighted-sup metric on A^G with the discrete metric on A.
//! Coordinates beyond the window contribute at most 1/(m+1), so the distance
//! l between the full measures satisfies l_m ≤ l ≤ l_m + 1/(m+1).

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::oracle::{Pattern, Symbol, WindowDistribution};

/// Flows and residual masses below this are treated as zero.
const FLOW_EPS: f64 = 1e-15;

/// max_i (1/i)·[s_i ≠ t_i] over the first `s.len()` coordinates.
pub fn ground_distance(s: &[Symbol], t: &[Symbol]) -> Result<f64> {
    if s.len() != t.len() {
        return usage(format!("patterns of lengths {} and {}", s.len(), t.len()));
    }
    Ok(ground_cost(s, t))
}

#[inline]
fn ground_cost(s: &[Symbol], t: &[Symbol]) -> f64 {
    // the first differing coordinate carries the largest weight
    match s.iter().zip(t).position(|(a, b)| a != b) {
        Some(i) => 1.0 / (i + 1) as f64,
        None => 0.0,
    }
}

/// Bounds on the untruncated distance given the window-m value.
pub fn metric_sandwich(window_value: f64, m: usize) -> (f64, f64) {
    (window_value, window_value + 1.0 / (m + 1) as f64)
}

/// A joint distribution over pattern pairs (left pattern, right pattern).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Coupling {
    pub entries: Vec<(Pattern, Pattern, f64)>,
}

impl Coupling {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn cost(&self) -> f64 {
        self.entries.iter().map(|(s, t, w)| w * ground_cost(s, t)).sum()
    }

    pub fn left_marginal(&self) -> std::collections::BTreeMap<Pattern, f64> {
        let mut out = std::collections::BTreeMap::new();
        for (s, _, w) in &self.entries {
            *out.entry(s.clone()).or_insert(0.0) += w;
        }
        out
    }

    pub fn right_marginal(&self) -> std::collections::BTreeMap<Pattern, f64> {
        let mut out = std::collections::BTreeMap::new();
        for (_, t, w) in &self.entries {
            *out.entry(t.clone()).or_insert(0.0) += w;
        }
        out
    }
}

/// Window value with the sandwich for the full-shift metric and an optimal
/// coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceCertificate {
    pub m: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub coupling: Coupling,
}

impl DistanceCertificate {
    pub fn summary(&self) -> DistanceSummary {
        DistanceSummary {
            m: self.m,
            value: self.value,
            lower: self.lower,
            upper: self.upper,
            coupling_nnz: self.coupling.nnz(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub m: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub coupling_nnz: usize,
}

fn check_compatible(d1: &WindowDistribution, d2: &WindowDistribution) -> Result<()> {
    if d1.window() != d2.window() {
        return usage(format!("windows of size {} and {}", d1.window(), d2.window()));
    }
    if d1.alphabet() != d2.alphabet() {
        return usage(format!("alphabets {} and {}", d1.alphabet(), d2.alphabet()));
    }
    Ok(())
}

/// Exact optimal transport between two window distributions.
///
/// The problem is always solved in a canonical orientation, so swapping the
/// arguments gives a bit-identical value and the transposed coupling.
pub fn kantorovich(d1: &WindowDistribution, d2: &WindowDistribution) -> Result<DistanceCertificate> {
    check_compatible(d1, d2)?;
    if canonical_order(d2, d1) == std::cmp::Ordering::Less {
        let mut cert = solve(d2, d1);
        for e in cert.coupling.entries.iter_mut() {
            std::mem::swap(&mut e.0, &mut e.1);
        }
        cert.coupling.entries.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        return Ok(cert);
    }
    Ok(solve(d1, d2))
}

fn canonical_order(a: &WindowDistribution, b: &WindowDistribution) -> std::cmp::Ordering {
    let key = |d: &WindowDistribution| d.support().map(|(p, w)| (p.clone(), w.to_bits())).collect::<Vec<_>>();
    key(a).cmp(&key(b))
}

fn solve(d1: &WindowDistribution, d2: &WindowDistribution) -> DistanceCertificate {
    let m = d1.window();

    // For a metric cost some optimal plan leaves min(μ(x), ν(x)) in place,
    // so the common mass is matched first at zero cost.
    let mut entries: Vec<(Pattern, Pattern, f64)> = Vec::new();
    let mut left: Vec<(&Pattern, f64)> = Vec::new();
    let mut right: Vec<(&Pattern, f64)> = Vec::new();
    for (p, w) in d1.support() {
        let v = d2.mass_of(p);
        let shared = w.min(v);
        if shared > 0.0 {
            entries.push((p.clone(), p.clone(), shared));
        }
        if w - shared > FLOW_EPS {
            left.push((p, w - shared));
        }
    }
    for (q, v) in d2.support() {
        let rest = v - d1.mass_of(q).min(v);
        if rest > FLOW_EPS {
            right.push((q, rest));
        }
    }

    let supply: Vec<f64> = left.iter().map(|x| x.1).collect();
    let demand: Vec<f64> = right.iter().map(|x| x.1).collect();
    let cost: Vec<f64> = left
        .iter()
        .flat_map(|(s, _)| right.iter().map(move |(t, _)| ground_cost(s, t)))
        .collect();
    let plan = min_cost_transport(&supply, &demand, &cost);
    for &(i, j, f) in &plan.flows {
        entries.push((left[i].0.clone(), right[j].0.clone(), f));
    }
    entries.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));

    let value = plan.value.max(0.0);
    let (lower, upper) = metric_sandwich(value, m);
    DistanceCertificate { m, value, lower, upper, coupling: Coupling { entries } }
}

/// ½ Σ |μ(x) − ν(x)|.
pub fn total_variation(d1: &WindowDistribution, d2: &WindowDistribution) -> Result<f64> {
    check_compatible(d1, d2)?;
    let mut sum = 0.0;
    for (p, &w) in d1.masses() {
        sum += (w - d2.mass_of(p)).abs();
    }
    for (q, &v) in d2.masses() {
        if !d1.masses().contains_key(q) {
            sum += v;
        }
    }
    Ok(0.5 * sum)
}

/// Optimal plan of a dense transportation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub value: f64,
    /// `(supply index, demand index, amount)` with amount > 0.
    pub flows: Vec<(usize, usize, f64)>,
}

/// Min-cost flow from `supply` to `demand` with row-major cost matrix
/// `cost[i * demand.len() + j]` (all costs ≥ 0), by successive shortest paths
/// with node potentials. Ships min(Σ supply, Σ demand).
pub fn min_cost_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> TransportPlan {
    let (ns, nt) = (supply.len(), demand.len());
    assert_eq!(cost.len(), ns * nt, "cost matrix shape");
    let mut flow = vec![0.0f64; ns * nt];
    let mut rs: Vec<f64> = supply.to_vec();
    let mut rt: Vec<f64> = demand.to_vec();
    let mut pot_s = vec![0.0f64; ns];
    let mut pot_t = vec![0.0f64; nt];

    const NONE: usize = usize::MAX;
    let mut dist_s = vec![0.0f64; ns];
    let mut dist_t = vec![0.0f64; nt];
    let mut done_s = vec![false; ns];
    let mut done_t = vec![false; nt];
    let mut prev_t = vec![NONE; nt]; // source feeding sink t on the tree
    let mut prev_s = vec![NONE; ns]; // sink feeding source s (backward edge)

    loop {
        if rs.iter().all(|&x| x <= FLOW_EPS) || rt.iter().all(|&x| x <= FLOW_EPS) {
            break;
        }
        for s in 0..ns {
            dist_s[s] = if rs[s] > FLOW_EPS { 0.0 } else { f64::INFINITY };
            done_s[s] = false;
            prev_s[s] = NONE;
        }
        for t in 0..nt {
            dist_t[t] = f64::INFINITY;
            done_t[t] = false;
            prev_t[t] = NONE;
        }

        // dense Dijkstra on the residual graph
        let mut target = NONE;
        let mut reach = 0.0;
        loop {
            let mut best = f64::INFINITY;
            let mut pick: Option<(bool, usize)> = None;
            for s in 0..ns {
                if !done_s[s] && dist_s[s] < best {
                    best = dist_s[s];
                    pick = Some((true, s));
                }
            }
            for t in 0..nt {
                if !done_t[t] && dist_t[t] < best {
                    best = dist_t[t];
                    pick = Some((false, t));
                }
            }
            let Some((is_source, u)) = pick else { break };
            if is_source {
                done_s[u] = true;
                let row = &cost[u * nt..(u + 1) * nt];
                for t in 0..nt {
                    if done_t[t] {
                        continue;
                    }
                    let reduced = (row[t] + pot_s[u] - pot_t[t]).max(0.0);
                    let nd = best + reduced;
                    if nd < dist_t[t] {
                        dist_t[t] = nd;
                        prev_t[t] = u;
                    }
                }
            } else {
                done_t[u] = true;
                if rt[u] > FLOW_EPS {
                    target = u;
                    reach = best;
                    break;
                }
                for s in 0..ns {
                    if done_s[s] || flow[s * nt + u] <= FLOW_EPS {
                        continue;
                    }
                    let reduced = (-cost[s * nt + u] + pot_t[u] - pot_s[s]).max(0.0);
                    let nd = best + reduced;
                    if nd < dist_s[s] {
                        dist_s[s] = nd;
                        prev_s[s] = u;
                    }
                }
            }
        }
        if target == NONE {
            break;
        }
        for s in 0..ns {
            pot_s[s] += dist_s[s].min(reach);
        }
        for t in 0..nt {
            pot_t[t] += dist_t[t].min(reach);
        }

        // walk back to the originating source, collecting the bottleneck
        let mut delta = rt[target];
        let mut t = target;
        let origin;
        loop {
            let s = prev_t[t];
            let back = prev_s[s];
            if back == NONE {
                origin = s;
                break;
            }
            delta = delta.min(flow[s * nt + back]);
            t = back;
        }
        delta = delta.min(rs[origin]);

        let mut t = target;
        loop {
            let s = prev_t[t];
            flow[s * nt + t] += delta;
            let back = prev_s[s];
            if back == NONE {
                break;
            }
            flow[s * nt + back] -= delta;
            if flow[s * nt + back] <= FLOW_EPS {
                flow[s * nt + back] = 0.0;
            }
            t = back;
        }
        rs[origin] -= delta;
        rt[target] -= delta;
    }

    let mut value = 0.0;
    let mut flows = Vec::new();
    for s in 0..ns {
        for t in 0..nt {
            let f = flow[s * nt + t];
            if f > FLOW_EPS {
                value += f * cost[s * nt + t];
                flows.push((s, t, f));
            }
        }
    }
    TransportPlan { value, flows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Alphabet, MASS_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn ab() -> Alphabet {
        Alphabet::new(["a", "b"]).unwrap()
    }

    fn dist(m: usize, entries: &[(&str, f64)]) -> WindowDistribution {
        let a = ab();
        let mass = entries.iter().map(|(p, w)| (a.parse_pattern(p).unwrap(), *w)).collect();
        WindowDistribution::new(m, a, mass).unwrap()
    }

    /// Minimum over the north-west-corner vertices of every row and column
    /// ordering: every vertex of the transportation polytope arises this way.
    /// Minimum over all basic feasible solutions: every spanning tree of
    /// the bipartite supply/demand graph determines at most one vertex of the
    /// transportation polytope, found by peeling leaves.
    fn brute_force(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
        let (ns, nt) = (supply.len(), demand.len());
        let edges: Vec<(usize, usize)> = (0..ns).flat_map(|i| (0..nt).map(move |j| (i, j))).collect();
        let size = ns + nt - 1;
        let mut best = f64::INFINITY;
        let mut pick: Vec<usize> = (0..size).collect();
        loop {
            if let Some(v) = tree_vertex(&pick.iter().map(|&e| edges[e]).collect::<Vec<_>>(), supply, demand, cost) {
                best = best.min(v);
            }
            // next combination
            let mut k = size;
            while k > 0 && pick[k - 1] == edges.len() - size + k - 1 {
                k -= 1;
            }
            if k == 0 {
                return best;
            }
            pick[k - 1] += 1;
            for l in k..size {
                pick[l] = pick[l - 1] + 1;
            }
        }
    }

    fn tree_vertex(tree: &[(usize, usize)], supply: &[f64], demand: &[f64], cost: &[f64]) -> Option<f64> {
        let (ns, nt) = (supply.len(), demand.len());
        let mut rest: Vec<f64> = supply.iter().chain(demand).copied().collect();
        let mut live = vec![true; tree.len()];
        let mut total = 0.0;
        for _ in 0..tree.len() {
            let mut degree = vec![0usize; ns + nt];
            for (e, &(i, j)) in tree.iter().enumerate() {
                if live[e] {
                    degree[i] += 1;
                    degree[ns + j] += 1;
                }
            }
            let leaf_edge = tree.iter().enumerate().position(|(e, &(i, j))| live[e] && (degree[i] == 1 || degree[ns + j] == 1))?;
            let (i, j) = tree[leaf_edge];
            let f = if degree[i] == 1 { rest[i] } else { rest[ns + j] };
            if f < -1e-12 {
                return None;
            }
            rest[i] -= f;
            rest[ns + j] -= f;
            total += f * cost[i * nt + j];
            live[leaf_edge] = false;
        }
        rest.iter().all(|r| r.abs() < 1e-9).then_some(total)
    }

    #[test]
    fn ground_distance_examples() {
        assert_eq!(ground_distance(&[0, 1, 0], &[0, 1, 0]).unwrap(), 0.0);
        assert_eq!(ground_distance(&[0, 1, 0], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(ground_distance(&[0, 1, 0, 1], &[0, 1, 1, 1]).unwrap(), 1.0 / 3.0);
        assert!(ground_distance(&[0], &[0, 0]).is_err());
    }

    #[test]
    fn kantorovich_examples() {
        let u = dist(2, &[("aa", 0.25), ("ab", 0.25), ("ba", 0.25), ("bb", 0.25)]);
        let c = kantorovich(&u, &u).unwrap();
        assert_eq!(c.value, 0.0);
        assert!(c.coupling.entries.iter().all(|(s, t, _)| s == t));

        let c = kantorovich(&dist(1, &[("a", 1.0)]), &dist(1, &[("b", 1.0)])).unwrap();
        assert_eq!(c.value, 1.0);

        let c = kantorovich(&dist(1, &[("a", 0.5), ("b", 0.5)]), &dist(1, &[("a", 1.0)])).unwrap();
        assert!((c.value - 0.5).abs() < 1e-15);

        // ab and bb differ at the first coordinate, so the moved half pays 1
        let c = kantorovich(&dist(2, &[("aa", 0.5), ("ab", 0.5)]), &dist(2, &[("aa", 0.5), ("bb", 0.5)])).unwrap();
        assert!((c.value - 0.5).abs() < 1e-15);

        let c = kantorovich(&dist(2, &[("ab", 0.5), ("ba", 0.5)]), &dist(2, &[("aa", 0.25), ("ab", 0.25), ("ba", 0.25), ("bb", 0.25)])).unwrap();
        assert!((c.value - 0.25).abs() < 1e-15);
        assert_eq!(c.lower, c.value);
        assert!((c.upper - c.value - 1.0 / 3.0).abs() < 1e-15);

        let err = kantorovich(&dist(1, &[("a", 1.0)]), &dist(2, &[("aa", 1.0)]));
        assert!(err.is_err());
    }

    #[test]
    fn sandwich_examples() {
        let (lo, hi) = metric_sandwich(0.1, 2);
        assert_eq!(lo, 0.1);
        assert!((hi - (0.1 + 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(metric_sandwich(0.0, 4), (0.0, 0.2));
    }

    #[test]
    fn total_variation_examples() {
        let d = dist(1, &[("a", 0.3), ("b", 0.7)]);
        assert_eq!(total_variation(&d, &d).unwrap(), 0.0);
        assert_eq!(total_variation(&dist(1, &[("a", 1.0)]), &dist(1, &[("b", 1.0)])).unwrap(), 1.0);
    }

    fn random_dist(rng: &mut ChaCha8Rng, m: usize, k: usize, max_support: usize) -> WindowDistribution {
        let alphabet = Alphabet::new((0..k).map(|i| ((b'a' + i as u8) as char).to_string())).unwrap();
        let n = rng.random_range(1..=max_support);
        let mut mass = BTreeMap::new();
        for _ in 0..n {
            let p: Pattern = (0..m).map(|_| rng.random_range(0..k) as Symbol).collect();
            *mass.entry(p).or_insert(0.0) += rng.random_range(0.05..1.0);
        }
        let total: f64 = mass.values().sum();
        mass.values_mut().for_each(|w| *w /= total);
        WindowDistribution::new(m, alphabet, mass).unwrap()
    }

    #[test]
    fn matches_brute_force_on_small_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..300 {
            let m = rng.random_range(1..=3);
            let (d1, d2) = (random_dist(&mut rng, m, 2, 4), random_dist(&mut rng, m, 2, 4));
            let left: Vec<_> = d1.support().collect();
            let right: Vec<_> = d2.support().collect();
            let cost: Vec<f64> = left
                .iter()
                .flat_map(|(s, _)| right.iter().map(|(t, _)| ground_distance(s, t).unwrap()))
                .collect();
            let supply: Vec<f64> = left.iter().map(|x| x.1).collect();
            let demand: Vec<f64> = right.iter().map(|x| x.1).collect();
            let expect = brute_force(&supply, &demand, &cost);
            let got = kantorovich(&d1, &d2).unwrap();
            assert!((got.value - expect).abs() < 1e-9, "{} vs {expect}", got.value);
            // raw solver without the diagonal pre-match agrees too
            let raw = min_cost_transport(&supply, &demand, &cost);
            assert!((raw.value - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn coupling_is_feasible_and_optimal_value_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..200 {
            let m = rng.random_range(1..=4);
            let (d1, d2) = (random_dist(&mut rng, m, 3, 30), random_dist(&mut rng, m, 3, 30));
            let c = kantorovich(&d1, &d2).unwrap();
            for (p, w) in c.coupling.left_marginal() {
                assert!((w - d1.mass_of(&p)).abs() < MASS_TOL);
            }
            for (q, w) in c.coupling.right_marginal() {
                assert!((w - d2.mass_of(&q)).abs() < MASS_TOL);
            }
            assert!(c.coupling.entries.iter().all(|e| e.2 >= 0.0));
            assert!((c.coupling.cost() - c.value).abs() < 1e-9);
            assert!(c.value <= total_variation(&d1, &d2).unwrap() + 1e-12);
        }
    }

    #[test]
    fn metric_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let m = rng.random_range(1..=3);
            let d: Vec<_> = (0..3).map(|_| random_dist(&mut rng, m, 2, 6)).collect();
            let l = |a: &WindowDistribution, b: &WindowDistribution| kantorovich(a, b).unwrap().value;
            assert_eq!(l(&d[0], &d[1]), l(&d[1], &d[0]));
            assert!(l(&d[0], &d[0]) < 1e-9);
            assert!(l(&d[0], &d[2]) <= l(&d[0], &d[1]) + l(&d[1], &d[2]) + 1e-7);
        }
    }

    #[test]
    fn projection_to_shorter_window_is_contractive() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..200 {
            let (d1, d2) = (random_dist(&mut rng, 4, 2, 10), random_dist(&mut rng, 4, 2, 10));
            let l4 = kantorovich(&d1, &d2).unwrap().value;
            let l2 = kantorovich(&d1.restrict(2).unwrap(), &d2.restrict(2).unwrap()).unwrap().value;
            assert!(l2 <= l4 + 1e-12);
            assert!(l4 - l2 <= 1.0 / 3.0 + 1e-12);
        }
    }
}
