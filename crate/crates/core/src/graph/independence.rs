//! Small graphs as `u64` adjacency bitsets and their independence numbers.

use rand::Rng;
use serde::Serialize;

use crate::error::{GmcError, Result};
use crate::rng::{domain, stream};
use crate::table::ExperimentTable;

pub const MAX_VERTICES: usize = 64;
pub const MAX_EXACT: usize = 30;

/// Undirected graph on at most 64 vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapGraph {
    pub n: usize,
    pub adjacency: Vec<u64>,
}

impl OverlapGraph {
    pub fn empty(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_VERTICES {
            return Err(GmcError::BadConfig(format!("graphs need 1..={MAX_VERTICES} vertices, got {n}")));
        }
        Ok(OverlapGraph { n, adjacency: vec![0; n] })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for &(a, b) in edges {
            g.add_edge(a, b)?;
        }
        Ok(g)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for a in 0..n {
            for b in a + 1..n {
                g.add_edge(a, b)?;
            }
        }
        Ok(g)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<()> {
        if a >= self.n || b >= self.n || a == b {
            return Err(GmcError::BadParams(format!("invalid edge ({a}, {b}) on {} vertices", self.n)));
        }
        self.adjacency[a] |= 1 << b;
        self.adjacency[b] |= 1 << a;
        Ok(())
    }

    #[inline]
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a] >> b & 1 == 1
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(|r| r.count_ones() as usize).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.degrees().iter().sum::<usize>() / 2
    }

    pub fn average_degree(&self) -> f64 {
        self.degrees().iter().sum::<usize>() as f64 / self.n as f64
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Induced subgraph on the first `n` vertices.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n {
            return Err(GmcError::BadParams(format!("prefix {n} of a {}-vertex graph", self.n)));
        }
        let mask = full(n);
        Ok(OverlapGraph { n, adjacency: self.adjacency[..n].iter().map(|r| r & mask).collect() })
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for b in a + 1..self.n {
                if self.has_edge(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Edge list with 1-based vertex labels.
    pub fn to_edge_csv(&self) -> String {
        let mut s = String::from("k,m\n");
        for (a, b) in self.edges() {
            s.push_str(&format!("{},{}\n", a + 1, b + 1));
        }
        s
    }

    fn complement(&self) -> Vec<u64> {
        let all = full(self.n);
        (0..self.n).map(|v| !self.adjacency[v] & all & !(1u64 << v)).collect()
    }
}

fn full(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Exact independence number: a maximum clique of the complement by
/// branch and bound, pruned with greedy coloring.
pub fn alpha_exact(g: &OverlapGraph) -> Result<usize> {
    if g.n > MAX_EXACT {
        return Err(GmcError::TooLargeForExact { n: g.n, max: MAX_EXACT });
    }
    let comp = g.complement();
    let mut best = 0;
    expand(&comp, 0, full(g.n), &mut best);
    Ok(best)
}

fn expand(adj: &[u64], size: usize, mut cand: u64, best: &mut usize) {
    if cand == 0 {
        *best = (*best).max(size);
        return;
    }
    // color classes give an upper bound on the clique size reachable from each vertex
    let mut order = Vec::with_capacity(cand.count_ones() as usize);
    let mut uncolored = cand;
    let mut color = 0;
    while uncolored != 0 {
        color += 1;
        let mut avail = uncolored;
        while avail != 0 {
            let v = avail.trailing_zeros() as usize;
            avail &= !(1u64 << v);
            avail &= !adj[v];
            uncolored &= !(1u64 << v);
            order.push((v, color));
        }
    }
    for &(v, c) in order.iter().rev() {
        if size + c <= *best {
            return;
        }
        expand(adj, size + 1, cand & adj[v], best);
        cand &= !(1u64 << v);
    }
}

/// Size of the set picked by repeatedly taking a vertex of minimum remaining degree.
pub fn alpha_greedy(g: &OverlapGraph) -> usize {
    let mut alive = full(g.n);
    let mut size = 0;
    while alive != 0 {
        let mut best = None;
        let mut rest = alive;
        while rest != 0 {
            let v = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let d = (g.adjacency[v] & alive).count_ones();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((v, d));
            }
        }
        let (v, _) = best.unwrap();
        size += 1;
        alive &= !(g.adjacency[v] | (1u64 << v));
    }
    size
}

/// `sum_v 1 / (d(v) + 1)`.
pub fn caro_wei(g: &OverlapGraph) -> f64 {
    g.degrees().iter().map(|&d| 1.0 / (d as f64 + 1.0)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceStats {
    pub n: usize,
    pub alpha_exact: Option<usize>,
    pub alpha_greedy: usize,
    pub caro_wei: f64,
    /// `N / (1 + average degree)`.
    pub bound_avg: f64,
    /// `N / (max degree + 1)`.
    pub bound_max: f64,
}

pub fn independence_stats(g: &OverlapGraph) -> IndependenceStats {
    let n = g.n as f64;
    IndependenceStats {
        n: g.n,
        alpha_exact: alpha_exact(g).ok(),
        alpha_greedy: alpha_greedy(g),
        caro_wei: caro_wei(g),
        bound_avg: n / (1.0 + g.average_degree()),
        bound_max: n / (g.max_degree() as f64 + 1.0),
    }
}

/// `D(beta || alpha)` between Bernoulli laws.
pub fn kl_divergence(beta: f64, alpha: f64) -> Result<f64> {
    for (name, v) in [("beta", beta), ("alpha", alpha)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(GmcError::OutOfRange(format!("{name} must lie strictly inside (0,1), got {v}")));
        }
    }
    Ok(beta * (beta / alpha).ln() + (1.0 - beta) * ((1.0 - beta) / (1.0 - alpha)).ln())
}

/// Erdos-Renyi graph on `n` vertices with edge probability `p`.
pub fn random_graph(n: usize, p: f64, seed: u64, index: u64) -> Result<OverlapGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GmcError::OutOfRange(format!("edge probability must lie in [0,1], got {p}")));
    }
    let mut g = OverlapGraph::empty(n)?;
    let mut rng = stream(seed, domain::GRAPH, index);
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                g.add_edge(a, b)?;
            }
        }
    }
    Ok(g)
}

/// Independence bounds on `count` random graphs with sizes cycling through
/// `1..=max_n` and densities through `(0, 1)`; the last column counts violated bounds.
pub fn bound_check(count: usize, max_n: usize, seed: u64) -> Result<ExperimentTable> {
    if max_n == 0 || max_n > MAX_EXACT {
        return Err(GmcError::OutOfRange(format!("graph size must lie in 1..={MAX_EXACT}, got {max_n}")));
    }
    let mut table = ExperimentTable::new(
        "graph_bounds",
        &["graph", "N", "p", "edges", "alpha_exact", "alpha_greedy", "caro_wei", "bound_avg", "bound_max", "violations"],
        crate::table::config_hash(&(count, max_n)),
        seed,
    );
    for i in 0..count {
        let n = 1 + i % max_n;
        let p = ((i / max_n) % 9 + 1) as f64 / 10.0;
        let g = random_graph(n, p, seed, i as u64)?;
        table.push(stats_row(i as f64, p, &g)?);
    }
    Ok(table)
}

/// One `graph_bounds` row for `g`.
pub fn stats_row(label: f64, p: f64, g: &OverlapGraph) -> Result<Vec<f64>> {
    let s = independence_stats(g);
    let a = alpha_exact(g)? as f64;
    let tol = 1e-12;
    let violations = [
        a + tol < s.caro_wei,
        s.caro_wei + tol < s.bound_avg,
        a + tol < s.bound_max,
        a < s.alpha_greedy as f64,
    ]
    .iter()
    .filter(|&&v| v)
    .count();
    Ok(vec![
        label,
        g.n as f64,
        p,
        g.edge_count() as f64,
        a,
        s.alpha_greedy as f64,
        s.caro_wei,
        s.bound_avg,
        s.bound_max,
        violations as f64,
    ])
}
