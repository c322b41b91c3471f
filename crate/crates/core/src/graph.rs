//! Communication topology, spectra and round-synchronous delivery.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdkoError, Result};
use crate::rng::{substream, tag};
use crate::token::{HeldToken, KnowledgeToken};

const GEOMETRIC_RETRIES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphKind {
    Ring,
    Complete,
    Path,
    RandomGeometric { radius: f64 },
    EdgeList { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    laplacian: DMatrix<f64>,
    fiedler: f64,
    mixing: DMatrix<f64>,
}

impl CommGraph {
    /// Build from an edge set over `n` nodes. Fails if the graph is disconnected.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(AdkoError::invalid("n", "need at least one agent"));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(AdkoError::EdgeList(format!("edge ({a}, {b}) out of range for n = {n}")));
            }
            if a == b {
                return Err(AdkoError::EdgeList(format!("self loop at {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &set {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        if !is_connected(&neighbors) {
            return Err(AdkoError::Disconnected { retries: 1 });
        }
        let mut laplacian = DMatrix::zeros(n, n);
        for (i, nb) in neighbors.iter().enumerate() {
            laplacian[(i, i)] = nb.len() as f64;
            for &j in nb {
                laplacian[(i, j)] = -1.0;
            }
        }
        let fiedler = if n < 2 { 0.0 } else { sorted_eigenvalues(laplacian.clone())[1] };
        let mixing = metropolis(&neighbors);
        Ok(CommGraph { n, edges: set, neighbors, laplacian, fiedler, mixing })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Second-smallest Laplacian eigenvalue (0 for a single node).
    pub fn fiedler(&self) -> f64 {
        self.fiedler
    }

    pub fn mixing(&self) -> &DMatrix<f64> {
        &self.mixing
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.mixing[(i, j)]
    }

    pub fn regular_degree(&self) -> Option<usize> {
        let d = self.degree(0);
        self.neighbors.iter().all(|nb| nb.len() == d).then_some(d)
    }
}

fn is_connected(neighbors: &[Vec<usize>]) -> bool {
    let n = neighbors.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &neighbors[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn metropolis(neighbors: &[Vec<usize>]) -> DMatrix<f64> {
    let n = neighbors.len();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for &j in &neighbors[i] {
            w[(i, j)] = 1.0 / (1.0 + neighbors[i].len().max(neighbors[j].len()) as f64);
        }
    }
    for i in 0..n {
        let off: f64 = neighbors[i].iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// Metropolis–Hastings weights `1 / (1 + max(deg_i, deg_j))` on edges.
pub fn metropolis_weights(g: &CommGraph) -> DMatrix<f64> {
    metropolis(&g.neighbors)
}

pub fn build_graph(kind: &GraphKind, n: usize, seed: u64) -> Result<CommGraph> {
    if n == 0 {
        return Err(AdkoError::invalid("n", "need at least one agent"));
    }
    match kind {
        GraphKind::Ring => {
            let edges: Vec<_> = match n {
                1 => vec![],
                2 => vec![(0, 1)],
                _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
            };
            CommGraph::from_edges(n, edges)
        }
        GraphKind::Complete => {
            let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
            CommGraph::from_edges(n, edges)
        }
        GraphKind::Path => CommGraph::from_edges(n, (1..n).map(|i| (i - 1, i))),
        GraphKind::RandomGeometric { radius } => {
            if !(radius.is_finite() && *radius > 0.0) {
                return Err(AdkoError::invalid("radius", "must be finite and > 0"));
            }
            let mut rng = substream(seed, &[tag::GRAPH]);
            for _ in 0..GEOMETRIC_RETRIES {
                let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        let d = (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1);
                        if d <= *radius {
                            edges.push((i, j));
                        }
                    }
                }
                match CommGraph::from_edges(n, edges) {
                    Ok(g) => return Ok(g),
                    Err(AdkoError::Disconnected { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(AdkoError::Disconnected { retries: GEOMETRIC_RETRIES })
        }
        GraphKind::EdgeList { path } => load_edge_list(path, n),
    }
}

/// One `i j` pair per line, 0-indexed. Blank lines and `#` comments are skipped.
pub fn load_edge_list(path: &Path, n: usize) -> Result<CommGraph> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text, n)
}

pub fn parse_edge_list(text: &str, n: usize) -> Result<CommGraph> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| AdkoError::EdgeList(format!("line {}: `{s}` is not a node index", lineno + 1)))
        };
        if parts.len() != 2 {
            return Err(AdkoError::EdgeList(format!("line {}: expected two indices", lineno + 1)));
        }
        edges.push((parse(parts[0])?, parse(parts[1])?));
    }
    CommGraph::from_edges(n, edges)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralCheck {
    pub lambda2: f64,
    pub mu2: f64,
    pub residual: f64,
    pub regular_degree: Option<usize>,
}

/// Compare the Laplacian spectrum with the random-walk matrix `D⁻¹A`.
///
/// Regular graphs: residual is `|λ₂ − e(1 − μ₂)|`. Otherwise it is
/// `|λ̂₂ − (1 − μ₂)|` with `λ̂₂` from the normalized Laplacian.
pub fn spectral_gap_check(g: &CommGraph) -> Result<SpectralCheck> {
    let n = g.n();
    if n < 2 {
        return Err(AdkoError::SingletonGraph);
    }
    let lambda = sorted_eigenvalues(g.laplacian.clone());
    // D^{-1/2} A D^{-1/2} is similar to D⁻¹A and symmetric.
    let mut sym_walk = DMatrix::zeros(n, n);
    for i in 0..n {
        for &j in g.neighbors(i) {
            sym_walk[(i, j)] = 1.0 / ((g.degree(i) * g.degree(j)) as f64).sqrt();
        }
    }
    let mut mu = sorted_eigenvalues(sym_walk);
    mu.reverse();
    let mu2 = mu[1];
    let regular = g.regular_degree();
    let residual = match regular {
        Some(e) => (lambda[1] - e as f64 * (1.0 - mu2)).abs(),
        None => {
            let mut norm_l = DMatrix::zeros(n, n);
            for i in 0..n {
                norm_l[(i, i)] = 1.0;
                for &j in g.neighbors(i) {
                    norm_l[(i, j)] = -1.0 / ((g.degree(i) * g.degree(j)) as f64).sqrt();
                }
            }
            (sorted_eigenvalues(norm_l)[1] - (1.0 - mu2)).abs()
        }
    };
    Ok(SpectralCheck { lambda2: lambda[1], mu2, residual, regular_degree: regular })
}

/// Route each agent's outgoing token to its neighbors. Inboxes are ordered
/// by sender id; agents never receive their own token.
pub fn deliver(g: &CommGraph, outbox: &[Vec<KnowledgeToken>], round: usize) -> Result<Vec<Vec<HeldToken>>> {
    if outbox.len() != g.n() {
        return Err(AdkoError::DimensionMismatch { expected: g.n(), got: outbox.len() });
    }
    let mut inbox = vec![Vec::new(); g.n()];
    for (sender, toks) in outbox.iter().enumerate() {
        if toks.len() > 1 {
            return Err(AdkoError::TooManyTokens { agent: sender, round, count: toks.len() });
        }
        if let Some(t) = toks.first() {
            for &j in g.neighbors(sender) {
                inbox[j].push(HeldToken { token: t.clone(), via: sender });
            }
        }
    }
    Ok(inbox)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::Signal;

    fn token(agent: usize, round: usize) -> KnowledgeToken {
        KnowledgeToken {
            signal: Signal::Success,
            advantage: 0.5,
            fidelity: 0.1,
            embedding: vec![0.0],
            insight: None,
            agent,
            round,
        }
    }

    #[test]
    fn fiedler_values() {
        let k4 = build_graph(&GraphKind::Complete, 4, 0).unwrap();
        assert!((k4.fiedler() - 4.0).abs() < 1e-8);
        let p2 = build_graph(&GraphKind::Path, 2, 0).unwrap();
        assert_eq!(p2.laplacian(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert!((p2.fiedler() - 2.0).abs() < 1e-8);
        let r5 = build_graph(&GraphKind::Ring, 5, 0).unwrap();
        let want = 2.0 * (1.0 - (2.0 * std::f64::consts::PI / 5.0).cos());
        assert!((r5.fiedler() - want).abs() < 1e-8);
    }

    #[test]
    fn metropolis_examples() {
        let p2 = build_graph(&GraphKind::Path, 2, 0).unwrap();
        assert_eq!(p2.mixing(), &DMatrix::from_element(2, 2, 0.5));
        let k4 = build_graph(&GraphKind::Complete, 4, 0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((k4.weight(i, j) - 0.25).abs() < 1e-15);
            }
        }
        assert_eq!(metropolis_weights(&k4), *k4.mixing());
    }

    #[test]
    fn mixing_is_doubly_stochastic_and_contracting() {
        for seed in 0..100 {
            let n = 2 + (seed as usize % 12);
            let g = build_graph(&GraphKind::RandomGeometric { radius: 0.6 }, n, seed).unwrap();
            assert!(g.fiedler() > 0.0);
            let w = g.mixing();
            for i in 0..n {
                let row: f64 = w.row(i).sum();
                let col: f64 = w.column(i).sum();
                assert!((row - 1.0).abs() < 1e-12 && (col - 1.0).abs() < 1e-12);
                for j in 0..n {
                    assert_eq!(w[(i, j)], w[(j, i)]);
                    if i != j && w[(i, j)] > 0.0 {
                        assert!(g.neighbors(i).contains(&j));
                    }
                }
            }
            let centered = w - DMatrix::from_element(n, n, 1.0 / n as f64);
            let rho = SymmetricEigen::new(centered).eigenvalues.amax();
            assert!(rho < 1.0 - 1e-12, "seed {seed}: {rho}");
        }
    }

    #[test]
    fn spectral_relation() {
        let r6 = build_graph(&GraphKind::Ring, 6, 0).unwrap();
        let c = spectral_gap_check(&r6).unwrap();
        assert_eq!(c.regular_degree, Some(2));
        assert!(c.residual < 1e-8);

        let k4 = build_graph(&GraphKind::Complete, 4, 0).unwrap();
        let c = spectral_gap_check(&k4).unwrap();
        assert!((c.lambda2 - 4.0).abs() < 1e-8);
        assert!((c.mu2 + 1.0 / 3.0).abs() < 1e-8);
        assert!(c.residual < 1e-8);

        let p4 = build_graph(&GraphKind::Path, 4, 0).unwrap();
        let c = spectral_gap_check(&p4).unwrap();
        assert_eq!(c.regular_degree, None);
        assert!(c.residual < 1e-8);

        let one = build_graph(&GraphKind::Ring, 1, 0).unwrap();
        assert!(matches!(spectral_gap_check(&one), Err(AdkoError::SingletonGraph)));
    }

    #[test]
    fn delivery_follows_adjacency() {
        let ring = build_graph(&GraphKind::Ring, 4, 0).unwrap();
        let mut out = vec![Vec::new(); 4];
        out[0].push(token(0, 1));
        let inbox = deliver(&ring, &out, 1).unwrap();
        assert_eq!(inbox[1].len(), 1);
        assert_eq!(inbox[3].len(), 1);
        assert!(inbox[2].is_empty());
        assert!(inbox[0].is_empty());
        assert_eq!(inbox[1][0].via, 0);

        let k3 = build_graph(&GraphKind::Complete, 3, 0).unwrap();
        let out = vec![vec![token(0, 1)], vec![], vec![]];
        let inbox = deliver(&k3, &out, 1).unwrap();
        assert_eq!((inbox[1].len(), inbox[2].len()), (1, 1));

        let bad = vec![vec![token(0, 1), token(0, 1)], vec![], vec![]];
        assert!(matches!(deliver(&k3, &bad, 1), Err(AdkoError::TooManyTokens { agent: 0, .. })));
    }

    #[test]
    fn receiving_sets_equal_neighborhoods() {
        for seed in 0..20 {
            let n = 3 + seed as usize % 8;
            let g = build_graph(&GraphKind::RandomGeometric { radius: 0.7 }, n, seed).unwrap();
            let out: Vec<_> = (0..n).map(|i| vec![token(i, 1)]).collect();
            let inbox = deliver(&g, &out, 1).unwrap();
            for j in 0..n {
                let senders: Vec<_> = inbox[j].iter().map(|h| h.via).collect();
                assert_eq!(senders, g.neighbors(j));
            }
        }
    }

    #[test]
    fn edge_list_parsing() {
        let g = parse_edge_list("# square\n0 1\n1 2\n\n2 3\n3 0\n", 4).unwrap();
        assert_eq!(g.regular_degree(), Some(2));
        assert!(matches!(parse_edge_list("0 1\n", 3), Err(AdkoError::Disconnected { .. })));
        assert!(parse_edge_list("0 x\n", 2).is_err());
        assert!(parse_edge_list("0 5\n", 2).is_err());
    }
}
