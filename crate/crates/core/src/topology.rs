//! Communication graphs and gossip matrices.
//!
//! A [`Graph`] is an undirected simple graph over `m` clients. Its
//! [`MixingMatrix`] uses Metropolis-Hastings weights, which are symmetric
//! and doubly stochastic on any graph and have a simple unit eigenvalue
//! whenever the graph is connected.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Row-sum tolerance for a valid gossip matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Maximum asymmetry accepted by [`validate_gossip`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues within this distance of 1 count as unit eigenvalues.
pub const UNIT_EIGEN_TOL: f64 = 1e-9;

const TIME_VARYING_ATTEMPTS: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Grid,
    #[serde(alias = "exp")]
    Exponential,
    Full,
    TimeVaryingK,
}

impl TopologyKind {
    pub const STATIC: [TopologyKind; 4] = [
        TopologyKind::Ring,
        TopologyKind::Grid,
        TopologyKind::Exponential,
        TopologyKind::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Grid => "grid",
            TopologyKind::Exponential => "exponential",
            TopologyKind::Full => "full",
            TopologyKind::TimeVaryingK => "time_varying_k",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(TopologyKind::Ring),
            "grid" => Ok(TopologyKind::Grid),
            "exp" | "exponential" => Ok(TopologyKind::Exponential),
            "full" => Ok(TopologyKind::Full),
            "time_varying_k" | "time-varying-k" | "random" => Ok(TopologyKind::TimeVaryingK),
            other => Err(Error::config(format!("unknown topology kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub m: usize,
    /// Neighbour budget, used by `time_varying_k` only.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl TopologySpec {
    pub fn new(kind: TopologyKind, m: usize) -> Self {
        TopologySpec {
            kind,
            m,
            k: None,
            seed: 0,
        }
    }

    pub fn time_varying(m: usize, k: usize, seed: u64) -> Self {
        TopologySpec {
            kind: TopologyKind::TimeVaryingK,
            m,
            k: Some(k),
            seed,
        }
    }

    /// All violated constraints, empty when the spec is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.m == 0 {
            out.push("topology.m: must be at least 1".to_string());
        }
        match self.kind {
            TopologyKind::Grid if self.m > 0 && grid_shape(self.m).is_none() => {
                out.push(format!(
                    "topology.m: grid needs m = r*c with r, c >= 2, but {} has no such factorization",
                    self.m
                ));
            }
            TopologyKind::TimeVaryingK => match self.k {
                None => out.push("topology.k: required for time_varying_k".to_string()),
                Some(0) => out.push("topology.k: must be at least 1".to_string()),
                Some(k) if k >= self.m => out.push(format!(
                    "topology.k: time_varying_k requires k < m (k = {k}, m = {})",
                    self.m
                )),
                Some(_) => {}
            },
            _ => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn is_time_varying(&self) -> bool {
        self.kind == TopologyKind::TimeVaryingK
    }
}

/// Most-square factorization `r * c = m` with `2 <= r <= c`.
pub fn grid_shape(m: usize) -> Option<(usize, usize)> {
    let mut best = None;
    let mut r = 2;
    while r * r <= m {
        if m.is_multiple_of(r) {
            best = Some((r, m / r));
        }
        r += 1;
    }
    best
}

/// Undirected simple graph on nodes `0..m`. Edges are stored as `(i, j)`
/// with `i < j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn from_edges(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            if i >= m || j >= m {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for m = {m}")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Graph { m, edges: set })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.m];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        if self.m <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.m
    }
}

/// The graph for `(spec, round)`. Static kinds ignore `round`.
pub fn build_graph(spec: &TopologySpec, round: u64) -> Result<Graph> {
    build_graph_at(spec, round, 0)
}

/// Like [`build_graph`] but with an extra sub-round counter, so a
/// time-varying topology can draw a fresh graph for every gossip step.
pub fn build_graph_at(spec: &TopologySpec, round: u64, step: u64) -> Result<Graph> {
    spec.validate()?;
    let m = spec.m;
    match spec.kind {
        TopologyKind::Ring => Graph::from_edges(m, (0..m).filter(|_| m > 1).map(|i| (i, (i + 1) % m))),
        TopologyKind::Grid => {
            let (r, c) = grid_shape(m).expect("validated");
            let mut edges = Vec::with_capacity(2 * m);
            for row in 0..r {
                for col in 0..c {
                    let id = row * c + col;
                    if col + 1 < c {
                        edges.push((id, id + 1));
                    }
                    if row + 1 < r {
                        edges.push((id, id + c));
                    }
                }
            }
            Graph::from_edges(m, edges)
        }
        TopologyKind::Exponential => {
            let mut edges = Vec::new();
            let mut hop = 1;
            while hop < m {
                edges.extend((0..m).map(|i| (i, (i + hop) % m)));
                hop *= 2;
            }
            Graph::from_edges(m, edges)
        }
        TopologyKind::Full => Graph::from_edges(
            m,
            (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))),
        ),
        TopologyKind::TimeVaryingK => {
            let k = spec.k.expect("validated");
            for attempt in 0..TIME_VARYING_ATTEMPTS {
                let mut rng = rng::stream(spec.seed, &[domain::TOPOLOGY, round, step, attempt]);
                let mut edges = Vec::with_capacity(m * k);
                for i in 0..m {
                    for p in sample(&mut rng, m - 1, k) {
                        let j = if p >= i { p + 1 } else { p };
                        edges.push((i, j));
                    }
                }
                let g = Graph::from_edges(m, edges)?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(Error::config(format!(
                "time_varying_k with k = {k} produced no connected graph in {TIME_VARYING_ATTEMPTS} draws; increase k"
            )))
        }
    }
}

/// Symmetric doubly-stochastic gossip matrix with its spectral summary.
#[derive(Clone, Debug)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    lambda: f64,
    eigenvalues: Vec<f64>,
    /// Nonzero entries per row, ascending column order, diagonal included.
    rows: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// `max(|lambda_2|, |lambda_m|)`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn spectral_gap(&self) -> f64 {
        1.0 - self.lambda
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }
}

/// Eigenvalues of a symmetric matrix, descending.
pub(crate) fn sorted_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Metropolis-Hastings weights: `w_ij = 1 / (1 + max(d_i, d_j))` on edges,
/// self-weight takes the remaining row mass.
pub fn mixing_matrix(g: &Graph) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let m = g.m();
    let deg = g.degrees();
    let mut w = DMatrix::zeros(m, m);
    for &(i, j) in g.edges() {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    Ok(from_symmetric(w))
}

fn from_symmetric(w: DMatrix<f64>) -> MixingMatrix {
    let m = w.nrows();
    let eigenvalues = sorted_eigenvalues(&w);
    let lambda = if m < 2 {
        0.0
    } else {
        eigenvalues[1].abs().max(eigenvalues[m - 1].abs())
    };
    let rows = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| w[(i, j)] != 0.0)
                .map(|j| (j, w[(i, j)]))
                .collect()
        })
        .collect();
    MixingMatrix {
        w,
        lambda,
        eigenvalues,
        rows,
    }
}

pub fn spectral_gap(w: &MixingMatrix) -> f64 {
    w.spectral_gap()
}

/// Operator norm of `W^t - P`, where `P = (1/m) 11^T`.
pub fn power_deviation(w: &MixingMatrix, t: u32) -> f64 {
    let m = w.m();
    let mut pow = DMatrix::<f64>::identity(m, m);
    for _ in 0..t {
        pow = &pow * w.matrix();
    }
    let p = DMatrix::from_element(m, m, 1.0 / m as f64);
    let diff = pow - p;
    let sym = (&diff + diff.transpose()) * 0.5;
    sorted_eigenvalues(&sym)
        .into_iter()
        .fold(0.0, |acc: f64, e| acc.max(e.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    /// Support matches the graph, entries in `[0, 1]`.
    Graph,
    Symmetry,
    /// `W 1 = 1` and the unit eigenvalue is simple.
    NullSpace,
    /// All eigenvalues in `(-1, 1]`.
    Spectral,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClauseResult {
    pub clause: Clause,
    pub passed: bool,
    /// Largest measured violation (0 when the clause holds exactly).
    pub deviation: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub clauses: Vec<ClauseResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, which: Clause) -> &ClauseResult {
        self.clauses
            .iter()
            .find(|c| c.clause == which)
            .expect("every clause is reported")
    }

    pub fn passed(&self, which: Clause) -> bool {
        self.clause(which).passed
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.clauses {
            writeln!(
                f,
                "{:<10} {}  deviation={:.3e}  {}",
                format!("{:?}", c.clause),
                if c.passed { "PASS" } else { "FAIL" },
                c.deviation,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Checks the four gossip-matrix properties on an arbitrary square matrix.
/// When `graph` is given, the off-diagonal support must match its edges.
/// Eigenvalue checks on a non-symmetric input use its symmetric part.
pub fn validate_gossip(w: &DMatrix<f64>, graph: Option<&Graph>) -> ValidationReport {
    let m = w.nrows();
    if w.ncols() != m || m == 0 {
        let fail = |clause| ClauseResult {
            clause,
            passed: false,
            deviation: f64::INFINITY,
            detail: format!("matrix is {}x{}, not a non-empty square", w.nrows(), w.ncols()),
        };
        return ValidationReport {
            clauses: vec![
                fail(Clause::Graph),
                fail(Clause::Symmetry),
                fail(Clause::NullSpace),
                fail(Clause::Spectral),
            ],
        };
    }

    // graph consistency
    let mut support_dev: f64 = 0.0;
    let mut support_bad = Vec::new();
    if let Some(g) = graph {
        if g.m() != m {
            support_bad.push(format!("graph has {} nodes, matrix has {m}", g.m()));
            support_dev = f64::INFINITY;
        }
    }
    for i in 0..m {
        for j in 0..m {
            let v = w[(i, j)];
            if !(0.0..=1.0).contains(&v) {
                support_dev = support_dev.max(if v < 0.0 { -v } else { v - 1.0 });
                support_bad.push(format!("w[{i}][{j}] = {v} outside [0, 1]"));
            }
            if let Some(g) = graph.filter(|g| g.m() == m) {
                if i != j {
                    let edge = g.has_edge(i, j);
                    if edge && v <= 0.0 {
                        support_dev = support_dev.max(v.abs());
                        support_bad.push(format!("edge ({i}, {j}) has weight {v}"));
                    } else if !edge && v != 0.0 {
                        support_dev = support_dev.max(v.abs());
                        support_bad.push(format!("non-edge ({i}, {j}) has weight {v}"));
                    }
                }
            }
        }
    }
    let graph_clause = ClauseResult {
        clause: Clause::Graph,
        passed: support_bad.is_empty(),
        deviation: support_dev,
        detail: summarize(&support_bad, "support consistent"),
    };

    // symmetry
    let asym = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .fold(0.0_f64, |acc, (i, j)| acc.max((w[(i, j)] - w[(j, i)]).abs()));
    let symmetric = asym <= SYMMETRY_TOL;
    let sym_clause = ClauseResult {
        clause: Clause::Symmetry,
        passed: symmetric,
        deviation: asym,
        detail: format!("max |W - W^T| = {asym:.3e}"),
    };

    let sym_part = (w + w.transpose()) * 0.5;
    let ev = sorted_eigenvalues(&sym_part);

    // null space: W1 = 1 and eigenvalue one is simple
    let row_dev = (0..m)
        .map(|i| (w.row(i).sum() - 1.0).abs())
        .fold(0.0_f64, f64::max);
    let unit_count = ev.iter().filter(|e| (*e - 1.0).abs() <= UNIT_EIGEN_TOL).count();
    let mut ns_detail = format!("max |row sum - 1| = {row_dev:.3e}; unit eigenvalues = {unit_count}");
    if !symmetric {
        ns_detail.push_str(" (eigenvalues of symmetric part)");
    }
    let ns_clause = ClauseResult {
        clause: Clause::NullSpace,
        passed: row_dev <= ROW_SUM_TOL && unit_count == 1,
        deviation: row_dev,
        detail: ns_detail,
    };

    // spectral bounds -I < W <= I
    let top = ev[0];
    let bottom = ev[m - 1];
    let spec_dev = (top - 1.0).max(0.0).max(if bottom <= -1.0 { -1.0 - bottom } else { 0.0 });
    let spec_clause = ClauseResult {
        clause: Clause::Spectral,
        passed: symmetric && top <= 1.0 + UNIT_EIGEN_TOL && bottom > -1.0 + UNIT_EIGEN_TOL,
        deviation: spec_dev,
        detail: if symmetric {
            format!("eigenvalues in [{bottom:.6}, {top:.6}]")
        } else {
            format!("not symmetric; symmetric part spans [{bottom:.6}, {top:.6}]")
        },
    };

    ValidationReport {
        clauses: vec![graph_clause, sym_clause, ns_clause, spec_clause],
    }
}

fn summarize(items: &[String], ok: &str) -> String {
    match items.len() {
        0 => ok.to_string(),
        1..=3 => items.join("; "),
        n => format!("{}; ... ({} more)", items[..3].join("; "), n - 3),
    }
}

/// JSON debug dump of a graph and its gossip matrix.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TopologyDump {
    pub m: usize,
    pub edges: Vec<[usize; 2]>,
    pub lambda: f64,
    pub spectral_gap: f64,
}

impl TopologyDump {
    pub fn new(g: &Graph, w: &MixingMatrix) -> Self {
        TopologyDump {
            m: g.m(),
            edges: g.edges().iter().map(|&(i, j)| [i, j]).collect(),
            lambda: w.lambda(),
            spectral_gap: w.spectral_gap(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn edges(g: &Graph) -> Vec<(usize, usize)> {
        g.edges().iter().copied().collect()
    }

    fn built(kind: TopologyKind, m: usize) -> (Graph, MixingMatrix) {
        let g = build_graph(&TopologySpec::new(kind, m), 0).unwrap();
        let w = mixing_matrix(&g).unwrap();
        (g, w)
    }

    #[test]
    fn ring_of_four() {
        let g = build_graph(&TopologySpec::new(TopologyKind::Ring, 4), 0).unwrap();
        assert_eq!(edges(&g), vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn full_of_three() {
        let g = build_graph(&TopologySpec::new(TopologyKind::Full, 3), 0).unwrap();
        assert_eq!(edges(&g), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn exponential_of_eight() {
        // hops 1, 2, 4 from every node, wrapping mod 8; hop 4 pairs coincide.
        let g = build_graph(&TopologySpec::new(TopologyKind::Exponential, 8), 0).unwrap();
        let mut hand = BTreeSet::new();
        for i in 0..8usize {
            for hop in [1usize, 2, 4] {
                let j = (i + hop) % 8;
                hand.insert((i.min(j), i.max(j)));
            }
        }
        assert_eq!(g.edges(), &hand);
        assert_eq!(g.num_edges(), 20);
        for j in [1, 2, 4] {
            assert!(g.has_edge(0, j));
        }
    }

    #[test]
    fn grid_shape_is_most_square() {
        assert_eq!(grid_shape(16), Some((4, 4)));
        assert_eq!(grid_shape(12), Some((3, 4)));
        assert_eq!(grid_shape(18), Some((3, 6)));
        assert_eq!(grid_shape(4), Some((2, 2)));
        assert_eq!(grid_shape(17), None);
        assert_eq!(grid_shape(2), None);
    }

    #[test]
    fn grid_is_non_wrapping_lattice() {
        let g = build_graph(&TopologySpec::new(TopologyKind::Grid, 6), 0).unwrap();
        // 2 x 3
        assert_eq!(edges(&g), vec![(0, 1), (0, 3), (1, 2), (1, 4), (2, 5), (3, 4), (4, 5)]);
    }

    #[test]
    fn grid_with_prime_m_is_config_error() {
        let err = build_graph(&TopologySpec::new(TopologyKind::Grid, 17), 0).unwrap_err();
        match err {
            Error::Config(v) => assert!(v[0].contains("grid"), "{v:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn time_varying_requires_k_below_m() {
        assert!(build_graph(&TopologySpec::time_varying(5, 5, 1), 0).is_err());
        assert!(build_graph(&TopologySpec::time_varying(5, 0, 1), 0).is_err());
        let spec = TopologySpec {
            k: None,
            ..TopologySpec::time_varying(5, 2, 1)
        };
        assert!(build_graph(&spec, 0).is_err());
    }

    #[test]
    fn time_varying_is_deterministic_per_round() {
        let spec = TopologySpec::time_varying(20, 3, 42);
        let a = build_graph(&spec, 7).unwrap();
        let b = build_graph(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = build_graph(&spec, 8).unwrap();
        assert_ne!(a, c);
        for i in 0..20 {
            assert!(a.degrees()[i] >= 3);
        }
        assert!(a.is_connected());
    }

    #[test]
    fn ring_of_four_metropolis() {
        let (_, w) = built(TopologyKind::Ring, 4);
        for i in 0..4 {
            assert!(close(w.get(i, i), 1.0 / 3.0, 1e-15));
            assert!(close(w.get(i, (i + 1) % 4), 1.0 / 3.0, 1e-15));
            assert_eq!(w.get(i, (i + 2) % 4), 0.0);
        }
        // circulant spectrum 1/3 + 2/3 cos(2 pi k / 4) = {1, 1/3, -1/3, 1/3}
        let oracle = (1..4)
            .map(|k| (1.0 / 3.0 + 2.0 / 3.0 * (2.0 * std::f64::consts::PI * k as f64 / 4.0).cos()).abs())
            .fold(0.0, f64::max);
        assert!(close(w.lambda(), oracle, 1e-12));
        assert!(close(w.lambda(), 1.0 / 3.0, 1e-12));
        assert!(close(spectral_gap(&w), 2.0 / 3.0, 1e-12));
    }

    #[test]
    fn full_graph_is_projector() {
        for m in [2, 5, 10] {
            let (_, w) = built(TopologyKind::Full, m);
            for i in 0..m {
                for j in 0..m {
                    assert!(close(w.get(i, j), 1.0 / m as f64, 1e-15));
                }
            }
            assert!(w.lambda() < 1e-12);
            assert!(close(spectral_gap(&w), 1.0, 1e-12));
        }
    }

    #[test]
    fn two_node_path() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let w = mixing_matrix(&g).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(w.get(i, j), 0.5);
            }
        }
        assert!(w.lambda() < 1e-15);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let g = Graph::from_edges(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(mixing_matrix(&g), Err(Error::Disconnected)));
    }

    #[test]
    fn larger_ring_has_smaller_gap() {
        let (_, w16) = built(TopologyKind::Ring, 16);
        let (_, w64) = built(TopologyKind::Ring, 64);
        assert!(w64.spectral_gap() < w16.spectral_gap());
    }

    #[test]
    fn metropolis_ring_passes_validation() {
        let (g, w) = built(TopologyKind::Ring, 4);
        let report = validate_gossip(w.matrix(), Some(&g));
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn scaled_row_fails_row_sum() {
        let (g, w) = built(TopologyKind::Ring, 4);
        let mut bad = w.matrix().clone();
        for j in 0..4 {
            bad[(2, j)] *= 1.01;
        }
        let report = validate_gossip(&bad, Some(&g));
        let ns = report.clause(Clause::NullSpace);
        assert!(!ns.passed);
        assert!(close(ns.deviation, 0.01, 1e-12), "{}", ns.deviation);
    }

    #[test]
    fn nonsymmetric_stochastic_fails_symmetry() {
        use rand::Rng;
        let mut r = rng::stream(3, &[]);
        let m = 5;
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            let row: Vec<f64> = (0..m).map(|_| r.random::<f64>() + 0.01).collect();
            let s: f64 = row.iter().sum();
            for j in 0..m {
                a[(i, j)] = row[j] / s;
            }
        }
        let report = validate_gossip(&a, None);
        assert!(!report.passed(Clause::Symmetry));
        assert!(!report.passed(Clause::Spectral));
    }

    #[test]
    fn support_mismatch_fails_graph_clause() {
        let (_, w) = built(TopologyKind::Full, 4);
        let ring = build_graph(&TopologySpec::new(TopologyKind::Ring, 4), 0).unwrap();
        assert!(!validate_gossip(w.matrix(), Some(&ring)).passed(Clause::Graph));
    }

    #[test]
    fn swap_matrix_fails_spectral() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let report = validate_gossip(&a, None);
        assert!(report.passed(Clause::Symmetry));
        assert!(!report.passed(Clause::Spectral));
    }

    #[test]
    fn power_deviation_examples() {
        let (_, ring) = built(TopologyKind::Ring, 4);
        assert!(close(power_deviation(&ring, 0), 1.0, 1e-12));
        assert!(close(power_deviation(&ring, 3), 1.0 / 27.0, 1e-12));
        let (_, full) = built(TopologyKind::Full, 6);
        assert!(power_deviation(&full, 1) < 1e-12);
        assert!(close(power_deviation(&full, 0), 1.0, 1e-12));
    }

    #[test]
    fn dump_has_expected_shape() {
        let (g, w) = built(TopologyKind::Ring, 4);
        let v = serde_json::to_value(TopologyDump::new(&g, &w)).unwrap();
        assert_eq!(v["m"], 4);
        assert_eq!(v["edges"].as_array().unwrap().len(), 4);
        assert!(v["lambda"].is_number());
        assert!(v["spectral_gap"].is_number());
    }

    #[test]
    fn kind_parses_short_names() {
        assert_eq!("exp".parse::<TopologyKind>().unwrap(), TopologyKind::Exponential);
        assert!("torus".parse::<TopologyKind>().is_err());
        let k: TopologyKind = serde_json::from_str("\"exp\"").unwrap();
        assert_eq!(k, TopologyKind::Exponential);
    }
}
