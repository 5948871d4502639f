//! Collaboration graphs and Girvan–Newman community detection.
//!
//! Betweenness uses hop-count shortest paths; edge weights only enter
//! modularity. Nodes are stored in sorted key order, so edge index order is
//! the lexicographic order on `(u, v)` keys and doubles as the tie-break.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollabGraph {
    node_ids: Vec<String>,
    edges: Vec<Edge>,
    /// `(neighbour, edge index)`, sorted by neighbour.
    adjacency: Vec<Vec<(usize, usize)>>,
    dropped_self_loops: usize,
}

impl CollabGraph {
    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ids.binary_search_by(|n| n.as_str().cmp(id)).ok()
    }

    pub fn neighbours(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn edge_key(&self, e: usize) -> (&str, &str) {
        let Edge { u, v, .. } = self.edges[e];
        (&self.node_ids[u], &self.node_ids[v])
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Weighted degree of every node.
    pub fn strengths(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_nodes()];
        for e in &self.edges {
            d[e.u] += e.weight;
            d[e.v] += e.weight;
        }
        d
    }
}

/// One co-authorship record; `weight` defaults to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoauthorRecord {
    pub author_a: String,
    pub author_b: String,
    pub weight: f64,
}

impl CoauthorRecord {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        CoauthorRecord {
            author_a: a.into(),
            author_b: b.into(),
            weight: 1.0,
        }
    }
}

pub fn build_graph(records: &[CoauthorRecord]) -> Result<CollabGraph> {
    let mut merged: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut nodes: Vec<String> = Vec::new();
    let mut dropped = 0;
    for (i, r) in records.iter().enumerate() {
        let a = r.author_a.trim();
        let b = r.author_b.trim();
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidRecord {
                row: i + 1,
                message: "empty author key".into(),
            });
        }
        if !(r.weight.is_finite() && r.weight > 0.0) {
            return Err(Error::InvalidRecord {
                row: i + 1,
                message: format!("edge weight {} must be positive", r.weight),
            });
        }
        nodes.push(a.to_string());
        nodes.push(b.to_string());
        if a == b {
            dropped += 1;
            continue;
        }
        let key = if a < b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        *merged.entry(key).or_insert(0.0) += r.weight;
    }
    nodes.sort_unstable();
    nodes.dedup();

    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let edges: Vec<Edge> = merged
        .iter()
        .map(|((a, b), &weight)| Edge {
            u: index[a.as_str()],
            v: index[b.as_str()],
            weight,
        })
        .collect();
    let mut adjacency = vec![Vec::new(); nodes.len()];
    for (k, e) in edges.iter().enumerate() {
        adjacency[e.u].push((e.v, k));
        adjacency[e.v].push((e.u, k));
    }
    for a in &mut adjacency {
        a.sort_unstable();
    }
    Ok(CollabGraph {
        node_ids: nodes,
        edges,
        adjacency,
        dropped_self_loops: dropped,
    })
}

/// Reads `author_a,author_b[,weight]`.
pub fn read_edge_list<R: Read>(reader: R) -> Result<Vec<CoauthorRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let a = col("author_a").ok_or_else(|| Error::MissingColumn("author_a".into()))?;
    let b = col("author_b").ok_or_else(|| Error::MissingColumn("author_b".into()))?;
    let w = col("weight");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let weight = match w.and_then(|w| rec.get(w)).filter(|s| !s.is_empty()) {
            None => 1.0,
            Some(raw) => raw.parse::<f64>().map_err(|e| Error::BadCell {
                row: i + 1,
                column: "weight".into(),
                raw: raw.to_string(),
                reason: e.to_string(),
            })?,
        };
        out.push(CoauthorRecord {
            author_a: rec.get(a).unwrap_or_default().to_string(),
            author_b: rec.get(b).unwrap_or_default().to_string(),
            weight,
        });
    }
    Ok(out)
}

pub fn read_edge_list_path(path: &Path) -> Result<Vec<CoauthorRecord>> {
    let f = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_edge_list(f)
}

const SOURCE_CHUNK: usize = 32;

/// Single-source Brandes dependencies, added onto `acc`.
fn accumulate_source(g: &CollabGraph, alive: &[bool], s: usize, acc: &mut [f64]) {
    let n = g.n_nodes();
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut delta = vec![0.0f64; n];
    let mut order = Vec::new();
    let mut queue = VecDeque::new();
    sigma[s] = 1.0;
    dist[s] = 0;
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &(w, e) in g.neighbours(v) {
            if !alive[e] {
                continue;
            }
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
            }
        }
    }
    for &w in order.iter().rev() {
        for &(v, e) in g.neighbours(w) {
            if alive[e] && dist[v] != usize::MAX && dist[v] + 1 == dist[w] {
                let c = sigma[v] / sigma[w] * (1.0 + delta[w]);
                acc[e] += c;
                delta[v] += c;
            }
        }
    }
}

/// Betweenness of alive edges from the given sources, halved for the
/// undirected double count. Summation order is fixed by chunk, so the result
/// does not depend on the thread count.
fn brandes(g: &CollabGraph, alive: &[bool], sources: &[usize]) -> Vec<f64> {
    let m = g.n_edges();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(SOURCE_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; m];
            for &s in chunk {
                accumulate_source(g, alive, s, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; m];
    for p in partials {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    for t in &mut total {
        *t *= 0.5;
    }
    total
}

/// Edge betweenness indexed like [`CollabGraph::edges`]. Each connected
/// pair of nodes contributes 1 to every path position, split equally over
/// its shortest paths, so the edge total is the sum of pairwise distances.
pub fn edge_betweenness(g: &CollabGraph) -> Vec<f64> {
    let alive = vec![true; g.n_edges()];
    let sources: Vec<usize> = (0..g.n_nodes()).collect();
    brandes(g, &alive, &sources)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Community of each node, in node order. Ids are `0..n_communities`,
    /// numbered by each community's first node.
    pub assignment: Vec<usize>,
    pub n_communities: usize,
    pub modularity: f64,
}

impl Partition {
    /// Validates and canonicalises arbitrary labels, then scores them.
    pub fn from_labels(g: &CollabGraph, labels: &[usize]) -> Result<Partition> {
        if labels.len() != g.n_nodes() {
            let missing = g.node_ids().get(labels.len()).cloned().unwrap_or_default();
            return Err(Error::UncoveredNode(missing));
        }
        let (assignment, n_communities) = canonical(labels);
        let modularity = modularity(g, &assignment)?;
        Ok(Partition {
            assignment,
            n_communities,
            modularity,
        })
    }

    pub fn from_map(g: &CollabGraph, map: &HashMap<String, usize>) -> Result<Partition> {
        let labels = g
            .node_ids()
            .iter()
            .map(|id| {
                map.get(id)
                    .copied()
                    .ok_or_else(|| Error::UncoveredNode(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Partition::from_labels(g, &labels)
    }

    pub fn members(&self, community: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == community)
            .map(|(i, _)| i)
    }

    /// `author,community_id`.
    pub fn write_csv<W: Write>(&self, g: &CollabGraph, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["author", "community_id"])?;
        for (id, c) in g.node_ids().iter().zip(&self.assignment) {
            w.write_record([id.as_str(), &c.to_string()])?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<partition>".into(),
            source,
        })?;
        Ok(())
    }
}

fn canonical(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let assignment = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (assignment, map.len())
}

/// Weighted Newman modularity `Σ_c (e_cc/m − (d_c/2m)²)`.
pub fn modularity(g: &CollabGraph, assignment: &[usize]) -> Result<f64> {
    if assignment.len() != g.n_nodes() {
        let missing = g.node_ids().get(assignment.len()).cloned().unwrap_or_default();
        return Err(Error::UncoveredNode(missing));
    }
    let m = g.total_weight();
    if m <= 0.0 {
        return Err(Error::EmptyGraph);
    }
    let k = assignment.iter().max().map_or(0, |c| c + 1);
    let mut inside = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for e in g.edges() {
        let (cu, cv) = (assignment[e.u], assignment[e.v]);
        if cu == cv {
            inside[cu] += e.weight;
        }
        degree[cu] += e.weight;
        degree[cv] += e.weight;
    }
    Ok(inside
        .iter()
        .zip(&degree)
        .map(|(l, d)| l / m - (d / (2.0 * m)).powi(2))
        .sum())
}

fn components(g: &CollabGraph, alive: &[bool]) -> Vec<usize> {
    let n = g.n_nodes();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for &(w, e) in g.neighbours(v) {
                if alive[e] && label[w] == usize::MAX {
                    label[w] = next;
                    stack.push(w);
                }
            }
        }
        next += 1;
    }
    label
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStep {
    pub step: usize,
    pub removed_edge: (String, String),
    pub betweenness: f64,
    pub components: usize,
    pub modularity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirvanNewman {
    /// Every edge removal in order.
    pub steps: Vec<RemovalStep>,
    /// The initial component partition, then one entry each time the
    /// component count grows.
    pub dendrogram: Vec<Partition>,
    pub best: Partition,
}

/// Relative slack when comparing betweenness values for ties.
const TIE_TOL: f64 = 1e-9;

pub fn girvan_newman(g: &CollabGraph, target_communities: Option<usize>) -> Result<GirvanNewman> {
    if g.n_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    if target_communities == Some(0) {
        return Err(Error::InvalidArgument(
            "target community count must be positive".into(),
        ));
    }
    let mut alive = vec![true; g.n_edges()];
    let mut labels = components(g, &alive);
    let mut n_comp = labels.iter().max().map_or(0, |c| c + 1);
    let mut dendrogram = vec![Partition::from_labels(g, &labels)?];
    let mut steps = Vec::new();
    let mut bet = edge_betweenness(g);
    let reached = |n: usize| target_communities.is_some_and(|t| n >= t);

    while !reached(n_comp) && alive.iter().any(|&a| a) {
        let max = alive
            .iter()
            .zip(&bet)
            .filter(|(a, _)| **a)
            .map(|(_, b)| *b)
            .fold(f64::NEG_INFINITY, f64::max);
        let cut = max - TIE_TOL * max.abs().max(1.0);
        let e = (0..g.n_edges())
            .find(|&e| alive[e] && bet[e] >= cut)
            .ok_or_else(|| Error::Invariant("no removable edge".into()))?;
        alive[e] = false;
        let removed_bet = bet[e];

        let old = labels[g.edges()[e].u];
        let affected: Vec<usize> = (0..g.n_nodes()).filter(|&v| labels[v] == old).collect();
        labels = components(g, &alive);
        let new_n = labels.iter().max().map_or(0, |c| c + 1);

        // Only the component that lost the edge changes.
        let partial = brandes(g, &alive, &affected);
        let (lu, lv) = (labels[g.edges()[e].u], labels[g.edges()[e].v]);
        for (k, edge) in g.edges().iter().enumerate() {
            if labels[edge.u] == lu || labels[edge.u] == lv {
                bet[k] = partial[k];
            }
        }

        let q = modularity(g, &labels)?;
        let (a, b) = g.edge_key(e);
        steps.push(RemovalStep {
            step: steps.len() + 1,
            removed_edge: (a.to_string(), b.to_string()),
            betweenness: removed_bet,
            components: new_n,
            modularity: q,
        });
        if new_n > n_comp {
            dendrogram.push(Partition::from_labels(g, &labels)?);
        }
        n_comp = new_n;
    }

    let mut best = &dendrogram[0];
    for p in &dendrogram[1..] {
        if p.modularity > best.modularity {
            best = p;
        }
    }
    let best = best.clone();
    if best.n_communities > g.n_nodes() {
        return Err(Error::Invariant("more communities than nodes".into()));
    }
    Ok(GirvanNewman {
        steps,
        dendrogram,
        best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreAuthor {
    pub author: String,
    pub community: usize,
}

fn author_key(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Corresponding authors of each community, communities in id order and
/// members in node order. Keys equal after trimming and lowercasing count
/// once; the first occurrence wins. Nodes absent from `corresponding` are
/// treated as non-corresponding.
pub fn core_authors(
    g: &CollabGraph,
    p: &Partition,
    corresponding: &HashMap<String, bool>,
) -> Result<Vec<CoreAuthor>> {
    if p.assignment.len() != g.n_nodes() {
        let missing = g.node_ids().get(p.assignment.len()).cloned().unwrap_or_default();
        return Err(Error::UncoveredNode(missing));
    }
    let flags: HashMap<String, bool> =
        corresponding
            .iter()
            .map(|(k, v)| (author_key(k), *v))
            .fold(HashMap::new(), |mut acc, (k, v)| {
                *acc.entry(k).or_insert(false) |= v;
                acc
            });
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in 0..p.n_communities {
        for v in p.members(c) {
            let id = &g.node_ids()[v];
            let key = author_key(id);
            if flags.get(&key).copied().unwrap_or(false) && seen.insert(key) {
                out.push(CoreAuthor {
                    author: id.clone(),
                    community: c,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(pairs: &[(&str, &str)]) -> CollabGraph {
        let recs: Vec<_> = pairs.iter().map(|(a, b)| CoauthorRecord::new(*a, *b)).collect();
        build_graph(&recs).unwrap()
    }

    fn two_triangles() -> CollabGraph {
        graph(&[
            ("a", "b"),
            ("b", "c"),
            ("a", "c"),
            ("d", "e"),
            ("e", "f"),
            ("d", "f"),
            ("c", "d"),
        ])
    }

    #[test]
    fn build_merges_and_drops() {
        let g = graph(&[("a", "b"), ("b", "a")]);
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.edges()[0].weight, 2.0);

        let g = graph(&[("a", "a")]);
        assert_eq!(g.n_nodes(), 1);
        assert_eq!(g.n_edges(), 0);
        assert_eq!(g.dropped_self_loops(), 1);

        let g = graph(&[("x", "y"), ("y", "z"), ("z", "x")]);
        assert_eq!((g.n_nodes(), g.n_edges()), (3, 3));
        assert!(build_graph(&[CoauthorRecord::new(" ", "a")]).is_err());
    }

    #[test]
    fn betweenness_examples() {
        let g = two_triangles();
        let b = edge_betweenness(&g);
        let bridge = (0..g.n_edges()).find(|&e| g.edge_key(e) == ("c", "d")).unwrap();
        assert!((b[bridge] - 9.0).abs() < 1e-12);
        assert!(b.iter().enumerate().all(|(e, &x)| e == bridge || x < 9.0));

        assert_eq!(edge_betweenness(&graph(&[("a", "b")])), vec![1.0]);

        let b = edge_betweenness(&graph(&[("a", "b"), ("b", "c"), ("c", "d"), ("d", "a")]));
        assert!(b.iter().all(|&x| (x - b[0]).abs() < 1e-12));
        // Each pair adds its distance: 4 adjacent pairs, 2 opposite pairs at 2.
        assert!((b.iter().sum::<f64>() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn modularity_examples() {
        let g = two_triangles();
        assert_eq!(modularity(&g, &[0; 6]).unwrap(), 0.0);
        let q = modularity(&g, &[0, 0, 0, 1, 1, 1]).unwrap();
        assert!((q - 2.0 * (3.0 / 7.0 - 0.25)).abs() < 1e-15);

        let g = graph(&[
            ("a", "b"),
            ("b", "c"),
            ("a", "c"),
            ("d", "e"),
            ("e", "f"),
            ("d", "f"),
        ]);
        assert!((modularity(&g, &[0, 0, 0, 1, 1, 1]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(modularity(&g, &[0; 5]), Err(Error::UncoveredNode(_))));
    }

    #[test]
    fn gn_removes_bridge_first() {
        let g = two_triangles();
        let r = girvan_newman(&g, None).unwrap();
        assert_eq!(r.steps[0].removed_edge, ("c".to_string(), "d".to_string()));
        assert_eq!(r.steps[0].components, 2);
        assert_eq!(r.best.n_communities, 2);
        assert_eq!(r.best.assignment, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(r.steps.len(), g.n_edges());
        assert!(r
            .dendrogram
            .windows(2)
            .all(|w| w[1].n_communities > w[0].n_communities));
        assert_eq!(r.dendrogram.last().unwrap().n_communities, 6);

        let r2 = girvan_newman(&g, Some(2)).unwrap();
        assert_eq!(r2.steps.len(), 1);
    }

    #[test]
    fn gn_presplit_and_minimal() {
        let g = graph(&[
            ("a", "b"),
            ("b", "c"),
            ("a", "c"),
            ("d", "e"),
            ("e", "f"),
            ("d", "f"),
        ]);
        let r = girvan_newman(&g, None).unwrap();
        assert_eq!(r.dendrogram[0].n_communities, 2);
        assert!(r.best.modularity >= r.dendrogram[0].modularity);

        let r = girvan_newman(&graph(&[("a", "b")]), None).unwrap();
        assert_eq!(r.steps.len(), 1);
        assert_eq!(r.dendrogram.last().unwrap().n_communities, 2);

        assert!(matches!(
            girvan_newman(&graph(&[("a", "a")]), None),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn core_author_selection() {
        let g = graph(&[("Ann", "bob"), ("bob", "cy"), ("ann ", "dee")]);
        let p = Partition::from_labels(&g, &vec![0; g.n_nodes()]).unwrap();
        let all: HashMap<String, bool> = g.node_ids().iter().map(|n| (n.clone(), true)).collect();
        let got = core_authors(&g, &p, &all).unwrap();
        // "Ann" and "ann" normalise to one author.
        assert_eq!(got.len(), 4);
        let none: HashMap<String, bool> = HashMap::new();
        assert!(core_authors(&g, &p, &none).unwrap().is_empty());
    }

    #[test]
    fn edge_list_csv() {
        let data = "author_a,author_b,weight\na,b,2\nb,c,\n";
        let recs = read_edge_list(data.as_bytes()).unwrap();
        assert_eq!(recs[0].weight, 2.0);
        assert_eq!(recs[1].weight, 1.0);
        assert!(read_edge_list("x,y\n".as_bytes()).is_err());
        assert!(read_edge_list("author_a,author_b,weight\na,b,q\n".as_bytes()).is_err());
    }
}
