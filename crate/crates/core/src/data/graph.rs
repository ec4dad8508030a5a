use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Cascade;
use crate::error::{Error, Result};

/// A node of the cascade graph. A user who reshares more than once gets one
/// node per occurrence so that every event keeps its own node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventNode {
    pub user: String,
    pub occurrence: usize,
    pub time: f64,
}

impl EventNode {
    /// Stable key used in embedding tables, e.g. `u7#0`.
    pub fn key(&self) -> String {
        format!("{}#{}", self.user, self.occurrence)
    }
}

/// Rooted diffusion tree observed up to `observation_time`. Node 0 is the
/// root post; node `i + 1` is the target of triplet `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeGraph {
    pub nodes: Vec<EventNode>,
    /// `(parent, child)` node indices, one per triplet.
    pub edges: Vec<(usize, usize)>,
    /// `observation_time - child time` per edge.
    pub weights: Vec<f64>,
    pub observation_time: f64,
}

impl CascadeGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Symmetric adjacency as neighbor lists; weights below `floor` are
    /// raised to `floor`.
    pub fn adjacency(&self, floor: f64) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (&(p, c), &w) in self.edges.iter().zip(&self.weights) {
            let w = w.max(floor);
            adj[p].push((c, w));
            adj[c].push((p, w));
        }
        adj
    }

    /// Mean hop distance over all node pairs of the (tree-shaped) graph;
    /// 0 for fewer than two nodes.
    pub fn structural_virality(&self) -> f64 {
        let n = self.nodes.len();
        if n < 2 {
            return 0.0;
        }
        // Children always come after their parent, so a reverse sweep
        // accumulates subtree sizes.
        let mut size = vec![1usize; n];
        let mut parent = vec![usize::MAX; n];
        for &(p, c) in &self.edges {
            parent[c] = p;
        }
        let mut wiener = 0usize;
        for v in (1..n).rev() {
            wiener += size[v] * (n - size[v]);
            if parent[v] != usize::MAX {
                size[parent[v]] += size[v];
            }
        }
        wiener as f64 / (n * (n - 1) / 2) as f64
    }

    /// Weighted degrees `D_ii = Σ_j A_ij`.
    pub fn degrees(&self, floor: f64) -> Vec<f64> {
        self.adjacency(floor)
            .iter()
            .map(|row| row.iter().map(|(_, w)| w).sum())
            .collect()
    }
}

pub fn build_cascade_graph(cascade: &Cascade) -> Result<CascadeGraph> {
    let t_s = cascade.observation_time;
    let mut nodes = vec![EventNode { user: cascade.origin.clone(), occurrence: 0, time: 0.0 }];
    let mut latest: HashMap<&str, usize> = HashMap::new();
    let mut occurrences: HashMap<&str, usize> = HashMap::new();
    latest.insert(cascade.origin.as_str(), 0);
    occurrences.insert(cascade.origin.as_str(), 1);

    let mut edges = Vec::with_capacity(cascade.triplets.len());
    let mut weights = Vec::with_capacity(cascade.triplets.len());
    for t in &cascade.triplets {
        if t.time > t_s {
            return Err(Error::Structure {
                cascade: cascade.id.clone(),
                msg: format!("event at {} is past the observation time {t_s}", t.time),
            });
        }
        let parent = *latest.get(t.source.as_str()).ok_or_else(|| Error::Structure {
            cascade: cascade.id.clone(),
            msg: format!("`{}` reshared from unseen user `{}`", t.target, t.source),
        })?;
        let occ = occurrences.entry(t.target.as_str()).or_insert(0);
        let child = nodes.len();
        nodes.push(EventNode { user: t.target.clone(), occurrence: *occ, time: t.time });
        *occ += 1;
        latest.insert(t.target.as_str(), child);
        edges.push((parent, child));
        weights.push(t_s - t.time);
    }
    Ok(CascadeGraph { nodes, edges, weights, observation_time: t_s })
}

/// Undirected, unweighted user graph built from observed reshares.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalGraph {
    pub nodes: Vec<String>,
    index: BTreeMap<String, usize>,
    /// `(i, j)` with `i < j`.
    pub edges: BTreeSet<(usize, usize)>,
}

impl GlobalGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn index_of(&self, user: &str) -> Option<usize> {
        self.index.get(user).copied()
    }

    fn intern(&mut self, user: &str) -> usize {
        if let Some(&i) = self.index.get(user) {
            return i;
        }
        let i = self.nodes.len();
        self.nodes.push(user.to_string());
        self.index.insert(user.to_string(), i);
        i
    }

    pub fn add_node(&mut self, user: &str) {
        self.intern(user);
    }

    /// Adds an undirected edge; self-loops are ignored.
    pub fn add_edge(&mut self, a: &str, b: &str) {
        let (i, j) = (self.intern(a), self.intern(b));
        if i != j {
            self.edges.insert((i.min(j), i.max(j)));
        }
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// Reads a whitespace-separated edge list, one `a b` pair per line;
    /// `#` starts a comment.
    pub fn from_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut g = GlobalGraph::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [a] => g.add_node(a),
                [a, b] => g.add_edge(a, b),
                _ => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        msg: "expected `<user> <user>`".into(),
                    })
                }
            }
        }
        Ok(g)
    }
}

/// Builds the user graph from windowed cascades. Only triplets at or before
/// each cascade's observation time contribute.
pub fn build_global_graph(cascades: &[Cascade]) -> GlobalGraph {
    let mut g = GlobalGraph::default();
    for c in cascades {
        g.add_node(&c.origin);
        for t in c.triplets.iter().filter(|t| t.time <= c.observation_time) {
            g.add_edge(&t.source, &t.target);
        }
    }
    g
}
