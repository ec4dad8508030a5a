//! Randomized truncated factorization of the degree-normalized global
//! adjacency, a lightweight substitute for sparse-matrix-factorization
//! embeddings of large user graphs.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EmbeddingTable;
use crate::data::GlobalGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorizeConfig {
    pub dim: usize,
    pub oversample: usize,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for FactorizeConfig {
    fn default() -> Self {
        FactorizeConfig { dim: 64, oversample: 10, power_iters: 4, seed: 0 }
    }
}

/// Symmetric sparse matrix in row-list form.
#[derive(Debug, Clone)]
pub struct SymmetricSparse {
    pub n: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SymmetricSparse {
    /// `D^{-1/2} A D^{-1/2}` of an unweighted graph; isolated nodes get
    /// empty rows.
    pub fn normalized_adjacency(graph: &GlobalGraph) -> Self {
        let nbrs = graph.neighbors();
        let deg: Vec<f64> = nbrs.iter().map(|r| r.len() as f64).collect();
        let rows = nbrs
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().map(|&j| (j, 1.0 / (deg[i] * deg[j]).sqrt())).collect())
            .collect();
        SymmetricSparse { n: nbrs.len(), rows }
    }

    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                for c in 0..x.ncols() {
                    out[(i, c)] += w * x[(j, c)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] += w;
            }
        }
        m
    }
}

/// Rank-`k` factors `U diag(σ) Vᵀ`, singular values in decreasing order.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl Factorization {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.sigma));
        &self.u * s * self.v.transpose()
    }
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Randomized range finder with power iterations followed by an exact SVD
/// of the small projected matrix.
pub fn randomized_svd(m: &SymmetricSparse, rank: usize, oversample: usize, power_iters: usize, seed: u64) -> Factorization {
    let n = m.n;
    let l = (rank + oversample).min(n).max(rank);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));

    let mut q = orthonormalize(m.mul_dense(&omega));
    for _ in 0..power_iters {
        // M is symmetric, so Mᵀ Q = M Q.
        let z = orthonormalize(m.mul_dense(&q));
        q = orthonormalize(m.mul_dense(&z));
    }
    // Bᵀ = (Qᵀ M)ᵀ = M Q
    let bt = m.mul_dense(&q);
    let svd = bt.svd(true, true);
    let (bu, bs, bvt) = (svd.u.expect("u"), svd.singular_values, svd.v_t.expect("v_t"));

    let mut order: Vec<usize> = (0..bs.len()).collect();
    order.sort_by(|&a, &b| bs[b].total_cmp(&bs[a]));
    let order = &order[..rank.min(order.len())];

    // Bᵀ = bu Σ bvt  ⇒  B = bvtᵀ Σ buᵀ, so M ≈ (Q bvtᵀ) Σ buᵀ.
    let left = &q * bvt.transpose();
    let mut u = DMatrix::zeros(n, order.len());
    let mut v = DMatrix::zeros(n, order.len());
    let mut sigma = Vec::with_capacity(order.len());
    for (c, &k) in order.iter().enumerate() {
        let mut uc = left.column(k).into_owned();
        let mut vc = bu.column(k).into_owned();
        // Deterministic sign: largest-magnitude entry of u is positive.
        let pivot = uc.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            uc = -uc;
            vc = -vc;
        }
        u.set_column(c, &uc);
        v.set_column(c, &vc);
        sigma.push(bs[k]);
    }
    Factorization { u, sigma, v }
}

/// Embeds every global-graph user as `U_k sqrt(σ_k)` of a randomized rank-`k`
/// factorization of the normalized adjacency. Isolated users get zero vectors.
pub fn global_embed_factorize(graph: &GlobalGraph, cfg: &FactorizeConfig) -> Result<EmbeddingTable> {
    let n = graph.node_count();
    if cfg.dim == 0 || cfg.dim > n {
        return Err(Error::Embedding(format!(
            "embedding dimension {} must be in 1..={n} (global graph size)",
            cfg.dim
        )));
    }
    let m = SymmetricSparse::normalized_adjacency(graph);
    let f = randomized_svd(&m, cfg.dim, cfg.oversample, cfg.power_iters, cfg.seed);
    let scale: Vec<f64> = f.sigma.iter().map(|s| s.max(0.0).sqrt()).collect();

    let mut table = EmbeddingTable::new(cfg.dim);
    for (i, user) in graph.nodes.iter().enumerate() {
        let vec = if m.rows[i].is_empty() {
            vec![0.0; cfg.dim]
        } else {
            (0..cfg.dim).map(|k| f.u[(i, k)] * scale[k]).collect()
        };
        table.insert(user.clone(), vec)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn graph(edges: &[(&str, &str)], extra: &[&str]) -> GlobalGraph {
        let mut g = GlobalGraph::default();
        for (a, b) in edges {
            g.add_edge(a, b);
        }
        for u in extra {
            g.add_node(u);
        }
        g
    }

    fn abs_eq(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x.abs() - y.abs()).abs() < 1e-8)
    }

    #[test]
    fn triangle_is_vertex_transitive() {
        let g = graph(&[("a", "b"), ("b", "c"), ("a", "c")], &[]);
        let cfg = FactorizeConfig { dim: 1, ..Default::default() };
        let t = global_embed_factorize(&g, &cfg).unwrap();
        let (a, b, c) = (t.get("a").unwrap(), t.get("b").unwrap(), t.get("c").unwrap());
        assert!(abs_eq(a, b) && abs_eq(b, c));
        assert!(a[0].abs() > 0.1);
    }

    #[test]
    fn disconnected_cliques_and_isolated_node() {
        let g = graph(
            &[("a", "b"), ("b", "c"), ("a", "c"), ("x", "y"), ("y", "z"), ("x", "z")],
            &["lonely"],
        );
        let cfg = FactorizeConfig { dim: 2, ..Default::default() };
        let t = global_embed_factorize(&g, &cfg).unwrap();
        for clique in [["a", "b", "c"], ["x", "y", "z"]] {
            let v0 = t.get(clique[0]).unwrap();
            for u in &clique[1..] {
                assert!(abs_eq(v0, t.get(u).unwrap()), "{u}");
            }
        }
        assert_eq!(t.get("lonely").unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn dimension_larger_than_graph_is_error() {
        let g = graph(&[("a", "b")], &[]);
        let cfg = FactorizeConfig { dim: 3, ..Default::default() };
        assert!(global_embed_factorize(&g, &cfg).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let edges: Vec<(String, String)> = (0..30).map(|i| (format!("n{i}"), format!("n{}", (i * 7 + 3) % 30))).collect();
        let refs: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let g = graph(&refs, &[]);
        let cfg = FactorizeConfig { dim: 4, seed: 11, ..Default::default() };
        assert_eq!(global_embed_factorize(&g, &cfg).unwrap(), global_embed_factorize(&g, &cfg).unwrap());
    }

    #[test]
    fn random_graph_near_optimal_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = GlobalGraph::default();
        for i in 0..20 {
            g.add_node(&format!("v{i}"));
        }
        for i in 0..20 {
            for j in (i + 1)..20 {
                if rng.random::<f64>() < 0.25 {
                    g.add_edge(&format!("v{i}"), &format!("v{j}"));
                }
            }
        }
        let m = SymmetricSparse::normalized_adjacency(&g);
        let dense = m.to_dense();
        let f = randomized_svd(&m, 5, 10, 4, 1);
        let approx_err = (&dense - f.reconstruct()).norm() / dense.norm();

        // oracle: exact rank-5 truncation from a dense SVD
        let svd = dense.clone().svd(true, true);
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = s[5..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let exact_err = tail / dense.norm();
        assert!(approx_err <= exact_err + 1e-6, "{approx_err} vs {exact_err}");
    }
}
