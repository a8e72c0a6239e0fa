//! Per-bag neighborhood graphs and the smoothness prior built on them.
//!
//! Instances are connected by spatial adjacency (chain positions at distance
//! exactly 1, or grid cells at Chebyshev distance 1) and every edge carries a
//! feature-affinity weight `w_ij = 1 / (1 + ||x_i - x_j||_2)` computed on the
//! raw feature rows. The graph is built once per bag and never updated during
//! training.
//!
//! The Laplacian `L = D - A` is never materialized on the training path; the
//! quadratic form and its gradient go through sparse edge iteration. Dense
//! materialization exists only for small-n diagnostics and test oracles.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// How instances are wired together spatially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborPolicy {
    /// 1-d positions; instances whose coordinates differ by exactly 1.
    Chain,
    /// 2-d positions at Chebyshev distance 1. `eight_neighbors: false`
    /// restricts to the 4-neighborhood (Manhattan distance 1).
    Grid { eight_neighbors: bool },
}

impl Default for NeighborPolicy {
    fn default() -> Self {
        NeighborPolicy::Grid {
            eight_neighbors: true,
        }
    }
}

/// Symmetric weighted adjacency over `n` instances. Edges are stored once
/// with `i < j`; weights are strictly positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    n: usize,
    edges: Vec<(u32, u32, f64)>,
    degree: Vec<f64>,
}

impl AdjacencyGraph {
    pub fn new(n: usize, mut edges: Vec<(u32, u32, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("adjacency", "graph needs at least one node"));
        }
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                std::mem::swap(&mut e.0, &mut e.1);
            }
        }
        edges.sort_unstable_by_key(|e| (e.0, e.1));
        for w in edges.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::domain(
                    "adjacency",
                    format!("duplicate edge ({}, {})", w[0].0, w[0].1),
                ));
            }
        }
        let mut degree = vec![0.0; n];
        for &(i, j, w) in &edges {
            if i == j {
                return Err(Error::domain("adjacency", format!("self-loop at {}", i)));
            }
            if j as usize >= n {
                return Err(Error::domain(
                    "adjacency",
                    format!("edge ({}, {}) out of range for n = {}", i, j, n),
                ));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::domain(
                    "adjacency",
                    format!("edge ({}, {}) has non-positive weight {}", i, j, w),
                ));
            }
            degree[i as usize] += w;
            degree[j as usize] += w;
        }
        Ok(AdjacencyGraph { n, edges, degree })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32, f64)] {
        &self.edges
    }

    /// Weighted degree of each node; also the diagonal of `L`.
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    /// Sparse `L f` with `L = D - A`.
    pub fn laplacian_matvec(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.n {
            return Err(Error::shape(
                "laplacian_matvec",
                format!("vector length {} for graph of {} nodes", f.len(), self.n),
            ));
        }
        let mut out: Vec<f64> = self
            .degree
            .iter()
            .zip(f)
            .map(|(d, v)| d * v)
            .collect();
        for &(i, j, w) in &self.edges {
            out[i as usize] -= w * f[j as usize];
            out[j as usize] -= w * f[i as usize];
        }
        Ok(out)
    }

    /// `f^T L f` through the sparse product.
    pub fn dirichlet_energy_value(&self, f: &[f64]) -> Result<f64> {
        let lf = self.laplacian_matvec(f)?;
        Ok(f.iter().zip(&lf).map(|(a, b)| a * b).sum())
    }

    /// Dense row-major `L`. Small-n diagnostics and oracles only; the
    /// training path never calls this.
    pub fn dense_laplacian(&self) -> Vec<f64> {
        let n = self.n;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            l[i * n + i] = self.degree[i];
        }
        for &(i, j, w) in &self.edges {
            l[i as usize * n + j as usize] = -w;
            l[j as usize * n + i as usize] = -w;
        }
        l
    }
}

/// Builds the spatial adjacency for one bag. `coords` is row-major `n x c`
/// with `c = 1` for chains and `c = 2` for grids; `features` is the raw
/// `n x p` feature matrix the edge weights are computed from.
pub fn build_adjacency(
    coords: &[i32],
    coord_dim: usize,
    features: &Tensor,
    policy: NeighborPolicy,
) -> Result<AdjacencyGraph> {
    let n = features.rows().map_err(|_| {
        Error::shape("build_adjacency", "features must be an n x p matrix".to_string())
    })?;
    let p = features.cols()?;
    if coord_dim == 0 || coords.len() != n * coord_dim {
        return Err(Error::shape(
            "build_adjacency",
            format!(
                "coords length {} does not match {} instances x {} dims",
                coords.len(),
                n,
                coord_dim
            ),
        ));
    }
    let want_dim = match policy {
        NeighborPolicy::Chain => 1,
        NeighborPolicy::Grid { .. } => 2,
    };
    if coord_dim != want_dim {
        return Err(Error::Data(format!(
            "neighbor policy {:?} needs {}-d coordinates, bag has {}-d",
            policy, want_dim, coord_dim
        )));
    }
    let x = features.data();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = match policy {
                NeighborPolicy::Chain => (coords[i] - coords[j]).abs() == 1,
                NeighborPolicy::Grid { eight_neighbors } => {
                    let dr = (coords[i * 2] - coords[j * 2]).abs();
                    let dc = (coords[i * 2 + 1] - coords[j * 2 + 1]).abs();
                    if eight_neighbors {
                        dr.max(dc) == 1
                    } else {
                        dr + dc == 1
                    }
                }
            };
            if !adjacent {
                continue;
            }
            let dist: f64 = x[i * p..(i + 1) * p]
                .iter()
                .zip(&x[j * p..(j + 1) * p])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            edges.push((i as u32, j as u32, 1.0 / (1.0 + dist)));
        }
    }
    AdjacencyGraph::new(n, edges)
}

/// Differentiable `f^T L f` with gradient `2 L f`.
pub fn dirichlet_energy(f: &Var, graph: &AdjacencyGraph) -> Result<Var> {
    let fval = f.value();
    if fval.shape() != [graph.n()] {
        return Err(Error::shape(
            "dirichlet_energy",
            format!(
                "logits shape {:?} for graph of {} nodes",
                fval.shape(),
                graph.n()
            ),
        ));
    }
    let lf = graph.laplacian_matvec(fval.data())?;
    let energy: f64 = fval.data().iter().zip(&lf).map(|(a, b)| a * b).sum();
    f.tape().push_op(
        "dirichlet_energy",
        &[f],
        Tensor::scalar(energy),
        Box::new(move |dy| {
            let d = dy[0];
            vec![lf.iter().map(|v| 2.0 * d * v).collect()]
        }),
    )
}

/// Unnormalized log-density of the smoothness prior at `f`, i.e. `-f^T L f`.
pub fn prior_logdensity_unnormalized(graph: &AdjacencyGraph, f: &[f64]) -> Result<f64> {
    Ok(-graph.dirichlet_energy_value(f)?)
}

/// Parameter-dependent part of `KL[N(mu, diag sigma2) || prior]`:
/// `E_D(mu) + Tr(L diag sigma2) - 1/2 sum_n log sigma2_n`. Constants that do
/// not depend on `(mu, sigma2)` are dropped; they are irrelevant to training
/// and ill-defined without jitter because `det L = 0` on connected graphs.
pub fn gaussian_prior_kl(mu: &Var, sigma2: &Var, graph: &AdjacencyGraph) -> Result<Var> {
    let n = graph.n();
    if sigma2.shape() != [n] {
        return Err(Error::shape(
            "gaussian_prior_kl",
            format!("sigma2 shape {:?} for graph of {} nodes", sigma2.shape(), n),
        ));
    }
    let energy = dirichlet_energy(mu, graph)?;
    let tape = mu.tape();
    let deg = tape.constant(Tensor::vector(graph.degree().to_vec()));
    let trace = deg.dot(sigma2)?;
    let neg_half_logdet = sigma2.log()?.sum()?.mul_scalar(-0.5)?;
    energy.add(&trace)?.add(&neg_half_logdet)
}

/// Value-only twin of [`gaussian_prior_kl`], with the three terms broken out
/// as `(energy, trace, -1/2 log det)`.
pub fn gaussian_prior_kl_terms(
    graph: &AdjacencyGraph,
    mu: &[f64],
    sigma2: &[f64],
) -> Result<(f64, f64, f64)> {
    if sigma2.len() != graph.n() || mu.len() != graph.n() {
        return Err(Error::shape(
            "gaussian_prior_kl_terms",
            format!(
                "mu {} / sigma2 {} for graph of {} nodes",
                mu.len(),
                sigma2.len(),
                graph.n()
            ),
        ));
    }
    if sigma2.iter().any(|&v| v <= 0.0) {
        return Err(Error::domain(
            "gaussian_prior_kl_terms",
            "sigma2 must be strictly positive",
        ));
    }
    let energy = graph.dirichlet_energy_value(mu)?;
    let trace: f64 = graph.degree().iter().zip(sigma2).map(|(d, s)| d * s).sum();
    let neg_half_logdet: f64 = -0.5 * sigma2.iter().map(|s| s.ln()).sum::<f64>();
    Ok((energy, trace, neg_half_logdet))
}

pub fn gaussian_prior_kl_value(graph: &AdjacencyGraph, mu: &[f64], sigma2: &[f64]) -> Result<f64> {
    let (e, t, l) = gaussian_prior_kl_terms(graph, mu, sigma2)?;
    Ok(e + t + l)
}

/// Full KL (constants included) against the jittered prior
/// `N(0, (2L + eps I)^-1)`:
///
/// `E_D(mu) + eps/2 ||mu||^2 + Tr(L S) + eps/2 tr(S) - 1/2 log det S
///  - n/2 - 1/2 log det(2L + eps I)`  with `S = diag sigma2`.
///
/// The jitter makes every term well defined. The log-determinant uses a
/// dense Cholesky factorization, so this is for small-n diagnostics and
/// verification, never the training path.
pub fn gaussian_prior_kl_jittered(
    graph: &AdjacencyGraph,
    mu: &[f64],
    sigma2: &[f64],
    eps: f64,
) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::domain(
            "gaussian_prior_kl_jittered",
            "jitter must be strictly positive",
        ));
    }
    let (energy, trace, neg_half_logdet_s) = gaussian_prior_kl_terms(graph, mu, sigma2)?;
    let n = graph.n();
    let mu_sq: f64 = mu.iter().map(|v| v * v).sum();
    let s_tr: f64 = sigma2.iter().sum();

    let mut prec = graph.dense_laplacian();
    for v in prec.iter_mut() {
        *v *= 2.0;
    }
    for i in 0..n {
        prec[i * n + i] += eps;
    }
    let logdet_prec = cholesky_logdet(&mut prec, n)?;

    Ok(energy + 0.5 * eps * mu_sq + trace + 0.5 * eps * s_tr + neg_half_logdet_s
        - 0.5 * n as f64
        - 0.5 * logdet_prec)
}

/// In-place Cholesky of a symmetric positive-definite row-major matrix,
/// returning `log det`.
fn cholesky_logdet(a: &mut [f64], n: usize) -> Result<f64> {
    let mut logdet = 0.0;
    for k in 0..n {
        let mut pivot = a[k * n + k];
        for p in 0..k {
            pivot -= a[k * n + p] * a[k * n + p];
        }
        if pivot <= 0.0 {
            return Err(Error::domain(
                "cholesky",
                "matrix is not positive definite",
            ));
        }
        let lkk = pivot.sqrt();
        a[k * n + k] = lkk;
        logdet += 2.0 * lkk.ln();
        for i in (k + 1)..n {
            let mut v = a[i * n + k];
            for p in 0..k {
                v -= a[i * n + p] * a[k * n + p];
            }
            a[i * n + k] = v / lkk;
        }
    }
    Ok(logdet)
}
