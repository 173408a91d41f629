//! Meshes as attributed graphs, fields on their vertices, observation
//! operators, and the graph operators the models are built from.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

/// Structured-grid metadata kept for rectangle meshes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
    pub length: f64,
    pub width: f64,
}

/// Undirected graph with vertex coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    edges: Vec<[usize; 2]>,
    boundary: Option<Vec<bool>>,
    grid: Option<GridShape>,
}

impl Mesh {
    pub fn new(dim: usize, coords: Vec<f64>, edges: Vec<[usize; 2]>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 || coords.is_empty() {
            return Err(Error::DegenerateDimension(format!(
                "{} coordinates for dimension {dim}",
                coords.len()
            )));
        }
        let n = coords.len() / dim;
        for &[a, b] in &edges {
            for v in [a, b] {
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, len: n });
                }
            }
            if a == b {
                return Err(Error::invalid(format!("self-loop at vertex {a}")));
            }
        }
        Ok(Self {
            dim,
            coords,
            edges,
            boundary: None,
            grid: None,
        })
    }

    pub fn with_boundary(mut self, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != self.n_nodes() {
            return Err(Error::shape("mesh", "boundary flag count differs from vertex count"));
        }
        self.boundary = Some(flags);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn boundary(&self) -> Option<&[bool]> {
        self.boundary.as_deref()
    }

    pub fn grid(&self) -> Option<GridShape> {
        self.grid
    }

    pub fn coords_tensor(&self) -> Tensor {
        Tensor::matrix(self.n_nodes(), self.dim, self.coords.clone()).unwrap()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.coord(a)
            .iter()
            .zip(self.coord(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Per-axis `(min, max)` of the vertex coordinates.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.dim)
            .map(|d| {
                (0..self.n_nodes()).map(|i| self.coords[i * self.dim + d]).fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(lo, hi), x| (lo.min(x), hi.max(x)),
                )
            })
            .collect()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for &[a, b] in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.neighbors();
        let mut seen = vec![false; self.n_nodes()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n_nodes()
    }

    /// Relabels vertices: old vertex `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        check_permutation(perm, n)?;
        let mut coords = vec![0.0; self.coords.len()];
        for i in 0..n {
            coords[perm[i] * self.dim..(perm[i] + 1) * self.dim].copy_from_slice(self.coord(i));
        }
        let edges = self.edges.iter().map(|&[a, b]| [perm[a], perm[b]]).collect();
        let mut out = Mesh::new(self.dim, coords, edges)?;
        if let Some(flags) = &self.boundary {
            let mut f = vec![false; n];
            for i in 0..n {
                f[perm[i]] = flags[i];
            }
            out.boundary = Some(f);
        }
        Ok(out)
    }

    /// Re-derives grid metadata for meshes that are exactly the output of
    /// [`build_rectangle_mesh`] (e.g. after a file round-trip).
    pub fn detect_grid(mut self) -> Self {
        if self.dim != 2 || self.grid.is_some() {
            return self;
        }
        let n = self.n_nodes();
        let y0 = self.coords[1];
        let nx = (0..n).take_while(|&i| self.coords[2 * i + 1] == y0).count();
        if nx < 2 || n % nx != 0 || n / nx < 2 {
            return self;
        }
        let ny = n / nx;
        let length = self.coords[2 * (nx - 1)];
        let width = self.coords[2 * (n - 1) + 1];
        if let Ok(candidate) = build_rectangle_mesh(length, width, nx, ny) {
            if candidate.coords == self.coords && candidate.edges == self.edges {
                self.grid = candidate.grid;
                if self.boundary.is_none() {
                    self.boundary = candidate.boundary;
                }
            }
        }
        self
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::invalid(format!("permutation of length {} for {n} vertices", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid("not a permutation"));
        }
    }
    Ok(())
}

/// Structured `nx x ny` grid on `[0, l] x [0, w]` with 4-neighbour edges.
///
/// Vertex `j * nx + i` sits at `(i * l / (nx - 1), j * w / (ny - 1))`.
/// Horizontal edges are listed before vertical ones.
pub fn build_rectangle_mesh(l: f64, w: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if !(l > 0.0 && w > 0.0) || nx < 2 || ny < 2 {
        return Err(Error::DegenerateDimension(format!(
            "rectangle {l} x {w} with {nx} x {ny} vertices"
        )));
    }
    let hx = l / (nx - 1) as f64;
    let hy = w / (ny - 1) as f64;
    let mut coords = Vec::with_capacity(2 * nx * ny);
    let mut boundary = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // Pin the far sides exactly so boundary data sees x = l, y = w.
            let x = if i == nx - 1 { l } else { i as f64 * hx };
            let y = if j == ny - 1 { w } else { j as f64 * hy };
            coords.extend([x, y]);
            boundary.push(i == 0 || j == 0 || i == nx - 1 || j == ny - 1);
        }
    }
    let mut edges = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx - 1 {
            edges.push([j * nx + i, j * nx + i + 1]);
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            edges.push([j * nx + i, (j + 1) * nx + i]);
        }
    }
    let mut mesh = Mesh::new(2, coords, edges)?.with_boundary(boundary)?;
    mesh.grid = Some(GridShape {
        nx,
        ny,
        length: l,
        width: w,
    });
    Ok(mesh)
}

/// Symmetrised k-nearest-neighbour graph over a 2-D point cloud.
pub fn knn_mesh(points: &[[f64; 2]], k: usize) -> Result<Mesh> {
    let n = points.len();
    if n == 0 || k == 0 {
        return Err(Error::DegenerateDimension(format!("{n} points with k = {k}")));
    }
    let mut edges = std::collections::BTreeSet::new();
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                (dx * dx + dy * dy, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in d.iter().take(k) {
            edges.insert([i.min(j), i.max(j)]);
        }
    }
    let coords = points.iter().flat_map(|p| p.iter().copied()).collect();
    Mesh::new(2, coords, edges.into_iter().collect())
}

/// Random connected kNN graph on a random rectangle-shaped point cloud.
pub fn random_point_cloud_mesh<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Mesh> {
    for _ in 0..100 {
        let lx = rng.random_range(1.0..2.0);
        let ly = rng.random_range(0.5..1.0);
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(0.0..lx), rng.random_range(0.0..ly)])
            .collect();
        let mesh = knn_mesh(&pts, k)?;
        if mesh.is_connected() {
            return Ok(mesh);
        }
    }
    Err(Error::invalid(format!("could not draw a connected {k}-NN graph on {n} points")))
}

/// Vertex values, `n_nodes x n_channels`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    n_nodes: usize,
    channels: Vec<String>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(n_nodes: usize, channels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if channels.is_empty() || values.len() != n_nodes * channels.len() {
            return Err(Error::shape(
                "field",
                format!("{} values for {n_nodes} nodes x {} channels", values.len(), channels.len()),
            ));
        }
        Ok(Self {
            n_nodes,
            channels,
            values,
        })
    }

    pub fn single(name: &str, values: Vec<f64>) -> Self {
        Self {
            n_nodes: values.len(),
            channels: vec![name.to_string()],
            values,
        }
    }

    /// Channels named `c0, c1, ...`.
    pub fn unnamed(n_nodes: usize, n_channels: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(n_nodes, default_channel_names(n_channels), values)
    }

    pub fn from_tensor(t: &Tensor, channels: Vec<String>) -> Result<Self> {
        let (r, _) = t.require_rank2("field")?;
        Self::new(r, channels, t.data().to_vec())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, node: usize, channel: usize) -> f64 {
        self.values[node * self.channels.len() + channel]
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        let d = self.channels.len();
        self.values.iter().skip(channel).step_by(d).copied().collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.n_nodes, self.channels.len(), self.values.clone()).unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_nodes)?;
        let d = self.channels.len();
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.n_nodes {
            values[perm[i] * d..(perm[i] + 1) * d].copy_from_slice(&self.values[i * d..(i + 1) * d]);
        }
        Ok(Self {
            n_nodes: self.n_nodes,
            channels: self.channels.clone(),
            values,
        })
    }
}

pub fn default_channel_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

/// Selection of observed vertices of one channel plus Gaussian noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationOperator {
    nodes: Vec<usize>,
    channel: usize,
    sigma: f64,
}

impl ObservationOperator {
    pub fn new(nodes: Vec<usize>, channel: usize, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("noise level must be >= 0, got {sigma}")));
        }
        let mut sorted = nodes.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("observed node ids must be distinct"));
        }
        Ok(Self {
            nodes,
            channel,
            sigma,
        })
    }

    /// `count` distinct nodes drawn uniformly.
    pub fn random<R: Rng + ?Sized>(
        n_nodes: usize,
        count: usize,
        channel: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if count > n_nodes {
            return Err(Error::invalid(format!("{count} observations on {n_nodes} nodes")));
        }
        Self::new(sample(rng, n_nodes, count).into_vec(), channel, sigma)
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.nodes.clone(), self.channel, sigma)
    }

    fn check(&self, field: &Field) -> Result<()> {
        if self.channel >= field.n_channels() {
            return Err(Error::IndexOutOfRange {
                index: self.channel,
                len: field.n_channels(),
            });
        }
        if let Some(&bad) = self.nodes.iter().find(|&&i| i >= field.n_nodes()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: field.n_nodes(),
            });
        }
        Ok(())
    }

    /// Noise-free `H u`.
    pub fn select(&self, field: &Field) -> Result<Vec<f64>> {
        self.check(field)?;
        Ok(self.nodes.iter().map(|&i| field.get(i, self.channel)).collect())
    }

    /// `H u + sigma * g` with `g` standard normal.
    pub fn apply<R: Rng + ?Sized>(&self, field: &Field, rng: &mut R) -> Result<Vec<f64>> {
        self.apply_with_sigma(field, self.sigma, rng)
    }

    pub fn apply_with_sigma<R: Rng + ?Sized>(
        &self,
        field: &Field,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut y = self.select(field)?;
        for v in &mut y {
            let g: f64 = rng.sample(StandardNormal);
            *v += sigma * g;
        }
        Ok(y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphOperatorKind {
    NormalizedAdjacency,
    Laplacian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeWeighting {
    /// `a_ij = 1 / (1 + |x_i - x_j|)`.
    InverseDistance,
    Unit,
}

#[derive(Clone, Debug)]
pub struct GraphOperator {
    pub kind: GraphOperatorKind,
    pub weighting: EdgeWeighting,
    pub matrix: Arc<CsrMatrix>,
}

impl GraphOperator {
    pub fn to_dense(&self) -> Tensor {
        self.matrix.to_dense()
    }
}

/// `D^{-1/2} (A_w + I) D^{-1/2}` with inverse-distance edge weights.
pub fn normalized_adjacency(mesh: &Mesh) -> GraphOperator {
    if !mesh.is_connected() {
        log::warn!("normalized adjacency of a disconnected mesh");
    }
    let n = mesh.n_nodes();
    let mut degree = vec![1.0; n];
    let mut weights = Vec::with_capacity(mesh.n_edges());
    for &[a, b] in mesh.edges() {
        let w = 1.0 / (1.0 + mesh.distance(a, b));
        degree[a] += w;
        degree[b] += w;
        weights.push(w);
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut trip = Vec::with_capacity(n + 2 * mesh.n_edges());
    for i in 0..n {
        trip.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
    }
    for (&[a, b], w) in mesh.edges().iter().zip(weights) {
        let v = w * inv_sqrt[a] * inv_sqrt[b];
        trip.push((a, b, v));
        trip.push((b, a, v));
    }
    GraphOperator {
        kind: GraphOperatorKind::NormalizedAdjacency,
        weighting: EdgeWeighting::InverseDistance,
        matrix: Arc::new(CsrMatrix::from_triplets(n, n, trip).unwrap()),
    }
}

/// Combinatorial Laplacian `D - A` with unit edge weights.
pub fn graph_laplacian(mesh: &Mesh) -> GraphOperator {
    let n = mesh.n_nodes();
    let mut trip = Vec::with_capacity(n + 2 * mesh.n_edges());
    let mut degree = vec![0.0; n];
    for &[a, b] in mesh.edges() {
        degree[a] += 1.0;
        degree[b] += 1.0;
        trip.push((a, b, -1.0));
        trip.push((b, a, -1.0));
    }
    for (i, d) in degree.into_iter().enumerate() {
        trip.push((i, i, d));
    }
    GraphOperator {
        kind: GraphOperatorKind::Laplacian,
        weighting: EdgeWeighting::Unit,
        matrix: Arc::new(CsrMatrix::from_triplets(n, n, trip).unwrap()),
    }
}

/// Eigendecomposition of the unit-weight graph Laplacian.
#[derive(Clone, Debug)]
pub struct LaplacianSpectrum {
    /// Ascending.
    pub values: Vec<f64>,
    /// Row-major `n x n`; column `k` is the eigenvector for `values[k]`.
    pub vectors: Vec<f64>,
    pub n: usize,
}

impl LaplacianSpectrum {
    pub fn vector_entry(&self, node: usize, k: usize) -> f64 {
        self.vectors[node * self.n + k]
    }
}

/// Uses the closed-form Kronecker (cosine) eigenbasis on structured grids
/// and a dense symmetric eigensolver otherwise.
pub fn laplacian_spectrum(mesh: &Mesh) -> Result<LaplacianSpectrum> {
    match mesh.grid() {
        Some(g) => Ok(grid_spectrum(g.nx, g.ny)),
        None => dense_spectrum(&graph_laplacian(mesh).to_dense()),
    }
}

fn path_spectrum(n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let pi = std::f64::consts::PI;
    let values = (0..n).map(|k| 2.0 - 2.0 * (pi * k as f64 / n as f64).cos()).collect();
    let vectors = (0..n)
        .map(|k| {
            let norm = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|j| norm * (pi * k as f64 * (j as f64 + 0.5) / n as f64).cos())
                .collect()
        })
        .collect();
    (values, vectors)
}

fn grid_spectrum(nx: usize, ny: usize) -> LaplacianSpectrum {
    let (lx, vx) = path_spectrum(nx);
    let (ly, vy) = path_spectrum(ny);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(nx * ny);
    for a in 0..nx {
        for b in 0..ny {
            pairs.push((lx[a] + ly[b], a, b));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then((p.1, p.2).cmp(&(q.1, q.2))));
    let n = nx * ny;
    let mut vectors = vec![0.0; n * n];
    for (k, &(_, a, b)) in pairs.iter().enumerate() {
        for j in 0..ny {
            for i in 0..nx {
                vectors[(j * nx + i) * n + k] = vx[a][i] * vy[b][j];
            }
        }
    }
    LaplacianSpectrum {
        values: pairs.iter().map(|p| p.0).collect(),
        vectors,
        n,
    }
}

pub(crate) fn dense_spectrum(matrix: &Tensor) -> Result<LaplacianSpectrum> {
    let n = matrix.rows();
    let m = nalgebra::DMatrix::from_row_slice(n, n, matrix.data());
    let eig = nalgebra::SymmetricEigen::try_new(m, 1e-14, 10_000)
        .ok_or_else(|| Error::Solver("symmetric eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let mut vectors = vec![0.0; n * n];
    for (k, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + k] = eig.eigenvectors[(i, src)];
        }
    }
    Ok(LaplacianSpectrum {
        values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors,
        n,
    })
}
