//! Datasets of `(mesh, field)` pairs and the `GABD` container.
//!
//! ```text
//! "GABD" | u32 version = 1 | u64 sample count
//! per sample: u32 N | u32 E | u32 d | u32 d_u
//!             | f64 coords[N*d] | u32 edges[E*2] | f64 field[N*d_u]
//! footer:     u32 C | f64 mean[C] | f64 std[C]
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heat::{solve_heat, HeatProblemSpec};
use super::helmholtz::{solve_graph_helmholtz, HelmholtzProblemSpec};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::geometry::{Field, Mesh};
use crate::rng::stream_rng;

pub const GABD_MAGIC: [u8; 4] = *b"GABD";
pub const GABD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub mesh: Mesh,
    pub field: Field,
}

/// Per-channel standardisation statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Pooled over every node of every sample. Zero-variance channels get
    /// `std = 1` so that normalisation stays invertible.
    pub fn fit(samples: &[Sample]) -> Self {
        let Some(first) = samples.first() else {
            return Self::identity(0);
        };
        let c = first.field.n_channels();
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for s in samples {
            for row in s.field.values().chunks_exact(c) {
                for (acc, x) in sum.iter_mut().zip(row) {
                    *acc += x;
                }
            }
            count += s.field.n_nodes();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; c];
        for s in samples {
            for row in s.field.values().chunks_exact(c) {
                for k in 0..c {
                    sq[k] += (row[k] - mean[k]).powi(2);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let v = (s / count as f64).sqrt();
                if v > 1e-12 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, field: &Field) -> Field {
        self.map(field, |x, m, s| (x - m) / s)
    }

    pub fn denormalize(&self, field: &Field) -> Field {
        self.map(field, |x, m, s| x * s + m)
    }

    fn map(&self, field: &Field, f: impl Fn(f64, f64, f64) -> f64) -> Field {
        let c = field.n_channels();
        let mut out = field.clone();
        for (k, v) in out.values_mut().iter_mut().enumerate() {
            let ch = k % c;
            *v = f(*v, self.mean[ch], self.std[ch]);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub normalization: Normalization,
}

impl Dataset {
    /// Builds a dataset and fits normalisation on these samples.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if let Some(bad) = samples.iter().position(|s| !s.field.is_finite()) {
            return Err(Error::NonFinite(format!("dataset sample {bad}")));
        }
        if let Some(first) = samples.first() {
            let c = first.field.n_channels();
            if samples.iter().any(|s| s.field.n_channels() != c || s.field.n_nodes() != s.mesh.n_nodes()) {
                return Err(Error::shape("dataset", "inconsistent channel or node counts"));
            }
        }
        let normalization = Normalization::fit(&samples);
        Ok(Self {
            samples,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.normalization.channels()
    }
}

/// `n` heat problems, each drawn from its own `(seed, index)` stream.
pub fn sample_heat_specs(n: usize, seed: u64) -> Vec<HeatProblemSpec> {
    (0..n)
        .map(|i| HeatProblemSpec::draw(&mut stream_rng(seed, i as u64)))
        .collect()
}

pub fn sample_heat_dataset(n: usize, grid: (usize, usize), seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be >= 1"));
    }
    let samples = sample_heat_specs(n, seed)
        .par_iter()
        .map(|spec| solve_heat(spec, grid.0, grid.1).map(|(mesh, field)| Sample { mesh, field }))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelmholtzDatasetConfig {
    pub nodes: usize,
    pub neighbors: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub source_width: f64,
}

impl Default for HelmholtzDatasetConfig {
    fn default() -> Self {
        Self {
            nodes: 30,
            neighbors: 4,
            kappa: super::helmholtz::DEFAULT_KAPPA,
            gamma: super::helmholtz::DEFAULT_GAMMA,
            source_width: 0.15,
        }
    }
}

pub fn sample_helmholtz_specs(n: usize, cfg: &HelmholtzDatasetConfig, seed: u64) -> Result<Vec<HelmholtzProblemSpec>> {
    (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            HelmholtzProblemSpec::draw(cfg.nodes, cfg.neighbors, cfg.kappa, cfg.gamma, cfg.source_width, &mut rng)
        })
        .collect()
}

pub fn sample_helmholtz_dataset(n: usize, cfg: &HelmholtzDatasetConfig, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be >= 1"));
    }
    let samples = sample_helmholtz_specs(n, cfg, seed)?
        .par_iter()
        .map(|spec| solve_graph_helmholtz(spec).map(|(mesh, field)| Sample { mesh, field }))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.bytes(&GABD_MAGIC);
    w.u32(GABD_VERSION);
    w.u64(dataset.samples.len() as u64);
    for s in &dataset.samples {
        w.len_u32(s.mesh.n_nodes())?;
        w.len_u32(s.mesh.n_edges())?;
        w.len_u32(s.mesh.dim())?;
        w.len_u32(s.field.n_channels())?;
        w.f64s(s.mesh.coords());
        for &[a, b] in s.mesh.edges() {
            w.len_u32(a)?;
            w.len_u32(b)?;
        }
        w.f64s(s.field.values());
    }
    let norm = &dataset.normalization;
    w.len_u32(norm.channels())?;
    w.f64s(&norm.mean);
    w.f64s(&norm.std);
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    r.magic(GABD_MAGIC)?;
    let version = r.u32()?;
    if version != GABD_VERSION {
        return Err(Error::VersionMismatch {
            expected: GABD_VERSION,
            found: version,
        });
    }
    let count = r.u64()?;
    let mut samples = Vec::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let e = r.u32()? as usize;
        let d = r.u32()? as usize;
        let du = r.u32()? as usize;
        let coords = r.f64s(n * d)?;
        let mut edges = Vec::with_capacity(e);
        for _ in 0..e {
            edges.push([r.u32()? as usize, r.u32()? as usize]);
        }
        let values = r.f64s(n * du)?;
        let mesh = Mesh::new(d, coords, edges)?.detect_grid();
        let field = Field::unnamed(n, du, values)?;
        samples.push(Sample { mesh, field });
    }
    let c = r.u32()? as usize;
    let mean = r.f64s(c)?;
    let std = r.f64s(c)?;
    if !r.is_at_end() {
        return Err(Error::Consistency(format!("trailing bytes after footer at offset {}", r.offset())));
    }
    Ok(Dataset {
        samples,
        normalization: Normalization { mean, std },
    })
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(dataset)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn heat_dataset_support_and_variety() {
        let ds = sample_heat_dataset(4, (9, 9), 2024).unwrap();
        let dims: Vec<(f64, f64)> = ds
            .samples
            .iter()
            .map(|s| {
                let g = s.mesh.grid().unwrap();
                (g.length, g.width)
            })
            .collect();
        let ratios: Vec<f64> = dims.iter().map(|(l, w)| l / w).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert!((ratios[i] - ratios[j]).abs() > 1e-6);
            }
        }
    }

    #[test]
    fn heat_specs_within_support() {
        for s in sample_heat_specs(1000, 1) {
            assert!((0.1..=1.0).contains(&s.length) && (0.1..=1.0).contains(&s.width));
            assert!((0.1..=1.0).contains(&s.bc_top) && (0.0..=1.0).contains(&s.bc_right));
        }
    }

    #[test]
    fn heat_dataset_is_deterministic_and_obeys_max_principle() {
        let a = sample_heat_dataset(6, (7, 7), 5).unwrap();
        let b = sample_heat_dataset(6, (7, 7), 5).unwrap();
        assert_eq!(encode_dataset(&a).unwrap(), encode_dataset(&b).unwrap());
        let specs = sample_heat_specs(6, 5);
        for (s, spec) in a.samples.iter().zip(&specs) {
            let hi = spec.bc_top.max(spec.bc_right);
            assert!(s.field.values().iter().all(|&x| (0.0..=hi).contains(&x)));
        }
    }

    #[test]
    fn normalization_inverts() {
        let ds = sample_heat_dataset(3, (5, 5), 9).unwrap();
        let f = &ds.samples[1].field;
        let back = ds.normalization.denormalize(&ds.normalization.normalize(f));
        for (a, b) in f.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let ds = sample_heat_dataset(1, (4, 4), 0).unwrap();
        let mut bytes = encode_dataset(&ds).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_dataset(&bytes), Err(Error::MagicMismatch { .. })));
        let mut bytes = encode_dataset(&ds).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_dataset(&bytes), Err(Error::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let ds = sample_heat_dataset(2, (4, 4), 0).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        let cut = bytes.len() - 5;
        match decode_dataset(&bytes[..cut]) {
            Err(Error::Truncated { offset }) => assert_eq!(offset, cut as u64),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_header_and_footer() {
        let ds = Dataset {
            samples: vec![],
            normalization: Normalization::identity(1),
        };
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 8 + 4 + 8 + 8);
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
    }

    #[test]
    fn helmholtz_dataset_file_round_trip() {
        let cfg = HelmholtzDatasetConfig::default();
        let ds = sample_helmholtz_dataset(3, &cfg, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.gabd");
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gabd_round_trip_is_exact(seed in any::<u64>(), n in 1usize..4, nx in 3usize..7, ny in 3usize..7) {
            let ds = sample_heat_dataset(n, (nx, ny), seed).unwrap();
            let bytes = encode_dataset(&ds).unwrap();
            let back = decode_dataset(&bytes).unwrap();
            prop_assert_eq!(&back, &ds);
            prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
        }
    }
}
