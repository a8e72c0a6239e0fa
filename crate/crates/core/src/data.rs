//! Bags, synthetic data generation, and dataset I/O.
//!
//! On disk a dataset is a manifest CSV (`bag_id,split,label,features,coords`)
//! whose paths are relative to the manifest's directory. Features live in a
//! `MILF` file (f32, row-major), coordinates in a `MILC` file (i32), and
//! instance labels, when a generator produced them, in an optional `MILL`
//! sidecar discovered by swapping the coords extension. All integers and
//! floats are little-endian.
//!
//! Synthetic bags carry a contiguous positive region (a run on a chain, a
//! rectangle on a grid) inside otherwise-negative instances; features are
//! class-conditional Gaussians quantized to f32 at birth so in-memory bags
//! and written-then-loaded bags are bit-identical.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_adjacency, AdjacencyGraph, NeighborPolicy};
use crate::tensor::Tensor;

const FEATURE_MAGIC: &[u8; 4] = b"MILF";
const COORD_MAGIC: &[u8; 4] = b"MILC";
const LABEL_MAGIC: &[u8; 4] = b"MILL";
const FORMAT_VERSION: u32 = 1;
const MANIFEST_HEADER: &str = "bag_id,split,label,features,coords";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split tag {:?}", other))),
        }
    }
}

/// One labeled set of instances with spatial coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    pub label: u8,
    /// `n x p`, row per instance.
    pub features: Tensor,
    /// Row-major `n x coord_dim`.
    pub coords: Vec<i32>,
    pub coord_dim: usize,
    /// Present for synthetic data; evaluation-only, never used in training.
    pub instance_labels: Option<Vec<u8>>,
}

impl Bag {
    pub fn new(
        id: String,
        label: u8,
        features: Tensor,
        coords: Vec<i32>,
        coord_dim: usize,
        instance_labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = features
            .rows()
            .map_err(|_| Error::Data(format!("bag {}: features must be a matrix", id)))?;
        if n == 0 {
            return Err(Error::Data(format!("bag {}: empty bag", id)));
        }
        if label > 1 {
            return Err(Error::Data(format!("bag {}: label {} not in {{0,1}}", id, label)));
        }
        if !(coord_dim == 1 || coord_dim == 2) {
            return Err(Error::Data(format!(
                "bag {}: coordinate dimension {} not in {{1,2}}",
                id, coord_dim
            )));
        }
        if coords.len() != n * coord_dim {
            return Err(Error::Data(format!(
                "bag {}: {} coordinates for {} instances x {} dims",
                id,
                coords.len(),
                n,
                coord_dim
            )));
        }
        let mut seen = BTreeSet::new();
        for i in 0..n {
            if !seen.insert(&coords[i * coord_dim..(i + 1) * coord_dim]) {
                return Err(Error::Data(format!("bag {}: duplicate coordinates", id)));
            }
        }
        if !features.all_finite() {
            return Err(Error::Data(format!("bag {}: non-finite feature", id)));
        }
        if let Some(labels) = &instance_labels {
            if labels.len() != n {
                return Err(Error::Data(format!(
                    "bag {}: {} instance labels for {} instances",
                    id,
                    labels.len(),
                    n
                )));
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::Data(format!("bag {}: instance label not in {{0,1}}", id)));
            }
            let max = *labels.iter().max().expect("non-empty");
            if max != label {
                return Err(Error::Data(format!(
                    "bag {}: bag label {} but max instance label {}",
                    id, label, max
                )));
            }
        }
        Ok(Bag {
            id,
            label,
            features,
            coords,
            coord_dim,
            instance_labels,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.features.rows().expect("validated at construction")
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols().expect("validated at construction")
    }

    pub fn adjacency(&self, policy: NeighborPolicy) -> Result<AdjacencyGraph> {
        build_adjacency(&self.coords, self.coord_dim, &self.features, policy)
    }
}

/// A bag paired with its prebuilt neighborhood graph.
#[derive(Debug, Clone)]
pub struct PreparedBag {
    pub bag: Bag,
    pub graph: AdjacencyGraph,
}

pub fn prepare_bags(bags: Vec<Bag>, policy: NeighborPolicy) -> Result<Vec<PreparedBag>> {
    bags.into_iter()
        .map(|bag| {
            let graph = bag.adjacency(policy)?;
            Ok(PreparedBag { bag, graph })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Chain,
    Grid,
}

impl Geometry {
    pub fn default_policy(self) -> NeighborPolicy {
        match self {
            Geometry::Chain => NeighborPolicy::Chain,
            Geometry::Grid => NeighborPolicy::Grid {
                eight_neighbors: true,
            },
        }
    }
}

/// Recipe for a synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub train_bags: usize,
    pub val_bags: usize,
    pub test_bags: usize,
    /// Inclusive range for instances per bag.
    pub instance_range: (usize, usize),
    pub feature_dim: usize,
    /// Fraction of bags per split that are positive.
    pub positive_fraction: f64,
    /// Inclusive range for the number of positive instances in a positive bag.
    pub region_range: (usize, usize),
    pub mean_negative: f64,
    pub mean_positive: f64,
    pub stddev: f64,
    pub geometry: Geometry,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            train_bags: 200,
            val_bags: 50,
            test_bags: 100,
            instance_range: (20, 40),
            feature_dim: 32,
            positive_fraction: 0.5,
            region_range: (4, 8),
            mean_negative: 0.0,
            mean_positive: 0.25,
            stddev: 1.0,
            geometry: Geometry::Chain,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (n_lo, n_hi) = self.instance_range;
        let (r_lo, r_hi) = self.region_range;
        if n_lo == 0 || n_lo > n_hi {
            return Err(Error::InvalidConfig(format!(
                "instance_range ({}, {}) is empty",
                n_lo, n_hi
            )));
        }
        if r_lo == 0 || r_lo > r_hi {
            return Err(Error::InvalidConfig(format!(
                "region_range ({}, {}) is empty",
                r_lo, r_hi
            )));
        }
        if r_hi > n_lo {
            return Err(Error::InvalidConfig(format!(
                "positive region up to {} may exceed the smallest bag ({} instances)",
                r_hi, n_lo
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::InvalidConfig(format!(
                "positive_fraction {} outside [0, 1]",
                self.positive_fraction
            )));
        }
        if !(self.stddev.is_finite() && self.stddev > 0.0) {
            return Err(Error::InvalidConfig(format!("stddev {} must be positive", self.stddev)));
        }
        if !(self.mean_negative.is_finite() && self.mean_positive.is_finite()) {
            return Err(Error::InvalidConfig("class means must be finite".into()));
        }
        Ok(())
    }
}

/// Per-split counts a generated dataset reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetCard {
    pub splits: Vec<SplitCard>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitCard {
    pub split: Split,
    pub bags: usize,
    pub positive_bags: usize,
    pub positive_fraction: f64,
    pub instances: usize,
}

impl DatasetCard {
    pub fn from_bags(items: &[(Split, Bag)]) -> Self {
        let splits = [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .map(|split| {
                let in_split: Vec<&Bag> = items
                    .iter()
                    .filter(|(s, _)| *s == split)
                    .map(|(_, b)| b)
                    .collect();
                let bags = in_split.len();
                let positive_bags = in_split.iter().filter(|b| b.label == 1).count();
                SplitCard {
                    split,
                    bags,
                    positive_bags,
                    positive_fraction: if bags == 0 {
                        0.0
                    } else {
                        positive_bags as f64 / bags as f64
                    },
                    instances: in_split.iter().map(|b| b.n_instances()).sum(),
                }
            })
            .collect();
        DatasetCard { splits }
    }
}

pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 step over seed xor salt
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_rng(seed: u64, salt: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix_seed(seed, salt))
}

pub(crate) fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller; both uniforms drawn every call to keep the stream aligned
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Deterministically generates all splits of a synthetic dataset. The same
/// `(spec, seed)` always yields bit-identical bags regardless of call order.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Vec<(Split, Bag)>> {
    spec.validate()?;
    let mut out = Vec::new();
    for (split_idx, (split, count)) in [
        (Split::Train, spec.train_bags),
        (Split::Val, spec.val_bags),
        (Split::Test, spec.test_bags),
    ]
    .into_iter()
    .enumerate()
    {
        let positives = (spec.positive_fraction * count as f64).round() as usize;
        for idx in 0..count {
            let mut rng = derive_rng(seed, ((split_idx as u64) << 32) | idx as u64);
            let id = format!("{}-{:04}", split.as_str(), idx);
            let positive = idx < positives;
            let bag = synth_bag(spec, &mut rng, id, positive)?;
            out.push((split, bag));
        }
    }
    Ok(out)
}

fn synth_bag(spec: &SynthSpec, rng: &mut ChaCha12Rng, id: String, positive: bool) -> Result<Bag> {
    let (n_lo, n_hi) = spec.instance_range;
    let n_drawn = rng.gen_range(n_lo..=n_hi);

    let (n, coords, coord_dim, labels) = match spec.geometry {
        Geometry::Chain => {
            let labels = if positive {
                let (r_lo, r_hi) = spec.region_range;
                let size = rng.gen_range(r_lo..=r_hi);
                let start = rng.gen_range(0..=n_drawn - size);
                (0..n_drawn)
                    .map(|i| u8::from(i >= start && i < start + size))
                    .collect()
            } else {
                vec![0u8; n_drawn]
            };
            let coords: Vec<i32> = (0..n_drawn as i32).collect();
            (n_drawn, coords, 1, labels)
        }
        Geometry::Grid => {
            let rows = (n_drawn as f64).sqrt().floor() as usize;
            let cols = n_drawn / rows;
            let n = rows * cols;
            let mut coords = Vec::with_capacity(n * 2);
            for r in 0..rows {
                for c in 0..cols {
                    coords.push(r as i32);
                    coords.push(c as i32);
                }
            }
            let labels = if positive {
                let (rr, cc) = grid_region_dims(spec.region_range, rows, cols, rng)
                    .ok_or_else(|| {
                        Error::Data(format!(
                            "bag {}: no {}..={}-instance rectangle fits a {}x{} grid",
                            id, spec.region_range.0, spec.region_range.1, rows, cols
                        ))
                    })?;
                let r0 = rng.gen_range(0..=rows - rr);
                let c0 = rng.gen_range(0..=cols - cc);
                let mut labels = vec![0u8; n];
                for r in r0..r0 + rr {
                    for c in c0..c0 + cc {
                        labels[r * cols + c] = 1;
                    }
                }
                labels
            } else {
                vec![0u8; n]
            };
            (n, coords, 2, labels)
        }
    };

    let p = spec.feature_dim;
    let mut feats = Vec::with_capacity(n * p);
    for &lab in &labels {
        let mean = if lab == 1 {
            spec.mean_positive
        } else {
            spec.mean_negative
        };
        for _ in 0..p {
            let v = mean + spec.stddev * standard_normal(rng);
            // quantize to f32 so in-memory bags match written-then-loaded bags
            feats.push(v as f32 as f64);
        }
    }
    let label = u8::from(positive);
    Bag::new(
        id,
        label,
        Tensor::matrix(n, p, feats)?,
        coords,
        coord_dim,
        Some(labels),
    )
}

/// All `rr x cc` rectangles with area inside `range` that fit `rows x cols`,
/// one chosen uniformly.
fn grid_region_dims(
    range: (usize, usize),
    rows: usize,
    cols: usize,
    rng: &mut ChaCha12Rng,
) -> Option<(usize, usize)> {
    let mut options = Vec::new();
    for rr in 1..=rows {
        for cc in 1..=cols {
            let area = rr * cc;
            if area >= range.0 && area <= range.1 {
                options.push((rr, cc));
            }
        }
    }
    if options.is_empty() {
        None
    } else {
        Some(options[rng.gen_range(0..options.len())])
    }
}

// ---------------------------------------------------------------- file I/O

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) struct Cursor<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
    pub(crate) path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Data(format!(
                "{}: truncated (wanted {} bytes at offset {}, file has {})",
                self.path.display(),
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Data(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.path.display(),
                got,
                magic
            )));
        }
        Ok(())
    }

    fn expect_version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported version {}",
                self.path.display(),
                v
            )));
        }
        Ok(())
    }

    pub(crate) fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Data(format!(
                "{}: {} trailing bytes",
                self.path.display(),
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    let n = features.rows()?;
    let p = features.cols()?;
    if !features.all_finite() {
        return Err(Error::Data(format!(
            "{}: refusing to write non-finite features",
            path.display()
        )));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| -> Result<()> {
        w.write_all(bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))
    };
    emit(FEATURE_MAGIC)?;
    emit(&FORMAT_VERSION.to_le_bytes())?;
    emit(&(n as u32).to_le_bytes())?;
    emit(&(p as u32).to_le_bytes())?;
    for &v in features.data() {
        emit(&(v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let buf = read_file(path)?;
    let mut c = Cursor {
        buf: &buf,
        pos: 0,
        path,
    };
    c.expect_magic(FEATURE_MAGIC)?;
    c.expect_version()?;
    let n = c.u32()? as usize;
    let p = c.u32()? as usize;
    if n == 0 || p == 0 {
        return Err(Error::Data(format!("{}: empty dimensions", path.display())));
    }
    let raw = c.take(n * p * 4)?;
    c.done()?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{}: non-finite feature", path.display())));
    }
    Tensor::matrix(n, p, data)
}

pub fn write_coords(path: &Path, coords: &[i32], n: usize, coord_dim: usize) -> Result<()> {
    if coords.len() != n * coord_dim {
        return Err(Error::shape(
            "write_coords",
            format!("{} values for {} x {}", coords.len(), n, coord_dim),
        ));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| -> Result<()> {
        w.write_all(bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))
    };
    emit(COORD_MAGIC)?;
    emit(&FORMAT_VERSION.to_le_bytes())?;
    emit(&(n as u32).to_le_bytes())?;
    emit(&(coord_dim as u32).to_le_bytes())?;
    for &v in coords {
        emit(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_coords(path: &Path) -> Result<(Vec<i32>, usize, usize)> {
    let buf = read_file(path)?;
    let mut c = Cursor {
        buf: &buf,
        pos: 0,
        path,
    };
    c.expect_magic(COORD_MAGIC)?;
    c.expect_version()?;
    let n = c.u32()? as usize;
    let dim = c.u32()? as usize;
    if n == 0 || !(dim == 1 || dim == 2) {
        return Err(Error::Data(format!(
            "{}: bad dimensions n={} dim={}",
            path.display(),
            n,
            dim
        )));
    }
    let raw = c.take(n * dim * 4)?;
    c.done()?;
    let coords = raw
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok((coords, n, dim))
}

pub fn write_instance_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| -> Result<()> {
        w.write_all(bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))
    };
    emit(LABEL_MAGIC)?;
    emit(&FORMAT_VERSION.to_le_bytes())?;
    emit(&(labels.len() as u32).to_le_bytes())?;
    emit(labels)?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_instance_labels(path: &Path) -> Result<Vec<u8>> {
    let buf = read_file(path)?;
    let mut c = Cursor {
        buf: &buf,
        pos: 0,
        path,
    };
    c.expect_magic(LABEL_MAGIC)?;
    c.expect_version()?;
    let n = c.u32()? as usize;
    let raw = c.take(n)?;
    c.done()?;
    Ok(raw.to_vec())
}

// --------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub bag_id: String,
    pub split: Split,
    pub label: u8,
    pub features_path: PathBuf,
    pub coords_path: PathBuf,
}

/// Parsed manifest with paths resolved against the manifest's directory.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == MANIFEST_HEADER => {}
        other => {
            return Err(Error::Data(format!(
                "{}: manifest header {:?}, expected {:?}",
                path.display(),
                other.unwrap_or(""),
                MANIFEST_HEADER
            )))
        }
    }
    let mut ids = BTreeSet::new();
    let mut entries = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "{}:{}: expected 5 fields, got {}",
                path.display(),
                lineno + 2,
                fields.len()
            )));
        }
        let bag_id = fields[0].to_string();
        if bag_id.is_empty() {
            return Err(Error::Data(format!(
                "{}:{}: empty bag id",
                path.display(),
                lineno + 2
            )));
        }
        if !ids.insert(bag_id.clone()) {
            return Err(Error::Data(format!(
                "{}:{}: duplicate bag id {:?}",
                path.display(),
                lineno + 2,
                bag_id
            )));
        }
        let split = Split::parse(fields[1])?;
        let label: u8 = match fields[2] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Data(format!(
                    "{}:{}: label {:?} not in {{0,1}}",
                    path.display(),
                    lineno + 2,
                    other
                )))
            }
        };
        let features_path = root.join(fields[3]);
        let coords_path = root.join(fields[4]);
        for p in [&features_path, &coords_path] {
            if !p.is_file() {
                return Err(Error::Data(format!(
                    "{}:{}: referenced file {} does not exist",
                    path.display(),
                    lineno + 2,
                    p.display()
                )));
            }
        }
        entries.push(ManifestEntry {
            bag_id,
            split,
            label,
            features_path,
            coords_path,
        });
    }
    Ok(DatasetManifest { root, entries })
}

/// Loads one bag, picking up the instance-label sidecar when present.
pub fn load_bag(entry: &ManifestEntry) -> Result<Bag> {
    let features = read_features(&entry.features_path)?;
    let (coords, n, dim) = read_coords(&entry.coords_path)?;
    if n != features.rows()? {
        return Err(Error::Data(format!(
            "bag {}: {} feature rows but {} coordinate rows",
            entry.bag_id,
            features.rows()?,
            n
        )));
    }
    let sidecar = entry.coords_path.with_extension("labels");
    let instance_labels = if sidecar.is_file() {
        Some(read_instance_labels(&sidecar)?)
    } else {
        None
    };
    Bag::new(
        entry.bag_id.clone(),
        entry.label,
        features,
        coords,
        dim,
        instance_labels,
    )
}

pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<Bag>> {
    manifest
        .entries
        .iter()
        .filter(|e| e.split == split)
        .map(load_bag)
        .collect()
}

/// Writes bags plus a manifest under `dir` and returns the manifest path.
pub fn write_dataset(dir: &Path, items: &[(Split, Bag)]) -> Result<PathBuf> {
    let bag_dir = dir.join("bags");
    fs::create_dir_all(&bag_dir).map_err(|e| Error::io(bag_dir.display().to_string(), e))?;
    let mut rows = String::from(MANIFEST_HEADER);
    rows.push('\n');
    for (split, bag) in items {
        let feat_rel = format!("bags/{}.feat", bag.id);
        let coord_rel = format!("bags/{}.coords", bag.id);
        write_features(&dir.join(&feat_rel), &bag.features)?;
        write_coords(
            &dir.join(&coord_rel),
            &bag.coords,
            bag.n_instances(),
            bag.coord_dim,
        )?;
        if let Some(labels) = &bag.instance_labels {
            write_instance_labels(&dir.join(format!("bags/{}.labels", bag.id)), labels)?;
        }
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            bag.id,
            split.as_str(),
            bag.label,
            feat_rel,
            coord_rel
        ));
    }
    let manifest_path = dir.join("manifest.csv");
    fs::write(&manifest_path, rows)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            train_bags: 6,
            val_bags: 3,
            test_bags: 3,
            instance_range: (10, 16),
            feature_dim: 4,
            positive_fraction: 0.5,
            region_range: (2, 4),
            mean_negative: 0.0,
            mean_positive: 1.0,
            stddev: 0.5,
            geometry: Geometry::Chain,
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = small_spec();
        let a = generate_synthetic(&spec, 42).unwrap();
        let b = generate_synthetic(&spec, 42).unwrap();
        assert_eq!(a.len(), b.len());
        for ((sa, ba), (sb, bb)) in a.iter().zip(&b) {
            assert_eq!(sa, sb);
            assert_eq!(ba, bb);
        }
        let c = generate_synthetic(&spec, 43).unwrap();
        assert!(a.iter().zip(&c).any(|((_, x), (_, y))| x.features != y.features));
    }

    #[test]
    fn positive_fraction_extremes() {
        let mut spec = small_spec();
        spec.positive_fraction = 0.0;
        let all_neg = generate_synthetic(&spec, 1).unwrap();
        assert!(all_neg.iter().all(|(_, b)| b.label == 0));
        spec.positive_fraction = 1.0;
        let all_pos = generate_synthetic(&spec, 1).unwrap();
        assert!(all_pos.iter().all(|(_, b)| b.label == 1));
    }

    #[test]
    fn chain_positive_region_is_one_run_in_range() {
        let spec = small_spec();
        for (_, bag) in generate_synthetic(&spec, 7).unwrap() {
            let n = bag.n_instances();
            assert!(n >= 10 && n <= 16);
            let labels = bag.instance_labels.as_ref().unwrap();
            let total: usize = labels.iter().map(|&l| l as usize).sum();
            if bag.label == 0 {
                assert_eq!(total, 0);
                continue;
            }
            assert!(total >= 2 && total <= 4, "region size {}", total);
            let first = labels.iter().position(|&l| l == 1).unwrap();
            assert!(
                labels[first..first + total].iter().all(|&l| l == 1),
                "positive region not contiguous: {:?}",
                labels
            );
            assert_eq!(u8::from(total > 0), bag.label);
        }
    }

    #[test]
    fn grid_positive_region_is_a_rectangle() {
        let mut spec = small_spec();
        spec.geometry = Geometry::Grid;
        spec.instance_range = (12, 20);
        for (_, bag) in generate_synthetic(&spec, 9).unwrap() {
            assert_eq!(bag.coord_dim, 2);
            if bag.label == 0 {
                continue;
            }
            let labels = bag.instance_labels.as_ref().unwrap();
            let ones: Vec<(i32, i32)> = (0..bag.n_instances())
                .filter(|&i| labels[i] == 1)
                .map(|i| (bag.coords[i * 2], bag.coords[i * 2 + 1]))
                .collect();
            let total = ones.len();
            assert!(total >= 2 && total <= 4);
            let rmin = ones.iter().map(|c| c.0).min().unwrap();
            let rmax = ones.iter().map(|c| c.0).max().unwrap();
            let cmin = ones.iter().map(|c| c.1).min().unwrap();
            let cmax = ones.iter().map(|c| c.1).max().unwrap();
            assert_eq!(
                ((rmax - rmin + 1) * (cmax - cmin + 1)) as usize,
                total,
                "positive cells do not fill their bounding box"
            );
        }
    }

    #[test]
    fn spec_validation_rejects_bad_ranges() {
        let mut spec = small_spec();
        spec.region_range = (5, 12);
        assert!(spec.validate().is_err()); // region can exceed smallest bag
        spec = small_spec();
        spec.instance_range = (8, 4);
        assert!(spec.validate().is_err());
        spec = small_spec();
        spec.positive_fraction = 1.5;
        assert!(spec.validate().is_err());
        spec = small_spec();
        spec.stddev = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn feature_file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.feat");
        // values already representable in f32, as the generator guarantees
        let t = Tensor::matrix(2, 3, vec![1.5, -2.25, 0.0, 3.0, 0.1f32 as f64, -7.75]).unwrap();
        write_features(&path, &t).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn coord_and_label_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cpath = dir.path().join("x.coords");
        write_coords(&cpath, &[0, 0, 0, 1, 1, 0], 3, 2).unwrap();
        let (coords, n, d) = read_coords(&cpath).unwrap();
        assert_eq!((coords.as_slice(), n, d), ([0, 0, 0, 1, 1, 0].as_slice(), 3, 2));

        let lpath = dir.path().join("x.labels");
        write_instance_labels(&lpath, &[0, 1, 1]).unwrap();
        assert_eq!(read_instance_labels(&lpath).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.feat");
        fs::write(&path, b"MILX\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_features(&path), Err(Error::Data(_))));

        let t = Tensor::matrix(2, 2, vec![1.0; 4]).unwrap();
        write_features(&path, &t).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        let err = read_features(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{}", err);
    }

    #[test]
    fn dataset_roundtrip_preserves_bags() {
        let dir = tempfile::tempdir().unwrap();
        let items = generate_synthetic(&small_spec(), 5).unwrap();
        let manifest_path = write_dataset(dir.path(), &items).unwrap();
        let manifest = load_manifest(&manifest_path).unwrap();
        assert_eq!(manifest.entries.len(), items.len());

        for split in [Split::Train, Split::Val, Split::Test] {
            let loaded = load_split(&manifest, split).unwrap();
            let want: Vec<&Bag> = items
                .iter()
                .filter(|(s, _)| *s == split)
                .map(|(_, b)| b)
                .collect();
            assert_eq!(loaded.len(), want.len());
            for (got, want) in loaded.iter().zip(&want) {
                assert_eq!(&got, want, "loaded bag differs from generated bag");
            }
        }
    }

    #[test]
    fn manifest_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, body: &str| {
            let p = dir.path().join(name);
            fs::write(&p, body).unwrap();
            p
        };
        let bad_header = write("a.csv", "id,split,label,features,coords\n");
        assert!(load_manifest(&bad_header).is_err());

        let missing_file = write(
            "b.csv",
            "bag_id,split,label,features,coords\nx,train,1,nope.feat,nope.coords\n",
        );
        assert!(load_manifest(&missing_file).is_err());

        // valid files but a duplicated id
        let t = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        write_features(&dir.path().join("x.feat"), &t).unwrap();
        write_coords(&dir.path().join("x.coords"), &[0], 1, 1).unwrap();
        let dup = write(
            "c.csv",
            "bag_id,split,label,features,coords\nx,train,0,x.feat,x.coords\nx,val,0,x.feat,x.coords\n",
        );
        assert!(load_manifest(&dup).is_err());

        let bad_label = write(
            "d.csv",
            "bag_id,split,label,features,coords\nx,train,2,x.feat,x.coords\n",
        );
        assert!(load_manifest(&bad_label).is_err());
    }

    #[test]
    fn bag_validation() {
        let t = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        // duplicate coordinates
        assert!(Bag::new("a".into(), 0, t.clone(), vec![0, 0], 1, None).is_err());
        // label/instance-label mismatch
        assert!(
            Bag::new("a".into(), 0, t.clone(), vec![0, 1], 1, Some(vec![0, 1])).is_err()
        );
        assert!(Bag::new("a".into(), 1, t.clone(), vec![0, 1], 1, Some(vec![0, 1])).is_ok());
        // wrong coord count
        assert!(Bag::new("a".into(), 0, t, vec![0, 1, 2], 1, None).is_err());
    }

    #[test]
    fn dataset_card_counts() {
        let items = generate_synthetic(&small_spec(), 3).unwrap();
        let card = DatasetCard::from_bags(&items);
        let train = &card.splits[0];
        assert_eq!(train.split, Split::Train);
        assert_eq!(train.bags, 6);
        assert_eq!(train.positive_bags, 3);
        assert!((train.positive_fraction - 0.5).abs() < 1e-12);
    }
}
