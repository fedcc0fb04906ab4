//! Training datasets in example-major layout.
//!
//! Examples are the columns of the training matrix: the inner loop of the
//! solver reads one example at a time, so each example's features are stored
//! contiguously (dense) or as a sorted `(feature_index, value)` list
//! (sparse). Indices are 0-based internally; the LibSVM text format is
//! 1-based and converted on load/store.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::partition::stream_rng;
use crate::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"GLMD";
pub const BINARY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageKind {
    Dense,
    Sparse,
}

#[derive(Clone, Debug, PartialEq)]
enum Examples {
    /// `n * d` values, example-major: example `j` occupies `[j*d, (j+1)*d)`.
    Dense(Vec<f64>),
    /// One column per example, entries sorted by feature index.
    Sparse(Vec<Vec<(usize, f64)>>),
}

/// Immutable training set. Shareable across threads without synchronization.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    examples: Examples,
    labels: Vec<f64>,
}

/// Borrowed view of one example (one column of the training matrix).
#[derive(Clone, Copy, Debug)]
pub enum ColumnView<'a> {
    Dense(&'a [f64]),
    Sparse(&'a [(usize, f64)]),
}

impl ColumnView<'_> {
    pub fn dot(&self, w: &[f64]) -> f64 {
        match self {
            ColumnView::Dense(vals) => vals.iter().zip(w).map(|(x, wi)| x * wi).sum(),
            ColumnView::Sparse(entries) => entries.iter().map(|&(i, x)| x * w[i]).sum(),
        }
    }

    /// `w += scale * x`, touching only nonzero rows for sparse columns.
    pub fn axpy(&self, scale: f64, w: &mut [f64]) {
        match self {
            ColumnView::Dense(vals) => {
                for (wi, x) in w.iter_mut().zip(*vals) {
                    *wi += scale * x;
                }
            }
            ColumnView::Sparse(entries) => {
                for &(i, x) in *entries {
                    w[i] += scale * x;
                }
            }
        }
    }

    pub fn norm_sq(&self) -> f64 {
        match self {
            ColumnView::Dense(vals) => vals.iter().map(|x| x * x).sum(),
            ColumnView::Sparse(entries) => entries.iter().map(|&(_, x)| x * x).sum(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            ColumnView::Dense(vals) => vals.len(),
            ColumnView::Sparse(entries) => entries.len(),
        }
    }
}

impl Dataset {
    pub fn from_dense(n: usize, d: usize, values: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: values.len(),
            });
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        Ok(Dataset {
            n,
            d,
            examples: Examples::Dense(values),
            labels,
        })
    }

    pub fn from_sparse(d: usize, cols: Vec<Vec<(usize, f64)>>, labels: Vec<f64>) -> Result<Self> {
        let n = cols.len();
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        for (j, col) in cols.iter().enumerate() {
            let mut prev: Option<usize> = None;
            for &(i, _) in col {
                if i >= d {
                    return Err(Error::InvalidData(format!(
                        "example {j}: feature index {i} out of range (d = {d})"
                    )));
                }
                if let Some(p) = prev {
                    if i <= p {
                        return Err(Error::InvalidData(format!(
                            "example {j}: feature indices not strictly increasing ({p} then {i})"
                        )));
                    }
                }
                prev = Some(i);
            }
        }
        Ok(Dataset {
            n,
            d,
            examples: Examples::Sparse(cols),
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, j: usize) -> f64 {
        self.labels[j]
    }

    pub fn storage_kind(&self) -> StorageKind {
        match self.examples {
            Examples::Dense(_) => StorageKind::Dense,
            Examples::Sparse(_) => StorageKind::Sparse,
        }
    }

    pub fn col(&self, j: usize) -> ColumnView<'_> {
        match &self.examples {
            Examples::Dense(values) => ColumnView::Dense(&values[j * self.d..(j + 1) * self.d]),
            Examples::Sparse(cols) => ColumnView::Sparse(&cols[j]),
        }
    }

    /// Total nonzero count (for dense storage, `n * d`).
    pub fn nnz(&self) -> usize {
        match &self.examples {
            Examples::Dense(_) => self.n * self.d,
            Examples::Sparse(cols) => cols.iter().map(|c| c.len()).sum(),
        }
    }

    /// New dataset containing the given examples, in order, preserving the
    /// storage kind.
    fn subset(&self, indices: &[usize]) -> Dataset {
        let labels = indices.iter().map(|&j| self.labels[j]).collect();
        let examples = match &self.examples {
            Examples::Dense(values) => {
                let mut out = Vec::with_capacity(indices.len() * self.d);
                for &j in indices {
                    out.extend_from_slice(&values[j * self.d..(j + 1) * self.d]);
                }
                Examples::Dense(out)
            }
            Examples::Sparse(cols) => {
                Examples::Sparse(indices.iter().map(|&j| cols[j].clone()).collect())
            }
        };
        Dataset {
            n: indices.len(),
            d: self.d,
            examples,
            labels,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    /// Fraction of nonzero features per example, in (0, 1]. 1.0 means dense
    /// storage.
    pub sparsity: f64,
    pub noise_sigma: f64,
    pub task: Task,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.d < 1 {
            return Err(Error::InvalidConfig("n and d must be >= 1".into()));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sparsity must be in (0, 1], got {}",
                self.sparsity
            )));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Load a LibSVM/SVMLight text file: `label idx:val idx:val ...` per line,
/// 1-based strictly increasing indices. Labels that are all in {0, 1} are
/// remapped to {-1, +1}.
pub fn load_libsvm(path: impl AsRef<Path>, expected_d: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(BufReader::new(file), path, expected_d)
}

fn parse_libsvm<R: BufRead>(reader: R, path: &Path, expected_d: Option<usize>) -> Result<Dataset> {
    let mut cols: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut max_index = 0usize; // 1-based

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label_tok = parts.next().expect("non-empty line has a first token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad label `{label_tok}`")))?;

        let mut col = Vec::new();
        let mut prev = 0usize;
        for tok in parts {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(path, lineno, format!("expected idx:val, got `{tok}`")))?;
            let index: usize = idx_s
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad feature index `{idx_s}`")))?;
            if index == 0 {
                return Err(Error::parse(path, lineno, "feature index 0 (indices are 1-based)"));
            }
            if index <= prev {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("non-increasing feature index {index}"),
                ));
            }
            let value: f64 = val_s
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad feature value `{val_s}`")))?;
            col.push((index - 1, value));
            prev = index;
        }
        max_index = max_index.max(prev);
        cols.push(col);
        labels.push(label);
    }

    let d = match expected_d {
        Some(d) if d < max_index => {
            return Err(Error::InvalidData(format!(
                "expected_d {d} smaller than max observed feature index {max_index}"
            )));
        }
        Some(d) => d,
        None => max_index,
    };

    if labels.iter().all(|&y| y == 0.0 || y == 1.0) {
        for y in &mut labels {
            *y = if *y == 0.0 { -1.0 } else { 1.0 };
        }
    }

    Dataset::from_sparse(d, cols, labels)
}

/// Write a dataset as LibSVM text (1-based indices). Exact zeros in dense
/// storage are skipped; values round-trip through decimal formatting.
pub fn write_libsvm(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    for j in 0..ds.n {
        line.clear();
        line.push_str(&format!("{}", ds.labels[j]));
        let mut push = |i: usize, x: f64| {
            line.push_str(&format!(" {}:{}", i + 1, x));
        };
        match ds.col(j) {
            ColumnView::Dense(vals) => {
                for (i, &x) in vals.iter().enumerate() {
                    if x != 0.0 {
                        push(i, x);
                    }
                }
            }
            ColumnView::Sparse(entries) => {
                for &(i, x) in entries {
                    push(i, x);
                }
            }
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write a dense dataset in the fast-reload binary format: magic `GLMD`,
/// u32 LE version, u64 LE n, u64 LE d, `n*d` f64 LE values example-major,
/// `n` f64 LE labels.
pub fn write_binary(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let values = match &ds.examples {
        Examples::Dense(values) => values,
        Examples::Sparse(_) => {
            return Err(Error::InvalidData(
                "binary format holds dense datasets only; use LibSVM for sparse".into(),
            ));
        }
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(BINARY_MAGIC).map_err(io)?;
    w.write_all(&BINARY_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(ds.n as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(ds.d as u64).to_le_bytes()).map_err(io)?;
    for &v in values {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for &y in &ds.labels {
        w.write_all(&y.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::InvalidData(format!(
            "{}: bad magic bytes (not a GLMD file)",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io)?;
    let version = u32::from_le_bytes(u32buf);
    if version != BINARY_VERSION {
        return Err(Error::InvalidData(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(io)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf).map_err(io)?;
    let d = u64::from_le_bytes(u64buf) as usize;

    let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let values = read_f64s(n * d)?;
    let labels = read_f64s(n)?;
    Dataset::from_dense(n, d, values, labels)
}

/// Generate a synthetic GLM dataset. Ground-truth weights and feature values
/// are i.i.d. standard normal; for `sparsity < 1` each feature is nonzero
/// independently with probability `sparsity`. Deterministic per (spec, seed).
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream_rng(seed, 0);
    let normal = StandardNormal;
    let w_star: Vec<f64> = (0..spec.d).map(|_| normal.sample(&mut rng)).collect();

    let mut labels = Vec::with_capacity(spec.n);
    let label_for = |dot: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let noise: f64 = normal.sample(rng);
        let y = dot + spec.noise_sigma * noise;
        match spec.task {
            Task::Classification => {
                if y >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Task::Regression => y,
        }
    };

    if spec.sparsity >= 1.0 {
        let mut values = Vec::with_capacity(spec.n * spec.d);
        for _ in 0..spec.n {
            let mut dot = 0.0;
            for wi in &w_star {
                let x: f64 = normal.sample(&mut rng);
                dot += x * wi;
                values.push(x);
            }
            labels.push(label_for(dot, &mut rng));
        }
        Dataset::from_dense(spec.n, spec.d, values, labels)
    } else {
        let mut cols = Vec::with_capacity(spec.n);
        for _ in 0..spec.n {
            let mut col = Vec::new();
            let mut dot = 0.0;
            for (i, wi) in w_star.iter().enumerate() {
                if rng.random::<f64>() < spec.sparsity {
                    let x: f64 = normal.sample(&mut rng);
                    dot += x * wi;
                    col.push((i, x));
                }
            }
            labels.push(label_for(dot, &mut rng));
            cols.push(col);
        }
        Dataset::from_sparse(spec.d, cols, labels)
    }
}

/// Squared Euclidean norm of every column; precomputed once per training run
/// for the coordinate subproblem.
pub fn column_norms(ds: &Dataset) -> Vec<f64> {
    (0..ds.n).map(|j| ds.col(j).norm_sq()).collect()
}

/// Seeded permutation split into (train, test).
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if ds.n < 2 {
        return Err(Error::InvalidConfig("split needs at least 2 examples".into()));
    }
    let test_n = (ds.n as f64 * test_fraction).round() as usize;
    if test_n == 0 || test_n >= ds.n {
        return Err(Error::InvalidConfig(format!(
            "test_fraction {test_fraction} produces an empty split for n = {}",
            ds.n
        )));
    }
    let mut indices: Vec<usize> = (0..ds.n).collect();
    crate::partition::shuffle(&mut indices, &mut stream_rng(seed, 0));
    let (test_idx, train_idx) = indices.split_at(test_n);
    Ok((ds.subset(train_idx), ds.subset(test_idx)))
}
