//! Labelled datasets: loading, normalization, partitioning across nodes and
//! construction of neighboring datasets for privacy tests.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::network::NetworkGraph;
use crate::noise::{StreamKey, StreamPurpose};
use crate::Vector;

/// One labelled sample. `x` is expected to satisfy `‖x‖₂ ≤ 1` once
/// normalized and `y` is `-1.0` or `+1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x: Vector,
    pub y: f64,
}

impl DataPoint {
    /// Builds a point, rejecting labels outside {−1, +1}.
    pub fn new(x: Vector, y: f64) -> Result<Self> {
        if y != 1.0 && y != -1.0 {
            return Err(Error::Label(format!("label must be -1 or +1, got {y}")));
        }
        Ok(Self { x, y })
    }

    pub fn from_slice(x: &[f64], y: f64) -> Result<Self> {
        Self::new(Vector::from_column_slice(x), y)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Checks the normalized-point invariants (`‖x‖ ≤ 1`, binary label).
    pub fn validate(&self) -> Result<()> {
        if self.y != 1.0 && self.y != -1.0 {
            return Err(Error::Label(format!("label must be -1 or +1, got {}", self.y)));
        }
        let norm = self.x.norm();
        if !(norm <= 1.0 + NORM_SLACK) {
            return Err(Error::InvalidArgument(format!("feature norm {norm} exceeds 1")));
        }
        Ok(())
    }
}

/// Rounding allowance used when checking `‖x‖ ≤ 1`.
pub const NORM_SLACK: f64 = 1e-12;

/// The training sample held by a single node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDataset {
    pub node_id: usize,
    pub points: Vec<DataPoint>,
}

impl NodeDataset {
    pub fn new(node_id: usize, points: Vec<DataPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(format!("node {node_id} has an empty dataset")));
        }
        let d = points[0].dim();
        for p in &points {
            crate::error::check_dim(d, p.dim())?;
            p.validate()?;
        }
        Ok(Self { node_id, points })
    }

    /// Number of samples `B_p`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, DataPoint::dim)
    }
}

/// Per-node datasets, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedDataset {
    pub per_node: Vec<NodeDataset>,
}

impl PartitionedDataset {
    pub fn new(per_node: Vec<NodeDataset>) -> Result<Self> {
        if per_node.is_empty() {
            return Err(Error::InvalidArgument("no node datasets".into()));
        }
        let d = per_node[0].dim();
        for (i, node) in per_node.iter().enumerate() {
            if node.node_id != i {
                return Err(Error::InvalidArgument(format!("node dataset at position {i} carries id {}", node.node_id)));
            }
            crate::error::check_dim(d, node.dim())?;
        }
        Ok(Self { per_node })
    }

    pub fn node_count(&self) -> usize {
        self.per_node.len()
    }

    pub fn dim(&self) -> usize {
        self.per_node[0].dim()
    }

    pub fn total_len(&self) -> usize {
        self.per_node.iter().map(NodeDataset::len).sum()
    }

    /// All points in node order.
    pub fn all_points(&self) -> impl Iterator<Item = &DataPoint> {
        self.per_node.iter().flat_map(|n| n.points.iter())
    }
}

/// On-disk dataset formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// `x_1,...,x_d,label` per line.
    Csv,
    /// `label idx:val idx:val ...` with 1-based indices.
    Libsvm,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "libsvm" | "svmlight" => Ok(DataFormat::Libsvm),
            other => Err(Error::InvalidArgument(format!("unknown data format '{other}'"))),
        }
    }
}

/// Result of [`load_dataset`]: un-normalized points plus what the loader saw.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub points: Vec<DataPoint>,
    /// Largest feature norm before any normalization.
    pub raw_max_norm: f64,
    /// Raw label mapped to −1 and raw label mapped to +1 (when present).
    pub negative_label: Option<String>,
    pub positive_label: Option<String>,
}

/// Reads a binary-labelled dataset. Labels are mapped to {−1, +1}: the smaller
/// raw label becomes −1, comparing numerically when both labels parse as
/// numbers and lexicographically otherwise.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<LoadedData> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, format)
}

/// Parses dataset text in the given format. See [`load_dataset`].
pub fn parse_dataset(text: &str, format: DataFormat) -> Result<LoadedData> {
    let rows = match format {
        DataFormat::Csv => parse_csv_rows(text)?,
        DataFormat::Libsvm => parse_libsvm_rows(text)?,
    };
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, message: "no samples found".into() });
    }

    let distinct: BTreeSet<&str> = rows.iter().map(|(_, l)| l.as_str()).collect();
    if distinct.len() > 2 {
        return Err(Error::Label(format!(
            "expected at most two distinct labels, found {}: {:?}",
            distinct.len(),
            distinct.iter().take(5).collect::<Vec<_>>()
        )));
    }
    let mut labels: Vec<&str> = distinct.into_iter().collect();
    let numeric = labels.iter().all(|l| l.parse::<f64>().is_ok());
    if numeric {
        labels.sort_by(|a, b| {
            let (a, b): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
            a.partial_cmp(&b).unwrap()
        });
    } else {
        labels.sort();
    }

    let (negative, positive) = match labels.as_slice() {
        [single] => {
            // A single class: numeric labels ≤ 0 are negative, anything else positive.
            let neg = single.parse::<f64>().map(|v| v <= 0.0).unwrap_or(false);
            if neg {
                (Some(single.to_string()), None)
            } else {
                (None, Some(single.to_string()))
            }
        }
        [lo, hi] => (Some(lo.to_string()), Some(hi.to_string())),
        _ => unreachable!(),
    };

    let mut points = Vec::with_capacity(rows.len());
    let mut raw_max_norm = 0.0f64;
    for (x, label) in rows {
        let y = if negative.as_deref() == Some(label.as_str()) { -1.0 } else { 1.0 };
        raw_max_norm = raw_max_norm.max(x.norm());
        points.push(DataPoint { x, y });
    }
    Ok(LoadedData { points, raw_max_norm, negative_label: negative, positive_label: positive })
}

fn parse_csv_rows(text: &str) -> Result<Vec<(Vector, String)>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() < 2 {
            return Err(Error::Parse { line, message: "need at least one feature and a label".into() });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse { line, message: format!("expected {w} columns, found {}", record.len()) })
            }
            _ => {}
        }
        let n = record.len();
        let features = record
            .iter()
            .take(n - 1)
            .map(|s| s.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("bad feature value '{s}'") }))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((Vector::from_vec(features), record[n - 1].to_string()));
    }
    Ok(rows)
}

fn parse_libsvm_rows(text: &str) -> Result<Vec<(Vector, String)>> {
    let mut sparse = Vec::new();
    let mut max_index = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = tokens.next().unwrap().to_string();
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse { line, message: format!("expected idx:val, got '{tok}'") })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse { line, message: format!("bad index '{idx}'") })?;
            if idx == 0 {
                return Err(Error::Parse { line, message: "indices are 1-based".into() });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse { line, message: format!("bad value '{val}'") })?;
            max_index = max_index.max(idx);
            entries.push((idx - 1, val));
        }
        sparse.push((entries, label));
    }
    if max_index == 0 && !sparse.is_empty() {
        return Err(Error::Parse { line: 1, message: "no feature columns found".into() });
    }
    Ok(sparse
        .into_iter()
        .map(|(entries, label)| {
            let mut x = Vector::zeros(max_index);
            for (j, v) in entries {
                x[j] = v;
            }
            (x, label)
        })
        .collect())
}

/// Points rescaled so that every feature vector has norm at most one.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub points: Vec<DataPoint>,
    /// Divisor applied to every feature vector (1.0 when unchanged).
    pub scale: f64,
}

/// Divides all feature vectors by the global maximum norm when it exceeds 1.
pub fn normalize(points: &[DataPoint]) -> Result<Normalized> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("cannot normalize an empty dataset".into()));
    }
    let max_norm = points.iter().map(|p| p.x.norm()).fold(0.0, f64::max);
    let scale = if max_norm > 1.0 { max_norm } else { 1.0 };
    let points = points
        .iter()
        .map(|p| {
            let mut x = &p.x / scale;
            // guard against the max-norm vector landing a hair above 1
            let n = x.norm();
            if n > 1.0 {
                x /= n;
            }
            DataPoint { x, y: p.y }
        })
        .collect();
    Ok(Normalized { points, scale })
}

/// How points are split across nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionStrategy {
    /// Sizes differ by at most one; the first `n mod P` nodes get the extra point.
    Even,
    /// Sizes proportional to the given positive weights (largest remainder), each ≥ 1.
    ByWeights(Vec<f64>),
}

/// Shuffles the points with the given seed and deals them out to the graph's nodes.
pub fn partition(points: &[DataPoint], graph: &NetworkGraph, strategy: &PartitionStrategy, seed: u64) -> Result<PartitionedDataset> {
    let p = graph.node_count();
    let n = points.len();
    if n < p {
        return Err(Error::InvalidArgument(format!("{n} points cannot cover {p} nodes")));
    }
    let sizes = match strategy {
        PartitionStrategy::Even => (0..p).map(|i| n / p + usize::from(i < n % p)).collect::<Vec<_>>(),
        PartitionStrategy::ByWeights(w) => weighted_sizes(n, w, p)?,
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = StreamKey::new(seed, StreamPurpose::Partition, 0, 0).rng();
    order.shuffle(&mut rng);

    let mut per_node = Vec::with_capacity(p);
    let mut cursor = 0;
    for (node, &size) in sizes.iter().enumerate() {
        let pts = order[cursor..cursor + size].iter().map(|&i| points[i].clone()).collect();
        cursor += size;
        per_node.push(NodeDataset::new(node, pts)?);
    }
    PartitionedDataset::new(per_node)
}

fn weighted_sizes(n: usize, weights: &[f64], p: usize) -> Result<Vec<usize>> {
    if weights.len() != p {
        return Err(Error::InvalidArgument(format!("{} weights for {p} nodes", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument("partition weights must be positive".into()));
    }
    // one point reserved per node, the rest split by largest remainder
    let spare = n - p;
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * spare as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = spare - sizes.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..p).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in &by_remainder {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes.into_iter().map(|s| s + 1).collect())
}

/// Linearly separable synthetic sample: `x` uniform on `[−1, 1]^d` shrunk
/// into the unit ball, `y = sign(w·x)` for the fixed direction
/// `w = (1, −½, 1, −½, …)`, then each label flipped with probability `flip`.
pub fn synthetic_points(n: usize, d: usize, flip: f64, seed: u64) -> Result<Vec<DataPoint>> {
    use rand::RngExt;
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("synthetic data needs n ≥ 1 and d ≥ 1".into()));
    }
    if !(0.0..=1.0).contains(&flip) {
        return Err(Error::InvalidArgument(format!("flip probability {flip} outside [0, 1]")));
    }
    let mut rng = StreamKey::new(seed, StreamPurpose::Synthetic, 0, 0).rng();
    let w: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
    (0..n)
        .map(|_| {
            let x = Vector::from_iterator(d, (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0));
            let x = &x / x.norm().max(1.0);
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mut y = if s >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < flip {
                y = -y;
            }
            DataPoint::new(x, y)
        })
        .collect()
}

/// Copy of `dataset` with the point at `index` replaced.
pub fn neighboring_dataset(dataset: &NodeDataset, index: usize, replacement: DataPoint) -> Result<NodeDataset> {
    if index >= dataset.len() {
        return Err(Error::IndexOutOfRange { index, len: dataset.len() });
    }
    crate::error::check_dim(dataset.dim(), replacement.dim())?;
    replacement.validate()?;
    let mut out = dataset.clone();
    out.points[index] = replacement;
    Ok(out)
}

/// Number of positions at which the two datasets hold different points.
pub fn hamming_distance(a: &NodeDataset, b: &NodeDataset) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("size mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(a.points.iter().zip(&b.points).filter(|(p, q)| p != q).count())
}
