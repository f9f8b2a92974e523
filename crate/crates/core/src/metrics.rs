//! Pairwise distances, dense distance matrices and the empirical metric audit.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::PatientId;
use crate::error::{Error, Result};
use crate::features::FeatureSpace;
use crate::seed;
use crate::weaksup::WsdWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "MAN")]
    Man,
    #[serde(rename = "EUC")]
    Euc,
    #[serde(rename = "COS")]
    Cos,
    #[serde(rename = "WSD")]
    Wsd,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Man, Measure::Euc, Measure::Cos, Measure::Wsd];

    pub fn tag(self) -> &'static str {
        match self {
            Measure::Man => "MAN",
            Measure::Euc => "EUC",
            Measure::Cos => "COS",
            Measure::Wsd => "WSD",
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MAN" => Ok(Measure::Man),
            "EUC" => Ok(Measure::Euc),
            "COS" => Ok(Measure::Cos),
            "WSD" => Ok(Measure::Wsd),
            other => Err(Error::InvalidArgument(format!("unknown measure {other:?}"))),
        }
    }
}

/// Distance between two vectors.
///
/// For [`Measure::Wsd`] the vectors are compared coordinate-wise and the
/// absolute differences weighted: `sum_i w_i |x_i - y_i|`. Cosine distance of
/// a zero-norm vector is 0 against another zero-norm vector and 1 otherwise.
pub fn pair_distance(x: &[f64], y: &[f64], measure: Measure, weights: Option<&WsdWeights>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let diffs = x.iter().zip(y).map(|(a, b)| (a - b).abs());
    Ok(match measure {
        Measure::Man => diffs.sum(),
        Measure::Euc => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        Measure::Cos => cosine(x, y),
        Measure::Wsd => {
            let w = weights.ok_or_else(|| Error::InvalidArgument("WSD requires weights".into()))?;
            if w.weights.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: w.weights.len(),
                    got: x.len(),
                });
            }
            w.weights.iter().zip(diffs).map(|(w, d)| w * d).sum()
        }
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let (nx, ny) = (norm(x), norm(y));
    match (nx == 0.0, ny == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => {
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            1.0 - dot / (nx * ny)
        }
    }
}

/// What a matrix measures; the eight-byte tag of the binary format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatrixKind {
    Measure(Measure),
    /// Summed per-item dynamic time warping.
    Dtw,
    /// Euclidean distances between embedded coordinates.
    Embedded,
    /// Absolute difference of a single feature.
    Feature,
    Custom,
}

impl MatrixKind {
    pub fn tag(self) -> &'static str {
        match self {
            MatrixKind::Measure(m) => m.tag(),
            MatrixKind::Dtw => "DTW",
            MatrixKind::Embedded => "EMB",
            MatrixKind::Feature => "FEAT",
            MatrixKind::Custom => "CUSTOM",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "DTW" => MatrixKind::Dtw,
            "EMB" => MatrixKind::Embedded,
            "FEAT" => MatrixKind::Feature,
            "CUSTOM" => MatrixKind::Custom,
            other => MatrixKind::Measure(other.parse()?),
        })
    }
}

/// Dense symmetric `n x n` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub n: usize,
    pub kind: MatrixKind,
    pub ids: Vec<PatientId>,
    pub data: Vec<f64>,
    /// Pairs where a cosine operand had zero norm.
    pub zero_norm_pairs: usize,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Build from a symmetric pair function; the diagonal is zero.
    pub fn from_fn<F>(ids: Vec<PatientId>, kind: MatrixKind, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let n = ids.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i + 1..n).map(|j| f(i, j)).collect())
            .collect();
        let mut data = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (off, &d) in row.iter().enumerate() {
                let j = i + 1 + off;
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        DistanceMatrix {
            n,
            kind,
            ids,
            data,
            zero_norm_pairs: 0,
        }
    }

    /// From full square data, e.g. hand-built test matrices.
    pub fn from_square(ids: Vec<PatientId>, kind: MatrixKind, data: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(DistanceMatrix {
            n,
            kind,
            ids,
            data,
            zero_norm_pairs: 0,
        })
    }

    /// Euclidean distances between points.
    pub fn euclidean<P: AsRef<[f64]> + Sync>(ids: Vec<PatientId>, points: &[P], kind: MatrixKind) -> Self {
        Self::from_fn(ids, kind, |i, j| {
            points[i]
                .as_ref()
                .iter()
                .zip(points[j].as_ref())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DistanceMatrix {
            data: self.data.iter().map(|d| d * factor).collect(),
            ..self.clone()
        }
    }

    /// Binary layout: `n` as u64 LE, 8-byte ASCII tag (NUL padded), then
    /// `n * n` f64 LE values row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.n as u64).to_le_bytes())?;
        let mut tag = [0u8; 8];
        tag[..self.kind.tag().len()].copy_from_slice(self.kind.tag().as_bytes());
        w.write_all(&tag)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary layout; ids are not stored and come back as indices.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let io = |e| Error::io("<matrix>", e);
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf).map_err(io)?;
        let n = u64::from_le_bytes(buf) as usize;
        r.read_exact(&mut buf).map_err(io)?;
        let tag = std::str::from_utf8(&buf)
            .map_err(|_| Error::InvalidArgument("matrix tag is not ASCII".into()))?
            .trim_end_matches('\0');
        let kind = MatrixKind::from_tag(tag)?;
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            r.read_exact(&mut buf).map_err(io)?;
            data.push(f64::from_le_bytes(buf));
        }
        Self::from_square((0..n).map(|i| i.to_string()).collect(), kind, data)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["patient_id".to_string()];
        header.extend(self.ids.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut row = vec![self.ids[i].clone()];
            row.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Sub-matrix over the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let data = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| self.get(i, j)))
            .collect();
        DistanceMatrix {
            n: idx.len(),
            kind: self.kind,
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            data,
            zero_norm_pairs: 0,
        }
    }
}

/// Distance matrix of the given measure over a feature space.
///
/// MAN, EUC and COS compare the min-max scaled per-patient vectors. WSD
/// weights each descriptive variable divided by its range over all pairs;
/// this differs from the classifier's min-max inputs only by a constant per
/// column, so it orders pairs like the trained decision function while
/// keeping `WSD(X, X) = 0` and, for non-negative weights, the metric axioms.
pub fn distance_matrix(space: &FeatureSpace, measure: Measure, weights: Option<&WsdWeights>) -> Result<DistanceMatrix> {
    let n = space.ids.len();
    if n < 2 {
        return Err(Error::InvalidArgument("distance matrix needs at least two patients".into()));
    }
    let kind = MatrixKind::Measure(measure);
    if measure == Measure::Wsd {
        let w = weights.ok_or_else(|| Error::InvalidArgument("WSD requires weights".into()))?;
        let cols = &w.columns;
        let table = &space.table;
        let scale: Vec<f64> = cols
            .iter()
            .map(|&c| {
                let p = table.params[c];
                if p.constant {
                    0.0
                } else {
                    1.0 / (p.max - p.min)
                }
            })
            .collect();
        return Ok(DistanceMatrix::from_fn(space.ids.clone(), kind, |i, j| {
            let row = &table.raw[table.pair_index(i, j)];
            cols.iter()
                .zip(&w.weights)
                .zip(&scale)
                .map(|((&c, wt), sc)| wt * row[c] * sc)
                .sum()
        }));
    }
    let vectors = space.patient_vectors();
    let mut m = DistanceMatrix::from_fn(space.ids.clone(), kind, |i, j| {
        pair_distance(&vectors[i], &vectors[j], measure, None).expect("equal dimensions")
    });
    if measure == Measure::Cos {
        let zero: Vec<bool> = vectors.iter().map(|v| norm(v) == 0.0).collect();
        m.zero_norm_pairs = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| zero[i] || zero[j])
            .count();
        if m.zero_norm_pairs > 0 {
            log::warn!("{} pairs involve a zero-norm vector under COS", m.zero_norm_pairs);
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAudit {
    pub positivity_pct: f64,
    pub symmetry_pct: f64,
    pub identity_pct: f64,
    pub triangle_pct: f64,
    pub max_violation: f64,
    pub triples_checked: u64,
    pub exhaustive: bool,
    /// Violation counts by magnitude band.
    pub violation_bands: BTreeMap<String, u64>,
}

pub const DEFAULT_AUDIT_TRIPLES: u64 = 1_000_000;

const BANDS: [(&str, f64); 4] = [
    ("<1e-6", 1e-6),
    ("1e-6..1e-2", 1e-2),
    ("1e-2..1", 1.0),
    (">=1", f64::INFINITY),
];

/// Triangle slack tolerance relative to the compared magnitudes.
fn violation(d: &DistanceMatrix, a: usize, b: usize, c: usize) -> f64 {
    let lhs = d.get(a, c);
    let rhs = d.get(a, b) + d.get(b, c);
    let excess = lhs - rhs;
    if excess > 1e-12 * lhs.abs().max(rhs.abs()).max(1.0) {
        excess
    } else {
        0.0
    }
}

#[derive(Default)]
struct TriangleTally {
    checked: u64,
    violated: u64,
    max: f64,
    bands: [u64; 4],
}

impl TriangleTally {
    fn add(&mut self, v: f64) {
        self.checked += 1;
        if v > 0.0 {
            self.violated += 1;
            self.max = self.max.max(v);
            let band = BANDS.iter().position(|&(_, hi)| v < hi).unwrap();
            self.bands[band] += 1;
        }
    }

    fn merge(mut self, o: TriangleTally) -> Self {
        self.checked += o.checked;
        self.violated += o.violated;
        self.max = self.max.max(o.max);
        for (a, b) in self.bands.iter_mut().zip(o.bands) {
            *a += b;
        }
        self
    }
}

const AUDIT_CHUNK: u64 = 65_536;

/// Empirical check of the metric axioms.
///
/// Triangle inequality over distinct ordered triples: exhaustive when
/// `n (n-1) (n-2) <= triples`, otherwise `triples` uniform samples.
pub fn audit_metric(d: &DistanceMatrix, triples: u64, seed: u64) -> MetricAudit {
    let n = d.n;
    let off_diag = (n * n.saturating_sub(1)) as f64;
    let pct = |count: usize, total: f64| if total == 0.0 { 100.0 } else { 100.0 * count as f64 / total };
    let positive = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .filter(|&(i, j)| d.get(i, j) >= 0.0)
        .count();
    let symmetric = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| (d.get(i, j) - d.get(j, i)).abs() <= 1e-12)
        .count();
    let identity = (0..n).filter(|&i| d.get(i, i) == 0.0).count();

    let total_triples = (n as u64) * (n as u64).saturating_sub(1) * (n as u64).saturating_sub(2);
    let exhaustive = total_triples <= triples;
    let tally = if n < 3 {
        TriangleTally::default()
    } else if exhaustive {
        (0..n)
            .into_par_iter()
            .map(|a| {
                let mut t = TriangleTally::default();
                for b in (0..n).filter(|&b| b != a) {
                    for c in (0..n).filter(|&c| c != a && c != b) {
                        t.add(violation(d, a, b, c));
                    }
                }
                t
            })
            .reduce(TriangleTally::default, TriangleTally::merge)
    } else {
        let chunks = triples.div_ceil(AUDIT_CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = seed::rng(seed::derive_index(seed, chunk));
                let count = AUDIT_CHUNK.min(triples - chunk * AUDIT_CHUNK);
                let mut t = TriangleTally::default();
                for _ in 0..count {
                    let a = rng.random_range(0..n);
                    let mut b = rng.random_range(0..n - 1);
                    if b >= a {
                        b += 1;
                    }
                    let mut c = rng.random_range(0..n - 2);
                    for taken in [a.min(b), a.max(b)] {
                        if c >= taken {
                            c += 1;
                        }
                    }
                    t.add(violation(d, a, b, c));
                }
                t
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(TriangleTally::default(), TriangleTally::merge)
    };
    MetricAudit {
        positivity_pct: pct(positive, off_diag),
        symmetry_pct: pct(symmetric, off_diag / 2.0),
        identity_pct: pct(identity, n as f64),
        triangle_pct: if tally.checked == 0 {
            100.0
        } else {
            100.0 * (tally.checked - tally.violated) as f64 / tally.checked as f64
        },
        max_violation: tally.max,
        triples_checked: tally.checked,
        exhaustive,
        violation_bands: BANDS
            .iter()
            .zip(tally.bands)
            .map(|(&(name, _), c)| (name.to_string(), c))
            .collect(),
    }
}
