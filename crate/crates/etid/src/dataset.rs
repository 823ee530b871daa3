//! Dataset representation, synthetic generation, CSV ingestion, splitting,
//! K-way partitioning, leave-one-out subsets, and unlearning-sample handling.
//!
//! Samples carry stable ids so erasure ledgers survive re-ordering; every
//! derived collection (parts, subsets, requests) is a set of ids over one
//! underlying [`Dataset`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EtidError, Result};
use crate::matrix::Matrix;

pub type SampleId = u64;

#[derive(Debug, Clone)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    ids: Vec<SampleId>,
    num_classes: usize,
    row_of: HashMap<SampleId, usize>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        ids: Vec<SampleId>,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.len() != features.rows() || ids.len() != features.rows() {
            return Err(EtidError::shape(
                format!("{} labels and ids", features.rows()),
                format!("{} labels, {} ids", labels.len(), ids.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(EtidError::validation(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        let mut row_of = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if row_of.insert(id, row).is_some() {
                return Err(EtidError::validation(format!("duplicate sample id {id}")));
            }
        }
        Ok(Dataset {
            features,
            labels,
            ids,
            num_classes,
            row_of,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn id_set(&self) -> BTreeSet<SampleId> {
        self.ids.iter().copied().collect()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.row_of.contains_key(&id)
    }

    fn rows_for(&self, ids: &[SampleId]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.row_of
                    .get(id)
                    .copied()
                    .ok_or_else(|| EtidError::validation(format!("unknown sample id {id}")))
            })
            .collect()
    }

    /// Feature block for the given ids, in the given order.
    pub fn features_for(&self, ids: &[SampleId]) -> Result<Matrix> {
        Ok(self.features.select_rows(&self.rows_for(ids)?))
    }

    pub fn labels_for(&self, ids: &[SampleId]) -> Result<Vec<usize>> {
        Ok(self
            .rows_for(ids)?
            .into_iter()
            .map(|r| self.labels[r])
            .collect())
    }

    /// New dataset restricted to the given ids (ascending id order).
    pub fn subset(&self, ids: &BTreeSet<SampleId>) -> Result<Dataset> {
        let ordered: Vec<SampleId> = ids.iter().copied().collect();
        Dataset::new(
            self.features_for(&ordered)?,
            self.labels_for(&ordered)?,
            ordered,
            self.num_classes,
        )
    }
}

/// Assignment of every training id to exactly one of K near-equal parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionMap {
    k: usize,
    assignment: BTreeMap<SampleId, usize>,
    part_sizes: Vec<usize>,
}

impl PartitionMap {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn part_sizes(&self) -> &[usize] {
        &self.part_sizes
    }

    pub fn part_of(&self, id: SampleId) -> Option<usize> {
        self.assignment.get(&id).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<SampleId, usize> {
        &self.assignment
    }

    pub fn all_ids(&self) -> BTreeSet<SampleId> {
        self.assignment.keys().copied().collect()
    }

    pub fn part_ids(&self, i: usize) -> BTreeSet<SampleId> {
        self.assignment
            .iter()
            .filter(|(_, &p)| p == i)
            .map(|(&id, _)| id)
            .collect()
    }
}

/// Erasure request: ids drawn from the training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlearnRequest {
    pub sample_ids: BTreeSet<SampleId>,
}

impl UnlearnRequest {
    pub fn new(sample_ids: BTreeSet<SampleId>) -> Self {
        UnlearnRequest { sample_ids }
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// Parse a newline-separated id list.
    pub fn from_reader(r: impl BufRead) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let id: SampleId = trimmed.parse().map_err(|_| EtidError::Parse {
                line: lineno + 1,
                message: format!("invalid sample id `{trimmed}`"),
            })?;
            ids.insert(id);
        }
        Ok(UnlearnRequest::new(ids))
    }
}

/// Seeded Gaussian-cluster dataset: one cluster per class, labels balanced
/// within one sample.
pub fn generate_synthetic(
    n: usize,
    f: usize,
    c: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    generate_clustered(n, f, c, 1, cluster_spread, seed)
}

/// Mixture variant: each class is a union of `modes_per_class` Gaussian
/// clusters with independently drawn centers. Samples are balanced across
/// classes and round-robin across a class's modes.
pub fn generate_clustered(
    n: usize,
    f: usize,
    c: usize,
    modes_per_class: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if c < 2 || n < c || f < 1 {
        return Err(EtidError::validation(format!(
            "need n >= c >= 2 and f >= 1, got n={n}, f={f}, c={c}"
        )));
    }
    if modes_per_class < 1 {
        return Err(EtidError::validation("modes_per_class must be >= 1"));
    }
    if !(cluster_spread >= 0.0) {
        return Err(EtidError::validation("cluster_spread must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = modes_per_class;
    let centers: Vec<Vec<f64>> = (0..c * m)
        .map(|_| (0..f).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    let base = n / c;
    let mut assignments: Vec<(usize, usize)> = Vec::with_capacity(n);
    for class in 0..c {
        let count = base + usize::from(class < n % c);
        assignments.extend((0..count).map(|i| (class, i % m)));
    }
    assignments.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * f);
    for &(class, mode) in &assignments {
        let center = &centers[class * m + mode];
        for d in 0..f {
            data.push(center[d] + cluster_spread * sample_standard_normal(&mut rng));
        }
    }
    let features = Matrix::from_vec(n, f, data)?;
    let labels = assignments.into_iter().map(|(class, _)| class).collect();
    let ids = (0..n as u64).collect();
    Dataset::new(features, labels, ids, c)
}

/// Box-Muller draw; two uniforms per sample keeps the stream deterministic.
fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// CSV with header `id,label,f0..f{F-1}`.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| EtidError::Parse {
            line: 1,
            message: "empty file".into(),
        })
        .and_then(|(i, l)| l.map(|l| (i, l)).map_err(EtidError::from))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
        return Err(EtidError::Parse {
            line: 1,
            message: "header must be `id,label,f0..`".into(),
        });
    }
    let n_features = cols.len() - 2;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(EtidError::Parse {
                line: lineno,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let id: SampleId = fields[0].trim().parse().map_err(|_| EtidError::Parse {
            line: lineno,
            message: format!("invalid id `{}`", fields[0]),
        })?;
        let label: usize = fields[1].trim().parse().map_err(|_| EtidError::Parse {
            line: lineno,
            message: format!("invalid label `{}`", fields[1]),
        })?;
        for field in &fields[2..] {
            let v: f64 = field.trim().parse().map_err(|_| EtidError::Parse {
                line: lineno,
                message: format!("invalid feature `{field}`"),
            })?;
            data.push(v);
        }
        ids.push(id);
        labels.push(label);
    }
    let n = ids.len();
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    Dataset::new(Matrix::from_vec(n, n_features, data)?, labels, ids, num_classes)
}

pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "id,label")?;
    for i in 0..d.num_features() {
        write!(w, ",f{i}")?;
    }
    writeln!(w)?;
    for row in 0..d.len() {
        write!(w, "{},{}", d.ids[row], d.labels[row])?;
        for v in d.features.row(row) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Seeded disjoint train/test split; train gets round(ratio * N) samples.
pub fn split(d: &Dataset, train_ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(EtidError::validation(format!(
            "train_ratio must be in (0,1), got {train_ratio}"
        )));
    }
    let n = d.len();
    let n_train = (train_ratio * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(EtidError::validation(format!(
            "degenerate split: {n_train} of {n} samples in train"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<SampleId> = d.ids.clone();
    order.shuffle(&mut rng);
    let train_ids: BTreeSet<SampleId> = order[..n_train].iter().copied().collect();
    let test_ids: BTreeSet<SampleId> = order[n_train..].iter().copied().collect();
    Ok((d.subset(&train_ids)?, d.subset(&test_ids)?))
}

/// Random assignment of training ids to K >= 3 parts of near-equal size.
pub fn partition(train: &Dataset, k: usize, seed: u64) -> Result<PartitionMap> {
    if k < 3 {
        return Err(EtidError::validation(format!(
            "K must be >= 3 for mutual retrained-alike references, got {k}"
        )));
    }
    partition_any(train, k, seed)
}

/// Shard assignment without the K >= 3 floor (SISA only needs K >= 2).
pub(crate) fn partition_any(train: &Dataset, k: usize, seed: u64) -> Result<PartitionMap> {
    if k < 2 {
        return Err(EtidError::validation(format!("K must be >= 2, got {k}")));
    }
    if train.len() < k {
        return Err(EtidError::validation(format!(
            "need at least K={k} samples, got {}",
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<SampleId> = train.ids.clone();
    order.shuffle(&mut rng);
    let mut assignment = BTreeMap::new();
    let mut part_sizes = vec![0usize; k];
    for (idx, id) in order.into_iter().enumerate() {
        let part = idx % k;
        assignment.insert(id, part);
        part_sizes[part] += 1;
    }
    Ok(PartitionMap {
        k,
        assignment,
        part_sizes,
    })
}

/// Ids of the leave-one-out subset D_{-i}: everything not assigned to part i.
pub fn build_subset(p: &PartitionMap, i: usize) -> Result<BTreeSet<SampleId>> {
    if i >= p.k {
        return Err(EtidError::validation(format!(
            "part index {i} out of range for K={}",
            p.k
        )));
    }
    Ok(p.assignment
        .iter()
        .filter(|(_, &part)| part != i)
        .map(|(&id, _)| id)
        .collect())
}

/// Seeded uniform sample of round(ratio * N) training ids, without replacement.
pub fn sample_unlearning(train: &Dataset, ratio: f64, seed: u64) -> Result<UnlearnRequest> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EtidError::validation(format!(
            "unlearning ratio must be in (0,1), got {ratio}"
        )));
    }
    let m = (ratio * train.len() as f64).round() as usize;
    if m == 0 {
        return Err(EtidError::validation(format!(
            "ratio {ratio} selects 0 of {} samples",
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<SampleId> = train.ids.clone();
    order.shuffle(&mut rng);
    Ok(UnlearnRequest::new(order[..m].iter().copied().collect()))
}

/// Group request ids by their partition part: d_i^u = D^u ∩ d_i.
pub fn group_by_part(req: &UnlearnRequest, p: &PartitionMap) -> Result<Vec<BTreeSet<SampleId>>> {
    let mut groups = vec![BTreeSet::new(); p.k];
    for &id in &req.sample_ids {
        let part = p.part_of(id).ok_or_else(|| {
            EtidError::validation(format!("sample id {id} is not in the partition"))
        })?;
        groups[part].insert(id);
    }
    Ok(groups)
}
