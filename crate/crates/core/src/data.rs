//! Datasets, class-incremental task splits and rehearsal memory.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const FEATURE_MAGIC: &str = "SOMNUS-FEAT";

/// Inputs in `[0, 1]` with class labels. Inputs are stored row-major in one
/// buffer; `input(i)` borrows row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    dim: usize,
    num_classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(dim: usize, num_classes: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                context: "LabeledSet::new",
                expected: dim * labels.len(),
                found: inputs.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Self {
            dim,
            num_classes,
            inputs,
            labels,
        })
    }

    pub fn empty(dim: usize, num_classes: usize) -> Self {
        Self {
            dim,
            num_classes,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut inputs = Vec::with_capacity(dim * rows.len());
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "LabeledSet::from_rows",
                    expected: dim,
                    found: r.len(),
                });
            }
            inputs.extend_from_slice(r);
        }
        Self::new(dim, num_classes, inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// All inputs as one row-major `len × dim` buffer.
    pub fn raw_inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// New set holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        LabeledSet {
            dim: self.dim,
            num_classes: self.num_classes,
            inputs,
            labels,
        }
    }

    /// Rows whose label is in `classes`.
    pub fn filter_classes(&self, classes: &[usize]) -> LabeledSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        self.subset(&idx)
    }

    pub fn append(&mut self, other: &LabeledSet) -> Result<()> {
        if other.is_empty() {
            return Ok(());
        }
        if self.dim != other.dim && !self.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "LabeledSet::append",
                expected: self.dim,
                found: other.dim,
            });
        }
        if self.is_empty() {
            self.dim = other.dim;
        }
        self.num_classes = self.num_classes.max(other.num_classes);
        self.inputs.extend_from_slice(&other.inputs);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    pub fn concat(sets: &[&LabeledSet]) -> Result<LabeledSet> {
        let first = sets.first().ok_or(Error::Empty("LabeledSet::concat"))?;
        let mut out = LabeledSet::empty(first.dim, first.num_classes);
        for s in sets {
            out.append(s)?;
        }
        Ok(out)
    }

    pub fn shuffled(&self, rng: &mut Rng) -> LabeledSet {
        let perm = rng.permutation(self.len());
        self.subset(&perm)
    }

    /// Keeps the first `ceil(fraction · n_c)` rows of every class, after a
    /// seeded shuffle. Used for the reduced-data tier.
    pub fn stratified_fraction(&self, fraction: f64, rng: &mut Rng) -> LabeledSet {
        let mut keep = Vec::new();
        for indices in self.indices_by_class() {
            let mut idx = indices;
            rng.shuffle(&mut idx);
            let n = ((idx.len() as f64) * fraction).ceil() as usize;
            keep.extend_from_slice(&idx[..n.min(idx.len())]);
        }
        keep.sort_unstable();
        self.subset(&keep)
    }

    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l].push(i);
        }
        by
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

fn read_be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let chunk = bytes.get(at..at + 4).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        needed: at + 4,
        got: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
}

/// Loads an IDX image/label file pair; pixels are scaled by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledSet> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let img = fs::read(images_path)?;
    let lab = fs::read(labels_path)?;
    parse_idx(&img, images_path, &lab, labels_path)
}

pub(crate) fn parse_idx(img: &[u8], images_path: &Path, lab: &[u8], labels_path: &Path) -> Result<LabeledSet> {
    let magic = read_be_u32(img, 0, images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = read_be_u32(img, 4, images_path)? as usize;
    let rows = read_be_u32(img, 8, images_path)? as usize;
    let cols = read_be_u32(img, 12, images_path)? as usize;
    let dim = rows * cols;

    let magic = read_be_u32(lab, 0, labels_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABEL_MAGIC,
            found: magic,
        });
    }
    let n_labels = read_be_u32(lab, 4, labels_path)? as usize;
    if n != n_labels {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }

    let pixels = img.get(16..16 + n * dim).ok_or_else(|| Error::Truncated {
        path: images_path.to_path_buf(),
        needed: 16 + n * dim,
        got: img.len(),
    })?;
    let label_bytes = lab.get(8..8 + n).ok_or_else(|| Error::Truncated {
        path: labels_path.to_path_buf(),
        needed: 8 + n,
        got: lab.len(),
    })?;

    let inputs: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    LabeledSet::new(dim, num_classes, inputs, labels)
}

/// Writes a feature file: ASCII header `SOMNUS-FEAT v1 <n> <dim> <num_classes>\n`
/// then per row `dim` little-endian f32 values and a one-byte label.
pub fn write_features(path: impl AsRef<Path>, rows: &[Vec<f32>], labels: &[u8], num_classes: usize) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut buf = Vec::with_capacity(64 + rows.len() * (dim * 4 + 1));
    writeln!(buf, "{FEATURE_MAGIC} v1 {} {} {}", rows.len(), dim, num_classes)?;
    for (row, &label) in rows.iter().zip(labels) {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "write_features",
                expected: dim,
                found: row.len(),
            });
        }
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(label);
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Loads a feature file and min-max normalises each feature into `[0, 1]`.
/// Features with zero range map to 0.
pub fn load_features(path: impl AsRef<Path>) -> Result<LabeledSet> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };

    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != FEATURE_MAGIC || fields[1] != "v1" {
        return Err(bad(format!("unrecognised header {header:?}")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad header field {s:?}")));
    let n = parse(fields[2])?;
    let dim = parse(fields[3])?;
    let num_classes = parse(fields[4])?;

    let record = dim * 4 + 1;
    let body = &bytes[header_end + 1..];
    if body.len() != n * record {
        return Err(bad(format!(
            "expected {} payload bytes for {n} rows of dim {dim}, found {}",
            n * record,
            body.len()
        )));
    }

    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for rec in body.chunks_exact(record) {
        for v in rec[..dim * 4].chunks_exact(4) {
            let x = f32::from_le_bytes([v[0], v[1], v[2], v[3]]);
            if !x.is_finite() {
                return Err(bad("non-finite feature value".into()));
            }
            inputs.push(f64::from(x));
        }
        labels.push(usize::from(rec[dim * 4]));
    }

    min_max_normalize(&mut inputs, dim);
    LabeledSet::new(dim, num_classes, inputs, labels)
}

fn min_max_normalize(inputs: &mut [f64], dim: usize) {
    if dim == 0 || inputs.is_empty() {
        return;
    }
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for row in inputs.chunks_exact(dim) {
        for (j, &x) in row.iter().enumerate() {
            lo[j] = lo[j].min(x);
            hi[j] = hi[j].max(x);
        }
    }
    for row in inputs.chunks_exact_mut(dim) {
        for (j, x) in row.iter_mut().enumerate() {
            let range = hi[j] - lo[j];
            *x = if range > 0.0 { (*x - lo[j]) / range } else { 0.0 };
        }
    }
}

/// One class-incremental task.
#[derive(Debug, Clone)]
pub struct Task {
    pub id: usize,
    pub labels: Vec<usize>,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

/// Ordered tasks with disjoint label groups.
#[derive(Debug, Clone)]
pub struct TaskSequence {
    pub tasks: Vec<Task>,
    /// `order[k]` is the label group held by task `k`.
    pub order: Vec<usize>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn all_train(&self) -> Result<LabeledSet> {
        LabeledSet::concat(&self.tasks.iter().map(|t| &t.train).collect::<Vec<_>>())
    }

    pub fn all_test(&self) -> Result<LabeledSet> {
        LabeledSet::concat(&self.tasks.iter().map(|t| &t.test).collect::<Vec<_>>())
    }

    /// Moves `fraction` of every task's training rows (stratified per class)
    /// into a validation set, returning one validation set per task.
    pub fn carve_validation(&mut self, fraction: f64, rng: &mut Rng) -> Vec<LabeledSet> {
        let mut vals = Vec::with_capacity(self.tasks.len());
        for task in &mut self.tasks {
            let (train, val) = stratified_split(&task.train, fraction, rng);
            task.train = train;
            vals.push(val);
        }
        vals
    }
}

/// Splits each class of `set` into `(rest, held_out)` with
/// `floor(fraction · n_c)` held-out rows.
pub fn stratified_split(set: &LabeledSet, fraction: f64, rng: &mut Rng) -> (LabeledSet, LabeledSet) {
    let mut rest = Vec::new();
    let mut held = Vec::new();
    for mut idx in set.indices_by_class() {
        rng.shuffle(&mut idx);
        let n_held = ((idx.len() as f64) * fraction).floor() as usize;
        held.extend_from_slice(&idx[..n_held]);
        rest.extend_from_slice(&idx[n_held..]);
    }
    rest.sort_unstable();
    held.sort_unstable();
    (set.subset(&rest), set.subset(&held))
}

/// Label groups `{0,1}, {2,3}, …` for `num_classes` split `labels_per_task` at a time.
pub fn label_groups(num_classes: usize, labels_per_task: usize) -> Result<Vec<Vec<usize>>> {
    if labels_per_task == 0 || !num_classes.is_multiple_of(labels_per_task) {
        return Err(Error::InvalidArgument(format!(
            "{num_classes} classes cannot be split into tasks of {labels_per_task} labels"
        )));
    }
    Ok((0..num_classes / labels_per_task)
        .map(|g| (g * labels_per_task..(g + 1) * labels_per_task).collect())
        .collect())
}

/// Splits `set` into class-incremental tasks. The 10% stratified test split
/// depends only on `rng`, so every task order sees the same train/test rows.
pub fn split_tasks(set: &LabeledSet, labels_per_task: usize, order: &[usize], rng: &mut Rng) -> Result<TaskSequence> {
    let groups = label_groups(set.num_classes(), labels_per_task)?;
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..groups.len()).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument(format!(
            "task order {order:?} is not a permutation of 0..{}",
            groups.len()
        )));
    }
    let (train, test) = stratified_split(set, 0.1, rng);
    let tasks = order
        .iter()
        .enumerate()
        .map(|(id, &g)| Task {
            id,
            labels: groups[g].clone(),
            train: train.filter_classes(&groups[g]),
            test: test.filter_classes(&groups[g]),
        })
        .collect();
    Ok(TaskSequence {
        tasks,
        order: order.to_vec(),
    })
}

/// Fixed random subsets of past tasks' training data.
#[derive(Debug, Clone)]
pub struct RehearsalMemory {
    fraction: f64,
    stored: LabeledSet,
}

impl RehearsalMemory {
    pub fn new(fraction: f64, dim: usize, num_classes: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!(
                "rehearsal fraction {fraction} outside [0, 1]"
            )));
        }
        Ok(Self {
            fraction,
            stored: LabeledSet::empty(dim, num_classes),
        })
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn stored(&self) -> &LabeledSet {
        &self.stored
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    /// Stores `floor(fraction · n)` uniformly chosen rows of a finished task.
    pub fn remember(&mut self, task_train: &LabeledSet, rng: &mut Rng) -> Result<()> {
        let keep = ((task_train.len() as f64) * self.fraction).floor() as usize;
        if keep == 0 {
            return Ok(());
        }
        let perm = rng.permutation(task_train.len());
        let mut chosen = perm[..keep].to_vec();
        chosen.sort_unstable();
        self.stored.append(&task_train.subset(&chosen))
    }
}

/// Current task data plus every stored rehearsal row, shuffled.
pub fn rehearsal_mix(current_train: &LabeledSet, memory: &RehearsalMemory, rng: &mut Rng) -> Result<LabeledSet> {
    let mut mixed = current_train.clone();
    mixed.append(memory.stored())?;
    Ok(mixed.shuffled(rng))
}

/// Per-element mean intensity over every row of every set.
pub fn mean_input_rates(sets: &[&LabeledSet]) -> Result<Vector> {
    let mut acc = RunningMean::default();
    for s in sets {
        acc.add_set(s)?;
    }
    acc.mean()
}

/// Running per-element mean kept as a count and a sum, so earlier data
/// need not be retained.
#[derive(Debug, Clone, Default)]
pub struct RunningMean {
    count: usize,
    sum: Vec<f64>,
}

impl RunningMean {
    pub fn add_set(&mut self, set: &LabeledSet) -> Result<()> {
        if set.is_empty() {
            return Ok(());
        }
        if self.sum.is_empty() {
            self.sum = vec![0.0; set.dim()];
        } else if self.sum.len() != set.dim() {
            return Err(Error::DimensionMismatch {
                context: "mean_input_rates",
                expected: self.sum.len(),
                found: set.dim(),
            });
        }
        for row in set.raw_inputs().chunks_exact(set.dim().max(1)) {
            for (s, x) in self.sum.iter_mut().zip(row) {
                *s += x;
            }
        }
        self.count += set.len();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Result<Vector> {
        if self.count == 0 {
            return Err(Error::Empty("mean_input_rates"));
        }
        let n = self.count as f64;
        Ok(self.sum.iter().map(|s| (s / n).clamp(0.0, 1.0)).collect())
    }
}
