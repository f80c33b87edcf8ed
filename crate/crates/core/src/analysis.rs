//! Diagnostics over frozen networks: confusion matrices, class correlations
//! of hidden activity, weight-change histograms and synaptic importance.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::LabeledSet;
use crate::ep_model::{predict_set, relax_set, EpHyperParams, NetworkParams};
use crate::error::{Error, Result};
use crate::numerics::{check_dims, dot, Matrix, Vector};

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Elementwise sum; the larger class count wins.
    pub fn merged(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        let k = self.num_classes().max(other.num_classes());
        let mut counts = vec![vec![0u64; k]; k];
        for m in [self, other] {
            for (t, row) in m.counts.iter().enumerate() {
                for (p, c) in row.iter().enumerate() {
                    counts[t][p] += c;
                }
            }
        }
        ConfusionMatrix { counts }
    }

    /// Trace over total; 0 when empty.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.num_classes()).map(|c| self.counts[c][c]).sum();
        trace as f64 / total as f64
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    check_dims("confusion predictions", labels.len(), preds.len())?;
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &t) in preds.iter().zip(labels) {
        for c in [p, t] {
            if c >= k {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    num_classes: k,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Confusion matrix of the network's free-phase predictions on `set`.
pub fn evaluate_confusion(set: &LabeledSet, p: &NetworkParams, h: &EpHyperParams) -> Result<ConfusionMatrix> {
    let preds = predict_set(set, p, h)?;
    confusion(&preds, set.labels(), p.n_out().max(set.num_classes()))
}

/// Pearson correlation, or `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    /// classes × classes Pearson correlations of class-mean hidden vectors.
    pub matrix: Vec<Vec<f64>>,
    /// Classes whose mean vector had zero variance; their entries are 0.
    pub degenerate: Vec<usize>,
}

impl CorrelationReport {
    /// Mean absolute off-diagonal entry, the summary used to track how
    /// entangled the class representations are.
    pub fn mean_abs_off_diagonal(&self) -> f64 {
        let k = self.matrix.len();
        if k < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    s += v.abs();
                }
            }
        }
        s / (k * (k - 1)) as f64
    }
}

/// Per-class mean of the free-phase hidden fixed point.
pub fn class_mean_hidden(p: &NetworkParams, h: &EpHyperParams, set: &LabeledSet) -> Result<Vec<Vector>> {
    let k = set.num_classes();
    let hd = p.n_hidden();
    let mut sums = vec![vec![0.0; hd]; k];
    let counts = set.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("class {c} has no samples")));
    }
    relax_set(set, p, h, |i, s_h, _, _| {
        for (acc, v) in sums[set.label(i)].iter_mut().zip(s_h) {
            *acc += v;
        }
    })?;
    Ok(sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect())
}

pub fn hidden_correlation(p: &NetworkParams, h: &EpHyperParams, test: &LabeledSet) -> Result<CorrelationReport> {
    if test.is_empty() {
        return Err(Error::Empty("hidden_correlation test set"));
    }
    Ok(correlation_of(&class_mean_hidden(p, h, test)?))
}

/// Pairwise Pearson matrix of `means`. Zero-variance vectors get zero rows and
/// columns, including the diagonal.
pub fn correlation_of(means: &[Vector]) -> CorrelationReport {
    let k = means.len();
    let degenerate: Vec<usize> = (0..k).filter(|&c| pearson(&means[c], &means[c]).is_none()).collect();
    for &c in &degenerate {
        log::warn!("class {c}: mean hidden activation has zero variance; correlations set to 0");
    }
    let mut matrix = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a..k {
            let r = match pearson(&means[a], &means[b]) {
                Some(_) if a == b => 1.0,
                r => r.unwrap_or(0.0),
            };
            matrix[a][b] = r;
            matrix[b][a] = r;
        }
    }
    CorrelationReport { matrix, degenerate }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub mean: f64,
}

impl Histogram {
    /// Equal-width bins over `[min, max]` of `values`. A constant sample is
    /// centred in a unit-wide range so it lands in the middle bin.
    pub fn of(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        if values.is_empty() {
            return Err(Error::Empty("histogram values"));
        }
        let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::NonFinite("histogram values"));
        }
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok(Self { lo, hi, counts, mean })
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiff {
    pub w_ih: Histogram,
    pub w_ho: Histogram,
}

pub fn weight_diff_histogram(before: &NetworkParams, after: &NetworkParams, bins: usize) -> Result<WeightDiff> {
    let diff = |a: &Matrix, b: &Matrix, what: &'static str| -> Result<Vec<f64>> {
        if a.shape() != b.shape() {
            return Err(Error::DimensionMismatch {
                context: what,
                expected: a.as_slice().len(),
                found: b.as_slice().len(),
            });
        }
        Ok(b.as_slice().iter().zip(a.as_slice()).map(|(x, y)| x - y).collect())
    };
    Ok(WeightDiff {
        w_ih: Histogram::of(&diff(&before.w_ih, &after.w_ih, "weight diff w_ih")?, bins)?,
        w_ho: Histogram::of(&diff(&before.w_ho, &after.w_ho, "weight diff w_ho")?, bins)?,
    })
}

/// Importance of every hidden→output connection for one class: the mean over
/// `class_samples` of the presynaptic hidden fixed-point activation times the
/// connection weight. Laid out output-major, `u[k·H + j]` for `W_ho[k][j]`.
pub fn synaptic_importance(
    p: &NetworkParams,
    h: &EpHyperParams,
    class_samples: &LabeledSet,
    c: usize,
) -> Result<Vector> {
    if class_samples.is_empty() {
        return Err(Error::Empty("synaptic_importance class samples"));
    }
    if let Some(&bad) = class_samples.labels().iter().find(|&&l| l != c) {
        return Err(Error::InvalidArgument(format!(
            "synaptic_importance for class {c} got a sample of class {bad}"
        )));
    }
    let hd = p.n_hidden();
    let mut mean_h = vec![0.0; hd];
    relax_set(class_samples, p, h, |_, s_h, _, _| {
        for (m, v) in mean_h.iter_mut().zip(s_h) {
            *m += v;
        }
    })?;
    let n = class_samples.len() as f64;
    let mut u = Vec::with_capacity(p.n_out() * hd);
    for k in 0..p.n_out() {
        u.extend(p.w_ho.row(k).iter().zip(&mean_h).map(|(w, s)| w * s / n));
    }
    Ok(Vector::from(u))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims("cosine_similarity", a.len(), b.len())?;
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Writes a CSV whose first line is `# ` followed by `meta`.
pub fn write_csv(path: impl AsRef<Path>, meta: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = format!("# {meta}\n{}\n", header.join(","));
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Square matrix as CSV with a leading `class` column.
pub fn write_matrix_csv<T: std::fmt::Display>(path: impl AsRef<Path>, meta: &str, m: &[Vec<T>]) -> Result<()> {
    let cols: Vec<String> = (0..m.len()).map(|c| c.to_string()).collect();
    let mut header = vec!["class"];
    header.extend(cols.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            std::iter::once(i.to_string())
                .chain(r.iter().map(|v| v.to_string()))
                .collect()
        })
        .collect();
    write_csv(path, meta, &header, &rows)
}

/// Histogram rows `(matrix, bin_lo, bin_hi, count)`; the metadata line also
/// carries each matrix's range and mean.
pub fn write_weight_diff_csv(path: impl AsRef<Path>, meta: &str, d: &WeightDiff) -> Result<()> {
    let mut full = meta.to_string();
    let mut rows = Vec::new();
    for (name, hist) in [("w_ih", &d.w_ih), ("w_ho", &d.w_ho)] {
        let _ = write!(
            full,
            " {name}_range=[{},{}] {name}_mean={} bins={}",
            hist.lo,
            hist.hi,
            hist.mean,
            hist.counts.len()
        );
        let edges = hist.bin_edges();
        for (i, c) in hist.counts.iter().enumerate() {
            rows.push(vec![
                name.to_string(),
                edges[i].to_string(),
                edges[i + 1].to_string(),
                c.to_string(),
            ]);
        }
    }
    write_csv(path, &full, &["matrix", "bin_lo", "bin_hi", "count"], &rows)
}
