//! Dense linear algebra and seeded randomness shared by the rest of the crate.
//!
//! Everything is `f64`. Matrices are row-major. Large products go through
//! [`gemm`], which is backed by `matrixmultiply`; small per-sample work uses
//! the plain loops on [`Matrix`].

use std::ops::{Deref, DerefMut};

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense real vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self { data: vec![0.0; len] }
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self { data: vec![value; len] }
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_dims("dot", self.len(), other.len())?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.data)
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Self { data }
    }
}

impl From<&[f64]> for Vector {
    fn from(data: &[f64]) -> Self {
        Self { data: data.to_vec() }
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self {
            data: iter.into_iter().collect(),
        }
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// A dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dims("Matrix::from_vec", rows * cols, data.len())?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Matrix::from_vec"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dims("Matrix::from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        check_dims("matvec", self.cols, v.len())?;
        let mut out = vec![0.0; self.rows];
        self.matvec_into(v, &mut out);
        Ok(Vector::from(out))
    }

    /// `selfᵀ · v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vector> {
        check_dims("matvec_t", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        self.matvec_t_into(v, &mut out);
        Ok(Vector::from(out))
    }

    /// Unchecked-shape kernel for `out = self · v`.
    pub(crate) fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *o = dot(row, v);
        }
    }

    /// Unchecked-shape kernel for `out = selfᵀ · v`.
    pub(crate) fn matvec_t_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (r, &coef) in v.iter().enumerate() {
            if coef != 0.0 {
                axpy(coef, self.row(r), out);
            }
        }
    }

    pub fn view(&self) -> MatView<'_> {
        MatView {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            row_stride: self.cols as isize,
            col_stride: 1,
        }
    }

    /// Element-wise `self += alpha · other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        check_dims("Matrix::add_scaled", self.data.len(), other.data.len())?;
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }
}

/// Borrowed strided view used as a [`gemm`] operand.
#[derive(Debug, Clone, Copy)]
pub struct MatView<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
}

impl<'a> MatView<'a> {
    /// Views a row-major slice as `rows × cols`.
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "row_major view length");
        Self {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transposed view; no data is moved.
    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `c = alpha · a · b + beta · c`, with `c` row-major `a.rows × b.cols`.
pub fn gemm(alpha: f64, a: MatView<'_>, b: MatView<'_>, beta: f64, c: &mut [f64]) -> Result<()> {
    check_dims("gemm inner", a.cols, b.rows)?;
    check_dims("gemm output", a.rows * b.cols, c.len())?;
    if a.rows == 0 || b.cols == 0 {
        return Ok(());
    }
    if a.cols == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return Ok(());
    }
    // SAFETY: the views were built from slices whose extents cover every
    // (row, col) addressed with their strides, and `c` was checked to hold
    // exactly `a.rows × b.cols` row-major entries.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
    Ok(())
}

pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    m.matvec(v)
}

pub fn relu(v: &[f64]) -> Vector {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Clamp to `[0, 1]`.
pub fn hard_sigmoid(v: &[f64]) -> Vector {
    v.iter().map(|&x| hard_sigmoid_scalar(x)).collect()
}

#[inline]
pub(crate) fn hard_sigmoid_scalar(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the loop vectorise without reassociation flags.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

pub(crate) fn check_dims(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded, platform-independent random stream (ChaCha8).
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `stream`; does not advance `self`.
    /// The child gets its own seed, so forks of forks stay distinct.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::seeded(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(1))))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the range is empty.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            self.inner.gen_range(lo..hi)
        }
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// `true` with probability `p` (clamped to `[0, 1]`). A rate of exactly 1
    /// always fires and exactly 0 never fires.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;
    use rand::RngCore;

    const PINNED_2024: [u64; 3] = [3080959604347521991, 18123447844947586703, 12649239169944512436];

    #[test]
    fn matvec_examples() {
        let v = Vector::from(vec![1.0, 2.0, 3.0]);
        assert_eq!(matvec(&Matrix::identity(3), &v).unwrap().as_slice(), &[1.0, 2.0, 3.0]);

        let z = Matrix::zeros(2, 2);
        assert_eq!(z.matvec(&[5.0, 7.0]).unwrap().as_slice(), &[0.0, 0.0]);

        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(
            m.matvec(&[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 2,
                ..
            })
        ));
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(matches!(
            Matrix::from_vec(1, 1, vec![f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn activations() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]).as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&[0.0; 4]).as_slice(), &[0.0; 4]);
        assert_eq!(relu(&[3.5]).as_slice(), &[3.5]);
        assert_eq!(hard_sigmoid(&[-1.0]).as_slice(), &[0.0]);
        assert_eq!(hard_sigmoid(&[0.5]).as_slice(), &[0.5]);
        assert_eq!(hard_sigmoid(&[2.0]).as_slice(), &[1.0]);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.3, 0.7, 0.7]), Some(1));
        assert_eq!(argmax(&[0.0, 0.0]), Some(0));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn gemm_matches_naive_products() {
        let mut rng = Rng::seeded(3);
        let a = Matrix::from_fn(4, 5, |_, _| rng.range(-1.0, 1.0));
        let b = Matrix::from_fn(3, 5, |_, _| rng.range(-1.0, 1.0));
        // a · bᵀ
        let mut c = vec![0.0; 12];
        gemm(1.0, a.view(), b.view().t(), 0.0, &mut c).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let expect: f64 = (0..5).map(|k| a.get(i, k) * b.get(j, k)).sum();
                assert!((c[i * 3 + j] - expect).abs() < 1e-12);
            }
        }
        // aᵀ · a, accumulated onto an existing buffer
        let mut d = vec![1.0; 25];
        gemm(2.0, a.view().t(), a.view(), 1.0, &mut d).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect: f64 = 1.0 + 2.0 * (0..4).map(|k| a.get(k, i) * a.get(k, j)).sum::<f64>();
                assert!((d[i * 5 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = Rng::seeded(42);
        let mut b = Rng::seeded(42);
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let f1: Vec<u64> = {
            let mut f = a.fork(7);
            (0..8).map(|_| f.next_u64()).collect()
        };
        let f2: Vec<u64> = {
            let mut f = Rng::seeded(42).fork(7);
            (0..8).map(|_| f.next_u64()).collect()
        };
        assert_eq!(f1, f2);
        assert_ne!(f1, xs[..8].to_vec());

        let nested = |outer: u64| -> Vec<u64> {
            let mut f = Rng::seeded(42).fork(outer).fork(3);
            (0..4).map(|_| f.next_u64()).collect()
        };
        assert_ne!(nested(100), nested(101));
        assert_ne!(nested(100), {
            let mut f = Rng::seeded(42).fork(3);
            (0..4).map(|_| f.next_u64()).collect::<Vec<_>>()
        });
    }

    #[test]
    fn rng_first_words_are_pinned() {
        // Frozen output of ChaCha8 seeded with 2024.
        let mut r = Rng::seeded(2024);
        let words: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        assert_eq!(words, PINNED_2024);
    }

    proptest! {
        #[test]
        fn matvec_is_linear(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in any::<u64>(),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let mut rng = Rng::seeded(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| rng.range(-2.0, 2.0));
            let u: Vec<f64> = (0..cols).map(|_| rng.range(-2.0, 2.0)).collect();
            let v: Vec<f64> = (0..cols).map(|_| rng.range(-2.0, 2.0)).collect();
            let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = m.matvec(&mix).unwrap();
            let mu = m.matvec(&u).unwrap();
            let mv = m.matvec(&v).unwrap();
            for i in 0..rows {
                let rhs = a * mu[i] + b * mv[i];
                let scale = lhs[i].abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs[i] - rhs).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn activations_idempotent_and_monotone(xs in prop::collection::vec(-5.0f64..5.0, 1..16), shift in 0.0f64..2.0) {
            let r = relu(&xs);
            prop_assert_eq!(relu(&r), r.clone());
            let h = hard_sigmoid(&xs);
            prop_assert_eq!(hard_sigmoid(&h), h.clone());
            let up: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let r2 = relu(&up);
            let h2 = hard_sigmoid(&up);
            for i in 0..xs.len() {
                prop_assert!(r2[i] >= r[i]);
                prop_assert!(h2[i] >= h[i]);
            }
        }
    }
}
