//! Dense kernels: row-major matrices, channel-major feature maps, softmax,
//! bilinear sampling and layer normalization.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2D<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix2D<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix data",
                format!("{rows}x{cols} = {} entries", rows * cols),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix data".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::shape(format!("matrix row {bad}"), cols, rows[bad].len()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul inner dimension",
                self.cols,
                other.rows,
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let o_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in o_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Matrix2D<U> {
        Matrix2D {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.as_f64()).unwrap_or_else(U::nan))
                .collect(),
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(m: &Matrix2D<T>) -> Result<Matrix2D<T>> {
    if m.cols() == 0 {
        return Err(Error::invalid("softmax input", "matrix has no columns"));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

/// Numerically stable in-place softmax of one row. Entries equal to `-inf`
/// receive zero probability; at least one entry must be finite.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = if *v == T::neg_infinity() {
            T::zero()
        } else {
            (*v - max).exp()
        };
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `x · Wᵀ + b` where `w` is stored `(out, in)` and `x` is `(n, in)`.
pub fn linear<T: Real>(x: &Matrix2D<T>, w: &Matrix2D<T>, b: Option<&[T]>) -> Result<Matrix2D<T>> {
    if x.cols() != w.cols() {
        return Err(Error::shape("linear input width", w.cols(), x.cols()));
    }
    if let Some(b) = b {
        if b.len() != w.rows() {
            return Err(Error::shape("linear bias", w.rows(), b.len()));
        }
    }
    let mut out = Matrix2D::zeros(x.rows(), w.rows());
    for r in 0..x.rows() {
        linear_row(x.row(r), w, b, out.row_mut(r));
    }
    Ok(out)
}

/// Single-vector form of [`linear`]; `out` must have `w.rows()` entries.
#[inline]
pub fn linear_row<T: Real>(x: &[T], w: &Matrix2D<T>, b: Option<&[T]>, out: &mut [T]) {
    debug_assert_eq!(x.len(), w.cols());
    debug_assert_eq!(out.len(), w.rows());
    for (o, w_row) in out.iter_mut().zip(w.data.chunks_exact(w.cols)) {
        *o = dot(x, w_row);
    }
    if let Some(b) = b {
        for (o, &bi) in out.iter_mut().zip(b) {
            *o += bi;
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Layer normalization of one vector in place.
pub fn layer_norm_in_place<T: Real>(x: &mut [T], gamma: &[T], beta: &[T], eps: T) {
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = T::one() / (var + eps).sqrt();
    for ((v, &g), &b) in x.iter_mut().zip(gamma).zip(beta) {
        *v = (*v - mean) * inv * g + b;
    }
}

/// Channel-major `channels × height × width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        let n = channels * height * width;
        if data.len() != n {
            return Err(Error::shape(
                "feature map data",
                format!("{channels}x{height}x{width} = {n} entries"),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map data".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Bilinear sample of every channel at a normalized `(x, y)` point.
    pub fn sample(&self, point: [T; 2]) -> Result<Vec<T>> {
        bilinear_sample(self, point)
    }

    /// Bilinear sample of channels `start..start + out.len()`, accumulated
    /// into `out` scaled by `weight`.
    pub fn sample_channels_into(&self, point: [T; 2], start: usize, weight: T, out: &mut [T]) {
        let taps = self.taps(point);
        let plane = self.height * self.width;
        for (k, o) in out.iter_mut().enumerate() {
            let base = &self.data[(start + k) * plane..(start + k + 1) * plane];
            let mut v = T::zero();
            for &(idx, w) in &taps {
                v += base[idx] * w;
            }
            *o += weight * v;
        }
    }

    /// The four `(flat index, weight)` taps for a normalized point, using
    /// the pixel-center convention `p · size − 0.5` and border clamping.
    fn taps(&self, point: [T; 2]) -> [(usize, T); 4] {
        let (x0, x1, fx) = axis_taps(point[0], self.width);
        let (y0, y1, fy) = axis_taps(point[1], self.height);
        let one = T::one();
        [
            (y0 * self.width + x0, (one - fx) * (one - fy)),
            (y0 * self.width + x1, fx * (one - fy)),
            (y1 * self.width + x0, (one - fx) * fy),
            (y1 * self.width + x1, fx * fy),
        ]
    }
}

#[inline]
fn axis_taps<T: Real>(p: T, size: usize) -> (usize, usize, T) {
    let max = T::from_usize(size - 1).unwrap();
    let g = (p * T::from_usize(size).unwrap() - T::lit(0.5))
        .max(T::zero())
        .min(max);
    let i0 = g.floor();
    let frac = g - i0;
    let i0 = i0.to_usize().unwrap();
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, frac)
}

/// Bilinear interpolation at a normalized `(x, y)` point in `[0, 1]²`.
///
/// Out-of-range points clamp to the border cells.
pub fn bilinear_sample<T: Real>(map: &FeatureMap<T>, point: [T; 2]) -> Result<Vec<T>> {
    if map.is_empty() || map.height == 0 || map.width == 0 {
        return Err(Error::invalid("feature map", "empty map"));
    }
    if !point[0].is_finite() || !point[1].is_finite() {
        return Err(Error::NonFinite("sample point".into()));
    }
    let mut out = vec![T::zero(); map.channels];
    map.sample_channels_into(point, 0, T::one(), &mut out);
    Ok(out)
}

/// Multi-scale feature maps sharing one channel width.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet<T> {
    levels: Vec<FeatureMap<T>>,
}

impl<T: Real> FeatureMapSet<T> {
    pub fn new(levels: Vec<FeatureMap<T>>) -> Result<Self> {
        let Some(first) = levels.first() else {
            return Err(Error::invalid("feature maps", "at least one level required"));
        };
        let c = first.channels;
        for (i, l) in levels.iter().enumerate() {
            if l.channels != c {
                return Err(Error::shape(format!("feature level {i} channels"), c, l.channels));
            }
            if l.is_empty() {
                return Err(Error::invalid(format!("feature level {i}"), "empty map"));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[FeatureMap<T>] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn channels(&self) -> usize {
        self.levels[0].channels
    }
}
