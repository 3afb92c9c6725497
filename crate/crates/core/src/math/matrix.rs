use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::rng::RngState;
use crate::scalar::Scalar;

/// Dense row-major matrix. Rows and columns are always positive.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Reduction axis for [`Matrix::reduce_mean`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Collapse the rows: one mean per column, result is 1×cols.
    Rows,
    /// Collapse the columns: one mean per row, result is rows×1.
    Cols,
    All,
}

/// Registered entrywise functions for [`Matrix::map_elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseFn {
    Exp,
    /// `ln(max(x, eps))`
    LogClamped(f64),
    Abs,
    Negate,
    Scale(f64),
    AddConst(f64),
}

impl ElementwiseFn {
    /// Looks up a function by tag: `exp`, `log_clamped`, `abs`, `negate`,
    /// `scale`, `add`. Parameterized tags take `param`.
    pub fn from_tag(tag: &str, param: Option<f64>) -> Result<Self> {
        let need = |name: &str| {
            param.ok_or_else(|| Error::invalid(format!("elementwise fn `{name}` needs a parameter")))
        };
        Ok(match tag {
            "exp" => ElementwiseFn::Exp,
            "log_clamped" => ElementwiseFn::LogClamped(param.unwrap_or(1e-7)),
            "abs" => ElementwiseFn::Abs,
            "negate" => ElementwiseFn::Negate,
            "scale" => ElementwiseFn::Scale(need(tag)?),
            "add" => ElementwiseFn::AddConst(need(tag)?),
            other => return Err(Error::invalid(format!("unregistered elementwise fn `{other}`"))),
        })
    }

    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            ElementwiseFn::Exp => x.exp(),
            ElementwiseFn::LogClamped(eps) => x.max(T::of(eps)).ln(),
            ElementwiseFn::Abs => x.abs(),
            ElementwiseFn::Negate => -x,
            ElementwiseFn::Scale(c) => x * T::of(c),
            ElementwiseFn::AddConst(c) => x + T::of(c),
        }
    }
}

impl FromStr for ElementwiseFn {
    type Err = Error;

    /// `tag` or `tag:param`, e.g. `scale:0.5`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((tag, p)) => {
                let p: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad parameter in `{s}`")))?;
                ElementwiseFn::from_tag(tag.trim(), Some(p))
            }
            None => ElementwiseFn::from_tag(s.trim(), None),
        }
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("Matrix::from_vec", format!("empty shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} entries, expected {d}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(n, d, data)
    }

    /// Panics on a zero dimension.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn column(values: Vec<T>) -> Result<Self> {
        let n = values.len();
        Self::from_vec(n, 1, values)
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
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
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} · {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let p = other.cols;
        let mut out = vec![T::zero(); self.rows * p];
        for (a_row, out_row) in self.data.chunks_exact(self.cols).zip(out.chunks_exact_mut(p)) {
            for (&a, b_row) in a_row.iter().zip(other.data.chunks_exact(p)) {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Matrix {
            rows: self.rows,
            cols: p,
            data: out,
        })
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.rows != other.rows {
            return Err(Error::shape(
                "matmul_tn",
                format!("({}x{})ᵀ · {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let (n, p) = (self.cols, other.cols);
        let mut out = vec![T::zero(); n * p];
        for (a_row, b_row) in self.data.chunks_exact(n).zip(other.data.chunks_exact(p)) {
            for (&a, out_row) in a_row.iter().zip(out.chunks_exact_mut(p)) {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Matrix {
            rows: n,
            cols: p,
            data: out,
        })
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_nt",
                format!("{}x{} · ({}x{})ᵀ", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        self.matmul(&other.transpose())
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = vec![T::zero(); self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_elementwise(&self, f: ElementwiseFn) -> Matrix<T> {
        self.map(|v| f.apply(v))
    }

    pub fn zip_with(&self, other: &Matrix<T>, f: impl Fn(T, T) -> T) -> Result<Matrix<T>> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "zip_with",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: T) -> Matrix<T> {
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Adds `v` to every row.
    pub fn add_row_vector(&mut self, v: &[T]) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "add_row_vector",
                format!("vector of {} for {} columns", v.len(), self.cols),
            ));
        }
        for row in self.data.chunks_exact_mut(self.cols) {
            for (a, &b) in row.iter_mut().zip(v) {
                *a = *a + b;
            }
        }
        Ok(())
    }

    /// Column sums as a plain vector.
    pub fn column_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for row in self.row_iter() {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        out
    }

    pub fn reduce_mean(&self, axis: Axis) -> Matrix<T> {
        match axis {
            Axis::Rows => {
                let n = T::of(self.rows as f64);
                let data = self.column_sums().into_iter().map(|s| s / n).collect();
                Matrix {
                    rows: 1,
                    cols: self.cols,
                    data,
                }
            }
            Axis::Cols => {
                let n = T::of(self.cols as f64);
                let data = self
                    .row_iter()
                    .map(|r| r.iter().copied().sum::<T>() / n)
                    .collect();
                Matrix {
                    rows: self.rows,
                    cols: 1,
                    data,
                }
            }
            Axis::All => {
                let n = T::of(self.data.len() as f64);
                let s: T = self.data.iter().copied().sum();
                Matrix {
                    rows: 1,
                    cols: 1,
                    data: vec![s / n],
                }
            }
        }
    }

    /// Euclidean norm of each row, as a column.
    pub fn row_l2_norms(&self) -> Matrix<T> {
        let data = self
            .row_iter()
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        Matrix {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix<T>> {
        if indices.is_empty() {
            return Err(Error::shape("select_rows", "no rows selected"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::shape(
                    "select_rows",
                    format!("row {i} out of range for {} rows", self.rows),
                ));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "vstack",
                format!("{} vs {} columns", self.cols, other.cols),
            ));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// i.i.d. standard-normal entries drawn row-major from `rng`.
    pub fn sample_standard_normal(rng: &mut RngState, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("sample_standard_normal", format!("{rows}x{cols}")));
        }
        let data = (0..rows * cols).map(|_| T::of(rng.standard_normal())).collect();
        Ok(Matrix { rows, cols, data })
    }

    /// i.i.d. uniform entries on `[lo, hi)`.
    pub fn sample_uniform(
        rng: &mut RngState,
        rows: usize,
        cols: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("sample_uniform", format!("{rows}x{cols}")));
        }
        let data = (0..rows * cols)
            .map(|_| T::of(rng.uniform_range(lo, hi)))
            .collect();
        Ok(Matrix { rows, cols, data })
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossless())).collect(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for row in self.data.chunks(self.cols).take(8) {
            writeln!(f, "  {row:?}")?;
        }
        if self.rows > 8 {
            writeln!(f, "  ... {} more rows", self.rows - 8)?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_hand_example() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(a.matmul(&b).unwrap(), m(&[&[19.0, 22.0], &[43.0, 50.0]]));
    }

    #[test]
    fn matmul_identity() {
        let mut rng = RngState::new(3);
        let a = Matrix::<f64>::sample_standard_normal(&mut rng, 3, 3).unwrap();
        assert_eq!(a.matmul(&Matrix::identity(3)).unwrap(), a);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = RngState::new(11);
        let a = Matrix::<f64>::sample_standard_normal(&mut rng, 4, 3).unwrap();
        let b = Matrix::<f64>::sample_standard_normal(&mut rng, 3, 2).unwrap();
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let tn = a.transpose().matmul_tn(&b).unwrap();
        let nt = a.matmul_nt(&b.transpose()).unwrap();
        for ((x, y), z) in tn.as_slice().iter().zip(nt.as_slice()).zip(slow.as_slice()) {
            assert!((x - z).abs() < 1e-12 && (y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let err = a.matmul(&Matrix::zeros(2, 3)).unwrap_err();
        assert!(err.to_string().contains("2x3 · 2x3"), "{err}");
    }

    #[test]
    fn elementwise_examples() {
        let a = m(&[&[-1.0, 2.0]]);
        assert_eq!(a.map_elementwise(ElementwiseFn::Abs), m(&[&[1.0, 2.0]]));
        assert_eq!(a.map_elementwise(ElementwiseFn::Scale(0.0)).as_slice(), &[0.0, 0.0]);
        let z = m(&[&[0.0]]).map_elementwise(ElementwiseFn::LogClamped(1e-7));
        assert!((z.get(0, 0) - 1e-7f64.ln()).abs() < 1e-12);
        assert!((z.get(0, 0) + 16.1181).abs() < 1e-4);
        assert!("bogus".parse::<ElementwiseFn>().is_err());
        assert!(ElementwiseFn::from_tag("scale", None).is_err());
        assert_eq!("add:2".parse::<ElementwiseFn>().unwrap(), ElementwiseFn::AddConst(2.0));
    }

    #[test]
    fn reduce_mean_examples() {
        assert_eq!(m(&[&[0.0, 0.0], &[2.0, 0.0]]).reduce_mean(Axis::Rows), m(&[&[1.0, 0.0]]));
        assert_eq!(m(&[&[1.0, 3.0], &[5.0, 7.0]]).reduce_mean(Axis::Cols), m(&[&[2.0], &[6.0]]));
        let c = Matrix::filled(3, 4, 2.5);
        assert_eq!(c.reduce_mean(Axis::All).get(0, 0), 2.5);
    }

    #[test]
    fn row_norms() {
        assert_eq!(m(&[&[3.0, 4.0]]).row_l2_norms().get(0, 0), 5.0);
        assert_eq!(m(&[&[0.0, 0.0]]).row_l2_norms().get(0, 0), 0.0);
        assert_eq!(m(&[&[1.0, 1.0, 1.0, 1.0]]).row_l2_norms().get(0, 0), 2.0);
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = RngState::new(2024);
        let x = Matrix::<f64>::sample_standard_normal(&mut rng, 1000, 100).unwrap();
        let n = x.as_slice().len() as f64;
        let mean = x.as_slice().iter().sum::<f64>() / n;
        let var = x.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        let mut again = RngState::new(2024);
        let y = Matrix::<f64>::sample_standard_normal(&mut again, 1000, 100).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::<f64>::from_vec(0, 2, vec![]).is_err());
        assert!(Matrix::<f64>::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
