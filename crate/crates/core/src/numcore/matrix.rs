use std::fmt;

use super::NumError;

/// Dense row-major matrix of `f64`.
///
/// Entry `(r, c)` lives at `data[r * cols + c]`. Every on-disk export in this
/// crate uses the same ordering.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::DataLength { rows, cols, len: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { row: pos / cols.max(1), col: pos % cols.max(1) });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NumError::RaggedRow { row: i, expected: cols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self) -> Result<(), NumError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(pos) => Err(NumError::NonFinite { row: pos / self.cols, col: pos % self.cols }),
        }
    }

    /// `self -= scale * other`, elementwise.
    pub fn sub_scaled(&mut self, other: &Matrix, scale: f64) {
        assert_eq!(self.shape(), other.shape(), "sub_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= scale * b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Products with fewer multiply-adds than this run on the calling thread.
const PARALLEL_MATMUL_WORK: usize = 1 << 15;

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, NumError> {
    if a.cols != b.rows {
        return Err(NumError::ShapeMismatch { op: "matmul", left: a.shape(), right: b.shape() });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    if b.cols == 0 {
        return Ok(out);
    }
    let row_product = |i: usize, orow: &mut [f64]| {
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    };
    if a.rows * a.cols * b.cols >= PARALLEL_MATMUL_WORK {
        super::par::for_each_chunk_mut(&mut out.data, b.cols, row_product);
    } else {
        out.data.chunks_mut(b.cols).enumerate().for_each(|(i, r)| row_product(i, r));
    }
    out.check_finite()?;
    Ok(out)
}

/// Euclidean norm of every column.
pub fn column_norms(m: &Matrix) -> Vec<f64> {
    let mut sq = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (s, &v) in sq.iter_mut().zip(m.row(r)) {
            *s += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Scales every column to unit Euclidean norm.
///
/// A column whose norm is below `epsilon` is replaced by the first standard
/// basis vector `e_0`, so a collapsed class weight never produces NaN.
pub fn normalize_columns(m: &Matrix, epsilon: f64) -> Matrix {
    assert!(epsilon > 0.0, "normalize_columns requires epsilon > 0");
    let norms = column_norms(m);
    let mut out = m.clone();
    for (c, &n) in norms.iter().enumerate() {
        if n < epsilon {
            for r in 0..m.rows {
                out[(r, c)] = if r == 0 { 1.0 } else { 0.0 };
            }
        } else {
            for r in 0..m.rows {
                out[(r, c)] /= n;
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_product() {
        let m = Matrix::from_rows(&[[1.5, -2.0], [0.25, 9.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let p = matmul(&a, &b).unwrap();
        assert_eq!(p.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matches_naive_product() {
        let mut rng = Rng::new(11);
        let a = random(&mut rng, 5, 7);
        let b = random(&mut rng, 7, 3);
        let (p, q) = (matmul(&a, &b).unwrap(), naive(&a, &b));
        for (x, y) in p.data().iter().zip(q.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_on_many_shapes() {
        let mut rng = Rng::new(12);
        for _ in 0..100 {
            let (r, k, c) = (1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8));
            let a = random(&mut rng, r, k);
            let b = random(&mut rng, k, c);
            let (p, q) = (matmul(&a, &b).unwrap(), naive(&a, &b));
            for (x, y) in p.data().iter().zip(q.data()) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn large_product_matches_naive() {
        let mut rng = Rng::new(13);
        let a = random(&mut rng, 70, 40);
        let b = random(&mut rng, 40, 30);
        let (p, q) = (matmul(&a, &b).unwrap(), naive(&a, &b));
        for (x, y) in p.data().iter().zip(q.data()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_names_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
    }

    #[test]
    fn norms() {
        assert_eq!(column_norms(&Matrix::identity(3)), vec![1.0, 1.0, 1.0]);
        let m = Matrix::from_rows(&[[3.0, 0.0], [4.0, 0.0]]).unwrap();
        assert_eq!(column_norms(&m), vec![5.0, 0.0]);
    }

    #[test]
    fn normalize_examples() {
        let m = Matrix::from_rows(&[[3.0], [4.0]]).unwrap();
        let n = normalize_columns(&m, 1e-12);
        assert!((n[(0, 0)] - 0.6).abs() < 1e-15 && (n[(1, 0)] - 0.8).abs() < 1e-15);

        let unit = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert_eq!(normalize_columns(&unit, 1e-12), unit);

        let tiny = Matrix::from_rows(&[[0.0], [1e-20], [0.0]]).unwrap();
        assert_eq!(normalize_columns(&tiny, 1e-12).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn normalize_is_idempotent(vals in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let m = Matrix::from_vec(3, 4, vals).unwrap();
            let once = normalize_columns(&m, 1e-12);
            let twice = normalize_columns(&once, 1e-12);
            for (a, b) in once.data().iter().zip(twice.data()) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
            for n in column_norms(&once) {
                proptest::prop_assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }
}
