//! Minimal dense linear algebra for the learning loops: Gram matrices,
//! dominant eigenvector of a symmetric matrix, dominant singular direction.

use crate::error::Error;
use crate::scalar::{real, Real};
use crate::Result;

/// Row-major dense matrix. A matrix with zero columns is the valid empty
/// sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let nrows = rows.len();
        assert!(nrows >= 1);
        let ncols = rows[0].len();
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in &rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: nrows,
            cols: ncols,
            data,
        }
    }

    /// Builds a `dim x n` matrix from column vectors.
    pub fn from_columns(dim: usize, columns: &[Vec<T>]) -> Self {
        let mut m = Self::zeros(dim, columns.len());
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), dim, "column length mismatch");
            for i in 0..dim {
                m.data[i * m.cols + j] = c[i];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copies column `j` out of the row-major storage.
    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transposed(&self) -> Self {
        let mut t = Self {
            rows: self.cols,
            cols: self.rows,
            data: vec![T::zero(); self.rows * self.cols],
        };
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn frob_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn entries(&self) -> &[T] {
        &self.data
    }
}

/// Vector of unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector<T> {
    entries: Vec<T>,
}

impl<T: Real> UnitVector<T> {
    /// Normalizes `v`; errors when the norm is zero or not finite.
    pub fn normalized(v: Vec<T>) -> Result<Self> {
        let n = norm(&v);
        if n <= T::zero() || !n.is_finite() {
            return Err(Error::Degenerate("cannot normalize zero vector".into()));
        }
        let entries = v.into_iter().map(|x| x / n).collect();
        Ok(Self { entries })
    }

    /// Wraps a vector that is already unit-norm within `tol`.
    pub fn from_unit(v: Vec<T>, tol: T) -> Result<Self> {
        let n = norm(&v);
        if (n - T::one()).abs() > tol {
            return Err(Error::Contract(format!("norm {n} is not 1")));
        }
        Ok(Self { entries: v })
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.entries
    }

    pub fn into_vec(self) -> Vec<T> {
        self.entries
    }
}

impl<T> std::ops::Deref for UnitVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.entries
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for i in 0..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

#[inline]
pub fn norm_sq<T: Real>(v: &[T]) -> T {
    dot(v, v)
}

#[inline]
pub fn norm<T: Real>(v: &[T]) -> T {
    norm_sq(v).sqrt()
}

/// `M Mᵀ`. Entries are computed once and mirrored, so the result is exactly
/// symmetric; an empty `M` (zero columns) yields the zero matrix.
pub fn gram<T: Real>(m: &DenseMatrix<T>) -> DenseMatrix<T> {
    let n = m.rows();
    let mut g = DenseMatrix::zeros(n, n);
    if m.cols() == 0 {
        return g;
    }
    for i in 0..n {
        for j in i..n {
            let v = dot(m.row(i), m.row(j));
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    g
}

/// Accumulates `sum y yᵀ` over the selected rows of a sample-major matrix
/// (each row one sample). Summation follows `rows` order, so the result is
/// bitwise identical to `gram` over the same columns in the same order.
pub fn gram_of_rows<T: Real>(samples: &DenseMatrix<T>, rows: &[usize]) -> DenseMatrix<T> {
    let dim = samples.cols();
    let mut g = DenseMatrix::zeros(dim, dim);
    for &r in rows {
        let y = samples.row(r);
        for a in 0..dim {
            let ya = y[a];
            let grow = g.row_mut(a);
            for b in a..dim {
                grow[b] += ya * y[b];
            }
        }
    }
    for a in 0..dim {
        for b in a + 1..dim {
            let v = g.get(a, b);
            g.set(b, a, v);
        }
    }
    g
}

/// Result of the symmetric eigensolver: unit eigenvector and the
/// algebraically largest eigenvalue.
pub struct MaxEig<T> {
    pub vector: UnitVector<T>,
    pub value: T,
}

const MAX_SWEEPS: usize = 100;

/// Unit eigenvector for the algebraically largest eigenvalue of a symmetric
/// matrix, by cyclic Jacobi rotations.
///
/// The input must be square and symmetric within `1e-9`. The sweep stops when
/// the off-diagonal Frobenius norm drops below `1e-12 * ||A||_F` (the
/// Frobenius norm is rotation-invariant, so it is computed once) or after 100
/// sweeps. Sign convention: the first entry with magnitude above `1e-12` is
/// made nonnegative, which keeps training deterministic.
pub fn max_eigvec<T: Real>(a: &DenseMatrix<T>) -> Result<MaxEig<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Contract(format!(
            "matrix is {}x{}, not square",
            a.rows(),
            a.cols()
        )));
    }
    let sym_tol = real::<T>(1e-9);
    for i in 0..n {
        for j in i + 1..n {
            if (a.get(i, j) - a.get(j, i)).abs() > sym_tol {
                return Err(Error::Contract(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    let mut d = a.clone();
    let mut v = DenseMatrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, T::one());
    }

    let target = real::<T>(1e-12) * a.frob_norm();
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                off += d.get(i, j) * d.get(i, j);
            }
        }
        let two: T = real(2.0);
        if (two * off).sqrt() <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = d.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = d.get(p, p);
                let aqq = d.get(q, q);
                let tau = (aqq - app) / (two * apq);
                let t = if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                // A <- Jᵀ A J on rows/columns p and q.
                for k in 0..n {
                    let dkp = d.get(k, p);
                    let dkq = d.get(k, q);
                    d.set(k, p, c * dkp - s * dkq);
                    d.set(k, q, s * dkp + c * dkq);
                }
                for k in 0..n {
                    let dpk = d.get(p, k);
                    let dqk = d.get(q, k);
                    d.set(p, k, c * dpk - s * dqk);
                    d.set(q, k, s * dpk + c * dqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..n {
        if d.get(i, i) > d.get(best, best) {
            best = i;
        }
    }
    let value = d.get(best, best);
    let mut vec = v.column(best);
    let nrm = norm(&vec);
    for x in vec.iter_mut() {
        *x = *x / nrm;
    }
    apply_sign_convention(&mut vec);
    Ok(MaxEig {
        vector: UnitVector { entries: vec },
        value,
    })
}

/// Flips the vector so its first entry with magnitude above 1e-12 is
/// nonnegative.
pub(crate) fn apply_sign_convention<T: Real>(v: &mut [T]) {
    let tol = real::<T>(1e-12);
    for &x in v.iter() {
        if x.abs() > tol {
            if x < T::zero() {
                for y in v.iter_mut() {
                    *y = -*y;
                }
            }
            return;
        }
    }
}

/// Unit vector maximizing `||Mᵀ v||²`, i.e. the leading left singular
/// direction: `max_eigvec(gram(M))`.
pub fn dominant_singular_dir<T: Real>(m: &DenseMatrix<T>) -> Result<UnitVector<T>> {
    if m.cols() == 0 {
        return Err(Error::Degenerate("matrix has no columns".into()));
    }
    if m.frob_norm() <= T::zero() {
        return Err(Error::Degenerate("matrix is zero".into()));
    }
    Ok(max_eigvec(&gram(m))?.vector)
}
