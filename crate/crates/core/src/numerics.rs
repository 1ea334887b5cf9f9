//! Dense linear algebra used throughout the crate: a row-major matrix type,
//! Cholesky solves, a Jacobi symmetric eigensolver, moment estimation and the
//! box projection.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivots at or below this value abort a Cholesky factorization.
pub const PIVOT_TOL: f64 = 1e-12;
/// Tolerance for symmetry checks on solver inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Builds a matrix from row slices; all rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns, vector has {} entries",
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Copies the sub-block starting at `(r0, c0)` of size `rows x cols`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        let mut b = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                b[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        b
    }

    /// Writes `b` into this matrix with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Restricts a square matrix to the given row/column indices.
    pub fn principal(&self, idx: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(idx.len(), idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                m[(a, b)] = self[(i, j)];
            }
        }
        m
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Max-norm distance between two vectors of equal length.
pub fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}

pub(crate) fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("vector lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", a.rows, a.cols)));
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::InvalidParameter("matrix is not symmetric".into()));
    }
    Ok(())
}

/// Lower-triangular Cholesky factor `L` with `a = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        check_symmetric(a)?;
        let n = a.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= PIVOT_TOL || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.l.rows;
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!("rhs has {} entries, expected {n}", b.len())));
        }
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        Ok(y)
    }
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} rows, rhs has {} entries",
            a.rows,
            b.len()
        )));
    }
    Cholesky::factor(a)?.solve(b)
}

/// All eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    check_symmetric(a)?;
    let n = a.rows;
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].powi(2)).sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev = m.diag();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

pub fn min_eigenvalue(a: &Matrix) -> Result<f64> {
    if a.rows == 0 {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    Ok(symmetric_eigenvalues(a)?[0])
}

/// Uncentered second moment, cross moment with the label, and feature mean.
pub fn empirical_moments(x: &Matrix, y: &[f64]) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    let n = x.rows;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} feature rows but {} labels", y.len())));
    }
    let d = x.cols;
    let mut sigma = Matrix::zeros(d, d);
    let mut rho = vec![0.0; d];
    let mut mu = vec![0.0; d];
    for (i, yi) in y.iter().enumerate() {
        let xi = x.row(i);
        for a in 0..d {
            mu[a] += xi[a];
            rho[a] += xi[a] * yi;
            for b in 0..=a {
                sigma[(a, b)] += xi[a] * xi[b];
            }
        }
    }
    let inv = 1.0 / n as f64;
    for a in 0..d {
        mu[a] *= inv;
        rho[a] *= inv;
        for b in 0..=a {
            let v = sigma[(a, b)] * inv;
            sigma[(a, b)] = v;
            sigma[(b, a)] = v;
        }
    }
    Ok((sigma, rho, mu))
}

pub fn clamp_linf(v: &[f64], w_sup: f64) -> Vec<f64> {
    v.iter().map(|x| x.clamp(-w_sup, w_sup)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let a = Matrix::new(d, d, (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        a.matmul(&a.transpose()).unwrap().add(&Matrix::identity(d).scale(0.5)).unwrap()
    }

    #[test]
    fn solve_identity_and_diagonal() {
        assert_eq!(solve_spd(&Matrix::identity(2), &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
        let a = Matrix::from_diag(&[2.0, 4.0]);
        assert!(dist_inf(&solve_spd(&a, &[2.0, 8.0]).unwrap(), &[1.0, 2.0]) < 1e-15);
    }

    #[test]
    fn solve_recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(5, &mut rng);
        let x0: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = a.matvec(&x0).unwrap();
        let x = solve_spd(&a, &b).unwrap();
        assert!(dist_inf(&x, &x0) < 1e-8);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(solve_spd(&a, &[1.0, 1.0]), Err(Error::NotPositiveDefinite { index: 1, .. })));
        assert!(matches!(solve_spd(&Matrix::identity(2), &[1.0]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(min_eigenvalue(&Matrix::from_diag(&[1.0, 3.0, -2.0])).unwrap(), -2.0);
        assert_eq!(min_eigenvalue(&Matrix::zeros(3, 3)).unwrap(), 0.0);
        let (a, b, c) = (2.0_f64, 1.0_f64, 2.0_f64);
        let expect = (a + c - ((a - c).powi(2) + 4.0 * b * b).sqrt()) / 2.0;
        let m = Matrix::from_rows(&[vec![a, b], vec![b, c]]).unwrap();
        assert!((min_eigenvalue(&m).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_sum_to_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_spd(8, &mut rng).sub(&Matrix::identity(8).scale(2.0)).unwrap();
        let ev = symmetric_eigenvalues(&a).unwrap();
        let trace: f64 = a.diag().iter().sum();
        assert!((ev.iter().sum::<f64>() - trace).abs() < 1e-9);
    }

    #[test]
    fn moments_small_samples() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (s, r, m) = empirical_moments(&x, &[3.0]).unwrap();
        assert_eq!(s.to_rows(), vec![vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert_eq!(r, vec![3.0, 6.0]);
        assert_eq!(m, vec![1.0, 2.0]);

        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let (s, r, m) = empirical_moments(&x, &[1.0, -1.0]).unwrap();
        assert_eq!(s.to_rows(), vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(r, vec![1.0, 0.0]);
        assert_eq!(m, vec![0.0, 0.0]);

        assert_eq!(empirical_moments(&Matrix::zeros(0, 2), &[]).unwrap_err(), Error::EmptySample);
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_linf(&[3.0, -0.5, -7.0], 2.0), vec![2.0, -0.5, -2.0]);
        assert_eq!(clamp_linf(&[0.3, -1.0], 1.0), vec![0.3, -1.0]);
    }
}
