//! Dense complex matrices: products, singular values, least squares,
//! Hermitian log-determinants and seeded Gaussian sampling.
//!
//! The kernel is deliberately small. Matrices in this crate rarely exceed
//! a few hundred rows, so one-sided Jacobi SVD and Householder QR are more
//! than fast enough and keep full relative accuracy on small singular
//! values, which is what the rank checks depend on.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{abs2, Real};

/// Relative factor in the full-column-rank test.
pub const RANK_REL_TOL: f64 = 1e-8;

const MAX_JACOBI_SWEEPS: usize = 80;

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, " ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, " {:+.4}{:+.4}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from real entries given row by row.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self::from_fn(rows.len(), cols, |r, c| {
            Complex::new(T::lit(rows[r][c]), T::zero())
        }))
    }

    pub fn diag(values: &[Complex<T>]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[Complex<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "product of {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                for c in 0..rhs.cols {
                    out[(r, c)] += a * rhs[(k, c)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        if self.cols != x.len() {
            return Err(Error::Dimension(format!(
                "{}x{} matrix times length-{} vector",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (&a, &b)| acc + a * b)
            })
            .collect())
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Dimension("sum of differently shaped matrices".into()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| a * s).collect(),
        }
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |r, c| self[(r, cols[c])])
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&z| abs2(z)).sum::<T>().sqrt()
    }

    /// Singular values in descending order, `min(rows, cols)` of them.
    pub fn singular_values(&self) -> Result<Vec<T>> {
        Ok(self.svd()?.s)
    }

    /// Thin singular value decomposition `A = U diag(s) Vᴴ`.
    pub fn svd(&self) -> Result<Svd<T>> {
        if self.is_empty() {
            return Err(Error::Dimension("SVD of an empty matrix".into()));
        }
        if self.rows >= self.cols {
            Ok(jacobi_svd(self))
        } else {
            let t = jacobi_svd(&self.adjoint());
            Ok(Svd { u: t.v, s: t.s, v: t.u })
        }
    }

    /// Smallest singular value counted over the columns.
    ///
    /// A matrix with more columns than rows is column-rank-deficient and
    /// reports 0.
    pub fn min_singular_value(&self) -> Result<T> {
        let s = self.singular_values()?;
        if self.rows < self.cols {
            return Ok(T::zero());
        }
        Ok(*s.last().expect("nonempty"))
    }

    pub fn max_singular_value(&self) -> Result<T> {
        Ok(self.singular_values()?[0])
    }

    /// σ_min / σ_max over the columns, 0 for wide or zero matrices.
    pub fn rank_margin(&self) -> Result<T> {
        let s = self.singular_values()?;
        if self.rows < self.cols || s[0] == T::zero() {
            return Ok(T::zero());
        }
        Ok(*s.last().expect("nonempty") / s[0])
    }

    /// `σ_min > 1e-8 · σ_max · max(rows, cols)`.
    pub fn has_full_column_rank(&self) -> Result<bool> {
        if self.rows < self.cols {
            return Ok(false);
        }
        let s = self.singular_values()?;
        let smax = s[0];
        let smin = *s.last().expect("nonempty");
        let dim = T::lit(self.rows.max(self.cols) as f64);
        Ok(smax > T::zero() && smin > T::lit(RANK_REL_TOL) * smax * dim)
    }

    /// Numerical rank under the same relative threshold.
    pub fn rank(&self) -> Result<usize> {
        if self.is_empty() {
            return Ok(0);
        }
        let s = self.singular_values()?;
        let dim = T::lit(self.rows.max(self.cols) as f64);
        let tol = T::lit(RANK_REL_TOL) * s[0] * dim;
        Ok(s.iter().filter(|&&x| x > tol && x > T::zero()).count())
    }

    /// Unique minimiser of ‖Ax − b‖ for full-column-rank `A`.
    pub fn solve_least_squares(&self, b: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        if b.len() != self.rows {
            return Err(Error::Dimension(format!(
                "right-hand side of length {} for {} rows",
                b.len(),
                self.rows
            )));
        }
        if self.is_empty() {
            return Err(Error::Dimension("least squares with empty matrix".into()));
        }
        if !self.has_full_column_rank()? {
            return Err(Error::Singular(format!(
                "{}x{} system is not full column rank",
                self.rows, self.cols
            )));
        }
        Ok(householder_solve(self, b))
    }

    /// Left inverse (AᴴA)⁻¹Aᴴ of a full-column-rank matrix, one
    /// least-squares solve per column.
    pub fn pseudo_inverse(&self) -> Result<Self> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        let mut e = vec![Complex::new(T::zero(), T::zero()); self.rows];
        for j in 0..self.rows {
            e[j] = Complex::new(T::one(), T::zero());
            let x = self.solve_least_squares(&e)?;
            for (i, xi) in x.into_iter().enumerate() {
                out[(i, j)] = xi;
            }
            e[j] = Complex::new(T::zero(), T::zero());
        }
        Ok(out)
    }

    /// Natural-log determinant of a Hermitian positive definite matrix via
    /// Cholesky.
    pub fn logdet_hpd(&self) -> Result<T> {
        if self.rows != self.cols || self.is_empty() {
            return Err(Error::Dimension(format!(
                "logdet of a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let scale = self.data.iter().map(|z| z.norm()).fold(T::zero(), |a, b| a.max(b));
        let herm_tol = T::epsilon().sqrt() * scale.max(T::one());
        for r in 0..n {
            for c in r..n {
                if (self[(r, c)] - self[(c, r)].conj()).norm() > herm_tol {
                    return Err(Error::Domain("matrix is not Hermitian".into()));
                }
            }
        }
        let mut l = Self::zeros(n, n);
        let mut logdet = T::zero();
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d -= abs2(l[(j, k)]);
            }
            if !d.is_finite() || d <= T::zero() {
                return Err(Error::Domain("matrix is not positive definite".into()));
            }
            let djj = d.sqrt();
            l[(j, j)] = Complex::new(djj, T::zero());
            logdet += djj.ln();
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(logdet + logdet)
    }

    /// Determinant by LU with partial pivoting.
    pub fn det(&self) -> Result<Complex<T>> {
        if self.rows != self.cols || self.is_empty() {
            return Err(Error::Dimension("determinant of a non-square matrix".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut det = Complex::new(T::one(), T::zero());
        for k in 0..n {
            let p = (k..n)
                .max_by(|&x, &y| a[(x, k)].norm().partial_cmp(&a[(y, k)].norm()).unwrap())
                .expect("nonempty range");
            if a[(p, k)].norm() == T::zero() {
                return Ok(Complex::new(T::zero(), T::zero()));
            }
            if p != k {
                for c in 0..n {
                    a.data.swap(p * n + c, k * n + c);
                }
                det = -det;
            }
            let pivot = a[(k, k)];
            det *= pivot;
            for r in (k + 1)..n {
                let f = a[(r, k)] / pivot;
                for c in k..n {
                    let v = a[(k, c)];
                    a[(r, c)] -= f * v;
                }
            }
        }
        Ok(det)
    }
}

impl<T: Real> Index<(usize, usize)> for Matrix<T> {
    type Output = Complex<T>;
    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl<T: Real> Mul for &Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, rhs: &Matrix<T>) -> Matrix<T> {
        self.matmul(rhs).expect("conforming matrix product")
    }
}

/// Thin SVD factors.
#[derive(Debug, Clone)]
pub struct Svd<T: Real> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

/// Matrix of i.i.d. circularly-symmetric CN(0, 1) entries.
pub fn gaussian_matrix<T, R>(rows: usize, cols: usize, rng: &mut R) -> Result<Matrix<T>>
where
    T: Real,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
{
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("gaussian matrix {rows}x{cols}")));
    }
    Ok(Matrix::from_fn(rows, cols, |_, _| complex_gaussian(rng)))
}

/// Rows 1..=rows of the `cols`-point DFT with a random unit phase on each
/// column. Every square column-deleted submatrix is equally well conditioned
/// when `cols == rows + 1`.
pub fn phased_dft_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Matrix<f64>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("dft rows {rows}x{cols}")));
    }
    let w = 2.0 * std::f64::consts::PI / cols as f64;
    let phases: Vec<f64> = (0..cols)
        .map(|_| rng.random::<f64>() * 2.0 * std::f64::consts::PI)
        .collect();
    Ok(Matrix::from_fn(rows, cols, |r, c| {
        Complex::from_polar(1.0, w * ((r + 1) * c) as f64 + phases[c])
    }))
}

/// One CN(0, 1) sample: real and imaginary parts each of variance 1/2.
pub fn complex_gaussian<T, R>(rng: &mut R) -> Complex<T>
where
    T: Real,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
{
    let h = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let re: T = StandardNormal.sample(rng);
    let im: T = StandardNormal.sample(rng);
    Complex::new(re * h, im * h)
}

// Hestenes one-sided Jacobi; requires rows >= cols.
fn jacobi_svd<T: Real>(a: &Matrix<T>) -> Svd<T> {
    let (m, n) = (a.rows, a.cols);
    // Column-major working copies.
    let mut w: Vec<Vec<Complex<T>>> = (0..n).map(|c| a.column(c)).collect();
    let mut v: Vec<Vec<Complex<T>>> = (0..n)
        .map(|c| {
            let mut e = vec![Complex::new(T::zero(), T::zero()); n];
            e[c] = Complex::new(T::one(), T::zero());
            e
        })
        .collect();
    let tol = T::epsilon() * T::lit(m as f64);

    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha: T = w[p].iter().map(|&z| abs2(z)).sum();
                let beta: T = w[q].iter().map(|&z| abs2(z)).sum();
                let gamma = w[p]
                    .iter()
                    .zip(&w[q])
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (&x, &y)| acc + x.conj() * y);
                let g = gamma.norm();
                if g == T::zero() || g <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (g + g);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let pc = phase.conj();
                rotate(&mut w, p, q, c, s, pc);
                rotate(&mut v, p, q, c, s, pc);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(T, usize)> = w
        .iter()
        .enumerate()
        .map(|(i, col)| (col.iter().map(|&z| abs2(z)).sum::<T>().sqrt(), i))
        .collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));

    let s: Vec<T> = order.iter().map(|&(sv, _)| sv).collect();
    let u = Matrix::from_fn(m, n, |r, k| {
        let (sv, i) = order[k];
        if sv > T::zero() {
            w[i][r] / sv
        } else {
            Complex::new(T::zero(), T::zero())
        }
    });
    let vm = Matrix::from_fn(n, n, |r, k| v[order[k].1][r]);
    Svd { u, s, v: vm }
}

// [x_p, x_q] <- [c x_p - s e^{-iφ} x_q, s x_p + c e^{-iφ} x_q]
fn rotate<T: Real>(cols: &mut [Vec<Complex<T>>], p: usize, q: usize, c: T, s: T, pc: Complex<T>) {
    let (lo, hi) = cols.split_at_mut(q);
    let xp = &mut lo[p];
    let xq = &mut hi[0];
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let bq = *b * pc;
        let na = *a * c - bq * s;
        let nb = *a * s + bq * c;
        *a = na;
        *b = nb;
    }
}

fn householder_solve<T: Real>(a: &Matrix<T>, b: &[Complex<T>]) -> Vec<Complex<T>> {
    let (m, n) = (a.rows, a.cols);
    let mut r = a.clone();
    let mut y = b.to_vec();
    let zero = Complex::new(T::zero(), T::zero());
    for j in 0..n {
        let norm: T = (j..m).map(|i| abs2(r[(i, j)])).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let x0 = r[(j, j)];
        let phase = if x0.norm() > T::zero() {
            x0 / x0.norm()
        } else {
            Complex::new(T::one(), T::zero())
        };
        let alpha = -phase * norm;
        let mut v: Vec<Complex<T>> = (j..m).map(|i| r[(i, j)]).collect();
        v[0] -= alpha;
        let vnorm: T = v.iter().map(|&z| abs2(z)).sum::<T>().sqrt();
        if vnorm == T::zero() {
            continue;
        }
        for z in v.iter_mut() {
            *z /= vnorm;
        }
        for c in j..n {
            let dot = v
                .iter()
                .enumerate()
                .fold(zero, |acc, (k, &vk)| acc + vk.conj() * r[(j + k, c)]);
            for (k, &vk) in v.iter().enumerate() {
                r[(j + k, c)] -= vk * dot * T::lit(2.0);
            }
        }
        let dot = v
            .iter()
            .enumerate()
            .fold(zero, |acc, (k, &vk)| acc + vk.conj() * y[j + k]);
        for (k, &vk) in v.iter().enumerate() {
            y[j + k] -= vk * dot * T::lit(2.0);
        }
    }
    let mut x = vec![zero; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= r[(i, k)] * x[k];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type M = Matrix<f64>;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn gaussian_is_deterministic_and_shaped() {
        let a: M = gaussian_matrix(1, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b: M = gaussian_matrix(1, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let g: M = gaussian_matrix(2, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((g.rows(), g.cols()), (2, 3));
        assert!(gaussian_matrix::<f64, _>(0, 3, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn gaussian_unit_power() {
        let g: M = gaussian_matrix(1000, 1000, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let n = 1e6;
        let p: f64 = g.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        // |z|^2 ~ Exp(1): std of the mean is 1e-3, 3 sigma well inside [0.99, 1.01]
        assert!((0.99..=1.01).contains(&p), "mean power {p}");
        let mean: Complex<f64> = g.as_slice().iter().sum::<Complex<f64>>() / n;
        assert!(mean.norm() < 5e-3);
    }

    #[test]
    fn singular_values_small_cases() {
        assert!((M::identity(3).min_singular_value().unwrap() - 1.0).abs() < 1e-14);
        let d = M::from_real_rows(&[&[3.0, 0.0], &[0.0, 4.0]]).unwrap();
        assert!((d.min_singular_value().unwrap() - 3.0).abs() < 1e-14);
        assert!((d.max_singular_value().unwrap() - 4.0).abs() < 1e-14);
        let dup = M::from_fn(3, 2, |r, _| c(r as f64 + 1.0, 0.5));
        let s = dup.singular_values().unwrap();
        assert!(s[1] <= 1e-10 * s[0]);
        assert!(!dup.has_full_column_rank().unwrap());
    }

    #[test]
    fn wide_matrix_is_column_deficient() {
        let w = M::from_fn(2, 3, c_from);
        assert_eq!(w.min_singular_value().unwrap(), 0.0);
        assert_eq!(w.singular_values().unwrap().len(), 2);
        assert!(!w.has_full_column_rank().unwrap());
        assert_eq!(w.rank().unwrap(), 2);
    }

    fn c_from(r: usize, col: usize) -> Complex<f64> {
        c((r * 3 + col) as f64 + 1.0, (r as f64) - (col as f64))
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(m, n) in &[(5, 3), (3, 5), (4, 4)] {
            let a: M = gaussian_matrix(m, n, &mut rng).unwrap();
            let svd = a.svd().unwrap();
            let k = svd.s.len();
            let sd = M::diag(&svd.s.iter().map(|&x| c(x, 0.0)).collect::<Vec<_>>());
            let rec = &(&svd.u * &sd) * &svd.v.adjoint();
            assert_eq!((rec.rows(), rec.cols()), (m, n));
            let err = rec.add(&a.scale(c(-1.0, 0.0))).unwrap().frobenius_norm();
            assert!(err < 1e-12, "reconstruction error {err}");
            assert_eq!(k, m.min(n));
        }
    }

    #[test]
    fn singular_value_product_matches_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=8 {
            let a: M = gaussian_matrix(n, n, &mut rng).unwrap();
            let prod: f64 = a.singular_values().unwrap().iter().product();
            let det = a.det().unwrap().norm();
            assert!((prod - det).abs() <= 1e-6 * det, "n={n}: {prod} vs {det}");
        }
    }

    #[test]
    fn least_squares_cases() {
        let b = vec![c(1.0, 2.0), c(-3.0, 0.5)];
        let x = M::identity(2).solve_least_squares(&b).unwrap();
        assert!(x.iter().zip(&b).all(|(a, b)| (a - b).norm() < 1e-14));

        let a = M::from_real_rows(&[&[1.0, 0.0], &[1.0, 1.0], &[0.0, 2.0]]).unwrap();
        let rhs = a.mul_vec(&[c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        let x = a.solve_least_squares(&rhs).unwrap();
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-9 && (x[1] - c(2.0, 0.0)).norm() < 1e-9);

        let sing = M::from_real_rows(&[&[1.0, 1.0], &[2.0, 2.0]]).unwrap();
        assert!(matches!(
            sing.solve_least_squares(&[c(1.0, 0.0), c(0.0, 0.0)]),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn least_squares_orthogonal_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a: M = gaussian_matrix(4, 3, &mut rng).unwrap();
        let xstar = vec![c(0.3, -1.0), c(2.0, 0.1), c(-0.7, 0.7)];
        // r = (I - A (AᴴA)^{-1} Aᴴ) g via the SVD basis of col(A)
        let g: M = gaussian_matrix(4, 1, &mut rng).unwrap();
        let u = a.svd().unwrap().u;
        let gcol = g.column(0);
        let coeffs = u.adjoint().mul_vec(&gcol).unwrap();
        let proj = u.mul_vec(&coeffs).unwrap();
        let r: Vec<_> = gcol.iter().zip(&proj).map(|(x, p)| x - p).collect();
        let b: Vec<_> = a.mul_vec(&xstar).unwrap().iter().zip(&r).map(|(x, y)| x + y).collect();
        let x = a.solve_least_squares(&b).unwrap();
        for (xi, si) in x.iter().zip(&xstar) {
            assert!((xi - si).norm() < 1e-8);
        }
        let resid: Vec<_> = a.mul_vec(&x).unwrap().iter().zip(&b).map(|(p, q)| p - q).collect();
        let ortho = a.adjoint().mul_vec(&resid).unwrap();
        let on: f64 = ortho.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(on <= 1e-8 * a.frobenius_norm() * bn);
    }

    #[test]
    fn logdet_cases() {
        assert!(M::identity(4).logdet_hpd().unwrap().abs() < 1e-15);
        let d = M::diag(&[c(2.0, 0.0), c(2.0, 0.0)]);
        assert!((d.logdet_hpd().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m: M = gaussian_matrix(3, 3, &mut rng).unwrap();
        let a = (&m.adjoint() * &m).add(&M::identity(3)).unwrap();
        let expected: f64 = m.singular_values().unwrap().iter().map(|s| (1.0 + s * s).ln()).sum();
        assert!((a.logdet_hpd().unwrap() - expected).abs() < 1e-9);

        let neg = M::diag(&[c(1.0, 0.0), c(-1.0, 0.0)]);
        assert!(matches!(neg.logdet_hpd(), Err(Error::Domain(_))));
        let nonherm = M::from_fn(2, 2, |r, c2| {
            if r < c2 {
                c(0.0, 1.0)
            } else if r == c2 {
                c(2.0, 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        assert!(matches!(nonherm.logdet_hpd(), Err(Error::Domain(_))));
    }

    #[test]
    fn pseudo_inverse_is_left_inverse() {
        let a: M = gaussian_matrix(5, 3, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let p = a.pseudo_inverse().unwrap();
        let i = &p * &a;
        for r in 0..3 {
            for k in 0..3 {
                let want = if r == k { 1.0 } else { 0.0 };
                assert!((i[(r, k)] - c(want, 0.0)).norm() < 1e-12);
            }
        }
        assert!(M::zeros(3, 2).pseudo_inverse().is_err());
    }

    #[test]
    fn generic_over_f32() {
        let a: Matrix<f32> = gaussian_matrix(4, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(a.has_full_column_rank().unwrap());
        let s = a.singular_values().unwrap();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn phased_dft_submatrices_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for j in 1..6 {
            let g = phased_dft_rows(j, j + 1, &mut rng).unwrap();
            for q in 0..=j {
                let sub = Matrix::from_fn(j, j, |r, c| g[(r, if c < q { c } else { c + 1 })]);
                let s = sub.svd().unwrap().s;
                let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(min > 0.5, "j={j} q={q} min={min}");
            }
        }
    }
}
