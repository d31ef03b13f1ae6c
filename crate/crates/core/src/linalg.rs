//! Dense complex matrices and the iterative solvers used throughout:
//! conjugate gradients, Lanczos extremes and power iteration.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        CMat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols);
            data.extend_from_slice(r);
        }
        CMat { rows: rows.len(), cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn conj_transpose(&self) -> CMat {
        let mut t = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)].conj();
            }
        }
        t
    }

    pub fn conj(&self) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v.conj()).collect() }
    }

    pub fn scale_rows(&mut self, s: &[f64]) {
        for i in 0..self.rows {
            let f = s[i];
            for v in self.row_mut(i) {
                *v *= f;
            }
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `A^* x`.
    pub fn adjoint_matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![ZERO; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a.conj() * xi;
            }
        }
        out
    }

    /// `A B` through `matrixmultiply::zgemm`.
    pub fn matmul(&self, b: &CMat) -> CMat {
        gemm(self, false, b, false)
    }

    /// `A^* B`.
    pub fn adjoint_mul(&self, b: &CMat) -> CMat {
        gemm(self, true, b, false)
    }

    /// `A B^*`.
    pub fn mul_adjoint(&self, b: &CMat) -> CMat {
        gemm(self, false, b, true)
    }

    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> CMat {
        let mut out = CMat::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

fn gemm(a: &CMat, adj_a: bool, b: &CMat, adj_b: bool) -> CMat {
    let (m, k) = if adj_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if adj_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "inner dimensions differ");
    let mut c = CMat::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // zgemm has no conjugation flag: conjugate a copy and read it transposed
    let ac;
    let a_buf = if adj_a {
        ac = a.conj();
        &ac.data
    } else {
        &a.data
    };
    let bc;
    let b_buf = if adj_b {
        bc = b.conj();
        &bc.data
    } else {
        &b.data
    };
    let (rsa, csa) = if adj_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if adj_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    let std = matrixmultiply::CGemmOption::Standard;
    // SAFETY: Complex<f64> is repr(C) {re, im}, layout-identical to [f64; 2];
    // strides describe the owned buffers, which outlive the call.
    unsafe {
        matrixmultiply::zgemm(
            std,
            std,
            m,
            k,
            n,
            [1.0, 0.0],
            a_buf.as_ptr() as *const [f64; 2],
            rsa,
            csa,
            b_buf.as_ptr() as *const [f64; 2],
            rsb,
            csb,
            [0.0, 0.0],
            c.data.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
    c
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Hermitian eigen-decomposition (ascending eigenvalues, eigenvectors as
/// columns).
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let m = a.to_nalgebra();
    let herm = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(a.rows(), order.len());
    for (c, &i) in order.iter().enumerate() {
        for r in 0..a.rows() {
            vecs[(r, c)] = eig.eigenvectors[(r, i)];
        }
    }
    (vals, vecs)
}

/// Cholesky factor of a Hermitian positive definite matrix.
pub struct Cholesky {
    inner: nalgebra::Cholesky<C64, nalgebra::Dyn>,
}

impl Cholesky {
    pub fn new(a: &CMat) -> Result<Self> {
        nalgebra::Cholesky::new(a.to_nalgebra())
            .map(|inner| Cholesky { inner })
            .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let x = self.inner.solve(&DVector::from_column_slice(b));
        x.iter().copied().collect()
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients for a Hermitian positive definite operator.
pub fn conjugate_gradient(
    op: impl Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    x0: Option<&[C64]>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let bnorm = norm(b);
    let n = b.len();
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![ZERO; n], iterations: 0, relative_residual: 0.0 });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let mut x = x0.map_or_else(|| vec![ZERO; n], |v| v.to_vec());
    let ax = op(&x);
    let mut r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut rr = dot(&r, &r).re;
    if rr.sqrt() <= tol * bnorm {
        return Ok(CgOutcome { x, iterations: 0, relative_residual: rr.sqrt() / bnorm });
    }
    let mut p = r.clone();
    for it in 1..=max_iter {
        let ap = op(&p);
        let pap = dot(&p, &ap).re;
        if !(pap > 0.0) {
            return Err(Error::Numerical("operator is not positive definite".into()));
        }
        let alpha = rr / pap;
        axpy(C64::new(alpha, 0.0), &p, &mut x);
        axpy(C64::new(-alpha, 0.0), &ap, &mut r);
        let rr_new = dot(&r, &r).re;
        if rr_new.sqrt() <= tol * bnorm {
            return Ok(CgOutcome { x, iterations: it, relative_residual: rr_new.sqrt() / bnorm });
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + *pi * beta;
        }
        rr = rr_new;
    }
    Err(Error::NotConverged(format!(
        "conjugate gradients stalled at relative residual {:.3e} after {max_iter} iterations",
        rr.sqrt() / bnorm
    )))
}

/// Extreme eigenvalues of a Hermitian operator on `C^dim` by Lanczos with
/// full reorthogonalization; exact once `steps >= dim`.
pub fn lanczos_extremes(op: impl Fn(&[C64]) -> Vec<C64>, dim: usize, steps: usize, seed: u64) -> Result<(f64, f64)> {
    if dim == 0 {
        return Err(Error::Numerical("empty operator".into()));
    }
    let steps = steps.clamp(1, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<C64> = (0..dim).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut basis: Vec<Vec<C64>> = vec![v];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for j in 0..steps {
        let mut w = op(&basis[j]);
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(-c, q, &mut w);
            }
        }
        let b = norm(&w);
        if j + 1 == steps || b < 1e-13 * (1.0 + a.abs()) {
            break;
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(w);
    }
    let k = alpha.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let ev = nalgebra::SymmetricEigen::new(t).eigenvalues;
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NotConverged("Lanczos produced non-finite Ritz values".into()));
    }
    Ok((lo, hi))
}

#[derive(Clone, Debug)]
pub struct PowerOutcome {
    /// Monotone sequence of lower bounds `||A v|| / ||v||`.
    pub estimate: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Norm of an operator that is self-adjoint in the inner product `ip`.
/// Every returned value is a Rayleigh-type lower bound of the true norm.
pub fn power_norm(
    op: impl Fn(&[C64]) -> Vec<C64>,
    ip: impl Fn(&[C64], &[C64]) -> f64,
    dim: usize,
    iters: usize,
    tol: f64,
    seed: u64,
) -> Result<PowerOutcome> {
    if iters == 0 {
        return Err(Error::InvalidParameter("power iteration needs at least one step".into()));
    }
    if dim == 0 {
        return Ok(PowerOutcome { estimate: 0.0, iterations: 0, converged: true });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<C64> = (0..dim).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    let nv = ip(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut best: f64 = 0.0;
    let mut last = 0.0;
    for it in 1..=iters {
        let w = op(&v);
        let nw = ip(&w, &w).sqrt();
        best = best.max(nw);
        if nw == 0.0 {
            return Ok(PowerOutcome { estimate: 0.0, iterations: it, converged: true });
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if it > 1 && (nw - last).abs() <= tol * nw {
            return Ok(PowerOutcome { estimate: best, iterations: it, converged: true });
        }
        last = nw;
    }
    Ok(PowerOutcome { estimate: best, iterations: iters, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_herm(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
        }
        let mut h = a.adjoint_mul(&a);
        for i in 0..n {
            h[(i, i)] += C64::new(0.5, 0.0);
        }
        h
    }

    #[test]
    fn gemm_variants_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = CMat::zeros(4, 3);
        let mut b = CMat::zeros(3, 5);
        for v in a.data.iter_mut().chain(b.data.iter_mut()) {
            *v = C64::new(rng.gen(), rng.gen());
        }
        let c = a.matmul(&b);
        for i in 0..4 {
            for j in 0..5 {
                let want: C64 = (0..3).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((c[(i, j)] - want).norm() < 1e-13);
            }
        }
        let ah = a.conj_transpose();
        assert!(ah.adjoint_mul(&b).max_abs_diff(&c) < 1e-13);
        let bh = b.conj_transpose();
        assert!(a.mul_adjoint(&bh).max_abs_diff(&c) < 1e-13);
    }

    #[test]
    fn cg_and_lanczos_agree_with_dense() {
        let h = random_herm(12, 9);
        let (vals, _) = hermitian_eigen(&h);
        let (lo, hi) = lanczos_extremes(|x| h.matvec(x), 12, 12, 1).unwrap();
        assert!((lo - vals[0]).abs() < 1e-9);
        assert!((hi - vals[11]).abs() < 1e-9);
        let b: Vec<C64> = (0..12).map(|i| C64::new(i as f64, 1.0)).collect();
        let out = conjugate_gradient(|x| h.matvec(x), &b, None, 1e-12, 200).unwrap();
        let back = h.matvec(&out.x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).norm() < 1e-9);
        }
        let chol = Cholesky::new(&h).unwrap();
        let x2 = chol.solve(&b);
        for (u, v) in x2.iter().zip(&out.x) {
            assert!((u - v).norm() < 1e-9);
        }
        assert!(conjugate_gradient(|x| h.matvec(x), &b, None, 1e-12, 0).is_err());
        assert!(conjugate_gradient(|x| h.matvec(x), &b, None, 0.0, 10).is_err());
    }

    #[test]
    fn power_iteration_is_a_lower_bound() {
        let h = random_herm(10, 3);
        let (vals, _) = hermitian_eigen(&h);
        let top = vals[9];
        let out = power_norm(|x| h.matvec(x), |a, b| dot(a, b).re, 10, 500, 1e-14, 4).unwrap();
        assert!(out.estimate <= top * (1.0 + 1e-12));
        assert!(out.estimate > 0.99 * top);
    }
}
