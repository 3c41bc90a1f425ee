//! Stack-allocated complex matrices for the small fiber dimensions that occur
//! here (d <= 4, n <= 3). The hot integration loop evaluates principal symbols
//! thousands of times per trajectory, so these avoid heap traffic entirely.

use num_complex::Complex64;

pub const MAX_DIM: usize = 4;

/// Dense complex matrix with dimensions at most `MAX_DIM` x `MAX_DIM`.
#[derive(Clone, Copy, Debug)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    data: [Complex64; MAX_DIM * MAX_DIM],
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows <= MAX_DIM && cols <= MAX_DIM);
        CMat {
            rows,
            cols,
            data: [Complex64::new(0.0, 0.0); MAX_DIM * MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_real(rows: usize, cols: usize, entries: &[f64]) -> Self {
        let mut m = CMat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = Complex64::new(entries[i * cols + j], 0.0);
            }
        }
        m
    }

    /// Outer product v w^T of real vectors.
    pub fn outer(v: &[f64], w: &[f64]) -> Self {
        let mut m = CMat::zeros(v.len(), w.len());
        for i in 0..v.len() {
            for j in 0..w.len() {
                m[(i, j)] = Complex64::new(v[i] * w[j], 0.0);
            }
        }
        m
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.rows);
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = *self;
        for i in 0..self.rows * MAX_DIM {
            // additions over padded storage are safe: padding is zero
            out.data[i] += other.data[i];
        }
        out
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = *self;
        for i in 0..self.rows * MAX_DIM {
            out.data[i] -= other.data[i];
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> CMat {
        let mut out = *self;
        for v in out.data.iter_mut() {
            *v *= s;
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self[(i, i)]).sum()
    }

    pub fn apply(&self, v: &[Complex64], out: &mut [Complex64]) {
        assert_eq!(v.len(), self.cols);
        for i in 0..self.rows {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..self.cols {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                s += self[(i, j)].norm_sqr();
            }
        }
        s.sqrt()
    }

    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                m = m.max((self[(i, j)] - other[(i, j)]).norm());
            }
        }
        m
    }

    /// Largest singular value via Hermitian power iteration on A*A.
    /// Deterministic start vector; dimensions here are tiny so convergence is
    /// fast and ill-conditioning is not a concern for the top value.
    pub fn sigma_max(&self) -> f64 {
        let ata = self.adjoint().matmul(self);
        let n = ata.rows;
        if n == 0 {
            return 0.0;
        }
        let mut v = [Complex64::new(0.0, 0.0); MAX_DIM];
        for (i, vi) in v.iter_mut().enumerate().take(n) {
            *vi = Complex64::new(1.0 + i as f64 * 0.3, 0.1 * (i as f64 + 1.0));
        }
        let mut w = [Complex64::new(0.0, 0.0); MAX_DIM];
        let mut lambda = 0.0f64;
        for _ in 0..200 {
            ata.apply(&v[..n], &mut w[..n]);
            let norm = w[..n].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let new_lambda = norm;
            for i in 0..n {
                v[i] = w[i] / norm;
            }
            if (new_lambda - lambda).abs() <= 1e-15 * new_lambda.abs().max(1.0) {
                lambda = new_lambda;
                break;
            }
            lambda = new_lambda;
        }
        lambda.max(0.0).sqrt()
    }

    /// Determinant for square matrices up to 4x4 (cofactor expansion).
    pub fn det(&self) -> Complex64 {
        assert_eq!(self.rows, self.cols);
        match self.rows {
            0 => Complex64::new(1.0, 0.0),
            1 => self[(0, 0)],
            2 => self[(0, 0)] * self[(1, 1)] - self[(0, 1)] * self[(1, 0)],
            3 => {
                self[(0, 0)] * (self[(1, 1)] * self[(2, 2)] - self[(1, 2)] * self[(2, 1)])
                    - self[(0, 1)] * (self[(1, 0)] * self[(2, 2)] - self[(1, 2)] * self[(2, 0)])
                    + self[(0, 2)] * (self[(1, 0)] * self[(2, 1)] - self[(1, 1)] * self[(2, 0)])
            }
            4 => {
                let mut acc = Complex64::new(0.0, 0.0);
                let mut sign = 1.0;
                for j in 0..4 {
                    let minor = self.minor(0, j);
                    acc += Complex64::new(sign, 0.0) * self[(0, j)] * minor.det();
                    sign = -sign;
                }
                acc
            }
            _ => unreachable!(),
        }
    }

    fn minor(&self, row: usize, col: usize) -> CMat {
        let mut m = CMat::zeros(self.rows - 1, self.cols - 1);
        let mut r = 0;
        for i in 0..self.rows {
            if i == row {
                continue;
            }
            let mut c = 0;
            for j in 0..self.cols {
                if j == col {
                    continue;
                }
                m[(r, c)] = self[(i, j)];
                c += 1;
            }
            r += 1;
        }
        m
    }

    /// Orthonormal basis of the range of a Hermitian projector, via
    /// Gram-Schmidt over its columns. Returns the basis as matrix columns.
    pub fn range_basis(&self, tol: f64) -> Vec<Vec<Complex64>> {
        let mut basis: Vec<Vec<Complex64>> = Vec::new();
        for j in 0..self.cols {
            let mut v: Vec<Complex64> = (0..self.rows).map(|i| self[(i, j)]).collect();
            for b in &basis {
                let proj: Complex64 = b
                    .iter()
                    .zip(v.iter())
                    .map(|(bi, vi)| bi.conj() * vi)
                    .sum();
                for (vi, bi) in v.iter_mut().zip(b.iter()) {
                    *vi -= proj * bi;
                }
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > tol {
                for vi in v.iter_mut() {
                    *vi /= norm;
                }
                basis.push(v);
            }
        }
        basis
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * MAX_DIM + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * MAX_DIM + j]
    }
}

/// Real 3-vector cross product embedded in complex fibers: out = a x b.
pub fn cross_real_complex(a: &[f64; 3], b: &[Complex64]) -> [Complex64; 3] {
    [
        Complex64::new(a[1], 0.0) * b[2] - Complex64::new(a[2], 0.0) * b[1],
        Complex64::new(a[2], 0.0) * b[0] - Complex64::new(a[0], 0.0) * b[2],
        Complex64::new(a[0], 0.0) * b[1] - Complex64::new(a[1], 0.0) * b[0],
    ]
}

/// Matrix of the linear map b -> a x b for a real 3-vector a.
pub fn cross_matrix(a: &[f64; 3]) -> CMat {
    CMat::from_real(
        3,
        3,
        &[0.0, -a[2], a[1], a[2], 0.0, -a[0], -a[1], a[0], 0.0],
    )
}
