//! Dense linear algebra used by the partition-function code: a partially
//! pivoted LU factorization that accumulates the log-determinant from the
//! absolute pivots, plus a few small helpers for Cholesky factors.

use ndarray::{Array2, ArrayView2};

/// Sign and log-magnitude of a determinant. `log_abs` is `-inf` for a
/// singular matrix, in which case `sign` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLogDet {
    pub sign: f64,
    pub log_abs: f64,
}

impl SignedLogDet {
    pub fn is_singular(&self) -> bool {
        self.sign == 0.0
    }
}

/// Row-major LU factorization `P A = L U` with unit lower `L`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    det: SignedLogDet,
}

impl Lu {
    pub fn new(a: ArrayView2<f64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut lu: Vec<f64> = a.iter().copied().collect();
        if !a.is_standard_layout() {
            lu = (0..n * n).map(|k| a[[k / n, k % n]]).collect();
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let mut log_abs = 0.0;
        let mut singular = false;

        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                singular = true;
                continue;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[k * n + k];
            if pivot < 0.0 {
                sign = -sign;
            }
            log_abs += pivot.abs().ln();
            let (head, tail) = lu.split_at_mut((k + 1) * n);
            let row_k = &head[k * n..(k + 1) * n];
            for row_i in tail.chunks_exact_mut(n) {
                let factor = row_i[k] / pivot;
                if factor == 0.0 {
                    row_i[k] = 0.0;
                    continue;
                }
                row_i[k] = factor;
                for (x, &y) in row_i[k + 1..].iter_mut().zip(&row_k[k + 1..]) {
                    *x -= factor * y;
                }
            }
        }

        let det = if singular {
            SignedLogDet {
                sign: 0.0,
                log_abs: f64::NEG_INFINITY,
            }
        } else {
            SignedLogDet { sign, log_abs }
        };
        Lu { n, lu, perm, det }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> SignedLogDet {
        self.det
    }

    /// Solves `A x = b` in place. Requires a nonsingular factorization.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let s: f64 = row[i + 1..].iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / row[i];
        }
        b.copy_from_slice(&x);
    }

    /// Full inverse, or `None` when singular.
    pub fn inverse(&self) -> Option<Array2<f64>> {
        if self.det.is_singular() {
            return None;
        }
        let n = self.n;
        // Columns of the inverse are stored contiguously so the triangular
        // sweeps run over slices.
        let mut y = vec![0.0; n * n]; // column-major: column j at y[j*n..]
        for (i, &p) in self.perm.iter().enumerate() {
            y[p * n + i] = 1.0;
        }
        for col in y.chunks_exact_mut(n) {
            for i in 0..n {
                let row = &self.lu[i * n..i * n + i];
                let s: f64 = row.iter().zip(&col[..i]).map(|(a, b)| a * b).sum();
                col[i] -= s;
            }
            for i in (0..n).rev() {
                let row = &self.lu[i * n..(i + 1) * n];
                let s: f64 = row[i + 1..]
                    .iter()
                    .zip(&col[i + 1..])
                    .map(|(a, b)| a * b)
                    .sum();
                col[i] = (col[i] - s) / row[i];
            }
        }
        let colmajor = Array2::from_shape_vec((n, n), y).expect("shape");
        Some(colmajor.reversed_axes().as_standard_layout().to_owned())
    }
}

/// `log(sum(exp(xs)))`, robust to `-inf` entries. Returns `-inf` for an
/// empty slice or when every entry is `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Lower Cholesky factor of a symmetric matrix, or `None` if some pivot is
/// not strictly positive.
pub fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L z = r` for lower-triangular `L`.
pub fn forward_subst(l: &Array2<f64>, r: &[f64], z: &mut [f64]) {
    let n = r.len();
    for i in 0..n {
        let mut s = r[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
}

/// Solves `L^T w = z` for lower-triangular `L`.
pub fn backward_subst_transpose(l: &Array2<f64>, z: &[f64], w: &mut [f64]) {
    let n = z.len();
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[[k, i]] * w[k];
        }
        w[i] = s / l[[i, i]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn lu_determinant_and_inverse() {
        let a = array![[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];
        let lu = Lu::new(a.view());
        let d = lu.log_det();
        // det = 0*(1) - 2*(1-0) + 1*(0-3) = -5
        assert_eq!(d.sign, -1.0);
        assert!((d.log_abs - 5f64.ln()).abs() < 1e-14);
        let inv = lu.inverse().unwrap();
        let id = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[[i, j]] - e).abs() < 1e-14);
            }
        }
        let mut b = vec![1.0, 2.0, 3.0];
        lu.solve_in_place(&mut b);
        let back = a.dot(&ndarray::Array1::from(b));
        assert!((back[0] - 1.0).abs() < 1e-14 && (back[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_has_neg_inf_log_det() {
        let a = array![[1.0, -1.0], [-1.0, 1.0]];
        let lu = Lu::new(a.view());
        assert!(lu.log_det().is_singular());
        assert!(lu.inverse().is_none());
    }

    #[test]
    fn logsumexp_handles_neg_inf() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = logsumexp(&[0.0, f64::NEG_INFINITY, 0.0]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        assert!((&back - &a).iter().all(|x| x.abs() < 1e-14));
        assert!(cholesky(array![[1.0, 2.0], [2.0, 1.0]].view()).is_none());
    }
}
