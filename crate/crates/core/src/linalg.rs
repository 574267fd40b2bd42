//! Dense symmetric eigensolver and tensor-product helpers.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Largest |A_ij - A_ji|.
pub fn max_asymmetry(a: ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

/// Eigen-decomposition of a real symmetric matrix via LAPACK `dsyevd`.
///
/// Returns ascending eigenvalues and a matrix whose *rows* are the
/// corresponding orthonormal eigenvectors.
pub fn eigh(a: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidParameter(format!(
            "eigh needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }
    // Symmetric, so the row-major buffer is also its column-major form.
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut w = vec![0.0f64; n];
    let nn = n as i32;
    let jobz = b'V' as std::ffi::c_char;
    let uplo = b'L' as std::ffi::c_char;
    let mut info = 0i32;
    let mut work_query = [0.0f64; 1];
    let mut iwork_query = [0i32; 1];
    let q = -1i32;
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            buf.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &q,
            iwork_query.as_mut_ptr(),
            &q,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Eigensolver { info });
    }
    let lwork = work_query[0] as i32;
    let liwork = iwork_query[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            buf.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Eigensolver { info });
    }
    // Column-major eigenvector columns read back row-major become rows.
    let vecs = Array2::from_shape_vec((n, n), buf).expect("buffer has n*n entries");
    Ok((w, vecs))
}

/// Flip each row so its largest-magnitude component is positive.
/// Among components tied within 1e-12 the first wins.
pub fn fix_row_signs(rows: &mut Array2<f64>) {
    for mut row in rows.axis_iter_mut(Axis(0)) {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, x) in row.iter().enumerate() {
            if x.abs() > best_abs + 1e-12 {
                best_abs = x.abs();
                best = i;
            }
        }
        if row[best] < 0.0 {
            row.mapv_inplace(|x| -x);
        }
    }
}

/// Diagonalize a fixed 256x256 test matrix and verify one eigenpair and a
/// matrix product without BLAS. Some OpenBLAS builds pick a broken kernel
/// on recent CPUs; this catches that before any physics runs.
pub fn blas_self_check() -> Result<()> {
    let n = 256;
    let a = Array2::from_shape_fn((n, n), |(i, j)| {
        let (x, y) = (i.min(j), i.max(j));
        ((x * 37 + y * 11) % 17) as f64 / 17.0 - 0.5
    });
    let prod = a.dot(&a);
    let mut worst = 0.0f64;
    for i in (0..n).step_by(31) {
        for j in (0..n).step_by(29) {
            let s: f64 = (0..n).map(|k| a[[i, k]] * a[[k, j]]).sum();
            worst = worst.max((prod[[i, j]] - s).abs());
        }
    }
    let (e, v) = eigh(a.view())?;
    for mu in [0, n / 2, n - 1] {
        for i in 0..n {
            let s: f64 = (0..n).map(|k| a[[i, k]] * v[[mu, k]]).sum();
            worst = worst.max((s - e[mu] * v[[mu, i]]).abs());
        }
    }
    if worst > 1e-9 {
        return Err(Error::Residual { max_residual: worst });
    }
    Ok(())
}

pub fn kron(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == 0.0 {
                continue;
            }
            out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .scaled_add(aij, &b);
        }
    }
    out
}

pub fn kron_all(factors: &[Array2<f64>]) -> Array2<f64> {
    let mut out = Array2::from_elem((1, 1), 1.0);
    for f in factors {
        out = kron(out.view(), f.view());
    }
    out
}

/// `R^T A R` for square `R`.
pub fn congruence(r: ArrayView2<f64>, a: ArrayView2<f64>) -> Array2<f64> {
    r.t().dot(&a.dot(&r))
}

pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

/// Mixed-radix tensor-product index space. Site 0 is the slowest digit.
#[derive(Clone, Debug)]
pub struct ProductSpace {
    dims: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl ProductSpace {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut strides = vec![1usize; dims.len()];
        for i in (0..dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        let total = dims.iter().product();
        Self { dims, strides, total }
    }

    pub fn dim(&self) -> usize {
        self.total
    }

    pub fn n_sites(&self) -> usize {
        self.dims.len()
    }

    pub fn site_dim(&self, site: usize) -> usize {
        self.dims[site]
    }

    pub fn digit(&self, index: usize, site: usize) -> usize {
        (index / self.strides[site]) % self.dims[site]
    }

    /// Add `coeff * (op_1 on site_1) (op_2 on site_2) ...` to `out`.
    /// Sites must be distinct.
    pub fn add_local_term(&self, out: &mut Array2<f64>, coeff: f64, ops: &[(usize, &Array2<f64>)]) {
        if coeff == 0.0 {
            return;
        }
        let nz: Vec<Vec<(usize, usize, f64)>> = ops
            .iter()
            .map(|(_, op)| {
                let mut v = Vec::new();
                for ((r, c), &x) in op.indexed_iter() {
                    if x != 0.0 {
                        v.push((r, c, x));
                    }
                }
                v
            })
            .collect();
        for col in 0..self.total {
            // Expand the product of local operators acting on |col>.
            let mut frontier: Vec<(usize, f64)> = vec![(col, coeff)];
            for ((site, _), entries) in ops.iter().zip(&nz) {
                let stride = self.strides[*site];
                let mut next = Vec::with_capacity(frontier.len() * 2);
                for &(idx, amp) in &frontier {
                    let d = (idx / stride) % self.dims[*site];
                    let base = idx - d * stride;
                    for &(r, c, x) in entries {
                        if c == d {
                            next.push((base + r * stride, amp * x));
                        }
                    }
                }
                frontier = next;
            }
            for (row, amp) in frontier {
                out[[row, col]] += amp;
            }
        }
    }
}

pub fn diag_matrix(values: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros((values.len(), values.len()));
    for (i, v) in values.iter().enumerate() {
        out[[i, i]] = *v;
    }
    out
}

pub fn is_diagonal(a: ArrayView2<f64>) -> bool {
    a.indexed_iter().all(|((i, j), x)| i == j || *x == 0.0)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn to_array1(v: &[f64]) -> Array1<f64> {
    Array1::from_vec(v.to_vec())
}

#[cfg(test)]
mod tests {

    #[test]
    fn blas_is_sane() {
        blas_self_check().unwrap();
    }

    use super::*;
    use ndarray::array;

    #[test]
    fn eigh_two_by_two() {
        let a = array![[0.0, 0.3], [0.3, 0.0]];
        let (w, v) = eigh(a.view()).unwrap();
        assert!((w[0] + 0.3).abs() < 1e-14 && (w[1] - 0.3).abs() < 1e-14);
        let s = 1.0 / 2f64.sqrt();
        assert!((v[[0, 0]].abs() - s).abs() < 1e-14);
        assert!((v[[1, 0]] * v[[1, 1]] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn eigh_reconstructs() {
        let n = 40;
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] = ((i * 7 + j * 3) % 11) as f64 + ((j * 7 + i * 3) % 11) as f64;
            }
        }
        let (w, v) = eigh(a.view()).unwrap();
        let back = v.t().dot(&diag_matrix(&w)).dot(&v);
        let err = (&back - &a).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(err < 1e-10, "{err}");
        assert!(w.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn kron_matches_local_term() {
        let x = array![[0.0, 1.0], [1.0, 0.0]];
        let z = array![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]];
        let space = ProductSpace::new(vec![2, 3, 2]);
        let mut out = Array2::zeros((12, 12));
        space.add_local_term(&mut out, 2.0, &[(0, &x), (1, &z)]);
        let expect = kron_all(&[x.clone(), z.clone(), Array2::eye(2)]) * 2.0;
        assert_eq!(out, expect);
        assert_eq!(space.digit(7, 0), 1);
        assert_eq!(space.digit(7, 1), 0);
        assert_eq!(space.digit(7, 2), 1);
    }

    #[test]
    fn sign_fix_makes_largest_positive() {
        let mut m = array![[0.1, -0.9], [-0.5, 0.5]];
        fix_row_signs(&mut m);
        assert_eq!(m, array![[-0.1, 0.9], [0.5, -0.5]]);
    }
}
