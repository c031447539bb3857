//! Small dense linear-algebra helpers shared by the model, critical-point and
//! sensitivity code. Everything here works on `nalgebra` dynamic matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative step used by every central finite difference in the crate.
pub const FD_STEP: f64 = 1e-6;

/// Coordinate step `FD_STEP * max(1, |v|)`.
pub fn fd_step(v: f64) -> f64 {
    FD_STEP * v.abs().max(1.0)
}

/// Adjugate by cofactor expansion. Minor determinants use closed forms for
/// dimensions up to three and LU beyond, so no inverse is ever formed and the
/// result stays exact on singular matrices.
pub fn adjugate(a: &Matrix) -> Matrix {
    let m = a.nrows();
    assert_eq!(m, a.ncols(), "adjugate of a non-square matrix");
    if m == 1 {
        return Matrix::from_element(1, 1, 1.0);
    }
    let mut adj = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let minor = a.clone().remove_row(i).remove_column(j);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            // transpose of the cofactor matrix
            adj[(j, i)] = sign * minor.determinant();
        }
    }
    adj
}

/// Unit vector spanning the (numerical) null space of a square matrix: the
/// right singular vector of the smallest singular value.
pub fn null_vector(a: &Matrix) -> Vector {
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let mut v = Vector::zeros(n);
    for j in 0..n {
        v[j] = v_t[(k, j)];
    }
    v
}

/// Left null vector `w` with `wᵀ a ≈ 0`.
pub fn left_null_vector(a: &Matrix) -> Vector {
    null_vector(&a.transpose())
}

/// Flip `v` so its first component with magnitude above `1e-12` is positive.
pub fn fix_sign(mut v: Vector) -> Vector {
    if let Some(first) = v.iter().find(|c| c.abs() > 1e-12).copied() {
        if first < 0.0 {
            v.neg_mut();
        }
    }
    v
}

pub fn smallest_singular_value(a: &Matrix) -> f64 {
    a.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(a: &Matrix) -> Vec<Complex64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.clone().complex_eigenvalues().iter().copied().collect()
}

/// Solve `a x = b` by LU; `None` when `a` is singular.
pub fn solve(a: &Matrix, b: &Matrix) -> Option<Matrix> {
    a.clone().lu().solve(b)
}

pub fn solve_vec(a: &Matrix, b: &Vector) -> Option<Vector> {
    a.clone().lu().solve(b)
}

/// Minimum-norm least-squares solution of `a x = b`, valid for any shape.
pub fn lstsq(a: &Matrix, b: &Vector) -> Option<Vector> {
    let (r, c) = a.shape();
    // thin SVD only exposes min(r, c) vectors; pad wide systems to square
    let padded = if r < c {
        let mut sq = Matrix::zeros(c, c);
        sq.view_mut((0, 0), (r, c)).copy_from(a);
        let mut rhs = Vector::zeros(c);
        rhs.rows_mut(0, r).copy_from(b);
        (sq, rhs)
    } else {
        (a.clone(), b.clone())
    };
    let svd = padded.0.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.solve(&padded.1, smax * 1e-13).ok()
}

/// Stack `x` and `y` into one column.
pub fn stack(x: &Vector, y: &Vector) -> Vector {
    let mut z = Vector::zeros(x.len() + y.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), y.len()).copy_from(y);
    z
}

/// Split a stacked column back into `(x, y)` with `x` of length `n`.
pub fn split(z: &Vector, n: usize) -> (Vector, Vector) {
    let m = z.len() - n;
    (z.rows(0, n).into_owned(), z.rows(n, m).into_owned())
}

/// Central finite-difference Jacobian of `f` at `z`.
pub fn fd_jacobian<F>(f: F, z: &Vector) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let f0 = f(z);
    let mut jac = Matrix::zeros(f0.len(), z.len());
    let mut zp = z.clone();
    for j in 0..z.len() {
        let h = fd_step(z[j]);
        zp[j] = z[j] + h;
        let fp = f(&zp);
        zp[j] = z[j] - h;
        let fm = f(&zp);
        zp[j] = z[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}
