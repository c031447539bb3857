//! Reformulations of a stage that must leave every CCT result unchanged:
//! reordering the algebraic equations and appending a trivially regular
//! auxiliary algebraic state.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{ParamSet, Point, ScalarGradient, ScenarioModel, StageModel};

/// Stage whose algebraic equations are `g_perm[i] = g[perm[i]]`.
///
/// `Δ` changes sign with odd permutations; the region orientation used by the
/// classifiers absorbs that.
#[derive(Debug, Clone)]
pub struct PermutedRows {
    inner: Arc<dyn StageModel>,
    perm: Vec<usize>,
    sign: f64,
}

impl PermutedRows {
    pub fn new(inner: Arc<dyn StageModel>, perm: Vec<usize>) -> Result<Self> {
        let m = inner.m();
        let mut seen = vec![false; m];
        if perm.len() != m || perm.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Dimension(format!("{perm:?} is not a permutation of 0..{m}")));
        }
        Ok(Self { sign: permutation_sign(&perm), inner, perm })
    }

    fn rows(&self, a: Matrix) -> Matrix {
        Matrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(self.perm[i], j)])
    }

    fn entries(&self, v: Vector) -> Vector {
        Vector::from_fn(v.len(), |i, _| v[self.perm[i]])
    }
}

fn permutation_sign(perm: &[usize]) -> f64 {
    let mut inversions = 0;
    for i in 0..perm.len() {
        for j in i + 1..perm.len() {
            if perm[i] > perm[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl StageModel for PermutedRows {
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn m(&self) -> usize {
        self.inner.m()
    }
    fn f(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        self.inner.f(x, y, p)
    }
    fn g(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        self.entries(self.inner.g(x, y, p))
    }
    fn f_x(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        self.inner.f_x(x, y, p)
    }
    fn f_y(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        self.inner.f_y(x, y, p)
    }
    fn f_p(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        self.inner.f_p(x, y, p)
    }
    fn g_x(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        self.rows(self.inner.g_x(x, y, p))
    }
    fn g_y(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        self.rows(self.inner.g_y(x, y, p))
    }
    fn g_p(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        self.entries(self.inner.g_p(x, y, p))
    }
    fn delta(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Option<f64> {
        self.inner.delta(x, y, p).map(|d| self.sign * d)
    }
    fn delta_gradient(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Option<ScalarGradient> {
        self.inner.delta_gradient(x, y, p).map(|g| ScalarGradient {
            dx: g.dx * self.sign,
            dy: g.dy * self.sign,
            dp: g.dp * self.sign,
        })
    }
}

/// Stage with one extra algebraic state `w` and equation `w − y₁ = 0`.
///
/// `∂g/∂y` becomes block lower triangular with a unit corner, so `Δ` is
/// unchanged and the extra state never causes a singularity.
#[derive(Debug, Clone)]
pub struct Augmented {
    inner: Arc<dyn StageModel>,
}

impl Augmented {
    pub fn new(inner: Arc<dyn StageModel>) -> Self {
        Self { inner }
    }

    fn base<'a>(&self, y: &'a Vector) -> nalgebra::DVectorView<'a, f64> {
        y.rows(0, self.inner.m())
    }

    fn inner_y(&self, y: &Vector) -> Vector {
        self.base(y).into_owned()
    }
}

impl StageModel for Augmented {
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn m(&self) -> usize {
        self.inner.m() + 1
    }
    fn f(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        self.inner.f(x, &self.inner_y(y), p)
    }
    fn g(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        let m = self.inner.m();
        let mut out = Vector::zeros(m + 1);
        out.rows_mut(0, m).copy_from(&self.inner.g(x, &self.inner_y(y), p));
        out[m] = y[m] - y[0];
        out
    }
    fn f_x(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        self.inner.f_x(x, &self.inner_y(y), p)
    }
    fn f_y(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        let inner = self.inner.f_y(x, &self.inner_y(y), p);
        let mut out = Matrix::zeros(inner.nrows(), inner.ncols() + 1);
        out.view_mut((0, 0), inner.shape()).copy_from(&inner);
        out
    }
    fn f_p(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        self.inner.f_p(x, &self.inner_y(y), p)
    }
    fn g_x(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        let inner = self.inner.g_x(x, &self.inner_y(y), p);
        let mut out = Matrix::zeros(inner.nrows() + 1, inner.ncols());
        out.view_mut((0, 0), inner.shape()).copy_from(&inner);
        out
    }
    fn g_y(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix {
        let m = self.inner.m();
        let inner = self.inner.g_y(x, &self.inner_y(y), p);
        let mut out = Matrix::zeros(m + 1, m + 1);
        out.view_mut((0, 0), (m, m)).copy_from(&inner);
        out[(m, 0)] = -1.0;
        out[(m, m)] = 1.0;
        out
    }
    fn g_p(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
        let inner = self.inner.g_p(x, &self.inner_y(y), p);
        let mut out = Vector::zeros(inner.len() + 1);
        out.rows_mut(0, inner.len()).copy_from(&inner);
        out
    }
    fn delta(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Option<f64> {
        self.inner.delta(x, &self.inner_y(y), p)
    }
    fn delta_gradient(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Option<ScalarGradient> {
        self.inner.delta_gradient(x, &self.inner_y(y), p).map(|g| {
            let mut dy = Vector::zeros(g.dy.len() + 1);
            dy.rows_mut(0, g.dy.len()).copy_from(&g.dy);
            ScalarGradient { dx: g.dx, dy, dp: g.dp }
        })
    }
}

impl ScenarioModel {
    /// Same scenario with every stage's algebraic rows reordered by `perm`.
    pub fn with_permuted_rows(&self, perm: &[usize]) -> Result<Self> {
        let wrap = |s: &Arc<dyn StageModel>| -> Result<Arc<dyn StageModel>> {
            Ok(Arc::new(PermutedRows::new(s.clone(), perm.to_vec())?))
        };
        ScenarioModel::new(
            format!("{} (rows {perm:?})", self.name),
            wrap(&self.pre)?,
            wrap(&self.fault)?,
            wrap(&self.post)?,
            self.sep_guess.clone(),
        )
    }

    /// Same scenario with the auxiliary algebraic state `w = y₁` appended.
    pub fn augmented(&self) -> Result<Self> {
        let wrap = |s: &Arc<dyn StageModel>| -> Arc<dyn StageModel> { Arc::new(Augmented::new(s.clone())) };
        let g = &self.sep_guess;
        let mut y = Vector::zeros(g.y.len() + 1);
        y.rows_mut(0, g.y.len()).copy_from(&g.y);
        y[g.y.len()] = g.y[0];
        ScenarioModel::new(
            format!("{} (augmented)", self.name),
            wrap(&self.pre),
            wrap(&self.fault),
            wrap(&self.post),
            Point::new(g.x.clone(), y),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derivative_consistency, eval_delta, eval_delta_det};
    use crate::systems::{build_smib, smib_defaults, LoadModel};

    #[test]
    fn permutation_sign_counts_inversions() {
        assert_eq!(permutation_sign(&[0, 1, 2]), 1.0);
        assert_eq!(permutation_sign(&[1, 0, 2]), -1.0);
        assert_eq!(permutation_sign(&[1, 2, 0]), 1.0);
    }

    #[test]
    fn rejects_non_permutations() {
        let sc = build_smib(&smib_defaults(0.3), LoadModel::Constant).unwrap();
        assert!(PermutedRows::new(sc.post.clone(), vec![0, 0]).is_err());
        assert!(PermutedRows::new(sc.post.clone(), vec![1]).is_err());
    }

    #[test]
    fn augmented_then_swapped_smib_keeps_consistent_derivatives() {
        let p = smib_defaults(0.3);
        let sc = build_smib(&p, LoadModel::Constant).unwrap().augmented().unwrap().with_permuted_rows(&[1, 0]).unwrap();
        let pt = Point::from_slices(&[0.4, 0.1], &[0.8, 0.8]);
        for stage in [&sc.pre, &sc.fault, &sc.post] {
            assert!(derivative_consistency(stage.as_ref(), &pt, &p) < 1e-5);
        }
        let analytic = eval_delta(sc.post.as_ref(), &pt, &p).unwrap();
        let det = eval_delta_det(sc.post.as_ref(), &pt, &p).unwrap();
        assert!((analytic - det).abs() < 1e-12);
        // odd permutation flips the sign of Δ
        let plain = build_smib(&p, LoadModel::Constant).unwrap();
        let base = eval_delta(plain.post.as_ref(), &Point::from_slices(&[0.4, 0.1], &[0.8]), &p).unwrap();
        assert!((analytic + base).abs() < 1e-12);
    }
}
