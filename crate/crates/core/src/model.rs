//! Staged DAE models `ẋ = f(x, y, p)`, `0 = g(x, y, p)` and the singularity
//! fields built on top of them.
//!
//! A [`StageModel`] only has to provide `f`, `g` and their first partials.
//! Everything that needs second derivatives (the gradient of `Δ = det ∂g/∂y`,
//! the gradient of `κ`) falls back on central differences unless the model
//! supplies an analytic `Δ` gradient.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{adjugate, fd_jacobian, fd_step, solve, stack, Matrix, Vector};

/// Dynamic and algebraic state of a DAE.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: Vector,
    pub y: Vector,
}

impl Point {
    pub fn new(x: Vector, y: Vector) -> Self {
        Self { x, y }
    }

    pub fn from_slices(x: &[f64], y: &[f64]) -> Self {
        Self { x: Vector::from_column_slice(x), y: Vector::from_column_slice(y) }
    }

    pub fn stacked(&self) -> Vector {
        stack(&self.x, &self.y)
    }

    /// Euclidean distance in the stacked `(x, y)` space.
    pub fn distance(&self, other: &Point) -> f64 {
        ((&self.x - &other.x).norm_squared() + (&self.y - &other.y).norm_squared()).sqrt()
    }

    pub fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        if self.x.len() != n || self.y.len() != m {
            return Err(Error::Dimension(format!(
                "point has (n, m) = ({}, {}), stage expects ({n}, {m})",
                self.x.len(),
                self.y.len()
            )));
        }
        Ok(())
    }
}

/// Named scalar parameters with one designated active parameter.
///
/// Built-in models resolve parameter names to positions once at construction
/// and read values by index afterwards, so a `ParamSet` passed to a stage must
/// come from (a clone of) the set the stage was built against.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<f64>,
    active: Option<usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), active: None }
    }

    /// Builder-style insert; overwrites an existing entry of the same name.
    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        match self.index_of(name) {
            Some(i) => self.values[i] = value,
            None => {
                self.names.push(name.to_string());
                self.values.push(value);
            }
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.require(name).map(|i| self.values[i])
    }

    #[inline]
    pub fn value_at(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }

    pub fn set_active(&mut self, name: &str) -> Result<()> {
        self.active = Some(self.require(name)?);
        Ok(())
    }

    pub fn with_active(mut self, name: &str) -> Result<Self> {
        self.set_active(name)?;
        Ok(self)
    }

    #[inline]
    pub fn active_index(&self) -> Option<usize> {
        self.active
    }

    pub fn active_name(&self) -> Option<&str> {
        self.active.map(|i| self.names[i].as_str())
    }

    pub fn active_value(&self) -> Result<f64> {
        self.active.map(|i| self.values[i]).ok_or(Error::NoActiveParameter)
    }

    /// Copy with the active parameter replaced by `value`.
    pub fn with_active_value(&self, value: f64) -> Result<Self> {
        let i = self.active.ok_or(Error::NoActiveParameter)?;
        let mut out = self.clone();
        out.values[i] = value;
        Ok(out)
    }

    pub fn perturbed(&self, delta: f64) -> Result<Self> {
        self.with_active_value(self.active_value()? + delta)
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Partial derivatives of the scalar `Δ` (or any scalar field) with respect
/// to `x`, `y` and the active parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGradient {
    pub dx: Vector,
    pub dy: Vector,
    pub dp: f64,
}

/// Partial derivatives of an `m`-vector field such as `κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGradient {
    pub dx: Matrix,
    pub dy: Matrix,
    pub dp: Vector,
}

/// One system stage (pre-fault, fault-on or post-fault).
///
/// Parameter partials `f_p`, `g_p` are taken with respect to the active
/// parameter of `p`; they are zero when no parameter is active or when the
/// active parameter does not enter this stage.
pub trait StageModel: Send + Sync + fmt::Debug {
    fn n(&self) -> usize;
    fn m(&self) -> usize;

    fn f(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector;
    fn g(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector;

    fn f_x(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix;
    fn f_y(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix;
    fn f_p(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector;
    fn g_x(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix;
    fn g_y(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Matrix;
    fn g_p(&self, x: &Vector, y: &Vector, p: &ParamSet) -> Vector;

    /// Closed-form `Δ`, if the model has one.
    fn delta(&self, _x: &Vector, _y: &Vector, _p: &ParamSet) -> Option<f64> {
        None
    }

    /// Closed-form gradient of `Δ`, if the model has one.
    fn delta_gradient(&self, _x: &Vector, _y: &Vector, _p: &ParamSet) -> Option<ScalarGradient> {
        None
    }
}

/// Pre-fault, fault-on and post-fault stages of one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioModel {
    pub name: String,
    pub pre: Arc<dyn StageModel>,
    pub fault: Arc<dyn StageModel>,
    pub post: Arc<dyn StageModel>,
    /// Newton starting point for the pre-fault SEP.
    pub sep_guess: Point,
}

impl ScenarioModel {
    pub fn new(
        name: impl Into<String>,
        pre: Arc<dyn StageModel>,
        fault: Arc<dyn StageModel>,
        post: Arc<dyn StageModel>,
        sep_guess: Point,
    ) -> Result<Self> {
        let n = pre.n();
        if fault.n() != n || post.n() != n {
            return Err(Error::Dimension("stages disagree on the number of dynamic states".into()));
        }
        sep_guess.check_dims(n, pre.m())?;
        Ok(Self { name: name.into(), pre, fault, post, sep_guess })
    }

    pub fn n(&self) -> usize {
        self.pre.n()
    }
}

fn check(stage: &dyn StageModel, pt: &Point) -> Result<()> {
    pt.check_dims(stage.n(), stage.m())
}

/// `Δ = det(∂g/∂y)`, from the model's closed form when it has one.
pub fn eval_delta(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> Result<f64> {
    check(stage, pt)?;
    Ok(delta_unchecked(stage, &pt.x, &pt.y, p))
}

/// `Δ` through the determinant of `∂g/∂y`, ignoring any closed form.
pub fn eval_delta_det(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> Result<f64> {
    check(stage, pt)?;
    Ok(stage.g_y(&pt.x, &pt.y, p).determinant())
}

pub(crate) fn delta_unchecked(stage: &dyn StageModel, x: &Vector, y: &Vector, p: &ParamSet) -> f64 {
    stage.delta(x, y, p).unwrap_or_else(|| stage.g_y(x, y, p).determinant())
}

pub(crate) fn kappa_unchecked(stage: &dyn StageModel, x: &Vector, y: &Vector, p: &ParamSet) -> Vector {
    let adj = adjugate(&stage.g_y(x, y, p));
    -(adj * stage.g_x(x, y, p) * stage.f(x, y, p))
}

/// `κ = −adj(∂g/∂y) · ∂g/∂x · f`, the algebraic drift of the regularized system.
pub fn eval_kappa(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> Result<Vector> {
    check(stage, pt)?;
    Ok(kappa_unchecked(stage, &pt.x, &pt.y, p))
}

/// Gradient of `Δ`: closed form when supplied, central differences otherwise.
pub fn delta_gradient(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> Result<ScalarGradient> {
    check(stage, pt)?;
    if let Some(grad) = stage.delta_gradient(&pt.x, &pt.y, p) {
        return Ok(grad);
    }
    Ok(fd_scalar_gradient(stage, pt, p, |s, x, y, q| delta_unchecked(s, x, y, q)))
}

/// Tangency indicator `(∂Δ/∂y) · κ`; zero on semi-singular points.
pub fn eval_semi_singular_indicator(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> Result<f64> {
    check(stage, pt)?;
    Ok(indicator_unchecked(stage, &pt.x, &pt.y, p))
}

pub(crate) fn indicator_unchecked(stage: &dyn StageModel, x: &Vector, y: &Vector, p: &ParamSet) -> f64 {
    let pt = Point::new(x.clone(), y.clone());
    let dy = match stage.delta_gradient(x, y, p) {
        Some(grad) => grad.dy,
        None => fd_y_of_delta(stage, &pt, p),
    };
    dy.dot(&kappa_unchecked(stage, x, y, p))
}

fn fd_y_of_delta(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> Vector {
    let mut out = Vector::zeros(pt.y.len());
    let mut y = pt.y.clone();
    for j in 0..y.len() {
        let h = fd_step(pt.y[j]);
        y[j] = pt.y[j] + h;
        let dp = delta_unchecked(stage, &pt.x, &y, p);
        y[j] = pt.y[j] - h;
        let dm = delta_unchecked(stage, &pt.x, &y, p);
        y[j] = pt.y[j];
        out[j] = (dp - dm) / (2.0 * h);
    }
    out
}

/// Central-difference gradient of the indicator `(∂Δ/∂y)·κ`.
pub fn indicator_gradient(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> Result<ScalarGradient> {
    check(stage, pt)?;
    Ok(fd_scalar_gradient(stage, pt, p, indicator_unchecked))
}

/// Central-difference gradient of `κ`.
pub fn kappa_gradient(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> Result<VectorGradient> {
    check(stage, pt)?;
    let n = stage.n();
    let z = pt.stacked();
    let jac = fd_jacobian(
        |z| {
            let (x, y) = crate::linalg::split(z, n);
            kappa_unchecked(stage, &x, &y, p)
        },
        &z,
    );
    let m = stage.m();
    let dp = fd_param(p, |q| kappa_unchecked(stage, &pt.x, &pt.y, q), m);
    Ok(VectorGradient { dx: jac.columns(0, n).into_owned(), dy: jac.columns(n, m).into_owned(), dp })
}

fn fd_scalar_gradient<F>(stage: &dyn StageModel, pt: &Point, p: &ParamSet, field: F) -> ScalarGradient
where
    F: Fn(&dyn StageModel, &Vector, &Vector, &ParamSet) -> f64,
{
    let n = stage.n();
    let z = pt.stacked();
    let jac = fd_jacobian(
        |z| {
            let (x, y) = crate::linalg::split(z, n);
            Vector::from_element(1, field(stage, &x, &y, p))
        },
        &z,
    );
    let dp = fd_param(p, |q| Vector::from_element(1, field(stage, &pt.x, &pt.y, q)), 1)[0];
    let row = jac.row(0).transpose();
    ScalarGradient { dx: row.rows(0, n).into_owned(), dy: row.rows(n, stage.m()).into_owned(), dp }
}

/// Central difference in the active parameter; zero when none is active.
pub(crate) fn fd_param<F>(p: &ParamSet, field: F, len: usize) -> Vector
where
    F: Fn(&ParamSet) -> Vector,
{
    let Ok(v) = p.active_value() else {
        return Vector::zeros(len);
    };
    let h = fd_step(v);
    let plus = field(&p.with_active_value(v + h).expect("active parameter"));
    let minus = field(&p.with_active_value(v - h).expect("active parameter"));
    (plus - minus) / (2.0 * h)
}

/// Reduced state matrix `∂f/∂x − ∂f/∂y (∂g/∂y)⁻¹ ∂g/∂x`.
pub fn reduced_jacobian(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> Result<Matrix> {
    check(stage, pt)?;
    let (x, y) = (&pt.x, &pt.y);
    let gy = stage.g_y(x, y, p);
    let delta = gy.determinant();
    if delta.abs() < SINGULARITY_TOL * gy.norm().max(1.0).powi(gy.nrows() as i32) {
        return Err(Error::SingularPoint { delta });
    }
    let gy_inv_gx = solve(&gy, &stage.g_x(x, y, p)).ok_or(Error::SingularPoint { delta })?;
    Ok(stage.f_x(x, y, p) - stage.f_y(x, y, p) * gy_inv_gx)
}

/// `|Δ|` below which a point counts as lying on the singular surface.
pub const SINGULARITY_TOL: f64 = 1e-8;

/// Fixed-point check of the stage derivatives against central differences.
/// Returns the worst relative error over all partials.
pub fn derivative_consistency(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> f64 {
    let n = stage.n();
    let m = stage.m();
    let z = pt.stacked();
    let split = |z: &Vector| crate::linalg::split(z, n);
    let jf = fd_jacobian(
        |z| {
            let (x, y) = split(z);
            stage.f(&x, &y, p)
        },
        &z,
    );
    let jg = fd_jacobian(
        |z| {
            let (x, y) = split(z);
            stage.g(&x, &y, p)
        },
        &z,
    );
    let fp = fd_param(p, |q| stage.f(&pt.x, &pt.y, q), n);
    let gp = fd_param(p, |q| stage.g(&pt.x, &pt.y, q), m);
    let (x, y) = (&pt.x, &pt.y);
    let pairs: [(Matrix, Matrix); 6] = [
        (stage.f_x(x, y, p), jf.columns(0, n).into_owned()),
        (stage.f_y(x, y, p), jf.columns(n, m).into_owned()),
        (stage.g_x(x, y, p), jg.columns(0, n).into_owned()),
        (stage.g_y(x, y, p), jg.columns(n, m).into_owned()),
        (
            Matrix::from_column_slice(n, 1, stage.f_p(x, y, p).as_slice()),
            Matrix::from_column_slice(n, 1, fp.as_slice()),
        ),
        (
            Matrix::from_column_slice(m, 1, stage.g_p(x, y, p).as_slice()),
            Matrix::from_column_slice(m, 1, gp.as_slice()),
        ),
    ];
    pairs
        .iter()
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(u, v)| (u - v).abs() / u.abs().max(v.abs()).max(1.0)))
        .fold(0.0, f64::max)
}
