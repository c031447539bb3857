//! Equilibria, pseudo equilibria and semi-singular points of one stage.
//!
//! Classification of elements on the singular surface depends on which side
//! of it the region of interest lies. The regularized field `(Δ f, κ)` runs
//! backwards in time wherever `Δ < 0`, so callers pass the orientation
//! `region_sign = sign Δ(SEP)` and the field is multiplied by it before
//! eigenvalues or curvature signs are read off.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, fd_jacobian, fix_sign, lstsq, null_vector, solve_vec, split, stack, Matrix, Vector};
use crate::model::{
    delta_unchecked, indicator_unchecked, kappa_unchecked, reduced_jacobian, ParamSet, Point, StageModel,
};

/// `|Re λ|` below which an equilibrium is treated as non-hyperbolic.
pub const HYPERBOLIC_TOL: f64 = 1e-8;
/// Residual tolerance for elements on the singular surface.
pub const SURFACE_TOL: f64 = 1e-8;
/// Newton tolerance for equilibria.
pub const EQUILIBRIUM_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoClass {
    TransverseSaddle,
    TransverseSource,
    TransverseSink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemiClass {
    SemiSaddle,
    SemiFocus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Sep,
    /// Equilibrium with `unstable` eigenvalues in the right half plane.
    Uep {
        unstable: usize,
    },
    PseudoEp(PseudoClass),
    SemiSingular(SemiClass),
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementKind::Sep => f.write_str("sep"),
            ElementKind::Uep { unstable } => write!(f, "uep_type{unstable}"),
            ElementKind::PseudoEp(PseudoClass::TransverseSaddle) => f.write_str("pseudo_transverse_saddle"),
            ElementKind::PseudoEp(PseudoClass::TransverseSource) => f.write_str("pseudo_transverse_source"),
            ElementKind::PseudoEp(PseudoClass::TransverseSink) => f.write_str("pseudo_transverse_sink"),
            ElementKind::SemiSingular(SemiClass::SemiSaddle) => f.write_str("semi_saddle"),
            ElementKind::SemiSingular(SemiClass::SemiFocus) => f.write_str("semi_focus"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalElement {
    pub kind: ElementKind,
    pub location: Point,
    /// Reduced-Jacobian spectrum (equilibria) or the transversal spectrum of
    /// the oriented regularized field (pseudo equilibria). Empty for
    /// semi-singular points.
    pub eigenvalues: Vec<Complex64>,
    /// Type-1 UEPs: unit normal of the stable manifold, i.e. the left
    /// eigenvector of the unstable eigenvalue; first nonzero entry positive.
    pub v_cu: Option<Vector>,
    /// Type-1 UEPs: unit right eigenvector of the unstable eigenvalue.
    pub unstable_direction: Option<Vector>,
}

impl CriticalElement {
    fn plain(kind: ElementKind, location: Point, eigenvalues: Vec<Complex64>) -> Self {
        Self { kind, location, eigenvalues, v_cu: None, unstable_direction: None }
    }
}

/// Damped Gauss–Newton on `r(z) = 0` with a finite-difference Jacobian.
/// Largest Gauss–Newton correction accepted in one iteration.
const MAX_REFINE_STEP: f64 = 0.5;

fn gauss_newton<F>(r: F, z0: Vector, tol: f64, max_iter: usize) -> Result<Vector>
where
    F: Fn(&Vector) -> Vector,
{
    let mut z = z0;
    let mut res = r(&z);
    for _ in 0..max_iter {
        let rn = res.norm();
        if rn <= tol {
            return Ok(z);
        }
        let jac = fd_jacobian(&r, &z);
        let mut step = lstsq(&jac, &res).ok_or(Error::SingularJacobian)?;
        // elements are refined locally: no jumping to a far (e.g. periodic) copy
        let sn = step.norm();
        if sn > MAX_REFINE_STEP {
            step *= MAX_REFINE_STEP / sn;
        }
        let mut lambda = 1.0;
        loop {
            let trial = &z - &step * lambda;
            let rt = r(&trial);
            if rt.norm() < rn {
                z = trial;
                res = rt;
                break;
            }
            if lambda < 1.0 / 1024.0 {
                return Err(Error::NewtonFailure(format!("no descent at residual {rn:e}")));
            }
            lambda *= 0.5;
        }
        if !res.norm().is_finite() {
            break;
        }
    }
    if res.norm() <= tol {
        return Ok(z);
    }
    Err(Error::NewtonFailure(format!("residual {:e} after {max_iter} iterations", res.norm())))
}

/// Newton on `[f; g] = 0` with the analytic Jacobian.
pub fn find_equilibrium(stage: &dyn StageModel, guess: &Point, p: &ParamSet) -> Result<Point> {
    guess.check_dims(stage.n(), stage.m())?;
    let n = stage.n();
    let resid = |z: &Vector| {
        let (x, y) = split(z, n);
        stack(&stage.f(&x, &y, p), &stage.g(&x, &y, p))
    };
    let mut z = guess.stacked();
    let mut r = resid(&z);
    for _ in 0..100 {
        let rn = r.norm();
        if rn <= EQUILIBRIUM_TOL {
            let (x, y) = split(&z, n);
            return Ok(Point::new(x, y));
        }
        let (x, y) = split(&z, n);
        let m = stage.m();
        let mut jac = Matrix::zeros(n + m, n + m);
        jac.view_mut((0, 0), (n, n)).copy_from(&stage.f_x(&x, &y, p));
        jac.view_mut((0, n), (n, m)).copy_from(&stage.f_y(&x, &y, p));
        jac.view_mut((n, 0), (m, n)).copy_from(&stage.g_x(&x, &y, p));
        jac.view_mut((n, n), (m, m)).copy_from(&stage.g_y(&x, &y, p));
        let step = solve_vec(&jac, &r).ok_or(Error::SingularJacobian)?;
        let mut lambda = 1.0;
        loop {
            let trial = &z - &step * lambda;
            let rt = resid(&trial);
            if rt.norm() < rn || lambda < 1.0 / 256.0 {
                z = trial;
                r = rt;
                break;
            }
            lambda *= 0.5;
        }
        if !r.norm().is_finite() {
            break;
        }
    }
    Err(Error::NewtonFailure(format!("equilibrium search stalled at residual {:e}", r.norm())))
}

/// SEP / type-k UEP from the reduced-Jacobian spectrum.
pub fn classify_equilibrium(stage: &dyn StageModel, eq: &Point, p: &ParamSet) -> Result<CriticalElement> {
    let jr = reduced_jacobian(stage, eq, p)?;
    let eigs = eigenvalues(&jr);
    if let Some(e) = eigs.iter().find(|e| e.re.abs() < HYPERBOLIC_TOL) {
        return Err(Error::EigenvalueOnAxis(e.re));
    }
    let unstable = eigs.iter().filter(|e| e.re > 0.0).count();
    if unstable == 0 {
        return Ok(CriticalElement::plain(ElementKind::Sep, eq.clone(), eigs));
    }
    let mut el = CriticalElement::plain(ElementKind::Uep { unstable }, eq.clone(), eigs);
    if unstable == 1 {
        let lam = el.eigenvalues.iter().find(|e| e.re > 0.0).expect("one unstable").re;
        let shifted = &jr - Matrix::identity(jr.nrows(), jr.ncols()) * lam;
        el.unstable_direction = Some(fix_sign(null_vector(&shifted)));
        el.v_cu = Some(fix_sign(null_vector(&shifted.transpose())));
    }
    Ok(el)
}

/// Newton on `[g; Δ; κ] = 0`, then checks `‖f‖ ≥ 1e-3`.
pub fn find_pseudo_ep(stage: &dyn StageModel, guess: &Point, p: &ParamSet) -> Result<Point> {
    guess.check_dims(stage.n(), stage.m())?;
    let n = stage.n();
    let resid = |z: &Vector| {
        let (x, y) = split(z, n);
        let g = stage.g(&x, &y, p);
        let k = kappa_unchecked(stage, &x, &y, p);
        let mut r = Vector::zeros(2 * g.len() + 1);
        r.rows_mut(0, g.len()).copy_from(&g);
        r[g.len()] = delta_unchecked(stage, &x, &y, p);
        r.rows_mut(g.len() + 1, k.len()).copy_from(&k);
        r
    };
    let z = gauss_newton(resid, guess.stacked(), 0.1 * SURFACE_TOL, 100)?;
    let (x, y) = split(&z, n);
    let fnorm = stage.f(&x, &y, p).norm();
    if fnorm < 1e-3 {
        return Err(Error::WrongElementKind {
            expected: "pseudo equilibrium",
            reason: format!("‖f‖ = {fnorm:e}: converged to an equilibrium"),
        });
    }
    Ok(Point::new(x, y))
}

/// Newton on `[g; Δ; (∂Δ/∂y)·κ] = 0`, then checks `‖κ‖ ≥ 1e-6`.
pub fn find_semi_singular(stage: &dyn StageModel, guess: &Point, p: &ParamSet) -> Result<Point> {
    guess.check_dims(stage.n(), stage.m())?;
    let n = stage.n();
    let resid = |z: &Vector| {
        let (x, y) = split(z, n);
        let g = stage.g(&x, &y, p);
        let mut r = Vector::zeros(g.len() + 2);
        r.rows_mut(0, g.len()).copy_from(&g);
        r[g.len()] = delta_unchecked(stage, &x, &y, p);
        r[g.len() + 1] = indicator_unchecked(stage, &x, &y, p);
        r
    };
    let z = gauss_newton(resid, guess.stacked(), 0.1 * SURFACE_TOL, 100)?;
    let (x, y) = split(&z, n);
    let knorm = kappa_unchecked(stage, &x, &y, p).norm();
    if knorm < 1e-6 {
        return Err(Error::WrongElementKind {
            expected: "semi-singular point",
            reason: format!("‖κ‖ = {knorm:e}: point is a pseudo equilibrium or equilibrium"),
        });
    }
    Ok(Point::new(x, y))
}

/// Point of the singular surface `{g = 0, Δ = 0}` whose stacked coordinate
/// `coord` (x first, then y) equals `value`. The system is square for
/// `n = 2`; otherwise it is solved in the least-squares sense.
pub fn singular_point_at(
    stage: &dyn StageModel,
    guess: &Point,
    p: &ParamSet,
    coord: usize,
    value: f64,
) -> Result<Point> {
    guess.check_dims(stage.n(), stage.m())?;
    let n = stage.n();
    let dim = n + stage.m();
    if coord >= dim {
        return Err(Error::Dimension(format!("coordinate {coord} outside 0..{dim}")));
    }
    let full = |w: &Vector| {
        let mut z = Vector::zeros(dim);
        z[coord] = value;
        for (k, i) in (0..dim).filter(|&i| i != coord).enumerate() {
            z[i] = w[k];
        }
        z
    };
    let resid = |w: &Vector| {
        let (x, y) = split(&full(w), n);
        let g = stage.g(&x, &y, p);
        let mut r = Vector::zeros(g.len() + 1);
        r.rows_mut(0, g.len()).copy_from(&g);
        r[g.len()] = delta_unchecked(stage, &x, &y, p);
        r
    };
    let z0 = guess.stacked();
    let w0 = Vector::from_iterator(dim - 1, (0..dim).filter(|&i| i != coord).map(|i| z0[i]));
    let w = gauss_newton(resid, w0, 0.1 * SURFACE_TOL, 100)?;
    let (x, y) = split(&full(&w), n);
    Ok(Point::new(x, y))
}

/// Regularized field `(Δ f, κ)` in stacked coordinates.
pub fn regularized_field(stage: &dyn StageModel, z: &Vector, p: &ParamSet) -> Vector {
    let (x, y) = split(z, stage.n());
    let d = delta_unchecked(stage, &x, &y, p);
    stack(&(stage.f(&x, &y, p) * d), &kappa_unchecked(stage, &x, &y, p))
}

/// Saddle / source / sink from the `n` largest-magnitude eigenvalues of the
/// oriented regularized field's Jacobian.
pub fn classify_pseudo_ep(
    stage: &dyn StageModel,
    pep: &Point,
    p: &ParamSet,
    region_sign: f64,
) -> Result<CriticalElement> {
    let n = stage.n();
    let jac = fd_jacobian(|z| regularized_field(stage, z, p) * region_sign, &pep.stacked());
    let mut eigs = eigenvalues(&jac);
    eigs.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let (big, small) = eigs.split_at(n);
    let weakest = big.iter().map(|e| e.norm()).fold(f64::INFINITY, f64::min);
    let strongest_rest = small.iter().map(|e| e.norm()).fold(0.0, f64::max);
    if weakest < 1e2 * strongest_rest || weakest == 0.0 {
        let gap = if strongest_rest > 0.0 { weakest / strongest_rest } else { 0.0 };
        return Err(Error::AmbiguousSpectrum(gap));
    }
    let pos = big.iter().filter(|e| e.re > 0.0).count();
    let class = match pos {
        0 => PseudoClass::TransverseSink,
        k if k == n => PseudoClass::TransverseSource,
        _ => PseudoClass::TransverseSaddle,
    };
    Ok(CriticalElement::plain(ElementKind::PseudoEp(class), pep.clone(), big.to_vec()))
}

/// Second derivative of `Δ` along the oriented regularized flow.
pub fn delta_curvature(stage: &dyn StageModel, pt: &Point, p: &ParamSet, region_sign: f64) -> f64 {
    let z = pt.stacked();
    let field = |z: &Vector| regularized_field(stage, z, p) * region_sign;
    let n = stage.n();
    let rate = |z: &Vector| {
        // dΔ/dτ = ∇Δ · F
        let jac = fd_jacobian(
            |w| {
                let (x, y) = split(w, n);
                Vector::from_element(1, delta_unchecked(stage, &x, &y, p))
            },
            z,
        );
        (jac.row(0) * field(z))[0]
    };
    let v = field(&z);
    let eps = 1e-5 / v.norm().max(1e-12);
    (rate(&(&z + &v * eps)) - rate(&(&z - &v * eps))) / (2.0 * eps)
}

/// Semi-saddle when the oriented flow curves back into the region
/// (`sign · Δ̈ > 0`), semi-focus when it curves away.
pub fn classify_semi_singular(
    stage: &dyn StageModel,
    pt: &Point,
    p: &ParamSet,
    region_sign: f64,
) -> Result<CriticalElement> {
    let curv = region_sign * delta_curvature(stage, pt, p, region_sign);
    if curv.abs() < 1e-6 {
        return Err(Error::WrongElementKind {
            expected: "semi-saddle or semi-focus",
            reason: format!("borderline curvature {curv:e}"),
        });
    }
    let class = if curv > 0.0 { SemiClass::SemiSaddle } else { SemiClass::SemiFocus };
    Ok(CriticalElement::plain(ElementKind::SemiSingular(class), pt.clone(), Vec::new()))
}

/// `[f_x − f_y g_y⁻¹ g_x]⁻¹ (f_y g_y⁻¹ g_p − f_p)`: the drift of an
/// equilibrium's dynamic states with the active parameter.
pub fn equilibrium_location_sensitivity(stage: &dyn StageModel, eq: &Point, p: &ParamSet) -> Result<Vector> {
    let jr = reduced_jacobian(stage, eq, p)?;
    let (x, y) = (&eq.x, &eq.y);
    let gy = stage.g_y(x, y, p);
    let gy_inv_gp = solve_vec(&gy, &stage.g_p(x, y, p)).ok_or(Error::SingularPoint { delta: gy.determinant() })?;
    let rhs = stage.f_y(x, y, p) * gy_inv_gp - stage.f_p(x, y, p);
    solve_vec(&jr, &rhs).ok_or(Error::SingularReducedJacobian)
}
