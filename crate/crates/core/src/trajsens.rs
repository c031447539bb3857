//! Variational equations along stored trajectories.
//!
//! For `α` the initial state or the active parameter,
//!
//! ```text
//! d/dt ∂x/∂α = f_x ∂x/∂α + f_y ∂y/∂α + f_α
//!        0   = g_x ∂x/∂α + g_y ∂y/∂α + g_α
//! ```
//!
//! is integrated with the RK4 tableau and step sequence of the trajectory
//! itself; both sensitivities are carried together as one `n × (n+1)` block.

use crate::error::{Error, Result};
use crate::integrator::{replay_step, simulate, IntegratorConfig, SimOptions, Trajectory};
use crate::linalg::{solve, Matrix, Vector};
use crate::model::{ParamSet, Point, StageModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityState {
    pub t: f64,
    /// `∂x(t)/∂x(0)`.
    pub phi_x: Matrix,
    /// `∂x(t)/∂p` with `x(0)` held fixed.
    pub phi_p: Vector,
    /// `∂y(t)/∂x(0)`.
    pub dy_dx0: Matrix,
    /// `∂y(t)/∂p`.
    pub dy_dp: Vector,
}

/// `−(∂g/∂y)⁻¹ (∂g/∂x · dphix_dalpha + dg_dalpha)`.
pub fn algebraic_sensitivity(
    stage: &dyn StageModel,
    pt: &Point,
    p: &ParamSet,
    dphix_dalpha: &Matrix,
    dg_dalpha: &Matrix,
    cfg: &IntegratorConfig,
) -> Result<Matrix> {
    pt.check_dims(stage.n(), stage.m())?;
    let gy = stage.g_y(&pt.x, &pt.y, p);
    let delta = gy.determinant();
    if delta.abs() < cfg.delta_floor {
        return Err(Error::SingularPoint { delta });
    }
    let rhs = stage.g_x(&pt.x, &pt.y, p) * dphix_dalpha + dg_dalpha;
    solve(&gy, &rhs).map(|s| -s).ok_or(Error::SingularPoint { delta })
}

/// Right-hand side of the combined variational system at one point; returns
/// `(dS/dt, ∂y/∂α)`.
fn variational_rhs(
    stage: &dyn StageModel,
    x: &Vector,
    y: &Vector,
    p: &ParamSet,
    s: &Matrix,
    cfg: &IntegratorConfig,
) -> Result<(Matrix, Matrix)> {
    let n = stage.n();
    let m = stage.m();
    let mut g_alpha = Matrix::zeros(m, n + 1);
    g_alpha.set_column(n, &stage.g_p(x, y, p));
    let pt = Point::new(x.clone(), y.clone());
    let dy = algebraic_sensitivity(stage, &pt, p, s, &g_alpha, cfg)?;
    let mut ds = stage.f_x(x, y, p) * s + stage.f_y(x, y, p) * &dy;
    let fp = stage.f_p(x, y, p);
    for i in 0..n {
        ds[(i, n)] += fp[i];
    }
    Ok((ds, dy))
}

fn state_of(t: f64, s: &Matrix, dy: &Matrix) -> SensitivityState {
    let n = s.nrows();
    SensitivityState {
        t,
        phi_x: s.columns(0, n).into_owned(),
        phi_p: s.column(n).into_owned(),
        dy_dx0: dy.columns(0, n).into_owned(),
        dy_dp: dy.column(n).into_owned(),
    }
}

/// Sensitivities at samples `0..=end` of `traj` (all samples when `end` is
/// `None`), starting from `∂x/∂x(0) = I`, `∂x/∂p = 0`.
///
/// `traj` must have been produced by `simulate` on the same stage, `p` and
/// `cfg`; the RK4 stages are replayed from the stored samples.
pub fn integrate_variational(
    stage: &dyn StageModel,
    traj: &Trajectory,
    p: &ParamSet,
    cfg: &IntegratorConfig,
    end: Option<usize>,
) -> Result<Vec<SensitivityState>> {
    let n = stage.n();
    let last = end.unwrap_or(traj.samples.len() - 1).min(traj.samples.len() - 1);
    let mut s = Matrix::zeros(n, n + 1);
    s.view_mut((0, 0), (n, n)).fill_with_identity();
    let first = &traj.samples[0];
    let (_, dy0) = variational_rhs(stage, &first.x, &first.y, p, &s, cfg)?;
    let mut out = Vec::with_capacity(last + 1);
    out.push(state_of(first.t, &s, &dy0));
    for k in 0..last {
        let (a, b) = (&traj.samples[k], &traj.samples[k + 1]);
        let h = b.t - a.t;
        let st = replay_step(stage, a, h, p, cfg)?;
        let [(x1, y1), (x2, y2), (x3, y3), (x4, y4)] = &st.points;
        let (k1, _) = variational_rhs(stage, x1, y1, p, &s, cfg)?;
        let (k2, _) = variational_rhs(stage, x2, y2, p, &(&s + &k1 * (0.5 * h)), cfg)?;
        let (k3, _) = variational_rhs(stage, x3, y3, p, &(&s + &k2 * (0.5 * h)), cfg)?;
        let (k4, _) = variational_rhs(stage, x4, y4, p, &(&s + &k3 * h), cfg)?;
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let (_, dy) = variational_rhs(stage, &b.x, &b.y, p, &s, cfg)?;
        out.push(state_of(b.t, &s, &dy));
    }
    Ok(out)
}

/// Worst mismatch between the variational solution and central differences
/// of the flow, `‖Φ[:, j] − (x⁺ − x⁻)/2δ‖ / max(‖Φ‖, 1)` over columns `j`
/// (initial states, then the active parameter), at four evenly spaced
/// samples within the first `share` of the run from `start`.
///
/// Returns the mismatch and the number of comparisons made; samples the
/// perturbed runs do not reach are skipped.
pub fn flow_fd_mismatch(
    stage: &dyn StageModel,
    start: &Point,
    horizon: f64,
    p: &ParamSet,
    cfg: &IntegratorConfig,
    delta: f64,
    share: f64,
) -> Result<(f64, usize)> {
    let opts = SimOptions { horizon: Some(horizon), ..Default::default() };
    let base = simulate(stage, start, p, cfg, &opts)?;
    let t_end = base.last().t * share;
    let end = base.samples.iter().rposition(|s| s.t <= t_end).unwrap_or(0);
    let sens = integrate_variational(stage, &base, p, cfg, Some(end))?;
    let n = stage.n();
    let perturbed = |col: usize, sign: f64| -> Result<Trajectory> {
        if col < n {
            let mut s = start.clone();
            s.x[col] += sign * delta;
            simulate(stage, &s, p, cfg, &opts)
        } else {
            simulate(stage, start, &p.perturbed(sign * delta)?, cfg, &opts)
        }
    };
    let state_at = |tr: &Trajectory, t: f64| tr.samples.iter().find(|s| (s.t - t).abs() < 1e-12).map(|s| s.x.clone());
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for col in 0..=n {
        let (plus, minus) = (perturbed(col, 1.0)?, perturbed(col, -1.0)?);
        for k in (1..=4).map(|q| q * end / 4).filter(|&k| k > 0) {
            let t = base.samples[k].t;
            let (Some(xp), Some(xm)) = (state_at(&plus, t), state_at(&minus, t)) else { continue };
            let fd = (xp - xm) / (2.0 * delta);
            let s = &sens[k];
            let mut phi = Matrix::zeros(n, n + 1);
            phi.view_mut((0, 0), (n, n)).copy_from(&s.phi_x);
            phi.set_column(n, &s.phi_p);
            worst = worst.max((phi.column(col) - fd).norm() / phi.norm().max(1.0));
            compared += 1;
        }
    }
    Ok((worst, compared))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{build_smib, smib_defaults, LoadModel};
    use approx::assert_relative_eq;

    /// ẋ = A x with a decoupled algebraic state 0 = y.
    #[derive(Debug)]
    struct Linear(Matrix);

    impl StageModel for Linear {
        fn n(&self) -> usize {
            2
        }
        fn m(&self) -> usize {
            1
        }
        fn f(&self, x: &Vector, _y: &Vector, _p: &ParamSet) -> Vector {
            &self.0 * x
        }
        fn g(&self, _x: &Vector, y: &Vector, _p: &ParamSet) -> Vector {
            y.clone()
        }
        fn f_x(&self, _x: &Vector, _y: &Vector, _p: &ParamSet) -> Matrix {
            self.0.clone()
        }
        fn f_y(&self, _x: &Vector, _y: &Vector, _p: &ParamSet) -> Matrix {
            Matrix::zeros(2, 1)
        }
        fn f_p(&self, _x: &Vector, _y: &Vector, _p: &ParamSet) -> Vector {
            Vector::zeros(2)
        }
        fn g_x(&self, _x: &Vector, _y: &Vector, _p: &ParamSet) -> Matrix {
            Matrix::zeros(1, 2)
        }
        fn g_y(&self, _x: &Vector, _y: &Vector, _p: &ParamSet) -> Matrix {
            Matrix::identity(1, 1)
        }
        fn g_p(&self, _x: &Vector, _y: &Vector, _p: &ParamSet) -> Vector {
            Vector::zeros(1)
        }
    }

    #[test]
    fn nilpotent_flow_is_exact() {
        let stage = Linear(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        let cfg = IntegratorConfig { t_max: 1.0, ..Default::default() };
        let p = ParamSet::new();
        let tr = simulate(&stage, &Point::from_slices(&[1.0, 1.0], &[0.0]), &p, &cfg, &SimOptions::default()).unwrap();
        let sens = integrate_variational(&stage, &tr, &p, &cfg, None).unwrap();
        assert_eq!(sens[0].phi_x, Matrix::identity(2, 2));
        assert_eq!(sens[0].phi_p, Vector::zeros(2));
        let end = sens.last().unwrap();
        assert_relative_eq!(end.phi_x, Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn fault_stage_algebraic_sensitivity_with_unit_jacobian() {
        let p = smib_defaults(0.3);
        let sc = build_smib(&p, LoadModel::Constant).unwrap();
        let pt = Point::from_slices(&[0.3, 0.1], &[0.0]);
        let dphi = Matrix::from_row_slice(2, 1, &[0.5, -1.0]);
        let dg = Matrix::from_element(1, 1, 0.25);
        let cfg = IntegratorConfig::default();
        let dy = algebraic_sensitivity(sc.fault.as_ref(), &pt, &p, &dphi, &dg, &cfg).unwrap();
        assert_eq!(dy[(0, 0)], -0.25);
        let zero = algebraic_sensitivity(sc.fault.as_ref(), &pt, &p, &dphi, &Matrix::zeros(1, 1), &cfg).unwrap();
        assert_eq!(zero[(0, 0)], 0.0);
    }
}
