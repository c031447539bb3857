//! Fixed-step explicit RK4 on the dynamic states with a damped Newton
//! projection of the algebraic states at every stage evaluation.
//!
//! Near the singular surface the nominal step is halved until the step is
//! accepted or falls below `cfg.min_substep * cfg.dt`; an accepted sample
//! must keep the sign of `Δ` it started with, which stops Newton from
//! silently hopping onto another branch of `g = 0` across the fold.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{lstsq, solve_vec, Matrix, Vector};
use crate::model::{delta_unchecked, ParamSet, Point, StageModel};

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// `|Δ|` below which a point is treated as singular.
    pub delta_floor: f64,
    pub t_max: f64,
    /// Shadow constraint re-solved every `shadow_stride` accepted samples.
    pub shadow_stride: usize,
    /// Smallest substep, relative to `dt`, tried before declaring a singularity.
    pub min_substep: f64,
    /// `‖x‖` beyond which the trajectory is declared divergent.
    pub divergence_radius: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            delta_floor: 1e-8,
            t_max: 30.0,
            shadow_stride: 1,
            min_substep: 1e-9,
            divergence_radius: 1e6,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("newton_tol", self.newton_tol),
            ("delta_floor", self.delta_floor),
            ("min_substep", self.min_substep),
            ("divergence_radius", self.divergence_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.t_max < 0.0 || self.newton_max_iter == 0 || self.shadow_stride == 0 {
            return Err(Error::Config("t_max >= 0, newton_max_iter >= 1, shadow_stride >= 1 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    HorizonReached,
    ConvergedToSep,
    /// Last accepted sample before the singular surface.
    SingularityReached {
        t: f64,
        point: Point,
    },
    NewtonFailure {
        t: f64,
    },
    Diverged {
        t: f64,
    },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::HorizonReached => "horizon",
            Termination::ConvergedToSep => "converged",
            Termination::SingularityReached { .. } => "singularity",
            Termination::NewtonFailure { .. } => "newton_failure",
            Termination::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vector,
    pub y: Vector,
    pub y_post: Option<Vector>,
    pub delta_active: f64,
    pub delta_post: Option<f64>,
}

impl Sample {
    pub fn point(&self) -> Point {
        Point::new(self.x.clone(), self.y.clone())
    }

    pub fn shadow_point(&self) -> Option<Point> {
        self.y_post.as_ref().map(|y| Point::new(self.x.clone(), y.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub termination: Termination,
    /// Time of the last sample carrying a shadow solution, once the shadow
    /// constraint has lost its solution branch.
    pub shadow_lost_after: Option<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn duration(&self) -> f64 {
        self.last().t - self.samples[0].t
    }

    /// CSV with columns `t,x1..xn,y1..ym[,ypost1..ypostm],delta_active[,delta_post]`.
    pub fn to_csv(&self) -> String {
        let first = &self.samples[0];
        let (n, m) = (first.x.len(), first.y.len());
        let shadow = first.y_post.is_some();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("y{i}")));
        if shadow {
            header.extend((1..=m).map(|i| format!("ypost{i}")));
        }
        header.push("delta_active".into());
        if shadow {
            header.push("delta_post".into());
        }
        let mut out = header.join(",");
        out.push('\n');
        for s in &self.samples {
            let mut row: Vec<String> = vec![fmt_sig12(s.t)];
            row.extend(s.x.iter().map(|v| fmt_sig12(*v)));
            row.extend(s.y.iter().map(|v| fmt_sig12(*v)));
            if shadow {
                match &s.y_post {
                    Some(yp) => row.extend(yp.iter().map(|v| fmt_sig12(*v))),
                    None => row.extend((0..m).map(|_| String::new())),
                }
            }
            row.push(fmt_sig12(s.delta_active));
            if shadow {
                row.push(s.delta_post.map(fmt_sig12).unwrap_or_default());
            }
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Twelve significant digits, scientific notation.
pub fn fmt_sig12(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    format!("{v:.11e}")
}

/// Shadow constraint tracked along the fault-on flow: the algebraic image
/// `y_post` the post-fault stage would have at the same `x`.
#[derive(Debug, Clone, Copy)]
pub struct Shadow<'a> {
    pub stage: &'a dyn StageModel,
    pub y0: &'a Vector,
}

/// Stop once the trajectory has stayed within `radius` of `center` for
/// `dwell` time units.
#[derive(Debug, Clone, PartialEq)]
pub struct SepBall {
    pub center: Point,
    pub radius: f64,
    pub dwell: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions<'a> {
    pub shadow: Option<Shadow<'a>>,
    pub sep_ball: Option<SepBall>,
    /// Overrides `cfg.t_max`.
    pub horizon: Option<f64>,
}

/// Project `y_guess` onto `g(x, ·) = 0` by damped Newton.
pub fn solve_algebraic(
    stage: &dyn StageModel,
    x: &Vector,
    y_guess: &Vector,
    p: &ParamSet,
    cfg: &IntegratorConfig,
) -> Result<Vector> {
    let mut y = y_guess.clone();
    let mut r = stage.g(x, &y, p);
    let mut rn = r.norm();
    for _ in 0..=cfg.newton_max_iter {
        let jac = stage.g_y(x, &y, p);
        let det = jac.determinant();
        if det.abs() < cfg.delta_floor {
            return Err(Error::NewtonFailure(format!("|det dg/dy| = {det:e} below floor")));
        }
        let step = solve_vec(&jac, &r).ok_or(Error::SingularJacobian)?;
        // a small residual alone is not enough close to a fold, where it
        // still leaves y uncertain by |g| / |Δ|
        if rn <= cfg.newton_tol && step.norm() <= cfg.newton_tol * (1.0 + y.norm()) {
            return Ok(y - step);
        }
        let mut lambda = 1.0;
        loop {
            let trial = &y - &step * lambda;
            let rt = stage.g(x, &trial, p);
            let rtn = rt.norm();
            if rtn < rn || lambda < 1.0 / 1024.0 {
                if !rtn.is_finite() {
                    return Err(Error::NewtonFailure("non-finite residual".into()));
                }
                y = trial;
                r = rt;
                rn = rtn;
                break;
            }
            lambda *= 0.5;
        }
    }
    Err(Error::NewtonFailure(format!("no convergence in {} iterations (|g| = {rn:e})", cfg.newton_max_iter)))
}

/// Why a step attempt was rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Reject {
    /// `Δ` vanished, changed sign or Newton lost its root: the surface is near.
    Singular,
    /// Non-finite values.
    Newton,
}

/// Algebraic projection plus the branch guard.
fn guarded_solve(
    stage: &dyn StageModel,
    x: &Vector,
    y_guess: &Vector,
    p: &ParamSet,
    cfg: &IntegratorConfig,
    sign: f64,
    min_abs: f64,
) -> std::result::Result<(Vector, f64), Reject> {
    let y = match solve_algebraic(stage, x, y_guess, p, cfg) {
        Ok(y) => y,
        // with the step already cut to a sliver, a vanished root is the
        // only way Newton can stall: that is the singular surface
        Err(Error::NewtonFailure(msg)) if msg.contains("non-finite") => return Err(Reject::Newton),
        Err(_) => return Err(Reject::Singular),
    };
    let d = delta_unchecked(stage, x, &y, p);
    if d.abs() < cfg.delta_floor.max(min_abs) || d.signum() != sign {
        return Err(Reject::Singular);
    }
    // Newton may land on another root with the same sign of Δ; between two
    // roots of g the sign of Δ flips, so probe along the correction.
    const PROBES: usize = 16;
    for k in 1..PROBES {
        let yk = y_guess + (&y - y_guess) * (k as f64 / PROBES as f64);
        let dk = delta_unchecked(stage, x, &yk, p);
        if dk.signum() != sign || dk.abs() < cfg.delta_floor {
            return Err(Reject::Singular);
        }
    }
    Ok((y, d))
}

const BRANCH_ABS_TOL: f64 = 1e-9;
const BRANCH_REL_TOL: f64 = 0.25;

/// Stage points of one RK4 step from a consistent `(x, y)`.
#[derive(Debug, Clone)]
pub(crate) struct RkStages {
    /// `(x_s, y_s)` for the four stage evaluations.
    pub points: [(Vector, Vector); 4],
    pub x_new: Vector,
    pub y_new: Vector,
    pub delta_new: f64,
}

fn rk4_attempt(
    stage: &dyn StageModel,
    x: &Vector,
    y: &Vector,
    p: &ParamSet,
    h: f64,
    cfg: &IntegratorConfig,
    sign: f64,
) -> std::result::Result<RkStages, Reject> {
    // |Δ| may at most halve within a step, so grazing passes near the
    // singular surface are resolved rather than stepped over
    let floor = 0.5 * delta_unchecked(stage, x, y, p).abs();
    // the algebraic branch must stay close to its tangent at the step start;
    // a large second-order part means a fold is within reach of the step
    let gy_inv = stage.g_y(x, y, p).try_inverse().ok_or(Reject::Singular)?;
    let dy_dx = &gy_inv * stage.g_x(x, y, p);
    // y is only known to about newton_tol·‖g_y⁻¹‖ from the Newton solves
    let abs_tol = BRANCH_ABS_TOL + 10.0 * cfg.newton_tol * gy_inv.norm();
    let on_branch = |xs: &Vector, ys: &Vector| {
        let lin = &dy_dx * (xs - x);
        let curved = (ys - y + &lin).norm();
        if curved > abs_tol + BRANCH_REL_TOL * lin.norm() {
            Err(Reject::Singular)
        } else {
            Ok(())
        }
    };
    let k1 = stage.f(x, y, p);
    let x2 = x + &k1 * (0.5 * h);
    let (y2, _) = guarded_solve(stage, &x2, y, p, cfg, sign, floor)?;
    on_branch(&x2, &y2)?;
    let k2 = stage.f(&x2, &y2, p);
    let x3 = x + &k2 * (0.5 * h);
    let (y3, _) = guarded_solve(stage, &x3, &y2, p, cfg, sign, floor)?;
    on_branch(&x3, &y3)?;
    let k3 = stage.f(&x3, &y3, p);
    let x4 = x + &k3 * h;
    let (y4, _) = guarded_solve(stage, &x4, &y3, p, cfg, sign, floor)?;
    on_branch(&x4, &y4)?;
    let k4 = stage.f(&x4, &y4, p);
    let x_new = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if x_new.iter().any(|v| !v.is_finite()) {
        return Err(Reject::Newton);
    }
    let (y_new, delta_new) = guarded_solve(stage, &x_new, &y4, p, cfg, sign, floor)?;
    on_branch(&x_new, &y_new)?;
    Ok(RkStages { points: [(x.clone(), y.clone()), (x2, y2), (x3, y3), (x4, y4)], x_new, y_new, delta_new })
}

/// Re-run the RK4 step between two stored samples (same guesses, same
/// arithmetic as `simulate`).
pub(crate) fn replay_step(
    stage: &dyn StageModel,
    from: &Sample,
    h: f64,
    p: &ParamSet,
    cfg: &IntegratorConfig,
) -> Result<RkStages> {
    let sign = from.delta_active.signum();
    rk4_attempt(stage, &from.x, &from.y, p, h, cfg, sign).map_err(|_| Error::SingularPoint { delta: from.delta_active })
}

/// Integrate `stage` from `start` until the horizon, a singularity, a Newton
/// failure, divergence or settlement in the SEP ball.
pub fn simulate(
    stage: &dyn StageModel,
    start: &Point,
    p: &ParamSet,
    cfg: &IntegratorConfig,
    opts: &SimOptions<'_>,
) -> Result<Trajectory> {
    cfg.validate()?;
    start.check_dims(stage.n(), stage.m())?;
    let horizon = opts.horizon.unwrap_or(cfg.t_max);
    let y0 = solve_algebraic(stage, &start.x, &start.y, p, cfg)?;
    let d0 = delta_unchecked(stage, &start.x, &y0, p);
    if d0.abs() < cfg.delta_floor {
        return Err(Error::SingularPoint { delta: d0 });
    }
    let sign = d0.signum();

    let (mut y_post, mut d_post, shadow_sign) = match &opts.shadow {
        Some(sh) => {
            let yp = solve_algebraic(sh.stage, &start.x, sh.y0, p, cfg)?;
            let dp = delta_unchecked(sh.stage, &start.x, &yp, p);
            if dp.abs() < cfg.delta_floor {
                return Err(Error::SingularPoint { delta: dp });
            }
            (Some(yp), Some(dp), dp.signum())
        }
        None => (None, None, 0.0),
    };

    let mut samples = vec![Sample {
        t: 0.0,
        x: start.x.clone(),
        y: y0,
        y_post: y_post.clone(),
        delta_active: d0,
        delta_post: d_post,
    }];
    let mut shadow_lost_after = None;
    let mut in_ball_since: Option<f64> = None;
    let mut t = 0.0;
    let mut grid = 0u64;
    let mut h = cfg.dt;
    let mut accepted = 0usize;
    let check_ball = |s: &Sample, since: &mut Option<f64>| -> bool {
        let Some(ball) = &opts.sep_ball else { return false };
        let dist = ((&s.x - &ball.center.x).norm_squared() + (&s.y - &ball.center.y).norm_squared()).sqrt();
        if dist <= ball.radius {
            let t0 = *since.get_or_insert(s.t);
            s.t - t0 >= ball.dwell
        } else {
            *since = None;
            false
        }
    };
    if check_ball(&samples[0], &mut in_ball_since) {
        return Ok(Trajectory { samples, termination: Termination::ConvergedToSep, shadow_lost_after });
    }

    let termination = loop {
        if t >= horizon {
            break Termination::HorizonReached;
        }
        let next_grid = (grid + 1) as f64 * cfg.dt;
        let to_grid = next_grid.min(horizon) - t;
        // land exactly on the grid unless the step was cut
        let h_try = if h >= to_grid * (1.0 - 1e-9) { to_grid } else { h };
        let last = samples.last().expect("nonempty");
        match rk4_attempt(stage, &last.x, &last.y, p, h_try, cfg, sign) {
            Ok(st) => {
                let snapped = h_try == to_grid;
                let t_new = if snapped {
                    if next_grid <= horizon {
                        grid += 1;
                        next_grid
                    } else {
                        horizon
                    }
                } else {
                    t + h_try
                };
                if t_new <= t {
                    // step too small to advance the clock
                    break Termination::SingularityReached { t, point: last.point() };
                }
                accepted += 1;
                if let Some(sh) = &opts.shadow {
                    if y_post.is_some() && accepted.is_multiple_of(cfg.shadow_stride) {
                        let guess = y_post.clone().expect("checked");
                        match guarded_solve(sh.stage, &st.x_new, &guess, p, cfg, shadow_sign, 0.0) {
                            Ok((yp, dp)) => {
                                y_post = Some(yp);
                                d_post = Some(dp);
                            }
                            Err(_) => {
                                shadow_lost_after = Some(t);
                                y_post = None;
                                d_post = None;
                            }
                        }
                    } else if y_post.is_some() {
                        // between stride points the stale shadow is not reported
                        d_post = None;
                    }
                }
                let sample = Sample {
                    t: t_new,
                    x: st.x_new,
                    y: st.y_new,
                    y_post: if d_post.is_some() { y_post.clone() } else { None },
                    delta_active: st.delta_new,
                    delta_post: d_post,
                };
                t = t_new;
                let diverged = sample.x.norm() > cfg.divergence_radius;
                let settled = check_ball(&sample, &mut in_ball_since);
                samples.push(sample);
                if diverged {
                    break Termination::Diverged { t };
                }
                if settled {
                    break Termination::ConvergedToSep;
                }
                h = (2.0 * h_try).min(cfg.dt);
            }
            Err(reason) => {
                h = 0.5 * h_try;
                if h < cfg.min_substep * cfg.dt {
                    let last = samples.last().expect("nonempty");
                    break match reason {
                        Reject::Singular => Termination::SingularityReached { t, point: last.point() },
                        Reject::Newton => Termination::NewtonFailure { t },
                    };
                }
            }
        }
    };
    Ok(Trajectory { samples, termination, shadow_lost_after })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    Active,
    Shadow,
}

/// Zero of the quadratic through three `(t, Δ)` samples: the root inside a
/// sign-changing interval if there is one, else the nearest root ahead of the
/// last sample. `None` when the quadratic has no usable root.
pub fn quadratic_crossing(ts: [f64; 3], ds: [f64; 3]) -> Option<f64> {
    for k in 0..3 {
        if ds[k] == 0.0 {
            return Some(ts[k]);
        }
    }
    // Newton divided differences around the last sample
    let d01 = (ds[1] - ds[0]) / (ts[1] - ts[0]);
    let d12 = (ds[2] - ds[1]) / (ts[2] - ts[1]);
    let d012 = (d12 - d01) / (ts[2] - ts[0]);
    // Δ(t) = ds[2] + b s + a s², s = t − ts[2]
    let a = d012;
    let b = d12 + d012 * (ts[2] - ts[1]);
    let c = ds[2];
    let roots: Vec<f64> = if a.abs() < 1e-14 * (b.abs() + c.abs()).max(1e-300) {
        if b == 0.0 {
            vec![]
        } else {
            vec![-c / b]
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            vec![]
        } else {
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            let mut r = vec![q / a];
            if q != 0.0 {
                r.push(c / q);
            }
            r
        }
    };
    let times: Vec<f64> = roots.into_iter().map(|s| ts[2] + s).collect();
    for k in 0..2 {
        if ds[k].signum() != ds[k + 1].signum() {
            let (lo, hi) = (ts[k], ts[k + 1]);
            if let Some(t) = times.iter().copied().find(|t| *t >= lo && *t <= hi) {
                return Some(t);
            }
            // fall back to the secant inside the bracket
            return Some(lo - ds[k] * (hi - lo) / (ds[k + 1] - ds[k]));
        }
    }
    times.into_iter().filter(|t| *t >= ts[2]).min_by(|a, b| a.total_cmp(b))
}

/// Cubic Hermite interpolation of the flow between samples `k` and `k+1`
/// (extrapolates past the ends of the interval).
fn hermite_x(flow: &dyn StageModel, a: &Sample, b: &Sample, p: &ParamSet, t: f64) -> Vector {
    let h = b.t - a.t;
    let s = (t - a.t) / h;
    let fa = flow.f(&a.x, &a.y, p);
    let fb = flow.f(&b.x, &b.y, p);
    let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
    let h10 = s.powi(3) - 2.0 * s * s + s;
    let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
    let h11 = s.powi(3) - s * s;
    &a.x * h00 + fa * (h10 * h) + &b.x * h01 + fb * (h11 * h)
}

/// Locate where the designated `Δ` monitor reaches zero.
///
/// `flow` is the stage that generated `traj`; `monitor_stage` owns the
/// monitored constraint (`flow` itself for [`Monitor::Active`], the shadow
/// stage otherwise). The quadratic guess from the last three monitor samples
/// is refined by Newton on `(τ, y)` for `[g; Δ] = 0`, with `x(τ)` taken from
/// the Hermite interpolant of the flow.
pub fn locate_singularity_crossing(
    flow: &dyn StageModel,
    monitor_stage: &dyn StageModel,
    traj: &Trajectory,
    which: Monitor,
    p: &ParamSet,
    cfg: &IntegratorConfig,
) -> Result<(f64, Point)> {
    let series: Vec<(usize, f64, &Vector)> = traj
        .samples
        .iter()
        .enumerate()
        .filter_map(|(k, s)| match which {
            Monitor::Active => Some((k, s.delta_active, &s.y)),
            Monitor::Shadow => Some((k, s.delta_post?, s.y_post.as_ref()?)),
        })
        .collect();
    if let Some(&(k, _, y)) = series.iter().find(|(_, d, _)| *d == 0.0) {
        let s = &traj.samples[k];
        return Ok((s.t, Point::new(s.x.clone(), y.clone())));
    }
    let halted = match which {
        Monitor::Active => matches!(traj.termination, Termination::SingularityReached { .. }),
        Monitor::Shadow => traj.shadow_lost_after.is_some(),
    };
    let sign_change = series.windows(2).any(|w| w[0].1.signum() != w[1].1.signum());
    if series.len() < 3 || !(halted || sign_change) {
        return Err(Error::NoCrossing);
    }
    let tail = &series[series.len() - 3..];
    let ts = [0, 1, 2].map(|i| traj.samples[tail[i].0].t);
    let ds = [0, 1, 2].map(|i| tail[i].1);
    let last_k = tail[2].0;
    let t_last = ts[2];
    let t_guess = quadratic_crossing(ts, ds)
        // Δ² is close to linear in t at a fold
        .or_else(|| {
            let (q1, q2) = (ds[1] * ds[1], ds[2] * ds[2]);
            let slope = (q2 - q1) / (ts[2] - ts[1]);
            (slope < 0.0).then(|| t_last - q2 / slope)
        })
        // the crossing lies at most one (failed) step beyond the last sample
        .filter(|t| (ts[0]..=t_last + 4.0 * (ts[2] - ts[1])).contains(t))
        .unwrap_or(t_last);

    // interval of the flow used for x(τ)
    let flow_k = if last_k + 1 < traj.samples.len() { last_k } else { last_k.saturating_sub(1) };
    let (a, b) = (&traj.samples[flow_k], &traj.samples[flow_k + 1]);
    let m = monitor_stage.m();
    let mut tau = t_guess;
    let mut y = tail[2].2.clone();
    let residual = |tau: f64, y: &Vector| -> Vector {
        let x = hermite_x(flow, a, b, p, tau);
        let mut r = Vector::zeros(m + 1);
        r.rows_mut(0, m).copy_from(&monitor_stage.g(&x, y, p));
        r[m] = delta_unchecked(monitor_stage, &x, y, p);
        r
    };
    let span = b.t - a.t;
    let window = ts[0]..=t_last + 4.0 * span;
    let mut converged = false;
    for _ in 0..cfg.newton_max_iter {
        let r = residual(tau, &y);
        if r.norm() <= cfg.newton_tol.max(1e-13) {
            converged = true;
            break;
        }
        let mut jac = Matrix::zeros(m + 1, m + 1);
        let ht = 1e-7 * span.max(1e-12);
        jac.set_column(0, &((residual(tau + ht, &y) - residual(tau - ht, &y)) / (2.0 * ht)));
        for j in 0..m {
            let hy = crate::linalg::fd_step(y[j]);
            let mut yp = y.clone();
            yp[j] += hy;
            let mut ym = y.clone();
            ym[j] -= hy;
            jac.set_column(j + 1, &((residual(tau, &yp) - residual(tau, &ym)) / (2.0 * hy)));
        }
        let Some(step) = lstsq(&jac, &r) else { break };
        tau -= step[0];
        for j in 0..m {
            y[j] -= step[j + 1];
        }
        if !window.contains(&tau) {
            break;
        }
    }
    if !converged {
        // keep the interpolated guess; y from the nearest monitor sample
        let x = hermite_x(flow, a, b, p, t_guess);
        return Ok((t_guess, Point::new(x, tail[2].2.clone())));
    }
    Ok((tau, Point::new(hermite_x(flow, a, b, p, tau), y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{build_example75, build_smib, example75_defaults, smib_defaults, LoadModel};
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_crossing_in_sign_change_interval() {
        let t = quadratic_crossing([0.0, 1.0, 2.0], [0.02, 0.01, -0.01]).unwrap();
        assert!(t > 1.0 && t < 2.0);
        // Δ = 0.02 − 0.005 t − 0.005 t² → root at t = (−1 + √17)/2
        assert_relative_eq!(t, (-1.0 + 17f64.sqrt()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_crossing_exact_hit() {
        assert_eq!(quadratic_crossing([0.0, 0.5, 1.0], [1.0, 0.0, -1.0]), Some(0.5));
    }

    #[test]
    fn algebraic_solve_examples() {
        let cfg = IntegratorConfig::default();
        let p = smib_defaults(0.3);
        let sc = build_smib(&p, LoadModel::Constant).unwrap();
        let x = Vector::from_vec(vec![0.0, 0.0]);
        let y = solve_algebraic(sc.fault.as_ref(), &x, &Vector::from_element(1, 0.7), &p, &cfg).unwrap();
        assert_eq!(y[0], 0.0);
        let y = solve_algebraic(sc.post.as_ref(), &x, &Vector::from_element(1, 0.9), &p, &cfg).unwrap();
        assert_relative_eq!(y[0], (1.0 + 0.8f64.sqrt()) / 2.0, epsilon = 1e-10);

        let p = example75_defaults();
        let sc = build_example75(&p).unwrap();
        let x = Vector::from_vec(vec![0.5, 0.0]);
        let y = solve_algebraic(sc.post.as_ref(), &x, &Vector::from_element(1, 0.1), &p, &cfg).unwrap();
        assert!(y[0].abs() < 1e-10);
    }

    #[test]
    fn zero_horizon_is_single_sample() {
        let p = smib_defaults(0.3);
        let sc = build_smib(&p, LoadModel::Constant).unwrap();
        let start = Point::from_slices(&[0.0, 0.0], &[0.0]);
        let cfg = IntegratorConfig { t_max: 0.0, ..Default::default() };
        let tr = simulate(sc.fault.as_ref(), &start, &p, &cfg, &SimOptions::default()).unwrap();
        assert_eq!(tr.samples.len(), 1);
        assert_eq!(tr.termination, Termination::HorizonReached);
    }

    #[test]
    fn fault_on_swing_matches_closed_form() {
        let p = smib_defaults(0.3);
        let sc = build_smib(&p, LoadModel::Constant).unwrap();
        let start = Point::from_slices(&[0.0, 0.0], &[0.0]);
        let cfg = IntegratorConfig { t_max: 1.0, ..Default::default() };
        let tr = simulate(sc.fault.as_ref(), &start, &p, &cfg, &SimOptions::default()).unwrap();
        assert_eq!(tr.last().t, 1.0, "{:?}", tr.termination);
        assert_relative_eq!(tr.last().x[1], 0.3 * (1.0 - (-1.0f64).exp()), epsilon = 1e-12);
    }

    #[test]
    fn partial_final_step_hits_horizon() {
        let p = example75_defaults();
        let sc = build_example75(&p).unwrap();
        let start = Point::from_slices(&[0.5, 0.0], &[0.0]);
        let cfg = IntegratorConfig { t_max: 0.12345, ..Default::default() };
        let tr = simulate(sc.fault.as_ref(), &start, &p, &cfg, &SimOptions::default()).unwrap();
        let s = tr.last();
        assert_eq!(s.t, 0.12345);
        assert_relative_eq!(s.x[1], -0.12345, epsilon = 1e-13);
        assert_relative_eq!(s.x[0], 0.5 - 0.12345f64.powi(2) / 2.0, epsilon = 1e-13);
        assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
    }
}
