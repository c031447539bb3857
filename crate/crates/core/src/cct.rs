//! Critical clearing time, instability mechanism and CCT sensitivities.
//!
//! A scenario is run as: pre-fault SEP → fault-on stage for `t_cl` (with the
//! post-fault algebraic image tracked as a shadow) → post-fault stage from
//! `(x(t_cl), y_post(t_cl))`. Bisection on `t_cl` keeps the last unstable
//! run as the base critical trajectory, whose end decides which of the three
//! sensitivity formulas applies:
//!
//! * singularity at clearing — the shadow hits the singular surface during
//!   the fault (fold of `g_post`): crossing form;
//! * post-fault singularity at a semi-saddle or transverse-saddle pseudo
//!   equilibrium: endpoint form;
//! * loss of synchronism through a type-1 CUEP: stable-manifold form.

use std::fmt;

use crate::critical::{
    classify_equilibrium, classify_pseudo_ep, classify_semi_singular, equilibrium_location_sensitivity,
    find_equilibrium, find_pseudo_ep, find_semi_singular, CriticalElement, ElementKind, PseudoClass, SemiClass,
};
use crate::error::{Error, Result};
use crate::integrator::{
    locate_singularity_crossing, simulate, IntegratorConfig, Monitor, SepBall, Shadow, SimOptions, Termination,
    Trajectory,
};
use crate::linalg::{left_null_vector, smallest_singular_value, solve_vec, Matrix, Vector};
use crate::model::{
    delta_gradient, delta_unchecked, indicator_gradient, kappa_gradient, kappa_unchecked, ParamSet, Point,
    ScenarioModel, StageModel,
};
use crate::trajsens::integrate_variational;

#[derive(Debug, Clone, PartialEq)]
pub struct CctConfig {
    pub integrator: IntegratorConfig,
    /// Initial bisection bracket `(stable, unstable)`.
    pub bracket: (f64, f64),
    pub cct_tol: f64,
    /// Radius of the settlement ball around the post-fault SEP.
    pub sep_radius: f64,
    /// Time the post-fault trajectory must stay inside the ball.
    pub dwell: f64,
    /// `‖f_post‖` below which a UEP refinement is attempted.
    pub eps_uep: f64,
    /// `‖κ_post‖` below which a singular endpoint is treated as pseudo EP.
    pub eps_kappa: f64,
    /// `‖f_post‖` at which the variational integration stops for the CUEP formula.
    pub cuep_truncation: f64,
    /// Fraction of the post-fault duration integrated before singular endpoints.
    pub truncation: f64,
    /// How the flow sensitivities are carried across the excluded tail.
    pub tail: TailExtrapolation,
    pub fd_delta: f64,
    /// Bisection tolerance used by the finite-difference oracle.
    pub oracle_tol: f64,
}

impl Default for CctConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig { t_max: 60.0, ..Default::default() },
            bracket: (0.0, 3.0),
            cct_tol: 1e-6,
            sep_radius: 1e-3,
            dwell: 1.0,
            eps_uep: 5e-2,
            eps_kappa: 1e-3,
            cuep_truncation: 1e-2,
            truncation: 0.98,
            tail: TailExtrapolation::Replay,
            fd_delta: 1e-3,
            oracle_tol: 1e-7,
        }
    }
}

impl CctConfig {
    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        let (lo, hi) = self.bracket;
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::Config(format!("bracket must satisfy 0 <= low < high, got ({lo}, {hi})")));
        }
        for (name, v) in [
            ("cct_tol", self.cct_tol),
            ("sep_radius", self.sep_radius),
            ("eps_uep", self.eps_uep),
            ("eps_kappa", self.eps_kappa),
            ("cuep_truncation", self.cuep_truncation),
            ("fd_delta", self.fd_delta),
            ("oracle_tol", self.oracle_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.truncation > 0.0 && self.truncation <= 1.0) || self.dwell < 0.0 {
            return Err(Error::Config("truncation in (0, 1] and dwell >= 0 required".into()));
        }
        Ok(())
    }
}

/// Extension of `D₁`, `D₃` from the truncation sample to the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailExtrapolation {
    /// Keep the values at the truncation sample.
    None,
    /// First-order extrapolation from the last two variational samples.
    Linear,
    /// Continue the variational equations over the stored tail steps; the
    /// integrator already resolved them down to `|Δ| ≥ delta_floor`.
    Replay,
}

impl TailExtrapolation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Linear => "linear",
            Self::Replay => "replay",
        }
    }
}

impl std::str::FromStr for TailExtrapolation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "linear" => Ok(Self::Linear),
            "replay" => Ok(Self::Replay),
            other => Err(Error::Config(format!("unknown tail extrapolation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnstableReason {
    /// The post-fault constraint lost its solution branch during the fault.
    ShadowSingular,
    /// The fault-on stage itself stopped before clearing.
    FaultStage(Termination),
    /// The post-fault stage could not be started at the clearing state.
    SingularAtClearing,
    PostFault(Termination),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Stable,
    Unstable(UnstableReason),
}

impl Verdict {
    pub fn is_stable(&self) -> bool {
        matches!(self, Verdict::Stable)
    }

    pub fn label(&self) -> String {
        match self {
            Verdict::Stable => "stable".into(),
            Verdict::Unstable(UnstableReason::ShadowSingular) => "unstable:shadow_singular".into(),
            Verdict::Unstable(UnstableReason::SingularAtClearing) => "unstable:singular_at_clearing".into(),
            Verdict::Unstable(UnstableReason::FaultStage(t)) => format!("unstable:fault_{}", t.label()),
            Verdict::Unstable(UnstableReason::PostFault(t)) => format!("unstable:post_{}", t.label()),
        }
    }
}

/// Fault-on and post-fault trajectories for one clearing time.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub t_cl: f64,
    pub pre_sep: Point,
    pub post_sep: Point,
    /// Sign of `Δ_post` at the post-fault SEP; orients the regularized field.
    pub region_sign: f64,
    pub fault: Trajectory,
    pub post: Option<Trajectory>,
    pub verdict: Verdict,
}

impl ScenarioRun {
    /// Clearing state with its post-fault algebraic image, when it exists.
    pub fn clearing_point(&self) -> Option<Point> {
        self.fault.last().shadow_point()
    }
}

/// Pre- and post-fault operating points and the region orientation.
#[derive(Debug, Clone)]
pub struct OperatingPoints {
    pub pre_sep: Point,
    pub post_sep: Point,
    pub region_sign: f64,
}

pub fn operating_points(sc: &ScenarioModel, p: &ParamSet) -> Result<OperatingPoints> {
    let pre_sep = find_equilibrium(sc.pre.as_ref(), &sc.sep_guess, p)?;
    let post_sep = find_equilibrium(sc.post.as_ref(), &pre_sep, p)?;
    let el = classify_equilibrium(sc.post.as_ref(), &post_sep, p)?;
    if el.kind != ElementKind::Sep {
        return Err(Error::WrongElementKind { expected: "post-fault SEP", reason: format!("found {}", el.kind) });
    }
    let region_sign = delta_unchecked(sc.post.as_ref(), &post_sep.x, &post_sep.y, p).signum();
    Ok(OperatingPoints { pre_sep, post_sep, region_sign })
}

/// Run the fault for `t_cl` and the post-fault stage after it.
pub fn simulate_scenario(sc: &ScenarioModel, t_cl: f64, p: &ParamSet, cfg: &CctConfig) -> Result<ScenarioRun> {
    let ops = operating_points(sc, p)?;
    simulate_from(sc, &ops, t_cl, p, cfg)
}

fn simulate_from(
    sc: &ScenarioModel,
    ops: &OperatingPoints,
    t_cl: f64,
    p: &ParamSet,
    cfg: &CctConfig,
) -> Result<ScenarioRun> {
    if t_cl.is_nan() || t_cl < 0.0 {
        return Err(Error::Config(format!("clearing time must be non-negative, got {t_cl}")));
    }
    let icfg = &cfg.integrator;
    let fault_opts = SimOptions {
        shadow: Some(Shadow { stage: sc.post.as_ref(), y0: &ops.post_sep.y }),
        sep_ball: None,
        horizon: Some(t_cl),
    };
    let fault = simulate(sc.fault.as_ref(), &ops.pre_sep, p, icfg, &fault_opts)?;
    let mk = |post, verdict| ScenarioRun {
        t_cl,
        pre_sep: ops.pre_sep.clone(),
        post_sep: ops.post_sep.clone(),
        region_sign: ops.region_sign,
        fault: fault.clone(),
        post,
        verdict,
    };
    if fault.termination != Termination::HorizonReached {
        let reason = UnstableReason::FaultStage(fault.termination.clone());
        return Ok(mk(None, Verdict::Unstable(reason)));
    }
    let Some(start) = fault.last().shadow_point() else {
        return Ok(mk(None, Verdict::Unstable(UnstableReason::ShadowSingular)));
    };
    let post_opts = SimOptions {
        shadow: None,
        sep_ball: Some(SepBall { center: ops.post_sep.clone(), radius: cfg.sep_radius, dwell: cfg.dwell }),
        horizon: None,
    };
    let post = match simulate(sc.post.as_ref(), &start, p, icfg, &post_opts) {
        Ok(tr) => tr,
        Err(Error::SingularPoint { .. }) | Err(Error::NewtonFailure(_)) => {
            return Ok(mk(None, Verdict::Unstable(UnstableReason::SingularAtClearing)));
        }
        Err(e) => return Err(e),
    };
    let verdict = match &post.termination {
        Termination::ConvergedToSep => Verdict::Stable,
        Termination::HorizonReached => return Err(Error::Inconclusive),
        t => Verdict::Unstable(UnstableReason::PostFault(t.clone())),
    };
    Ok(mk(Some(post), verdict))
}

pub fn judge_stability(sc: &ScenarioModel, t_cl: f64, p: &ParamSet, cfg: &CctConfig) -> Result<Verdict> {
    Ok(simulate_scenario(sc, t_cl, p, cfg)?.verdict)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    LossOfSynchronism { cuep: CriticalElement },
    SingularityAtClearing { t_cross: f64, crossing: Point },
    PostFaultSemiSaddle { endpoint: Point, element: CriticalElement },
    PostFaultTransverseSaddle { endpoint: Point, element: CriticalElement },
}

impl Mechanism {
    pub fn label(&self) -> &'static str {
        match self {
            Mechanism::LossOfSynchronism { .. } => "loss_of_synchronism",
            Mechanism::SingularityAtClearing { .. } => "singularity_at_clearing",
            Mechanism::PostFaultSemiSaddle { .. } => "post_fault_semi_saddle",
            Mechanism::PostFaultTransverseSaddle { .. } => "post_fault_transverse_saddle",
        }
    }

    /// Located critical element or crossing point.
    pub fn location(&self) -> &Point {
        match self {
            Mechanism::LossOfSynchronism { cuep } => &cuep.location,
            Mechanism::SingularityAtClearing { crossing, .. } => crossing,
            Mechanism::PostFaultSemiSaddle { endpoint, .. } | Mechanism::PostFaultTransverseSaddle { endpoint, .. } => {
                endpoint
            }
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone)]
pub struct CctResult {
    pub cct: f64,
    /// Last clearing time judged stable.
    pub low: f64,
    /// Last clearing time judged unstable; `critical` was run with it.
    pub high: f64,
    pub critical: ScenarioRun,
    pub mechanism: Mechanism,
    /// Post-fault duration to the critical element, when applicable.
    pub t_end: Option<f64>,
    /// `(t_cl, stable)` for every bisection probe, in order.
    pub history: Vec<(f64, bool)>,
}

impl CctResult {
    pub fn clearing_state(&self) -> Option<Point> {
        self.critical.clearing_point()
    }
}

/// Outcome of the bisection alone, before the mechanism is classified.
#[derive(Debug, Clone)]
pub struct CctBracket {
    pub cct: f64,
    pub low: f64,
    pub high: f64,
    pub critical: ScenarioRun,
    pub history: Vec<(f64, bool)>,
}

/// Bisection on `t_cl` within `cfg.bracket`.
pub fn compute_cct(sc: &ScenarioModel, p: &ParamSet, cfg: &CctConfig) -> Result<CctResult> {
    compute_cct_in(sc, p, cfg, cfg.bracket, cfg.cct_tol)
}

pub fn compute_cct_in(
    sc: &ScenarioModel,
    p: &ParamSet,
    cfg: &CctConfig,
    bracket: (f64, f64),
    tol: f64,
) -> Result<CctResult> {
    classify_bracket(sc, bisect_cct(sc, p, cfg, bracket, tol)?, p, cfg)
}

/// Attaches the mechanism of the marginally unstable run.
pub fn classify_bracket(sc: &ScenarioModel, b: CctBracket, p: &ParamSet, cfg: &CctConfig) -> Result<CctResult> {
    let mechanism = classify_mechanism(sc, &b.critical, p, cfg)?;
    let t_end = match &mechanism {
        Mechanism::SingularityAtClearing { .. } => None,
        _ => b.critical.post.as_ref().map(Trajectory::duration),
    };
    Ok(CctResult { cct: b.cct, low: b.low, high: b.high, critical: b.critical, mechanism, t_end, history: b.history })
}

/// Bisection of the clearing time: `bracket.0` must be stable and
/// `bracket.1` unstable; stops once the bracket is narrower than `tol`.
pub fn bisect_cct(
    sc: &ScenarioModel,
    p: &ParamSet,
    cfg: &CctConfig,
    bracket: (f64, f64),
    tol: f64,
) -> Result<CctBracket> {
    cfg.validate()?;
    let ops = operating_points(sc, p)?;
    let (mut lo, mut hi) = bracket;
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::BracketInvalid(format!("low {lo} >= high {hi}")));
    }
    let mut history = Vec::new();
    let low_run = simulate_from(sc, &ops, lo, p, cfg)?;
    history.push((lo, low_run.verdict.is_stable()));
    if !low_run.verdict.is_stable() {
        return Err(Error::BracketInvalid(format!("t_cl = {lo} is not stable ({})", low_run.verdict.label())));
    }
    let mut critical = simulate_from(sc, &ops, hi, p, cfg)?;
    history.push((hi, critical.verdict.is_stable()));
    if critical.verdict.is_stable() {
        return Err(Error::BracketInvalid(format!("t_cl = {hi} is stable")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let run = simulate_from(sc, &ops, mid, p, cfg)?;
        let stable = run.verdict.is_stable();
        history.push((mid, stable));
        if stable {
            lo = mid;
        } else {
            hi = mid;
            critical = run;
        }
    }
    Ok(CctBracket { cct: 0.5 * (lo + hi), low: lo, high: hi, critical, history })
}

/// Decision ladder on the marginally unstable run.
///
/// 1. shadow lost (or the fault stage stopped) during the fault → singularity
///    at clearing, located by the shadow `Δ_post` monitor;
/// 2. `min ‖f_post‖ ≤ eps_uep` and Newton from the closest sample reaches a
///    type-1 UEP on the region side of the singular surface → loss of
///    synchronism;
/// 3. post-fault run stopped at the singular surface → pseudo EP when
///    `‖κ_post‖ ≤ eps_kappa`, semi-singular point otherwise; the other
///    refinement is tried when the preferred one fails.
pub fn classify_mechanism(sc: &ScenarioModel, run: &ScenarioRun, p: &ParamSet, cfg: &CctConfig) -> Result<Mechanism> {
    let icfg = &cfg.integrator;
    let post_stage = sc.post.as_ref();
    let Some(post) = &run.post else {
        let which = match &run.verdict {
            Verdict::Unstable(UnstableReason::FaultStage(Termination::SingularityReached { .. }))
                if run.fault.shadow_lost_after.is_none() =>
            {
                Monitor::Active
            }
            _ => Monitor::Shadow,
        };
        let monitor: &dyn StageModel = if which == Monitor::Active { sc.fault.as_ref() } else { post_stage };
        return match locate_singularity_crossing(sc.fault.as_ref(), monitor, &run.fault, which, p, icfg) {
            Ok((t_cross, crossing)) => Ok(Mechanism::SingularityAtClearing { t_cross, crossing }),
            Err(_) if matches!(run.verdict, Verdict::Unstable(UnstableReason::SingularAtClearing)) => {
                let crossing = run.clearing_point().expect("shadow present when post start failed");
                Ok(Mechanism::SingularityAtClearing { t_cross: run.t_cl, crossing })
            }
            Err(e) => Err(Error::Unclassifiable(format!("fault stage ended without a locatable crossing: {e}"))),
        };
    };

    let fnorms: Vec<f64> = post.samples.iter().map(|s| post_stage.f(&s.x, &s.y, p).norm()).collect();
    let (imin, fmin) =
        fnorms.iter().copied().enumerate().fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if fmin <= cfg.eps_uep {
        if let Some(cuep) = refine_cuep(post_stage, &post.samples[imin].point(), p, run.region_sign) {
            return Ok(Mechanism::LossOfSynchronism { cuep });
        }
    }

    if let Termination::SingularityReached { point, .. } = &post.termination {
        let endpoint = locate_singularity_crossing(post_stage, post_stage, post, Monitor::Active, p, icfg)
            .map(|(_, pt)| pt)
            .unwrap_or_else(|_| point.clone());
        let kappa = kappa_unchecked(post_stage, &endpoint.x, &endpoint.y, p).norm();
        let pseudo = || -> Option<Mechanism> {
            let pep = find_pseudo_ep(post_stage, &endpoint, p).ok()?;
            let element = classify_pseudo_ep(post_stage, &pep, p, run.region_sign).ok()?;
            (element.kind == ElementKind::PseudoEp(PseudoClass::TransverseSaddle))
                .then_some(Mechanism::PostFaultTransverseSaddle { endpoint: pep, element })
        };
        let semi = || -> Option<Mechanism> {
            let ss = find_semi_singular(post_stage, &endpoint, p).ok()?;
            let element = classify_semi_singular(post_stage, &ss, p, run.region_sign).ok()?;
            (element.kind == ElementKind::SemiSingular(SemiClass::SemiSaddle))
                .then_some(Mechanism::PostFaultSemiSaddle { endpoint: ss, element })
        };
        let found = if kappa <= cfg.eps_kappa { pseudo().or_else(semi) } else { semi().or_else(pseudo) };
        return found.ok_or_else(|| {
            Error::Unclassifiable(format!(
                "post-fault singular endpoint {:?} (‖κ‖ = {kappa:e}) refines to neither a transverse saddle nor a semi-saddle",
                endpoint.stacked().as_slice()
            ))
        });
    }
    Err(Error::Unclassifiable(format!(
        "post-fault run ended with `{}`, min ‖f_post‖ = {fmin:e}",
        post.termination.label()
    )))
}

fn refine_cuep(stage: &dyn StageModel, guess: &Point, p: &ParamSet, region_sign: f64) -> Option<CriticalElement> {
    let eq = find_equilibrium(stage, guess, p).ok()?;
    let el = classify_equilibrium(stage, &eq, p).ok()?;
    let side = delta_unchecked(stage, &eq.x, &eq.y, p).signum();
    (el.kind == ElementKind::Uep { unstable: 1 } && side == region_sign).then_some(el)
}

// ---------------------------------------------------------------------------
// Sensitivity blocks

/// Pre-fault SEP drift and fault-on flow sensitivities at the clearing state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearingBlocks {
    /// `∂x⁰/∂p` (n).
    pub a1: Vector,
    /// `∂x^cl/∂x⁰` (n×n).
    pub b1: Matrix,
    /// `∂x^cl/∂t_cl = f_fault` (n).
    pub b2: Vector,
    /// `∂x^cl/∂p` (n).
    pub b3: Vector,
}

/// Post-fault constraint at the clearing-time crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingBlocks {
    /// `∂g_post/∂x` (m×n).
    pub c1: Matrix,
    /// `∂g_post/∂p` (m).
    pub c2: Vector,
    /// Left null vector of `∂g_post/∂y` (m).
    pub v_sing: Vector,
}

/// Post-fault flow sensitivities at the truncation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PostBlocks {
    /// `∂x^end/∂x^cl` (n×n).
    pub d1: Matrix,
    /// `∂x^end/∂t_end = f_post` at the endpoint (n).
    pub d2: Vector,
    /// `∂x^end/∂p` (n).
    pub d3: Vector,
    pub t_trunc: f64,
}

/// Endpoint constraints `Δ = 0` (E), `g = 0` (F), `λ = 0` (G).
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointBlocks {
    pub e1: Matrix,
    pub e2: Matrix,
    pub e3: f64,
    pub f1: Matrix,
    pub f2: Matrix,
    pub f3: Vector,
    pub g1: Matrix,
    pub g2: Matrix,
    pub g3: f64,
    /// Index of the `κ` component used as `λ` (transverse saddles).
    pub kappa_row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CuepBlocks {
    /// `∂x^cu/∂p` (n).
    pub h1: Vector,
    /// Stable-manifold normal at the CUEP (n).
    pub v_cu: Vector,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensitivityAssembly {
    pub clearing: Option<ClearingBlocks>,
    pub crossing: Option<CrossingBlocks>,
    pub post: Option<PostBlocks>,
    pub endpoint: Option<EndpointBlocks>,
    pub cuep: Option<CuepBlocks>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormulaValue {
    pub dcct_dp: f64,
    /// Denominator magnitude (crossing and stable-manifold forms) or smallest
    /// singular value of the endpoint system.
    pub cond: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostSingularKind {
    SemiSaddle,
    TransverseSaddle,
}

/// `A₁`, `B₁`, `B₂`, `B₃` for a fault cleared at `t_cl`.
pub fn clearing_blocks_at(sc: &ScenarioModel, t_cl: f64, p: &ParamSet, cfg: &CctConfig) -> Result<ClearingBlocks> {
    let icfg = &cfg.integrator;
    let ops = operating_points(sc, p)?;
    let a1 = equilibrium_location_sensitivity(sc.pre.as_ref(), &ops.pre_sep, p)?;
    let opts = SimOptions { horizon: Some(t_cl), ..Default::default() };
    let fault = simulate(sc.fault.as_ref(), &ops.pre_sep, p, icfg, &opts)?;
    if fault.termination != Termination::HorizonReached {
        return Err(Error::SingularPoint { delta: fault.last().delta_active });
    }
    let sens = integrate_variational(sc.fault.as_ref(), &fault, p, icfg, None)?;
    let last = sens.last().expect("nonempty");
    let end = fault.last();
    Ok(ClearingBlocks { a1, b1: last.phi_x.clone(), b2: sc.fault.f(&end.x, &end.y, p), b3: last.phi_p.clone() })
}

/// Clearing-state blocks for a computed CCT (at the crossing time for the
/// singularity-at-clearing mechanism, at the critical clearing time otherwise).
pub fn clearing_state_sensitivity(
    sc: &ScenarioModel,
    res: &CctResult,
    p: &ParamSet,
    cfg: &CctConfig,
) -> Result<ClearingBlocks> {
    let t = match &res.mechanism {
        Mechanism::SingularityAtClearing { t_cross, .. } => *t_cross,
        _ => res.critical.t_cl,
    };
    clearing_blocks_at(sc, t, p, cfg)
}

fn crossing_blocks(stage: &dyn StageModel, pt: &Point, p: &ParamSet) -> CrossingBlocks {
    let (x, y) = (&pt.x, &pt.y);
    CrossingBlocks { c1: stage.g_x(x, y, p), c2: stage.g_p(x, y, p), v_sing: left_null_vector(&stage.g_y(x, y, p)) }
}

fn post_blocks(
    sc: &ScenarioModel,
    post: &Trajectory,
    end: usize,
    tail: TailExtrapolation,
    d2_at: &Point,
    p: &ParamSet,
    cfg: &CctConfig,
) -> Result<PostBlocks> {
    let stop = match tail {
        TailExtrapolation::Replay => post.samples.len() - 1,
        _ => end,
    };
    let sens = integrate_variational(sc.post.as_ref(), post, p, &cfg.integrator, Some(stop))?;
    let last = sens.last().expect("nonempty");
    let (d1, d3) = match (tail, sens.len()) {
        (TailExtrapolation::Linear, k) if k >= 2 && last.t < post.duration() => {
            let prev = &sens[k - 2];
            let s = (post.duration() - last.t) / (last.t - prev.t);
            (&last.phi_x + (&last.phi_x - &prev.phi_x) * s, &last.phi_p + (&last.phi_p - &prev.phi_p) * s)
        }
        _ => (last.phi_x.clone(), last.phi_p.clone()),
    };
    Ok(PostBlocks { d1, d2: sc.post.f(&d2_at.x, &d2_at.y, p), d3, t_trunc: sens[end.min(sens.len() - 1)].t })
}

fn row(v: &Vector) -> Matrix {
    Matrix::from_row_slice(1, v.len(), v.as_slice())
}

fn endpoint_blocks(stage: &dyn StageModel, pt: &Point, p: &ParamSet, kind: PostSingularKind) -> Result<EndpointBlocks> {
    let (x, y) = (&pt.x, &pt.y);
    let dg = delta_gradient(stage, pt, p)?;
    let (g1, g2, g3, kappa_row) = match kind {
        PostSingularKind::SemiSaddle => {
            let lg = indicator_gradient(stage, pt, p)?;
            (row(&lg.dx), row(&lg.dy), lg.dp, None)
        }
        PostSingularKind::TransverseSaddle => {
            let kg = kappa_gradient(stage, pt, p)?;
            let n = stage.n();
            let m = stage.m();
            let (gx, gy) = (stage.g_x(x, y, p), stage.g_y(x, y, p));
            // κ component maximizing the smallest singular value of [g; Δ; κ_i]'
            let best = (0..m)
                .map(|i| {
                    let mut mat = Matrix::zeros(m + 2, n + m);
                    mat.view_mut((0, 0), (m, n)).copy_from(&gx);
                    mat.view_mut((0, n), (m, m)).copy_from(&gy);
                    mat.view_mut((m, 0), (1, n)).copy_from(&row(&dg.dx));
                    mat.view_mut((m, n), (1, m)).copy_from(&row(&dg.dy));
                    mat.view_mut((m + 1, 0), (1, n)).copy_from(&kg.dx.row(i));
                    mat.view_mut((m + 1, n), (1, m)).copy_from(&kg.dy.row(i));
                    (i, smallest_singular_value(&mat))
                })
                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
                .0;
            (kg.dx.rows(best, 1).into_owned(), kg.dy.rows(best, 1).into_owned(), kg.dp[best], Some(best))
        }
    };
    Ok(EndpointBlocks {
        e1: row(&dg.dx),
        e2: row(&dg.dy),
        e3: dg.dp,
        f1: stage.g_x(x, y, p),
        f2: stage.g_y(x, y, p),
        f3: stage.g_p(x, y, p),
        g1,
        g2,
        g3,
        kappa_row,
    })
}

/// All blocks required by the formula matching `res.mechanism`.
pub fn assemble(sc: &ScenarioModel, res: &CctResult, p: &ParamSet, cfg: &CctConfig) -> Result<SensitivityAssembly> {
    let clearing = clearing_state_sensitivity(sc, res, p, cfg)?;
    let post_stage = sc.post.as_ref();
    let mut asm = SensitivityAssembly { clearing: Some(clearing), ..Default::default() };
    match &res.mechanism {
        Mechanism::SingularityAtClearing { crossing, .. } => {
            asm.crossing = Some(crossing_blocks(post_stage, crossing, p));
        }
        Mechanism::PostFaultSemiSaddle { endpoint, .. } | Mechanism::PostFaultTransverseSaddle { endpoint, .. } => {
            let post = res.critical.post.as_ref().ok_or(Error::MissingBlocks("post-fault trajectory"))?;
            let t_stop = cfg.truncation * post.duration();
            let end = post.samples.iter().rposition(|s| s.t <= t_stop).unwrap_or(0);
            asm.post = Some(post_blocks(sc, post, end, cfg.tail, endpoint, p, cfg)?);
            let kind = match res.mechanism {
                Mechanism::PostFaultSemiSaddle { .. } => PostSingularKind::SemiSaddle,
                _ => PostSingularKind::TransverseSaddle,
            };
            asm.endpoint = Some(endpoint_blocks(post_stage, endpoint, p, kind)?);
        }
        Mechanism::LossOfSynchronism { cuep } => {
            let post = res.critical.post.as_ref().ok_or(Error::MissingBlocks("post-fault trajectory"))?;
            let fnorm = |s: &crate::integrator::Sample| post_stage.f(&s.x, &s.y, p).norm();
            let end = post.samples.iter().position(|s| fnorm(s) < cfg.cuep_truncation).unwrap_or_else(|| {
                post.samples
                    .iter()
                    .enumerate()
                    .min_by(|a, b| fnorm(a.1).total_cmp(&fnorm(b.1)))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            });
            asm.post = Some(post_blocks(sc, post, end, TailExtrapolation::None, &cuep.location, p, cfg)?);
            asm.cuep = Some(CuepBlocks {
                h1: equilibrium_location_sensitivity(post_stage, &cuep.location, p)?,
                v_cu: cuep.v_cu.clone().ok_or(Error::MissingBlocks("v_cu"))?,
            });
        }
    }
    Ok(asm)
}

/// Crossing form: `−vᵀ(C₂ + C₁(B₁A₁ + B₃)) / (vᵀ C₁ B₂)`.
pub fn sens_singularity_at_clearing(asm: &SensitivityAssembly) -> Result<FormulaValue> {
    let cl = asm.clearing.as_ref().ok_or(Error::MissingBlocks("A1/B1/B2/B3"))?;
    let cr = asm.crossing.as_ref().ok_or(Error::MissingBlocks("C1/C2/v_sing"))?;
    let base = &cl.b1 * &cl.a1 + &cl.b3;
    let num = cr.v_sing.dot(&(&cr.c2 + &cr.c1 * base));
    let den = cr.v_sing.dot(&(&cr.c1 * &cl.b2));
    if den.abs() < 1e-10 {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(FormulaValue { dcct_dp: -num / den, cond: den.abs() / cr.v_sing.norm() })
}

/// Endpoint form: solves for `[Δt_cl, Δt_end, Δy_end]` and returns `Δt_cl`.
pub fn sens_post_fault_singularity(asm: &SensitivityAssembly, kind: PostSingularKind) -> Result<FormulaValue> {
    let cl = asm.clearing.as_ref().ok_or(Error::MissingBlocks("A1/B1/B2/B3"))?;
    let d = asm.post.as_ref().ok_or(Error::MissingBlocks("D1/D2/D3"))?;
    let e = asm.endpoint.as_ref().ok_or(Error::MissingBlocks("E/F/G"))?;
    if (kind == PostSingularKind::SemiSaddle) != e.kappa_row.is_none() {
        return Err(Error::MissingBlocks("G blocks built for the other endpoint kind"));
    }
    let m = e.f2.nrows();
    let base = &d.d3 + &d.d1 * (&cl.b1 * &cl.a1 + &cl.b3);
    let d1b2 = &d.d1 * &cl.b2;
    let mut mat = Matrix::zeros(m + 2, m + 2);
    let mut rhs = Vector::zeros(m + 2);
    let mut fill = |r: usize, x1: &Matrix, x2: &Matrix, x3: &Vector| {
        let rows = x1.nrows();
        mat.view_mut((r, 0), (rows, 1)).copy_from(&(x1 * &d1b2));
        mat.view_mut((r, 1), (rows, 1)).copy_from(&(x1 * &d.d2));
        mat.view_mut((r, 2), (rows, m)).copy_from(x2);
        rhs.rows_mut(r, rows).copy_from(&-(x3 + x1 * &base));
    };
    fill(0, &e.e1, &e.e2, &Vector::from_element(1, e.e3));
    fill(1, &e.f1, &e.f2, &e.f3);
    fill(m + 1, &e.g1, &e.g2, &Vector::from_element(1, e.g3));
    let cond = smallest_singular_value(&mat);
    if cond < 1e-10 {
        return Err(Error::IllConditioned(cond));
    }
    let sol = solve_vec(&mat, &rhs).ok_or(Error::IllConditioned(cond))?;
    Ok(FormulaValue { dcct_dp: sol[0], cond })
}

/// Stable-manifold form, signed by differentiating the stable-manifold
/// hyperplane: `+vᵀ(H₁ − (D₃ + D₁(B₁A₁ + B₃))) / (vᵀ D₁ B₂)`.
pub fn sens_cuep(asm: &SensitivityAssembly) -> Result<FormulaValue> {
    let cl = asm.clearing.as_ref().ok_or(Error::MissingBlocks("A1/B1/B2/B3"))?;
    let d = asm.post.as_ref().ok_or(Error::MissingBlocks("D1/D2/D3"))?;
    let cu = asm.cuep.as_ref().ok_or(Error::MissingBlocks("H1/v_cu"))?;
    let base = &d.d3 + &d.d1 * (&cl.b1 * &cl.a1 + &cl.b3);
    let num = cu.v_cu.dot(&(&cu.h1 - base));
    let den = cu.v_cu.dot(&(&d.d1 * &cl.b2));
    if den.abs() < 1e-10 {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(FormulaValue { dcct_dp: num / den, cond: den.abs() / cu.v_cu.norm() })
}

/// Formula matching the mechanism of `res`.
pub fn evaluate_formula(res: &CctResult, asm: &SensitivityAssembly) -> Result<FormulaValue> {
    match res.mechanism {
        Mechanism::SingularityAtClearing { .. } => sens_singularity_at_clearing(asm),
        Mechanism::PostFaultSemiSaddle { .. } => sens_post_fault_singularity(asm, PostSingularKind::SemiSaddle),
        Mechanism::PostFaultTransverseSaddle { .. } => {
            sens_post_fault_singularity(asm, PostSingularKind::TransverseSaddle)
        }
        Mechanism::LossOfSynchronism { .. } => sens_cuep(asm),
    }
}

pub fn cct_sensitivity(sc: &ScenarioModel, res: &CctResult, p: &ParamSet, cfg: &CctConfig) -> Result<FormulaValue> {
    let asm = assemble(sc, res, p, cfg)?;
    evaluate_formula(res, &asm)
}

/// Central difference of the CCT in the active parameter, each CCT bisected
/// to `cfg.oracle_tol`. When `center` (a nearby CCT) is given, the bisection
/// starts from a narrow bracket around it and widens to `cfg.bracket` if
/// that bracket turns out invalid.
pub fn fd_oracle(sc: &ScenarioModel, p: &ParamSet, cfg: &CctConfig, center: Option<f64>) -> Result<f64> {
    let v = p.active_value()?;
    let d = cfg.fd_delta;
    let cct_at = |q: f64| -> Result<f64> {
        let pq = p.with_active_value(q)?;
        if let Some(c) = center {
            let w = 0.05_f64.max(20.0 * d * c.abs());
            let narrow = ((c - w).max(cfg.bracket.0), c + w);
            match bisect_cct(sc, &pq, cfg, narrow, cfg.oracle_tol) {
                Ok(r) => return Ok(r.cct),
                Err(Error::BracketInvalid(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(bisect_cct(sc, &pq, cfg, cfg.bracket, cfg.oracle_tol)?.cct)
    };
    Ok((cct_at(v + d)? - cct_at(v - d)?) / (2.0 * d))
}

/// CCT, mechanism and formula sensitivity in one call. The CCT is available
/// even when the mechanism cannot be classified.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub cct: f64,
    pub result: Result<CctResult>,
    pub assembly: Option<SensitivityAssembly>,
    pub formula: Result<FormulaValue>,
}

pub fn analyze(sc: &ScenarioModel, p: &ParamSet, cfg: &CctConfig) -> Result<Analysis> {
    let bracket = bisect_cct(sc, p, cfg, cfg.bracket, cfg.cct_tol)?;
    let cct = bracket.cct;
    let result = classify_bracket(sc, bracket, p, cfg);
    let (assembly, formula) = match &result {
        Ok(res) => match assemble(sc, res, p, cfg) {
            Ok(asm) => {
                let f = evaluate_formula(res, &asm);
                (Some(asm), f)
            }
            Err(e) => (None, Err(e)),
        },
        Err(e) => (None, Err(e.clone())),
    };
    Ok(Analysis { cct, result, assembly, formula })
}
