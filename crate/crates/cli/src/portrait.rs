//! Phase-portrait datasets: grid trajectories, the singular-surface trace,
//! critical elements and the critical trajectory.

use std::fmt::Write as _;
use std::path::PathBuf;

use cctsens::cct::{compute_cct, operating_points, CctResult, Mechanism};
use cctsens::critical::{
    classify_equilibrium, classify_pseudo_ep, classify_semi_singular, find_equilibrium, find_pseudo_ep,
    find_semi_singular, singular_point_at, CriticalElement,
};
use cctsens::integrator::{simulate, solve_algebraic, SimOptions, Trajectory};
use cctsens::model::{eval_delta, ParamSet, Point, ScenarioModel, StageModel};

use crate::config::{RunConfig, TraceCoord};
use crate::error::CliResult;
use crate::output::{self, header, num, stages_csv};

/// Elements closer than this are reported once.
const DEDUP_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GridTrajectory {
    pub seed: usize,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone)]
pub struct LabeledElement {
    /// `search` for guesses, `critical` for the mechanism's element.
    pub source: &'static str,
    pub element: CriticalElement,
}

#[derive(Debug, Clone)]
pub struct PortraitData {
    pub grid: Vec<GridTrajectory>,
    /// Grid seeds whose algebraic solve or integration failed.
    pub skipped: usize,
    pub trace: Vec<Point>,
    pub elements: Vec<LabeledElement>,
    pub critical: Option<CctResult>,
}

impl PortraitData {
    pub fn grid_csv(&self) -> Option<String> {
        let first = self.grid.first()?;
        let s0 = &first.trajectory.samples[0];
        let mut out = header(&["seed", "t"], s0.x.len(), s0.y.len(), &["delta"]);
        out.push('\n');
        for g in &self.grid {
            for s in &g.trajectory.samples {
                let mut row = vec![g.seed.to_string(), num(s.t)];
                row.extend(s.x.iter().chain(s.y.iter()).map(|v| num(*v)));
                row.push(num(s.delta_active));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        Some(out)
    }

    pub fn trace_csv(&self, n: usize, m: usize) -> String {
        let mut out = header(&[], n, m, &[]);
        out.push('\n');
        for pt in &self.trace {
            let row: Vec<String> = pt.x.iter().chain(pt.y.iter()).map(|v| num(*v)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn elements_csv(&self, n: usize, m: usize) -> String {
        let mut out = header(&["kind", "source"], n, m, &["eigenvalues"]);
        out.push('\n');
        for e in &self.elements {
            let loc = &e.element.location;
            let mut row = vec![e.element.kind.to_string(), e.source.to_string()];
            row.extend(loc.x.iter().chain(loc.y.iter()).map(|v| num(*v)));
            let eigs: Vec<String> = e
                .element
                .eigenvalues
                .iter()
                .map(|z| {
                    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
                    format!("{}{sign}{}i", num(z.re), num(z.im.abs()))
                })
                .collect();
            row.push(eigs.join(" "));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "grid trajectories: {} (skipped {})", self.grid.len(), self.skipped);
        let _ = writeln!(s, "singular-surface trace points: {}", self.trace.len());
        for e in &self.elements {
            let loc = e.element.location.stacked();
            let coords: Vec<String> = loc.iter().map(|v| num(*v)).collect();
            let _ = writeln!(s, "element {} ({}) at ({})", e.element.kind, e.source, coords.join(", "));
        }
        if let Some(c) = &self.critical {
            let _ = writeln!(s, "critical trajectory: cct {} mechanism {}", num(c.cct), c.mechanism);
        }
        s
    }
}

/// Post-fault trajectories from the `x1 × x2` grid, `y` solved at each seed.
fn grid_trajectories(
    sc: &ScenarioModel,
    cfg: &RunConfig,
    y_guess: &Point,
    p: &ParamSet,
) -> (Vec<GridTrajectory>, usize) {
    let pc = &cfg.portrait;
    let icfg = &cfg.cct.integrator;
    let opts = SimOptions { horizon: Some(pc.horizon), ..Default::default() };
    let mut grid = Vec::new();
    let mut skipped = 0;
    let mut seed = 0;
    for &a in &pc.x1.values() {
        for &b in &pc.x2.values() {
            let mut x = y_guess.x.clone();
            x[0] = a;
            x[1] = b;
            let run = solve_algebraic(sc.post.as_ref(), &x, &y_guess.y, p, icfg)
                .and_then(|y| simulate(sc.post.as_ref(), &Point::new(x, y), p, icfg, &opts));
            match run {
                Ok(trajectory) => grid.push(GridTrajectory { seed, trajectory }),
                Err(_) => skipped += 1,
            }
            seed += 1;
        }
    }
    (grid, skipped)
}

/// Continuation along `{g = 0, Δ = 0}` in one coordinate, each point
/// seeded by the previous one. Points where Newton fails are left out.
pub fn trace_singular_surface(stage: &dyn StageModel, cfg: &RunConfig, p: &ParamSet) -> Vec<Point> {
    let pc = &cfg.portrait;
    let coord = match pc.trace_coord {
        TraceCoord::X(i) => i,
        TraceCoord::Y(i) => stage.n() + i,
    };
    let mut guess = pc.trace_seed.clone();
    let mut out = Vec::new();
    for v in pc.trace.values() {
        if let Ok(pt) = singular_point_at(stage, &guess, p, coord, v) {
            guess = pt.clone();
            out.push(pt);
        }
    }
    out
}

fn push_unique(list: &mut Vec<LabeledElement>, source: &'static str, element: CriticalElement) {
    if !list
        .iter()
        .any(|e| e.element.kind == element.kind && e.element.location.distance(&element.location) < DEDUP_DISTANCE)
    {
        list.push(LabeledElement { source, element });
    }
}

/// Equilibria, pseudo equilibria and semi-singular points reachable from the
/// configured guesses, plus the post-fault SEP.
pub fn locate_elements(sc: &ScenarioModel, cfg: &RunConfig, p: &ParamSet) -> CliResult<Vec<LabeledElement>> {
    let ops = operating_points(sc, p)?;
    let post = sc.post.as_ref();
    let mut list = Vec::new();
    push_unique(&mut list, "sep", classify_equilibrium(post, &ops.post_sep, p)?);
    for g in &cfg.portrait.guesses {
        if let Ok(el) = find_equilibrium(post, g, p).and_then(|e| classify_equilibrium(post, &e, p)) {
            push_unique(&mut list, "search", el);
        }
        if let Ok(el) = find_pseudo_ep(post, g, p).and_then(|e| classify_pseudo_ep(post, &e, p, ops.region_sign)) {
            push_unique(&mut list, "search", el);
        }
        if let Ok(el) =
            find_semi_singular(post, g, p).and_then(|e| classify_semi_singular(post, &e, p, ops.region_sign))
        {
            push_unique(&mut list, "search", el);
        }
    }
    Ok(list)
}

fn mechanism_element(m: &Mechanism) -> Option<&CriticalElement> {
    match m {
        Mechanism::LossOfSynchronism { cuep } => Some(cuep),
        Mechanism::PostFaultSemiSaddle { element, .. } | Mechanism::PostFaultTransverseSaddle { element, .. } => {
            Some(element)
        }
        Mechanism::SingularityAtClearing { .. } => None,
    }
}

pub fn run_portrait(cfg: &RunConfig) -> CliResult<PortraitData> {
    let p = cfg.params.clone();
    let sc = cfg.build()?;
    let ops = operating_points(&sc, &p)?;
    let (grid, skipped) = grid_trajectories(&sc, cfg, &ops.post_sep, &p);
    let trace = trace_singular_surface(sc.post.as_ref(), cfg, &p);
    let mut elements = locate_elements(&sc, cfg, &p)?;
    let critical = if cfg.portrait.critical { Some(compute_cct(&sc, &p, &cfg.cct)?) } else { None };
    if let Some(el) = critical.as_ref().and_then(|c| mechanism_element(&c.mechanism)) {
        push_unique(&mut elements, "critical", el.clone());
    }
    Ok(PortraitData { grid, skipped, trace, elements, critical })
}

/// Writes the bundle; files for empty parts are left out.
pub fn write_portrait(data: &PortraitData, sc: &ScenarioModel, dir: &std::path::Path) -> CliResult<Vec<PathBuf>> {
    let (n, m) = (sc.post.n(), sc.post.m());
    let mut files = Vec::new();
    if let Some(csv) = data.grid_csv() {
        files.push(output::write(dir, "portrait_grid.csv", &csv)?);
    }
    files.push(output::write(dir, "portrait_trace.csv", &data.trace_csv(n, m))?);
    files.push(output::write(dir, "portrait_elements.csv", &data.elements_csv(n, m))?);
    if let Some(c) = &data.critical {
        let csv = stages_csv(&c.critical.fault, c.critical.post.as_ref(), c.critical.t_cl);
        files.push(output::write(dir, "portrait_critical.csv", &csv)?);
    }
    files.push(output::write(dir, "portrait_summary.txt", &data.summary())?);
    Ok(files)
}

/// `|Δ|` at every traced point; a check that the trace stays on the surface.
pub fn trace_delta_residual(stage: &dyn StageModel, trace: &[Point], p: &ParamSet) -> f64 {
    trace.iter().filter_map(|pt| eval_delta(stage, pt, p).ok()).map(f64::abs).fold(0.0, f64::max)
}
