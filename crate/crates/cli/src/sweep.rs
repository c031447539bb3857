//! Parameter sweeps: CCT, mechanism, formula sensitivity and the
//! finite-difference oracle at every grid value.

use std::fmt::Write as _;

use cctsens::cct::{analyze, fd_oracle};
use rayon::prelude::*;

use crate::config::{RunConfig, SweepConfig};
use crate::error::{exit, CliError, CliResult};
use crate::output::{num, opt};

pub const CSV_HEADER: &str = "p,cct,mechanism,dcct_dp,dcct_dp_fd,rel_err,cond,status,tan_p0,tan_cct0,tan_p1,tan_cct1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointStatus {
    Ok,
    ExceedsTolerance,
    Unclassifiable,
    FormulaFailed,
    OracleFailed,
    CctFailed,
}

impl PointStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::ExceedsTolerance => "exceeds_tolerance",
            PointStatus::Unclassifiable => "unclassifiable",
            PointStatus::FormulaFailed => "formula_failed",
            PointStatus::OracleFailed => "oracle_failed",
            PointStatus::CctFailed => "cct_failed",
        }
    }

    fn is_numerical_failure(self) -> bool {
        !matches!(self, PointStatus::Ok | PointStatus::ExceedsTolerance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p: f64,
    pub cct: Option<f64>,
    pub mechanism: Option<&'static str>,
    pub dcct_dp: Option<f64>,
    pub dcct_dp_fd: Option<f64>,
    pub rel_err: Option<f64>,
    pub cond: Option<f64>,
    pub status: PointStatus,
    /// Next to a mechanism transition, where failures are excused.
    pub near_transition: bool,
    /// First error met at this point, if any.
    pub message: Option<String>,
}

impl SweepRow {
    pub fn status_label(&self) -> String {
        match (self.near_transition, self.status) {
            (true, PointStatus::Ok) | (false, _) => self.status.as_str().to_string(),
            (true, s) => format!("transition:{}", s.as_str()),
        }
    }

    /// Whether this row counts against the sweep's exit code.
    pub fn is_failure(&self) -> bool {
        !self.near_transition && self.status != PointStatus::Ok
    }
}

/// Mechanism change between consecutive classified grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: &'static str,
    pub to: &'static str,
    /// Index of the last point with the old mechanism.
    pub last_before: usize,
    /// Index of the first point with the new mechanism.
    pub first_after: usize,
    /// Parameter value of the first point with the new mechanism.
    pub location: f64,
    /// Formula slopes at `last_before` and `first_after`.
    pub left_slope: Option<f64>,
    pub right_slope: Option<f64>,
}

impl Transition {
    /// `|left − right| / max(|left|, |right|)`.
    pub fn slope_jump(&self) -> Option<f64> {
        let (l, r) = (self.left_slope?, self.right_slope?);
        Some((l - r).abs() / l.abs().max(r.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    pub transitions: Vec<Transition>,
}

impl SweepReport {
    pub fn exit_code(&self) -> i32 {
        let failed: Vec<&SweepRow> = self.rows.iter().filter(|r| r.is_failure()).collect();
        if failed.iter().any(|r| r.status.is_numerical_failure()) {
            exit::NUMERICAL
        } else if !failed.is_empty() {
            exit::TOLERANCE
        } else {
            exit::SUCCESS
        }
    }

    pub fn to_csv(&self) -> String {
        let h = 0.5 * (self.config.to - self.config.from) / (self.config.steps - 1) as f64;
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let tangent = match (r.cct, r.dcct_dp) {
                (Some(c), Some(s)) => [r.p - h, c - s * h, r.p + h, c + s * h].map(num).join(","),
                _ => ["nan"; 4].join(","),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                num(r.p),
                opt(r.cct),
                r.mechanism.unwrap_or("none"),
                opt(r.dcct_dp),
                opt(r.dcct_dp_fd),
                opt(r.rel_err),
                opt(r.cond),
                r.status_label(),
                tangent
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "sweep {} from {} to {} ({} points), tolerance {}",
            c.parameter,
            num(c.from),
            num(c.to),
            c.steps,
            c.tolerance
        );
        let ok = self.rows.iter().filter(|r| r.status == PointStatus::Ok).count();
        let _ = writeln!(s, "points within tolerance: {ok}/{}", self.rows.len());
        for t in &self.transitions {
            let _ = writeln!(
                s,
                "transition {} -> {} at {} = {} (between {} and {}); slopes {} | {}; relative jump {}",
                t.from,
                t.to,
                c.parameter,
                num(t.location),
                num(self.rows[t.last_before].p),
                num(t.location),
                opt(t.left_slope),
                opt(t.right_slope),
                opt(t.slope_jump())
            );
        }
        for r in self.rows.iter().filter(|r| r.message.is_some()) {
            let _ = writeln!(s, "{} = {}: {}", c.parameter, num(r.p), r.message.as_deref().unwrap_or_default());
        }
        let _ = writeln!(s, "exit code {}", self.exit_code());
        s
    }
}

/// One sweep point; never fails, errors end up in `status`.
pub fn sweep_point(cfg: &RunConfig, value: f64, tolerance: f64) -> SweepRow {
    let mut row = SweepRow {
        p: value,
        cct: None,
        mechanism: None,
        dcct_dp: None,
        dcct_dp_fd: None,
        rel_err: None,
        cond: None,
        status: PointStatus::CctFailed,
        near_transition: false,
        message: None,
    };
    let setup = || -> CliResult<_> {
        let p = cfg.params_at(value)?;
        let sc = cctsens::systems::build(cfg.system, &p)?;
        Ok((p, sc))
    };
    let (p, sc) = match setup() {
        Ok(v) => v,
        Err(e) => {
            row.message = Some(e.to_string());
            return row;
        }
    };
    let analysis = match analyze(&sc, &p, &cfg.cct) {
        Ok(a) => a,
        Err(e) => {
            row.message = Some(e.to_string());
            return row;
        }
    };
    row.cct = Some(analysis.cct);
    match &analysis.result {
        Ok(res) => row.mechanism = Some(res.mechanism.label()),
        Err(e) => {
            row.status = PointStatus::Unclassifiable;
            row.message = Some(e.to_string());
        }
    }
    match &analysis.formula {
        Ok(f) => {
            row.dcct_dp = Some(f.dcct_dp);
            row.cond = Some(f.cond);
        }
        Err(e) if row.mechanism.is_some() => {
            row.status = PointStatus::FormulaFailed;
            row.message = Some(e.to_string());
        }
        Err(_) => {}
    }
    match fd_oracle(&sc, &p, &cfg.cct, Some(analysis.cct)) {
        Ok(fd) => row.dcct_dp_fd = Some(fd),
        Err(e) => {
            if row.message.is_none() {
                row.status = PointStatus::OracleFailed;
                row.message = Some(format!("oracle: {e}"));
            }
        }
    }
    if let (Some(f), Some(fd)) = (row.dcct_dp, row.dcct_dp_fd) {
        let rel = (f - fd).abs() / fd.abs().max(1e-6);
        row.rel_err = Some(rel);
        row.status = if rel <= tolerance { PointStatus::Ok } else { PointStatus::ExceedsTolerance };
    }
    row
}

/// Transitions between consecutive classified points; unclassified points
/// in between belong to the transition.
pub fn find_transitions(rows: &[SweepRow]) -> Vec<Transition> {
    let classified: Vec<(usize, &'static str)> =
        rows.iter().enumerate().filter_map(|(i, r)| Some((i, r.mechanism?))).collect();
    classified
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| Transition {
            from: w[0].1,
            to: w[1].1,
            last_before: w[0].0,
            first_after: w[1].0,
            location: rows[w[1].0].p,
            left_slope: rows[w[0].0].dcct_dp,
            right_slope: rows[w[1].0].dcct_dp,
        })
        .collect()
}

pub fn run_sweep(cfg: &RunConfig, workers: usize) -> CliResult<SweepReport> {
    let sweep = cfg.sweep.clone().ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
    let values = sweep.values();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    // `collect` on an indexed parallel iterator keeps the grid order
    let mut rows: Vec<SweepRow> =
        pool.install(|| values.par_iter().map(|&v| sweep_point(cfg, v, sweep.tolerance)).collect());
    let transitions = find_transitions(&rows);
    for t in &transitions {
        // the grid points on either side of the mechanism change
        for r in &mut rows[t.first_after.saturating_sub(1)..=t.first_after] {
            r.near_transition = true;
        }
        // unclassified points inside the transition interval
        for r in &mut rows[t.last_before + 1..t.first_after] {
            r.near_transition = true;
        }
    }
    Ok(SweepReport { config: sweep, rows, transitions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: f64, mech: Option<&'static str>, slope: f64) -> SweepRow {
        SweepRow {
            p,
            cct: Some(1.0),
            mechanism: mech,
            dcct_dp: Some(slope),
            dcct_dp_fd: Some(slope),
            rel_err: Some(0.0),
            cond: Some(1.0),
            status: if mech.is_some() { PointStatus::Ok } else { PointStatus::Unclassifiable },
            near_transition: false,
            message: None,
        }
    }

    #[test]
    fn transitions_skip_unclassified_points() {
        let rows =
            vec![row(0.0, Some("a"), 1.0), row(0.1, None, 0.0), row(0.2, Some("b"), 2.0), row(0.3, Some("b"), 2.0)];
        let t = find_transitions(&rows);
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].last_before, t[0].first_after), (0, 2));
        assert_eq!(t[0].location, 0.2);
        assert_eq!(t[0].slope_jump(), Some(0.5));
    }

    #[test]
    fn no_transition_for_constant_mechanism() {
        let rows = vec![row(0.0, Some("a"), 1.0), row(0.1, Some("a"), 1.0)];
        assert!(find_transitions(&rows).is_empty());
    }

    #[test]
    fn exit_code_ranks_numerical_over_tolerance() {
        let cfg = SweepConfig { parameter: "p".into(), from: 0.0, to: 1.0, steps: 3, tolerance: 0.02 };
        let mut rows = vec![row(0.0, Some("a"), 1.0), row(0.5, Some("a"), 1.0), row(1.0, Some("a"), 1.0)];
        let report = |rows: Vec<SweepRow>| SweepReport { config: cfg.clone(), rows, transitions: vec![] };
        assert_eq!(report(rows.clone()).exit_code(), exit::SUCCESS);
        rows[1].status = PointStatus::ExceedsTolerance;
        assert_eq!(report(rows.clone()).exit_code(), exit::TOLERANCE);
        rows[2].status = PointStatus::FormulaFailed;
        assert_eq!(report(rows.clone()).exit_code(), exit::NUMERICAL);
        rows[1].near_transition = true;
        rows[2].near_transition = true;
        assert_eq!(report(rows.clone()).exit_code(), exit::SUCCESS);
        assert_eq!(rows[2].status_label(), "transition:formula_failed");
    }

    #[test]
    fn csv_has_stable_schema_and_tangents() {
        let cfg = SweepConfig { parameter: "p".into(), from: 0.0, to: 1.0, steps: 3, tolerance: 0.02 };
        let rows = vec![row(0.0, Some("a"), 2.0)];
        let csv = SweepReport { config: cfg, rows, transitions: vec![] }.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let cells: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[2], "a");
        assert_eq!(cells[7], "ok");
        // half-spacing 0.25, slope 2 around cct = 1
        assert_eq!(cells[8].parse::<f64>().unwrap(), -0.25);
        assert_eq!(cells[9].parse::<f64>().unwrap(), 0.5);
        assert_eq!(cells[11].parse::<f64>().unwrap(), 1.5);
    }
}
