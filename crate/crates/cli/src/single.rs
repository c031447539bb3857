//! Single scenario runs: trajectory export and the stability verdict.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cctsens::cct::{compute_cct, simulate_scenario, ScenarioRun};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::{self, num, stages_csv};

#[derive(Debug, Clone)]
pub struct SingleReport {
    pub run: ScenarioRun,
    /// CCT computed when no clearing time was given.
    pub cct: Option<f64>,
}

impl SingleReport {
    pub fn summary(&self) -> String {
        let r = &self.run;
        let mut s = String::new();
        if let Some(c) = self.cct {
            let _ = writeln!(s, "cct {}", num(c));
        }
        let _ = writeln!(s, "t_cl {}", num(r.t_cl));
        let _ = writeln!(s, "fault termination {}", r.fault.termination.label());
        if let Some(post) = &r.post {
            let _ = writeln!(s, "post termination {} after {}", post.termination.label(), num(post.duration()));
        }
        let _ = writeln!(s, "verdict {}", r.verdict.label());
        s
    }

    pub fn write(&self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        let r = &self.run;
        let mut files = vec![output::write(dir, "trajectory_fault.csv", &r.fault.to_csv())?];
        if let Some(post) = &r.post {
            files.push(output::write(dir, "trajectory_post.csv", &post.to_csv())?);
        }
        files.push(output::write(dir, "trajectory.csv", &stages_csv(&r.fault, r.post.as_ref(), r.t_cl))?);
        files.push(output::write(dir, "verdict.txt", &self.summary())?);
        Ok(files)
    }
}

/// Runs the scenario at `t_cl`, or at the smallest unstable clearing time
/// of the bisection when none is given.
pub fn run_single(cfg: &RunConfig, t_cl: Option<f64>) -> CliResult<SingleReport> {
    let sc = cfg.build()?;
    match t_cl.or(cfg.t_cl) {
        Some(t) => Ok(SingleReport { run: simulate_scenario(&sc, t, &cfg.params, &cfg.cct)?, cct: None }),
        None => {
            let res = compute_cct(&sc, &cfg.params, &cfg.cct)?;
            Ok(SingleReport { cct: Some(res.cct), run: res.critical })
        }
    }
}
