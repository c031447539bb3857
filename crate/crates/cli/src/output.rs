//! CSV formatting and file output.

use std::fs;
use std::path::{Path, PathBuf};

pub use cctsens::integrator::fmt_sig12 as num;
use cctsens::integrator::Trajectory;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })
}

/// Writes `contents` to `dir/name` and returns the path.
pub fn write(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    Ok(path)
}

/// Optional value as a CSV cell.
pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "nan".into())
}

pub fn header(prefix: &[&str], n: usize, m: usize, suffix: &[&str]) -> String {
    let mut cols: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=m).map(|i| format!("y{i}")));
    cols.extend(suffix.iter().map(|s| s.to_string()));
    cols.join(",")
}

/// Fault-on and post-fault samples in one table on a common time axis
/// (the post-fault stage starts at `t_cl`).
pub fn stages_csv(fault: &Trajectory, post: Option<&Trajectory>, t_cl: f64) -> String {
    let s0 = &fault.samples[0];
    let mut out = header(&["stage", "t"], s0.x.len(), s0.y.len(), &["delta"]);
    out.push('\n');
    let mut emit = |stage: &str, tr: &Trajectory, t0: f64| {
        for s in &tr.samples {
            let mut row = vec![stage.to_string(), num(t0 + s.t)];
            row.extend(s.x.iter().chain(s.y.iter()).map(|v| num(*v)));
            row.push(num(s.delta_active));
            out.push_str(&row.join(","));
            out.push('\n');
        }
    };
    emit("fault", fault, 0.0);
    if let Some(post) = post {
        emit("post", post, t_cl);
    }
    out
}
