//! Phase-portrait bundle: singular-surface trace, elements and grid.

use cctsens::model::Point;
use cctsens_cli::portrait::{run_portrait, trace_delta_residual, write_portrait};
use cctsens_cli::RunConfig;

fn nearest(trace: &[Point], target: &[f64]) -> f64 {
    trace
        .iter()
        .map(|pt| pt.stacked().iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn example75_trace_passes_through_the_surface_elements() {
    let cfg = RunConfig::parse("[scenario]\nsystem = example75\n[portrait]\nx1 = 0, 0, 0\ncritical = false\n").unwrap();
    let data = run_portrait(&cfg).unwrap();
    assert_eq!(data.trace.len(), 301);
    assert!(nearest(&data.trace, &[0.0, 0.0, 0.0]) <= 1e-6);
    assert!(nearest(&data.trace, &[-3.0, -2.0, 1.0]) <= 1e-6);
    let sc = cfg.build().unwrap();
    assert!(trace_delta_residual(sc.post.as_ref(), &data.trace, &cfg.params) <= 1e-8);
    let kinds: Vec<String> = data.elements.iter().map(|e| e.element.kind.to_string()).collect();
    assert_eq!(kinds, ["sep", "pseudo_transverse_saddle", "semi_saddle"]);
}

#[test]
fn smib_trace_follows_the_closed_form_fold() {
    let cfg = RunConfig::parse(
        "[scenario]\nsystem = smib_const\n[params]\nPm = 0.3\n[portrait]\nx1 = 0, 0, 0\ncritical = false\n",
    )
    .unwrap();
    let data = run_portrait(&cfg).unwrap();
    assert_eq!(data.trace.len(), 151);
    // ∂g/∂y = 0 with E = 1, X = 0.5
    let worst = data.trace.iter().map(|pt| (pt.y[0] - 0.5 * pt.x[0].cos()).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst:e}");
}

#[test]
fn empty_grid_writes_only_trace_and_elements() {
    let cfg =
        RunConfig::parse("[scenario]\nsystem = smib_const\n[portrait]\nx1 = -1, 1, 0\ncritical = false\n").unwrap();
    let data = run_portrait(&cfg).unwrap();
    assert!(data.grid.is_empty() && data.skipped == 0);
    let dir = tempfile::tempdir().unwrap();
    let files = write_portrait(&data, &cfg.build().unwrap(), dir.path()).unwrap();
    let mut names: Vec<String> = files.iter().map(|f| f.file_name().unwrap().to_string_lossy().to_string()).collect();
    names.sort();
    assert_eq!(names, ["portrait_elements.csv", "portrait_summary.txt", "portrait_trace.csv"]);
}

#[test]
fn grid_and_critical_trajectory_are_exported() {
    let cfg =
        RunConfig::parse("[scenario]\nsystem = smib_const\n[portrait]\nx1 = 0, 1, 3\nx2 = -0.5, 0.5, 3\n").unwrap();
    let data = run_portrait(&cfg).unwrap();
    assert_eq!(data.grid.len() + data.skipped, 9);
    assert!(data.grid.len() >= 6);
    let crit = data.critical.as_ref().unwrap();
    assert_eq!(crit.mechanism.label(), "post_fault_transverse_saddle");
    assert!(data
        .elements
        .iter()
        .any(|e| e.source == "critical" || e.element.kind.to_string() == "pseudo_transverse_saddle"));
    let csv = data.grid_csv().unwrap();
    assert_eq!(csv.lines().next(), Some("seed,t,x1,x2,y1,delta"));
}
