//! Variational solutions against central differences of the flow, over both
//! stages of every built-in scenario.

use cctsens::cct::{operating_points, simulate_scenario, CctConfig};
use cctsens::systems::{entry, SystemId};
use cctsens::trajsens::flow_fd_mismatch;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-3;
/// The tail before a singular termination is excluded.
const COMPARED_SHARE: f64 = 0.98;

/// Clearing times: one stable and one past the CCT for each system.
const CASES: [(SystemId, f64); 6] = [
    (SystemId::Example75, 3.0),
    (SystemId::Example75, 5.2),
    (SystemId::SmibConst, 1.5),
    (SystemId::SmibConst, 2.0),
    (SystemId::SmibFreq, 0.5),
    (SystemId::SmibFreq, 1.05),
];

#[test]
fn variational_flow_matches_finite_differences_on_both_stages() {
    let cfg = CctConfig::default();
    for (id, t_cl) in CASES {
        let e = entry(id);
        let p = e.defaults.clone();
        let sc = e.build(&p).unwrap();
        let ops = operating_points(&sc, &p).unwrap();

        let (err, n) =
            flow_fd_mismatch(sc.fault.as_ref(), &ops.pre_sep, t_cl, &p, &cfg.integrator, FD_STEP, COMPARED_SHARE)
                .unwrap();
        assert!(n > 0 && err <= REL_TOL, "{id} fault stage t_cl={t_cl}: mismatch {err:e} over {n} comparisons");

        // post stage from the tracked post-fault solution at clearing
        let run = simulate_scenario(&sc, t_cl, &p, &cfg).unwrap();
        let start = run.clearing_point().unwrap_or_else(|| panic!("{id} t_cl={t_cl}: {:?}", run.verdict));
        let (err, n) =
            flow_fd_mismatch(sc.post.as_ref(), &start, 8.0, &p, &cfg.integrator, FD_STEP, COMPARED_SHARE).unwrap();
        assert!(n > 0 && err <= REL_TOL, "{id} post stage t_cl={t_cl}: mismatch {err:e} over {n} comparisons");
    }
}

#[test]
fn unstable_post_stage_ends_on_the_singular_surface() {
    let cfg = CctConfig::default();
    let e = entry(SystemId::SmibConst);
    let sc = e.build(&e.defaults).unwrap();
    let run = simulate_scenario(&sc, 2.0, &e.defaults, &cfg).unwrap();
    assert_eq!(run.post.unwrap().termination.label(), "singularity");
}
