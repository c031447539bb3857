//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs the shipped sweep configurations end to end.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cctsens::cct::{
    analyze, judge_stability, operating_points, sens_cuep, sens_singularity_at_clearing, simulate_scenario, CctConfig,
};
use cctsens::critical::{
    classify_equilibrium, classify_pseudo_ep, classify_semi_singular, find_equilibrium, find_pseudo_ep,
    find_semi_singular, ElementKind, PseudoClass, SemiClass,
};
use cctsens::linalg::Vector;
use cctsens::model::{eval_delta, eval_kappa, ParamSet, Point, ScenarioModel};
use cctsens::systems::{build_example75, build_smib, entry, example75_defaults, smib_defaults, LoadModel, SystemId};
use cctsens::trajsens::flow_fd_mismatch;
use cctsens_cli::config::default_cct;
use cctsens_cli::portrait::run_portrait;
use cctsens_cli::single::run_single;
use cctsens_cli::sweep::{run_sweep, sweep_point, SweepReport, SweepRow};
use cctsens_cli::RunConfig;

const SENS_TOL: f64 = 0.02;

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn shipped(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn rel_errors_ok<'a>(rows: impl Iterator<Item = &'a SweepRow>) -> (bool, f64) {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for r in rows {
        match r.rel_err {
            Some(e) => {
                worst = worst.max(e);
                ok &= e <= SENS_TOL;
            }
            None => ok = false,
        }
    }
    (ok, worst)
}

/// Rows at indices `k − 1` and `k`, `k` the first point of the new mechanism.
fn away_from_transition(rep: &SweepReport) -> impl Iterator<Item = &SweepRow> {
    let excused: Vec<usize> = rep.transitions.iter().flat_map(|t| [t.first_after - 1, t.first_after]).collect();
    rep.rows.iter().enumerate().filter(move |(i, _)| !excused.contains(i)).map(|(_, r)| r)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let rep = run_sweep(&shipped("example75_sweep.ini"), workers()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let (ok, worst) = rel_errors_ok(rep.rows.iter());
    let semi = rep.rows.iter().all(|r| r.mechanism == Some("post_fault_semi_saddle"));
    outcome(
        ok && semi && rep.rows.len() == 9 && secs <= 300.0,
        format!("{} points, all semi-saddle: {semi}, max rel err {worst:.2e}, runtime {secs:.0} s", rep.rows.len()),
    )
}

fn criterion_2() -> Outcome {
    let rep = run_sweep(&shipped("smib_pm_sweep.ini"), workers()).unwrap();
    let ccts: Vec<Option<f64>> = rep.rows.iter().map(|r| r.cct).collect();
    let decreasing = ccts.iter().all(Option::is_some) && ccts.windows(2).all(|w| w[1] < w[0]);
    let t = &rep.transitions;
    let located = t.len() == 1 && t[0].location > 0.40 && t[0].location <= 0.45 + 1e-12;
    let (ok, worst) = rel_errors_ok(away_from_transition(&rep));
    let at = t.first().map(|t| format!("{:.2}", t.location)).unwrap_or_else(|| "none".into());
    outcome(
        decreasing && located && ok,
        format!("(a) strictly decreasing: {decreasing}; (b) {} transition(s), at Pm = {at}; (c) max rel err away from it {worst:.2e}", t.len()),
    )
}

/// Bisects the mechanism change between two grid values (informational).
fn refine_transition(cfg: &RunConfig, mut lo: f64, mut hi: f64, left: &str) -> f64 {
    while hi - lo > 2e-3 {
        let mid = 0.5 * (lo + hi);
        let p = cfg.params_at(mid).unwrap();
        let sc = cfg.build().unwrap();
        let mech = analyze(&sc, &p, &cfg.cct).ok().and_then(|a| a.result.ok().map(|r| r.mechanism.label()));
        if mech == Some(left) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_3() -> Outcome {
    let cfg = shipped("smib_freq_m_sweep.ini");
    let rep = run_sweep(&cfg, workers()).unwrap();
    let t = &rep.transitions;
    if t.len() != 1 {
        return outcome(false, format!("{} transitions", t.len()));
    }
    let tr = &t[0];
    let located = (0.2 - 1e-12..=0.25 + 1e-12).contains(&tr.location);
    let jump = tr.slope_jump().unwrap_or(0.0);
    let (ok, worst) = rel_errors_ok(away_from_transition(&rep));
    let refined = refine_transition(&cfg, rep.rows[tr.last_before].p, tr.location, tr.from);
    outcome(
        located && jump > 0.1 && ok,
        format!(
            "(a) first grid point of the new mechanism M = {:.3} (bisected change at M ≈ {refined:.3}); (b) slope jump {:.1}%; (c) max rel err {worst:.2e}",
            tr.location,
            100.0 * jump
        ),
    )
}

fn criterion_4() -> Outcome {
    let cases = [
        (SystemId::Example75, 3.0),
        (SystemId::Example75, 5.2),
        (SystemId::SmibConst, 1.5),
        (SystemId::SmibConst, 2.0),
        (SystemId::SmibFreq, 0.5),
        (SystemId::SmibFreq, 1.05),
    ];
    let cfg = CctConfig::default();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut ok = true;
    for (id, t_cl) in cases {
        let e = entry(id);
        let p = &e.defaults;
        let sc = e.build(p).unwrap();
        let ops = operating_points(&sc, p).unwrap();
        let run = simulate_scenario(&sc, t_cl, p, &cfg).unwrap();
        let Some(start) = run.clearing_point() else {
            ok = false;
            continue;
        };
        for (stage, from, horizon) in [(&sc.fault, &ops.pre_sep, t_cl), (&sc.post, &start, 8.0)] {
            match flow_fd_mismatch(stage.as_ref(), from, horizon, p, &cfg.integrator, 1e-5, 0.98) {
                Ok((err, n)) => {
                    worst = worst.max(err);
                    compared += n;
                    ok &= n > 0;
                }
                Err(_) => ok = false,
            }
        }
    }
    outcome(ok && worst <= 1e-3, format!("{compared} comparisons over 12 stage runs, max rel mismatch {worst:.2e}"))
}

fn criterion_5() -> Outcome {
    let p = example75_defaults();
    let sc = build_example75(&p).unwrap();
    let post = sc.post.as_ref();
    let residual = |pt: &Point, p: &ParamSet| post_residual(post, pt, p);
    let mut notes = Vec::new();
    let mut ok = true;

    match find_semi_singular(post, &Point::from_slices(&[0.05, 0.02], &[0.02]), &p) {
        Ok(ss) => {
            let err = ss.stacked().norm();
            let kind = classify_semi_singular(post, &ss, &p, 1.0).map(|e| e.kind);
            ok &= err <= 1e-6
                && residual(&ss, &p) <= 1e-8
                && kind == Ok(ElementKind::SemiSingular(SemiClass::SemiSaddle));
            notes.push(format!("semi-saddle err {err:.1e}"));
        }
        Err(_) => ok = false,
    }
    match find_pseudo_ep(post, &Point::from_slices(&[-2.8, -1.9], &[1.05]), &p) {
        Ok(pep) => {
            let err = (pep.stacked() - Vector::from_vec(vec![-3.0, -2.0, 1.0])).norm();
            let kind = classify_pseudo_ep(post, &pep, &p, 1.0).map(|e| e.kind);
            let kappa = eval_kappa(post, &pep, &p).unwrap().norm();
            ok &= err <= 1e-6
                && residual(&pep, &p).max(kappa) <= 1e-8
                && kind == Ok(ElementKind::PseudoEp(PseudoClass::TransverseSaddle));
            notes.push(format!("pseudo EP err {err:.1e}"));
        }
        Err(_) => ok = false,
    }

    let smib = |pm: f64| -> Option<(ElementKind, bool, ElementKind)> {
        let p = smib_defaults(pm);
        let sc = build_smib(&p, LoadModel::Constant).ok()?;
        let ops = operating_points(&sc, &p).ok()?;
        let post = sc.post.as_ref();
        let pep = find_pseudo_ep(post, &Point::from_slices(&[1.1, 0.4 - pm], &[0.22]), &p).ok()?;
        let pk = classify_pseudo_ep(post, &pep, &p, ops.region_sign).ok()?.kind;
        let eq = find_equilibrium(post, &Point::from_slices(&[1.09, 0.0], &[0.25]), &p).ok()?;
        let inside = eval_delta(post, &eq, &p).ok()?.signum() == ops.region_sign;
        Some((pk, inside, classify_equilibrium(post, &eq, &p).ok()?.kind))
    };
    match (smib(0.3), smib(0.5)) {
        (Some((k3, in3, _)), Some((k5, in5, u5))) => {
            ok &= k3 == ElementKind::PseudoEp(PseudoClass::TransverseSaddle)
                && k5 == ElementKind::PseudoEp(PseudoClass::TransverseSource)
                && !in3
                && in5
                && u5 == ElementKind::Uep { unstable: 1 };
            notes.push(format!(
                "machine pseudo EP {k3} -> {k5}, UEP beyond S at 0.3: {}, {u5} inside at 0.5: {in5}",
                !in3
            ));
        }
        _ => ok = false,
    }
    outcome(ok, notes.join("; "))
}

fn post_residual(stage: &dyn cctsens::StageModel, pt: &Point, p: &ParamSet) -> f64 {
    stage.g(&pt.x, &pt.y, p).norm().max(eval_delta(stage, pt, p).unwrap().abs())
}

fn bracket_ok(sc: &ScenarioModel, p: &ParamSet, cfg: &CctConfig, cct: f64, low: f64, high: f64) -> bool {
    low < high
        && high - low <= cfg.cct_tol
        && (low..=high).contains(&cct)
        && judge_stability(sc, low, p, cfg).is_ok_and(|v| v.is_stable())
        && judge_stability(sc, high, p, cfg).is_ok_and(|v| !v.is_stable())
}

fn criterion_6() -> Outcome {
    let mut ok = true;
    let mut kappa: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let mut spread: f64 = 0.0;
    let mut brackets = 0;
    let cases = [
        (SystemId::Example75, 0.0, Point::from_slices(&[0.8, 1.7], &[1.1]), 4.0),
        (SystemId::SmibConst, 0.3, Point::from_slices(&[0.2, 0.0], &[0.9]), 2.0),
        (SystemId::SmibConst, 0.5, Point::from_slices(&[1.09, 0.0], &[0.28]), 1.0),
        (SystemId::SmibFreq, 1.0, Point::from_slices(&[1.09, 0.0], &[0.28]), 1.05),
    ];
    for (id, v, guess, t_cl) in cases {
        let e = entry(id);
        let p = e.defaults.with_active_value(v).unwrap();
        let sc = e.build(&p).unwrap();
        for stage in [&sc.pre, &sc.post] {
            if let Ok(eq) = find_equilibrium(stage.as_ref(), &guess, &p) {
                kappa = kappa.max(eval_kappa(stage.as_ref(), &eq, &p).unwrap().norm());
            }
        }
        let run = simulate_scenario(&sc, t_cl, &p, &default_cct(id)).unwrap();
        for (stage, tr) in [(&sc.fault, Some(&run.fault)), (&sc.post, run.post.as_ref())] {
            for s in tr.map(|t| t.samples.as_slice()).unwrap_or_default() {
                residual = residual.max(stage.g(&s.x, &s.y, &p).norm());
            }
        }
    }

    for (id, v) in [
        (SystemId::SmibConst, 0.3),
        (SystemId::SmibConst, 0.45),
        (SystemId::SmibFreq, 0.15),
        (SystemId::Example75, 0.0),
    ] {
        let e = entry(id);
        let p = e.defaults.with_active_value(v).unwrap();
        let sc = e.build(&p).unwrap();
        let cfg = default_cct(id);
        let Ok(base) = analyze(&sc, &p, &cfg) else {
            ok = false;
            continue;
        };
        let Ok(res) = &base.result else {
            ok = false;
            continue;
        };
        ok &= bracket_ok(&sc, &p, &cfg, base.cct, res.low, res.high);
        brackets += 1;
        let f0 = base.formula.clone().map(|f| f.dcct_dp).unwrap_or(f64::NAN);
        let mut asm = base.assembly.clone().unwrap_or_default();
        for s in [3.7, -0.25] {
            let scaled = if let Some(cu) = asm.cuep.as_mut() {
                cu.v_cu *= s;
                let f = sens_cuep(&asm);
                asm.cuep.as_mut().unwrap().v_cu /= s;
                Some(f)
            } else if let Some(cr) = asm.crossing.as_mut() {
                cr.v_sing *= s;
                let f = sens_singularity_at_clearing(&asm);
                asm.crossing.as_mut().unwrap().v_sing /= s;
                Some(f)
            } else {
                None
            };
            if let Some(f) = scaled {
                spread = spread.max(f.map(|f| (f.dcct_dp - f0).abs() / f0.abs()).unwrap_or(f64::INFINITY));
            }
        }
        {
            let swapped = sc.augmented().unwrap().with_permuted_rows(&[1, 0]).unwrap();
            match analyze(&swapped, &p, &cfg) {
                Ok(a) => {
                    let f1 = a.formula.map(|f| f.dcct_dp).unwrap_or(f64::NAN);
                    spread = spread.max((f1 - f0).abs() / f0.abs()).max((a.cct - base.cct).abs() / base.cct);
                    if let Ok(r) = &a.result {
                        ok &= bracket_ok(&swapped, &p, &cfg, a.cct, r.low, r.high);
                        brackets += 1;
                    }
                }
                Err(_) => ok = false,
            }
        }
    }
    outcome(
        ok && kappa <= 1e-10 && residual <= 1e-10 && spread <= 1e-6,
        format!("max |κ| {kappa:.1e}, max |g| {residual:.1e}, formula spread under rescaling/permutation {spread:.1e}, {brackets} brackets checked"),
    )
}

fn criterion_7() -> Outcome {
    let sweep = RunConfig::parse(
        "[scenario]\nsystem = smib_const\n[sweep]\nparameter = Pm\nfrom = 0.44\nto = 0.46\nsteps = 3\n",
    )
    .unwrap();
    let a = run_sweep(&sweep, 1).unwrap().to_csv();
    let b = run_sweep(&sweep, 2).unwrap().to_csv();
    let single = RunConfig::parse("[scenario]\nsystem = smib_freq\nt_cl = 1.05\n").unwrap();
    let traj = || {
        let r = run_single(&single, None).unwrap().run;
        r.fault.to_csv() + &r.post.map(|p| p.to_csv()).unwrap_or_default()
    };
    let portrait = RunConfig::parse("[scenario]\nsystem = example75\n[portrait]\ncritical = false\n").unwrap();
    let pcsv = || {
        let d = run_portrait(&portrait).unwrap();
        d.grid_csv().unwrap_or_default() + &d.trace_csv(2, 1) + &d.elements_csv(2, 1)
    };
    let point = |v| format!("{:?}", sweep_point(&sweep, v, 0.02));
    let same = a == b && traj() == traj() && pcsv() == pcsv() && point(0.45) == point(0.45);
    outcome(same, "sweep (1 vs 2 workers), trajectory and portrait CSVs compared byte for byte")
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 7] = [
        ("post-fault semi-saddle formula vs oracle, p in [-0.4, 0.4]", criterion_1),
        ("machine model Pm sweep", criterion_2),
        ("frequency-dependent load M sweep", criterion_3),
        ("trajectory sensitivities vs flow differences", criterion_4),
        ("critical elements", criterion_5),
        ("invariants", criterion_6),
        ("determinism", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "criterion {}: {} — {name}: {} [{:.0} s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
