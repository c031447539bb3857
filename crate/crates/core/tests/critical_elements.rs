//! Location and classification of equilibria, pseudo equilibria and
//! semi-singular points of the post-fault stages.

use cctsens::cct::operating_points;
use cctsens::critical::{
    classify_equilibrium, classify_pseudo_ep, classify_semi_singular, find_equilibrium, find_pseudo_ep,
    find_semi_singular, ElementKind, PseudoClass, SemiClass,
};
use cctsens::linalg::Vector;
use cctsens::model::{eval_delta, eval_kappa, Point, StageModel};
use cctsens::systems::{build_example75, build_smib, example75_defaults, smib_defaults, LoadModel};

const POSITION_TOL: f64 = 1e-6;
const RESIDUAL_TOL: f64 = 1e-8;

/// `‖[g; Δ]‖` at a point of the singular surface.
fn surface_residual(stage: &dyn StageModel, pt: &Point, p: &cctsens::ParamSet) -> f64 {
    let g = stage.g(&pt.x, &pt.y, p).norm();
    g.max(eval_delta(stage, pt, p).unwrap().abs())
}

#[test]
fn example75_semi_saddle_at_origin() {
    let p = example75_defaults();
    let sc = build_example75(&p).unwrap();
    let post = sc.post.as_ref();
    let ss = find_semi_singular(post, &Point::from_slices(&[0.05, 0.02], &[0.02]), &p).unwrap();
    assert!(ss.stacked().norm() <= POSITION_TOL, "{:?}", ss.stacked());
    assert!(surface_residual(post, &ss, &p) <= RESIDUAL_TOL);
    let el = classify_semi_singular(post, &ss, &p, 1.0).unwrap();
    assert_eq!(el.kind, ElementKind::SemiSingular(SemiClass::SemiSaddle));
}

#[test]
fn example75_transverse_saddle_pseudo_ep() {
    let p = example75_defaults();
    let sc = build_example75(&p).unwrap();
    let post = sc.post.as_ref();
    let ops = operating_points(&sc, &p).unwrap();
    let pep = find_pseudo_ep(post, &Point::from_slices(&[-2.8, -1.9], &[1.05]), &p).unwrap();
    assert!((pep.stacked() - Vector::from_vec(vec![-3.0, -2.0, 1.0])).norm() <= POSITION_TOL);
    assert!(surface_residual(post, &pep, &p) <= RESIDUAL_TOL);
    assert!(eval_kappa(post, &pep, &p).unwrap().norm() <= RESIDUAL_TOL);
    let el = classify_pseudo_ep(post, &pep, &p, ops.region_sign).unwrap();
    assert_eq!(el.kind, ElementKind::PseudoEp(PseudoClass::TransverseSaddle));
    // transversal eigenvalues ±4
    let mut re: Vec<f64> = el.eigenvalues.iter().map(|z| z.re).collect();
    re.sort_by(f64::total_cmp);
    assert!((re[0] + 4.0).abs() < 1e-6 && (re[1] - 4.0).abs() < 1e-6, "{re:?}");
}

#[test]
fn example75_semi_saddle_follows_p() {
    for pv in [-0.3, 0.2] {
        let p = example75_defaults().with_active_value(pv).unwrap();
        let sc = build_example75(&p).unwrap();
        let ss = find_semi_singular(sc.post.as_ref(), &Point::from_slices(&[pv + 0.05, 0.02], &[0.02]), &p).unwrap();
        assert!((ss.stacked() - Vector::from_vec(vec![pv, 0.0, 0.0])).norm() <= POSITION_TOL);
    }
}

/// Pseudo EP of the constant-load machine model: `y = √(X Ql)`,
/// `cos x₁ = 2y/E`, `x₂ = (Pe − Pm)/Dl` with `Pe = 0.4` at the defaults.
fn smib_pseudo_ep(pm: f64) -> (ElementKind, Point) {
    let p = smib_defaults(pm);
    let sc = build_smib(&p, LoadModel::Constant).unwrap();
    let ops = operating_points(&sc, &p).unwrap();
    let post = sc.post.as_ref();
    let pep = find_pseudo_ep(post, &Point::from_slices(&[1.1, 0.4 - pm], &[0.22]), &p).unwrap();
    assert!(surface_residual(post, &pep, &p) <= RESIDUAL_TOL);
    (classify_pseudo_ep(post, &pep, &p, ops.region_sign).unwrap().kind, pep)
}

#[test]
fn smib_pseudo_ep_flips_from_saddle_to_source() {
    let y = (0.5_f64 * 0.1).sqrt();
    let x1 = (2.0 * y).acos();
    let (kind, pep) = smib_pseudo_ep(0.3);
    assert_eq!(kind, ElementKind::PseudoEp(PseudoClass::TransverseSaddle));
    assert!((pep.stacked() - Vector::from_vec(vec![x1, 0.1, y])).norm() <= POSITION_TOL);
    let (kind, pep) = smib_pseudo_ep(0.5);
    assert_eq!(kind, ElementKind::PseudoEp(PseudoClass::TransverseSource));
    assert!((pep.stacked() - Vector::from_vec(vec![x1, -0.1, y])).norm() <= POSITION_TOL);
}

#[test]
fn smib_nearby_uep_crosses_the_singular_surface() {
    let side = |pm: f64| {
        let p = smib_defaults(pm);
        let sc = build_smib(&p, LoadModel::Constant).unwrap();
        let ops = operating_points(&sc, &p).unwrap();
        let eq = find_equilibrium(sc.post.as_ref(), &Point::from_slices(&[1.09, 0.0], &[0.25]), &p).unwrap();
        let d = eval_delta(sc.post.as_ref(), &eq, &p).unwrap();
        (d.signum() == ops.region_sign, classify_equilibrium(sc.post.as_ref(), &eq, &p).unwrap().kind)
    };
    let (inside, _) = side(0.3);
    assert!(!inside, "equilibrium must lie beyond the surface at Pm = 0.3");
    let (inside, kind) = side(0.5);
    assert!(inside, "equilibrium must lie in the operating region at Pm = 0.5");
    assert_eq!(kind, ElementKind::Uep { unstable: 1 });
}
