mod common;

use common::*;
use lamimorph::angle::direction_distance;
use lamimorph::inverse::*;
use lamimorph::torusgeom::{rectangle_on_torus, sample_rectangle, TorusSpec};
use lamimorph::*;
use nalgebra::Vector3;

fn forward(th1: f64, th2: f64, t1: f64, t2: f64, ta: f64) -> MidplaneState {
    BilayerModel::new(&fixture(), t1, t2, ta)
        .unwrap()
        .state(th1, th2)
        .unwrap()
}

fn target_for(state: &MidplaneState) -> CurvatureTarget {
    let pc = principal_curvatures(state.kappa[0], state.kappa[1], state.kappa[2]);
    CurvatureTarget::from_principal(pc)
}

fn contains(cands: &[Candidate], th1: f64, th2: f64, tol: f64) -> Option<Candidate> {
    cands
        .iter()
        .find(|c| {
            direction_distance(c.theta1_deg, th1) <= tol
                && direction_distance(c.theta2_deg, th2) <= tol
        })
        .copied()
}

#[test]
fn mesh_target_matches_analytic_target() {
    let spec = TorusSpec::new(10.0, 5.0).unwrap();
    let (patch, corners) = rectangle_on_torus(spec, 45.0, 4.0, 3.0).unwrap();
    let analytic = curvature_target(&TargetSurface::Analytic { patch, corners }).unwrap();
    let mesh = sample_rectangle(&patch, 45.0, 4.0, 3.0, 41, 31).unwrap();
    let from_mesh = curvature_target(&TargetSurface::mesh(mesh)).unwrap();
    let scale = analytic.norm();
    assert!((from_mesh.kappa() - analytic.kappa()).norm() <= 1e-3 * scale);
    // Mohr oracle by direct tensor rotation of diag(-1/r1, 1/r2)
    let oracle = rotate_engineering(&Vector3::new(-0.1, 0.2, 0.0), 45.0);
    assert!((analytic.kappa() - oracle).norm() < 1e-12);
}

#[test]
fn forward_generated_target_is_found_with_its_symmetric_partner() {
    let s = forward(30.0, -60.0, 0.5, 0.5, 85.0);
    let cands = search_candidates(&target_for(&s), &fixture(), 0.5, 0.5, 85.0, 1.0).unwrap();
    // equal plies at 90° apart sit on a fold of the map: κ moves only to
    // second order along (1, -1), so angles are pinned to ~sqrt(residual)
    let hit = contains(&cands, 30.0, -60.0, 1e-3).expect("generator found");
    assert!(hit.residual <= 1e-8);
    assert!(!hit.normal_flipped && hit.flat);
    // layer swap with equal thickness realises the flipped surface
    let swap = contains(&cands, -60.0, 30.0, 1e-3).expect("swapped pair found");
    assert!(swap.normal_flipped && swap.residual <= 1e-8);
}

#[test]
fn candidate_set_is_closed_under_symmetries() {
    let s = forward(20.0, -35.0, 0.5, 0.5, 80.0);
    let cands = search_candidates(&target_for(&s), &fixture(), 0.5, 0.5, 80.0, 1.0).unwrap();
    for c in &cands {
        assert!(
            contains(&cands, c.theta2_deg, c.theta1_deg, 1e-4).is_some(),
            "swap image of ({}, {}) missing",
            c.theta1_deg,
            c.theta2_deg
        );
    }
}

#[test]
fn out_of_range_target_is_infeasible() {
    let s = forward(30.0, -60.0, 0.5, 0.5, 85.0);
    let big = CurvatureTarget::from_principal(principal_curvatures(
        10.0 * s.kappa[0],
        10.0 * s.kappa[1],
        10.0 * s.kappa[2],
    ));
    match search_candidates(&big, &fixture(), 0.5, 0.5, 85.0, 1.0) {
        Err(Error::Infeasible { best, threshold }) => assert!(best > threshold),
        other => panic!("{other:?}"),
    }
}

#[test]
fn pure_bending_target_finds_cross_plies() {
    let s = forward(0.0, 90.0, 0.5, 0.5, 85.0);
    let c = s.kappa[0];
    let target = CurvatureTarget::from_principal(principal_curvatures(c, -c, 0.0));
    let cands = search_candidates(&target, &fixture(), 0.5, 0.5, 85.0, 1.0).unwrap();
    assert!(contains(&cands, 0.0, 90.0, 1e-3).is_some());
    assert!(contains(&cands, 90.0, 0.0, 1e-3).is_some());
    for k in &cands {
        assert!(k.state.kappa[2].abs() <= 1e-6);
    }
}

#[test]
fn recovered_rectangle_deploys_to_target_edges() {
    let s = forward(25.0, -40.0, 0.3, 0.7, 80.0);
    let spec = TorusSpec::new(12.0, 6.0).unwrap();
    let (patch, corners) = rectangle_on_torus(spec, 10.0, 5.0, 3.0).unwrap();
    let flat = lamimorph::flatten_patch(&patch, &corners).unwrap();
    let (a, b) = initial_dimensions(&s, &flat).unwrap();
    let (l_ab, l_ad) = deployed_edges(&s, a, b);
    assert!(((l_ab - flat.l_ab) / flat.l_ab).abs() <= 1e-12);
    assert!(((l_ad - flat.l_ad) / flat.l_ad).abs() <= 1e-12);
}

fn round_trip_case(th1: f64, th2: f64, ratio: f64, ta: f64) {
    let (t1, t2) = split_thickness(ratio, 1.0).unwrap();
    let s = forward(th1, th2, t1, t2, ta);
    let r2 = 1.0 / principal_curvatures(s.kappa[0], s.kappa[1], s.kappa[2]).k1;
    let (a, b) = (0.8 * r2, 0.5 * r2);
    let target = TargetSurface::from_deployed(&s, a, b).unwrap();
    let plan = plan_pipeline(&target, &fixture(), ratio, 1.0, ta, &PlanOptions::default()).unwrap();
    assert!(direction_distance(plan.theta1, th1) <= 0.5, "{plan:?}");
    assert!(direction_distance(plan.theta2, th2) <= 0.5, "{plan:?}");
    assert!(((plan.a - a) / a).abs() <= 1e-6 && ((plan.b - b) / b).abs() <= 1e-6);
    assert!(plan.residuals.kappa_per_mm <= 1e-6);
    assert_eq!(plan.material, "pla-fixture");
    assert_eq!(plan.t_act, recovery_strains(&fixture(), ta).unwrap().t_act);
}

#[test]
fn pipeline_round_trips() {
    round_trip_case(30.0, -60.0, 0.6, 85.0);
    round_trip_case(-84.5, -34.7, 0.37, 72.0);
    round_trip_case(57.6, 57.9, 0.43, 88.0);
}

#[test]
fn pipeline_is_deterministic() {
    let s = forward(15.0, -70.0, 0.4, 0.6, 80.0);
    let target = TargetSurface::from_deployed(&s, 6.0, 4.0).unwrap();
    let run = || {
        plan_pipeline(
            &target,
            &fixture(),
            0.4 / 0.6,
            1.0,
            80.0,
            &PlanOptions::default(),
        )
        .unwrap()
        .to_json()
    };
    assert_eq!(run(), run());
}

#[test]
fn pipeline_gates() {
    let s = forward(15.0, -70.0, 0.4, 0.6, 80.0);
    let target = TargetSurface::from_deployed(&s, 6.0, 4.0).unwrap();
    for ta in [50.0, 60.2] {
        assert!(matches!(
            plan_pipeline(&target, &fixture(), 1.0, 1.0, ta, &PlanOptions::default()),
            Err(Error::BelowTg { .. })
        ));
    }
    let plane =
        lamimorph::SurfaceMesh::from_fn(15, 15, |i, j| Vector3::new(i as f64, j as f64, 0.0))
            .unwrap();
    assert!(matches!(
        plan_pipeline(
            &TargetSurface::mesh(plane),
            &fixture(),
            1.0,
            1.0,
            85.0,
            &PlanOptions::default()
        ),
        Err(Error::UnsupportedTarget(_))
    ));
}

#[test]
fn dimension_bounds_over_constrain() {
    let s = forward(15.0, -70.0, 0.4, 0.6, 80.0);
    let target = TargetSurface::from_deployed(&s, 6.0, 4.0).unwrap();
    let options = PlanOptions {
        filter: FilterCriteria {
            max_a: Some(1.0),
            ..FilterCriteria::default()
        },
        ..PlanOptions::default()
    };
    match plan_pipeline(&target, &fixture(), 0.4 / 0.6, 1.0, 80.0, &options) {
        Err(Error::OverConstrained { reasons }) => {
            assert!(reasons.iter().all(|r| r.contains("max_a")))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn sweep_keeps_best_combination() {
    let s = forward(15.0, -70.0, 0.4, 0.6, 80.0);
    let target = TargetSurface::from_deployed(&s, 6.0, 4.0).unwrap();
    let out = plan_sweep(
        &target,
        &fixture(),
        &[1.0, 0.4 / 0.6],
        &[70.0, 80.0, 85.0],
        1.0,
        &PlanOptions::default(),
    )
    .unwrap();
    assert_eq!(out.plan.t_a, 80.0);
    assert!((out.plan.t1 - 0.4).abs() < 1e-12);
    assert!(matches!(
        plan_sweep(
            &target,
            &fixture(),
            &[1.0],
            &[80.0, 55.0],
            1.0,
            &PlanOptions::default()
        ),
        Err(Error::BelowTg { .. })
    ));
}

#[test]
fn verification_accepts_own_plan_and_flags_perturbation() {
    let card = fixture();
    let s = forward(-20.0, 50.0, 0.5, 0.5, 85.0);
    let target = TargetSurface::from_deployed(&s, 5.0, 3.0).unwrap();
    let plan = plan_pipeline(&target, &card, 1.0, 1.0, 85.0, &PlanOptions::default()).unwrap();
    let report = verify_plan(&plan, &target, &card).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.preview.is_some());

    let text = report.to_json();
    let back: VerificationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back.to_json(), text);

    let mut bad = plan.clone();
    bad.theta1 += 5.0;
    let report = verify_plan(&bad, &target, &card).unwrap();
    assert!(!report.passed && !report.checks.kappa);
    assert!(report.residuals.kappa_per_mm > 1e-4);

    let mut other = plan.clone();
    other.material = "something-else".into();
    assert!(matches!(
        verify_plan(&other, &target, &card),
        Err(Error::Validation(_))
    ));
}

#[test]
fn plan_json_has_documented_keys() {
    let s = forward(-20.0, 50.0, 0.5, 0.5, 85.0);
    let target = TargetSurface::from_deployed(&s, 5.0, 3.0).unwrap();
    let plan = plan_pipeline(&target, &fixture(), 1.0, 1.0, 85.0, &PlanOptions::default()).unwrap();
    let value: serde_json::Value = serde_json::from_str(&plan.to_json()).unwrap();
    let mut keys: Vec<&str> = value
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    keys.sort();
    assert_eq!(
        keys,
        [
            "a_mm",
            "b_mm",
            "material",
            "process",
            "residuals",
            "t1_mm",
            "t2_mm",
            "t_act_s",
            "ta_c",
            "theta1_deg",
            "theta2_deg"
        ]
    );
    assert_eq!(PrintPlan::from_json(&plan.to_json()).unwrap(), plan);
}
