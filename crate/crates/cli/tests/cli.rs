use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use lamimorph::inverse::{AnalyticTargetFile, BilayerModel};
use lamimorph::torusgeom::{fit_torus, import_obj, obj_string};
use lamimorph::*;
use serde_json::Value;

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/pla-fixture.json")
}

fn card() -> Arc<MaterialCard> {
    Arc::new(load_material_card(fixture_path()).unwrap())
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lamimorph"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

fn fixture() -> String {
    fixture_path().to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Analytic target written from the deployed shape of a forward-solved plate.
fn write_target(dir: &Path, th1: f64, th2: f64, t1: f64, t2: f64, ta: f64) -> PathBuf {
    let state = BilayerModel::new(&card(), t1, t2, ta)
        .unwrap()
        .state(th1, th2)
        .unwrap();
    let target = TargetSurface::from_deployed(&state, 6.0, 4.0).unwrap();
    let file = AnalyticTargetFile::from_target(&target).unwrap();
    let path = dir.join("target.json");
    std::fs::write(&path, serde_json::to_string_pretty(&file).unwrap()).unwrap();
    path
}

#[test]
fn forward_modes_and_gates() {
    let f = fixture();
    let out = run(&[
        "forward",
        "--material",
        &f,
        "--theta1",
        "0",
        "--theta2",
        "0",
        "--t1",
        "0.5",
        "--t2",
        "0.5",
        "--ta",
        "85",
    ]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["mode"], "InPlaneAxial");
    assert!(v["state"]["kappa_x"].as_f64().unwrap().abs() < 1e-12);

    let out = run(&[
        "forward",
        "--material",
        &f,
        "--theta1",
        "0",
        "--theta2",
        "90",
        "--t1",
        "0.5",
        "--t2",
        "0.5",
        "--ta",
        "85",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["mode"], "Bending");
    assert!(v["state"]["kappa_xy"].as_f64().unwrap().abs() < 1e-12);
    assert!(v["K"].as_f64().unwrap() < 0.0);

    let out = run(&[
        "forward",
        "--material",
        &f,
        "--theta1",
        "0",
        "--theta2",
        "90",
        "--t1",
        "0.5",
        "--t2",
        "0.5",
        "--ta",
        "50",
    ]);
    assert_eq!(code(&out), 3);
    assert_eq!(stderr_json(&out)["error"], "below_tg");

    let out = run(&[
        "forward",
        "--material",
        &f,
        "--theta1",
        "0",
        "--theta2",
        "90",
        "--t1",
        "-1",
        "--t2",
        "0.5",
        "--ta",
        "85",
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&run(&["forward", "--theta1", "0"])), 2);
    let out = run(&[
        "forward",
        "--material",
        "/nonexistent/card.json",
        "--theta1",
        "0",
        "--theta2",
        "0",
        "--t1",
        "1",
        "--t2",
        "1",
        "--ta",
        "85",
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn map_outputs_are_complete_and_deterministic() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |out: &Path| {
        run(&[
            "map",
            "--material",
            &f,
            "--t1",
            "0.5",
            "--t2",
            "0.5",
            "--ta",
            "85",
            "--step",
            "1",
            "--out",
            s(out),
            "--svg",
            "gamma_xy,mode",
        ])
    };
    let (ra, rb) = (args(&a), args(&b));
    assert_eq!(code(&ra), 0);
    assert_eq!(ra.stdout, rb.stdout);
    let v = stdout_json(&ra);
    assert_eq!(v["cells"], 32761);
    let argmax: Vec<f64> =
        serde_json::from_value(v["diagonal_gamma_xy_argmax_deg"].clone()).unwrap();
    assert_eq!(argmax, vec![-45.0, 45.0]);
    for name in ["map.csv", "map_gamma_xy.svg", "map_mode.svg"] {
        let (x, y) = (
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
        );
        assert_eq!(x, y, "{name} differs between runs");
    }
    let csv = std::fs::read_to_string(a.join("map.csv")).unwrap();
    assert_eq!(csv.lines().count(), 32762);

    let out = run(&[
        "map",
        "--material",
        &f,
        "--t1",
        "0.5",
        "--t2",
        "0.5",
        "--ta",
        "85",
        "--step",
        "7",
        "--out",
        s(&a),
    ]);
    assert_eq!(code(&out), 2);
    let out = run(&[
        "map",
        "--material",
        &f,
        "--t1",
        "0.5",
        "--t2",
        "0.5",
        "--ta",
        "85",
        "--step",
        "5",
        "--out",
        s(&a),
        "--svg",
        "nope",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn inverse_preview_verify_chain() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let target = write_target(d, 30.0, -60.0, 0.6, 0.4, 80.0);
    let plan = d.join("plan.json");
    let out = run(&[
        "inverse",
        "--material",
        &f,
        "--target",
        s(&target),
        "--ratio",
        "1.5",
        "--thickness",
        "1",
        "--ta",
        "80",
        "--out",
        s(&plan),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout.clone()).unwrap();
    assert!(table.contains("theta1_deg"));
    let p = PrintPlan::load(&plan).unwrap();
    assert!((p.theta1 - 30.0).abs() < 0.5 && (p.theta2 + 60.0).abs() < 0.5);
    assert!(((p.a - 6.0) / 6.0).abs() < 1e-6 && ((p.b - 4.0) / 4.0).abs() < 1e-6);

    let again = d.join("plan2.json");
    let out2 = run(&[
        "inverse",
        "--material",
        &f,
        "--target",
        s(&target),
        "--ratio",
        "1.5",
        "--thickness",
        "1",
        "--ta",
        "80",
        "--out",
        s(&again),
    ]);
    assert_eq!(out.stdout, out2.stdout);
    assert_eq!(
        std::fs::read(&plan).unwrap(),
        std::fs::read(&again).unwrap()
    );

    // torus preview refits to the target torus
    let obj = d.join("torus.obj");
    let out = run(&[
        "preview",
        "--plan",
        s(&plan),
        "--material",
        &f,
        "--mode",
        "torus",
        "--nu",
        "41",
        "--nv",
        "41",
        "--out",
        s(&obj),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fit = fit_torus(&import_obj(&obj).unwrap()).unwrap();
    let file: AnalyticTargetFile =
        serde_json::from_str(&std::fs::read_to_string(&target).unwrap()).unwrap();
    assert!(
        ((fit.spec.r1 - file.r1_mm) / file.r1_mm).abs() < 1e-3,
        "{:?}",
        fit.spec
    );
    assert!(
        ((fit.spec.r2 - file.r2_mm) / file.r2_mm).abs() < 1e-3,
        "{:?}",
        fit.spec
    );

    let quad = d.join("quad.obj");
    assert_eq!(
        code(&run(&[
            "preview",
            "--plan",
            s(&plan),
            "--material",
            &f,
            "--mode",
            "quadratic",
            "--out",
            s(&quad)
        ])),
        0
    );
    assert!(std::fs::read_to_string(&quad)
        .unwrap()
        .starts_with("# grid 21 21"));

    let report = d.join("report.json");
    let out = run(&[
        "verify",
        "--plan",
        s(&plan),
        "--target",
        s(&target),
        "--material",
        &f,
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["passed"], true);

    let mut bad = p.clone();
    bad.theta1 += 5.0;
    let bad_path = d.join("bad.json");
    std::fs::write(&bad_path, bad.to_json()).unwrap();
    let out = run(&[
        "verify",
        "--plan",
        s(&bad_path),
        "--target",
        s(&target),
        "--material",
        &f,
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&out), 6);
    assert!(stdout_json(&out)["kappa_residual_per_mm"].as_f64().unwrap() > 1e-6);

    let mut other = p.clone();
    other.material = "other-card".into();
    let other_path = d.join("other.json");
    std::fs::write(&other_path, other.to_json()).unwrap();
    let out = run(&[
        "verify",
        "--plan",
        s(&other_path),
        "--target",
        s(&target),
        "--material",
        &f,
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&out), 2);

    let out = run(&[
        "verify",
        "--plan",
        s(&plan),
        "--target",
        s(&target),
        "--material",
        &f,
        "--out",
        s(&plan),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn inverse_rejections_and_sweep() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let plane = SurfaceMesh::from_fn(11, 11, |i, j| {
        nalgebra::Vector3::new(i as f64, j as f64, 0.0)
    })
    .unwrap();
    let obj = d.join("plane.obj");
    std::fs::write(&obj, obj_string(&plane)).unwrap();
    let plan = d.join("plan.json");
    let out = run(&[
        "inverse",
        "--material",
        &f,
        "--target",
        s(&obj),
        "--thickness",
        "1",
        "--ta",
        "85",
        "--out",
        s(&plan),
    ]);
    assert_eq!(code(&out), 5);
    let err = stderr_json(&out);
    assert_eq!(err["error"], "unsupported_target");
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("unsupported target: nonnegative Gaussian curvature"));
    assert!(!plan.exists());

    let target = write_target(d, 20.0, -50.0, 0.5, 0.5, 80.0);
    let out = run(&[
        "inverse",
        "--material",
        &f,
        "--target",
        s(&target),
        "--thickness",
        "1",
        "--sweep-ta",
        "70,75,80,85",
        "--out",
        s(&plan),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(PrintPlan::load(&plan).unwrap().t_a, 80.0);

    let out = run(&[
        "inverse",
        "--material",
        &f,
        "--target",
        s(&target),
        "--thickness",
        "1",
        "--ta",
        "55",
        "--out",
        s(&plan),
    ]);
    assert_eq!(code(&out), 3);
    let out = run(&[
        "inverse",
        "--material",
        &f,
        "--target",
        s(&target),
        "--thickness",
        "1",
        "--ta",
        "80",
        "--max-a",
        "1",
        "--out",
        s(&plan),
    ]);
    assert_eq!(code(&out), 5);
    assert_eq!(stderr_json(&out)["error"], "over_constrained");
}

#[test]
fn curvature_free_plan_previews_flat() {
    // [0, 0] recovers in plane only
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let plan = PrintPlan {
        a: 3.0,
        b: 2.0,
        theta1: 0.0,
        theta2: 0.0,
        t1: 0.5,
        t2: 0.5,
        t_a: 85.0,
        t_act: 0.0,
        material: card().name.clone(),
        residuals: lamimorph::inverse::PlanResiduals {
            kappa_per_mm: 0.0,
            dims_mm: 0.0,
        },
        process: card().process,
    };
    let path = dir.path().join("plan.json");
    std::fs::write(&path, plan.to_json()).unwrap();
    let obj = dir.path().join("flat.obj");
    let out = run(&[
        "preview",
        "--plan",
        s(&path),
        "--material",
        &f,
        "--nu",
        "4",
        "--nv",
        "3",
        "--out",
        s(&obj),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mesh = import_obj(&obj).unwrap();
    assert!(mesh.vertices.iter().all(|v| v.z.abs() < 1e-12));
    let eps_x = BilayerModel::new(&card(), 0.5, 0.5, 85.0)
        .unwrap()
        .state(0.0, 0.0)
        .unwrap()
        .eps0[0];
    let span = mesh.vertex(3, 0).x - mesh.vertex(0, 0).x;
    assert!((span - 3.0 * (1.0 + eps_x)).abs() < 1e-12);

    std::fs::write(&path, "{\"a_mm\": 1}").unwrap();
    assert_eq!(
        code(&run(&[
            "preview",
            "--plan",
            s(&path),
            "--material",
            &f,
            "--out",
            s(&obj)
        ])),
        2
    );
}
