#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use lamimorph::torusgeom::{torus_point, SurfaceMesh, TorusSpec};
use lamimorph::MaterialCard;
use nalgebra::{Matrix3, Rotation3, Vector3};

pub fn fixture() -> Arc<MaterialCard> {
    let text = include_str!("../../../../fixtures/pla-fixture.json");
    Arc::new(MaterialCard::from_json(text).expect("fixture card loads"))
}

/// Rigid placement used to keep fits honest about pose.
pub fn pose() -> (Matrix3<f64>, Vector3<f64>) {
    let r = Rotation3::from_euler_angles(0.3, -0.7, 1.1).into_inner();
    (r, Vector3::new(3.0, -2.0, 7.5))
}

/// Grid over the inner side of a torus, i along β and j along ψ.
pub fn torus_grid(
    spec: &TorusSpec,
    beta: (f64, f64),
    psi: (f64, f64),
    n: usize,
    placed: bool,
) -> SurfaceMesh {
    let (r, t) = pose();
    SurfaceMesh::from_fn(n, n, |i, j| {
        let b = beta.0 + (beta.1 - beta.0) * i as f64 / (n - 1) as f64;
        let p = psi.0 + (psi.1 - psi.0) * j as f64 / (n - 1) as f64;
        let x = torus_point(spec, b, p);
        if placed {
            r * x + t
        } else {
            x
        }
    })
    .unwrap()
}

pub fn inner_window() -> ((f64, f64), (f64, f64)) {
    ((PI - 0.6, PI + 0.6), (-0.5, 0.5))
}

pub fn beta_of(i: usize, n: usize, beta: (f64, f64)) -> f64 {
    beta.0 + (beta.1 - beta.0) * i as f64 / (n - 1) as f64
}

/// Plane-stress stiffness rotated as a 4th-order tensor; returns Q̄ in
/// engineering (Voigt) form. `theta_deg` is the material 1-axis angle.
#[rustfmt::skip]
pub fn qbar_by_tensor_rotation(q: &Matrix3<f64>, theta_deg: f64) -> Matrix3<f64> {
    let mut c = [[[[0.0f64; 2]; 2]; 2]; 2];
    c[0][0][0][0] = q[(0, 0)];
    c[1][1][1][1] = q[(1, 1)];
    c[0][0][1][1] = q[(0, 1)];
    c[1][1][0][0] = q[(1, 0)];
    for (i, j, k, l) in [(0, 1, 0, 1), (0, 1, 1, 0), (1, 0, 0, 1), (1, 0, 1, 0)] {
        c[i][j][k][l] = q[(2, 2)];
    }
    let t = theta_deg.to_radians();
    let r = [[t.cos(), -t.sin()], [t.sin(), t.cos()]];
    let mut out = [[[[0.0f64; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    let mut acc = 0.0;
                    for p in 0..2 {
                        for qq in 0..2 {
                            for rr in 0..2 {
                                for s in 0..2 {
                                    acc += r[i][p] * r[j][qq] * r[k][rr] * r[l][s] * c[p][qq][rr][s];
                                }
                            }
                        }
                    }
                    out[i][j][k][l] = acc;
                }
            }
        }
    }
    Matrix3::new(
        out[0][0][0][0], out[0][0][1][1], out[0][0][0][1],
        out[1][1][0][0], out[1][1][1][1], out[1][1][0][1],
        out[0][1][0][0], out[0][1][1][1], out[0][1][0][1],
    )
}

/// Principal strains rotated as a 2×2 tensor, returned with engineering shear.
pub fn strain_by_tensor_rotation(eps1: f64, eps2: f64, theta_deg: f64) -> Vector3<f64> {
    let t = theta_deg.to_radians();
    let r = nalgebra::Matrix2::new(t.cos(), -t.sin(), t.sin(), t.cos());
    let e = r * nalgebra::Matrix2::new(eps1, 0.0, 0.0, eps2) * r.transpose();
    Vector3::new(e[(0, 0)], e[(1, 1)], 2.0 * e[(0, 1)])
}

/// Rotates a (x, y, engineering-shear) vector field by `delta_deg`.
pub fn rotate_engineering(v: &Vector3<f64>, delta_deg: f64) -> Vector3<f64> {
    let t = delta_deg.to_radians();
    let r = nalgebra::Matrix2::new(t.cos(), -t.sin(), t.sin(), t.cos());
    let m = nalgebra::Matrix2::new(v[0], 0.5 * v[2], 0.5 * v[2], v[1]);
    let e = r * m * r.transpose();
    Vector3::new(e[(0, 0)], e[(1, 1)], 2.0 * e[(0, 1)])
}

/// Laminate integrals by midpoint quadrature with `slices` sub-slices per
/// layer. Returns (A, B, D, Nᵀ, Mᵀ).
pub struct Quadrature {
    pub a: Matrix3<f64>,
    pub b: Matrix3<f64>,
    pub d: Matrix3<f64>,
    pub n_t: Vector3<f64>,
    pub m_t: Vector3<f64>,
}

pub fn midpoint_quadrature(
    layers: &[(Matrix3<f64>, Vector3<f64>, f64, f64)],
    slices: usize,
) -> Quadrature {
    let mut out = Quadrature {
        a: Matrix3::zeros(),
        b: Matrix3::zeros(),
        d: Matrix3::zeros(),
        n_t: Vector3::zeros(),
        m_t: Vector3::zeros(),
    };
    for (qbar, alpha, z0, z1) in layers {
        let dz = (z1 - z0) / slices as f64;
        let qa = qbar * alpha;
        for s in 0..slices {
            let z = z0 + (s as f64 + 0.5) * dz;
            out.a += qbar * dz;
            out.b += qbar * (z * dz);
            out.d += qbar * (z * z * dz);
            out.n_t += qa * dz;
            out.m_t += qa * (z * dz);
        }
    }
    out
}

pub fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale
}

pub fn mat_rel(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max().max(f64::MIN_POSITIVE)
}

pub fn vec_rel(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max().max(f64::MIN_POSITIVE)
}
