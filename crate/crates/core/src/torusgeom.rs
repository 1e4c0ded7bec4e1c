//! Torus geometry for inverse design: parameterization and analytic
//! curvatures, curvature estimation on grid meshes, torus fitting, flattening
//! of a torus patch into the printing plane, preview meshes and OBJ I/O.
//!
//! A torus is described in its own frame by hole radius `r1` and tube radius
//! `r2`; the tube centre circle has radius `rh = r1 + r2`. `β` is the angle
//! around the tube (β = π on the inner middle circle of radius `r1`) and `ψ`
//! the angle around the symmetry axis. Curvatures are signed with respect to
//! the normal pointing towards the tube centre, which makes the tube
//! curvature `+1/r2` and the circumferential curvature `cos β / (rh + r2 cos β)`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::angle::{sin_cos_deg, wrap_half_turn};
use crate::error::{Error, Result};
use crate::laminate::MidplaneState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusSpec {
    #[serde(rename = "r1_mm")]
    pub r1: f64,
    #[serde(rename = "r2_mm")]
    pub r2: f64,
}

impl TorusSpec {
    pub fn new(r1: f64, r2: f64) -> Result<Self> {
        let spec = Self { r1, r2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r1.is_finite() && self.r1 > 0.0 && self.r2.is_finite() && self.r2 > 0.0) {
            return Err(Error::Validation(format!(
                "torus radii must be positive (r1 = {}, r2 = {})",
                self.r1, self.r2
            )));
        }
        Ok(())
    }

    /// Distance from the symmetry axis to the tube centre circle.
    pub fn rh(&self) -> f64 {
        self.r1 + self.r2
    }
}

/// Point on the torus in its own frame (axis along z).
pub fn torus_point(spec: &TorusSpec, beta: f64, psi: f64) -> Vector3<f64> {
    let rho = spec.rh() + spec.r2 * beta.cos();
    Vector3::new(rho * psi.cos(), rho * psi.sin(), spec.r2 * beta.sin())
}

/// `(k1_i, k2, K)`: circumferential curvature, tube curvature and Gaussian
/// curvature at tube angle `beta`.
pub fn torus_curvatures(spec: &TorusSpec, beta: f64) -> (f64, f64, f64) {
    let c = beta.cos();
    let k1 = c / (spec.rh() + spec.r2 * c);
    let k2 = 1.0 / spec.r2;
    (k1, k2, k1 * k2)
}

/// Placement of a torus in space. Columns of `rotation` are the ψ = 0
/// direction, the ψ = π/2 direction and the symmetry axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusFrame {
    pub origin: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Default for TorusFrame {
    fn default() -> Self {
        Self {
            origin: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }
    }
}

impl TorusFrame {
    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.origin + self.rotation * local
    }

    pub fn to_local(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (world - self.origin)
    }

    pub fn axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }
}

/// A (β, ψ) coordinate on a torus, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub beta: f64,
    pub psi: f64,
}

impl Corner {
    pub fn new(beta: f64, psi: f64) -> Self {
        Self { beta, psi }
    }
}

/// A region of the inner (negative Gaussian curvature) side of a placed torus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusPatch {
    pub spec: TorusSpec,
    pub beta_range: (f64, f64),
    pub psi_range: (f64, f64),
    pub frame: TorusFrame,
}

fn on_inner_side(beta: f64) -> bool {
    beta > FRAC_PI_2 && beta < 3.0 * FRAC_PI_2
}

impl TorusPatch {
    pub fn new(spec: TorusSpec, beta_range: (f64, f64), psi_range: (f64, f64)) -> Result<Self> {
        Self::placed(spec, beta_range, psi_range, TorusFrame::default())
    }

    pub fn placed(
        spec: TorusSpec,
        beta_range: (f64, f64),
        psi_range: (f64, f64),
        frame: TorusFrame,
    ) -> Result<Self> {
        spec.validate()?;
        if !(beta_range.0 <= beta_range.1 && psi_range.0 <= psi_range.1) {
            return Err(Error::Validation("patch ranges must be ordered".into()));
        }
        if !(on_inner_side(beta_range.0) && on_inner_side(beta_range.1)) {
            return Err(Error::UnsupportedTarget(format!(
                "patch β range [{:.4}, {:.4}] rad leaves the inner, negative-curvature side of the torus",
                beta_range.0, beta_range.1
            )));
        }
        Ok(Self {
            spec,
            beta_range,
            psi_range,
            frame,
        })
    }

    pub fn point(&self, beta: f64, psi: f64) -> Vector3<f64> {
        self.frame.to_world(&torus_point(&self.spec, beta, psi))
    }

    pub fn contains(&self, c: &Corner) -> bool {
        let eps = 1e-9;
        c.beta >= self.beta_range.0 - eps
            && c.beta <= self.beta_range.1 + eps
            && c.psi >= self.psi_range.0 - eps
            && c.psi <= self.psi_range.1 + eps
    }

    /// Torus coordinates of the point of this torus nearest to `p`.
    pub fn locate(&self, p: &Vector3<f64>) -> Corner {
        let local = self.frame.to_local(p);
        let rho = local.x.hypot(local.y);
        let psi = local.y.atan2(local.x);
        let beta = local.z.atan2(rho - self.spec.rh()).rem_euclid(2.0 * PI);
        Corner { beta, psi }
    }

    /// Signed distance from `p` to the torus surface (positive outside the tube).
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        let local = self.frame.to_local(p);
        let rho = local.x.hypot(local.y);
        (rho - self.spec.rh()).hypot(local.z) - self.spec.r2
    }
}

/// Structured quad-grid surface, `nu × nv` vertices, `vertex(i, j) = vertices[i * nv + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    pub nu: usize,
    pub nv: usize,
    pub vertices: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl SurfaceMesh {
    pub fn new(nu: usize, nv: usize, vertices: Vec<Vector3<f64>>) -> Result<Self> {
        if nu < 2 || nv < 2 {
            return Err(Error::Topology(format!(
                "grid must be at least 2×2, got {nu}×{nv}"
            )));
        }
        if vertices.len() != nu * nv {
            return Err(Error::Topology(format!(
                "{} vertices do not fill a {nu}×{nv} grid",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Validation("mesh has non-finite coordinates".into()));
        }
        Ok(Self {
            nu,
            nv,
            vertices,
            normals: None,
        })
    }

    pub fn from_fn(
        nu: usize,
        nv: usize,
        mut f: impl FnMut(usize, usize) -> Vector3<f64>,
    ) -> Result<Self> {
        let mut vertices = Vec::with_capacity(nu * nv);
        for i in 0..nu {
            for j in 0..nv {
                vertices.push(f(i, j));
            }
        }
        Self::new(nu, nv, vertices)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nv + j
    }

    pub fn vertex(&self, i: usize, j: usize) -> Vector3<f64> {
        self.vertices[self.index(i, j)]
    }

    pub fn quad_count(&self) -> usize {
        (self.nu - 1) * (self.nv - 1)
    }

    /// Corner vertex indices in A, B, C, D order: A = (0, 0), B = (nu-1, 0),
    /// C = (nu-1, nv-1), D = (0, nv-1).
    pub fn corner_indices(&self) -> [usize; 4] {
        [
            self.index(0, 0),
            self.index(self.nu - 1, 0),
            self.index(self.nu - 1, self.nv - 1),
            self.index(0, self.nv - 1),
        ]
    }

    fn bbox_diagonal(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (hi - lo).norm()
    }
}

/// Curvature estimate at one vertex. `k1 ≥ k2` are signed with respect to
/// `normal`, which follows the grid orientation `∂p/∂i × ∂p/∂j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexCurvature {
    pub k1: f64,
    pub k2: f64,
    pub gauss: f64,
    pub dir1: Vector3<f64>,
    pub dir2: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// The local fit was rank deficient; values are not meaningful.
    pub degenerate: bool,
    /// False for boundary vertices, which carry a copy of the nearest interior value.
    pub interior: bool,
}

/// Per-vertex principal curvatures from a quadric fit over each vertex's 1-ring.
pub fn estimate_curvatures(mesh: &SurfaceMesh) -> Result<Vec<VertexCurvature>> {
    estimate_curvatures_with_stride(mesh, 1)
}

/// Same as [`estimate_curvatures`], with the ring taken `stride` grid steps away.
pub fn estimate_curvatures_with_stride(
    mesh: &SurfaceMesh,
    stride: usize,
) -> Result<Vec<VertexCurvature>> {
    let s = stride.max(1);
    if mesh.nu < 2 * s + 1 || mesh.nv < 2 * s + 1 {
        return Err(Error::Topology(format!(
            "{}×{} grid has no interior vertices for a stencil of stride {s}",
            mesh.nu, mesh.nv
        )));
    }
    let mut out = Vec::with_capacity(mesh.vertices.len());
    for i in 0..mesh.nu {
        for j in 0..mesh.nv {
            let ci = i.clamp(s, mesh.nu - 1 - s);
            let cj = j.clamp(s, mesh.nv - 1 - s);
            let mut vc = fit_vertex(mesh, ci, cj, s);
            vc.interior = ci == i && cj == j;
            out.push(vc);
        }
    }
    Ok(out)
}

struct QuadricFit {
    // w = a u² + b uv + c v² + d u + e v + f
    coef: SVector<f64, 6>,
    degenerate: bool,
}

fn fit_quadric(local: &[Vector3<f64>; 9]) -> QuadricFit {
    let h = (local.iter().map(|p| p.x * p.x + p.y * p.y).sum::<f64>() / 8.0).sqrt();
    let h = if h > 0.0 { h } else { 1.0 };
    let m = SMatrix::<f64, 9, 6>::from_fn(|r, col| {
        let (u, v) = (local[r].x / h, local[r].y / h);
        [u * u, u * v, v * v, u, v, 1.0][col]
    });
    let rhs = SVector::<f64, 9>::from_fn(|r, _| local[r].z / h);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let degenerate = !(smax > 0.0 && smin / smax > 1e-10);
    let sol = svd
        .solve(&rhs, smax * 1e-12)
        .unwrap_or_else(|_| SVector::<f64, 6>::zeros());
    let coef = SVector::<f64, 6>::new(
        sol[0] / h,
        sol[1] / h,
        sol[2] / h,
        sol[3],
        sol[4],
        sol[5] * h,
    );
    QuadricFit { coef, degenerate }
}

fn fit_vertex(mesh: &SurfaceMesh, i: usize, j: usize, s: usize) -> VertexCurvature {
    let p = mesh.vertex(i, j);
    let du = mesh.vertex(i + s, j) - mesh.vertex(i - s, j);
    let dv = mesh.vertex(i, j + s) - mesh.vertex(i, j - s);
    let mut ring = [Vector3::zeros(); 9];
    let mut k = 0;
    for di in [-1i64, 0, 1] {
        for dj in [-1i64, 0, 1] {
            let ii = (i as i64 + di * s as i64) as usize;
            let jj = (j as i64 + dj * s as i64) as usize;
            ring[k] = mesh.vertex(ii, jj) - p;
            k += 1;
        }
    }

    let degenerate_result = VertexCurvature {
        k1: f64::NAN,
        k2: f64::NAN,
        gauss: f64::NAN,
        dir1: Vector3::zeros(),
        dir2: Vector3::zeros(),
        normal: Vector3::zeros(),
        degenerate: true,
        interior: true,
    };
    let Some(mut n) = du.cross(&dv).try_normalize(1e-300) else {
        return degenerate_result;
    };
    let mut t1 = match (du - n * du.dot(&n)).try_normalize(1e-300) {
        Some(t) => t,
        None => return degenerate_result,
    };

    // fit in the grid-derived frame, re-align with the fitted normal, refit
    let mut fit = None;
    for pass in 0..2 {
        let t2 = n.cross(&t1);
        let local = ring.map(|q| Vector3::new(q.dot(&t1), q.dot(&t2), q.dot(&n)));
        let f = fit_quadric(&local);
        if f.degenerate {
            return degenerate_result;
        }
        let (d, e) = (f.coef[3], f.coef[4]);
        if pass == 0 {
            let Some(n_new) = (n - t1 * d - t2 * e).try_normalize(1e-300) else {
                return degenerate_result;
            };
            n = n_new;
            t1 = match (t1 - n * t1.dot(&n)).try_normalize(1e-300) {
                Some(t) => t,
                None => return degenerate_result,
            };
        }
        fit = Some((f, t1, t2, n));
    }
    let (f, t1, t2, n0) = fit.expect("two passes always run");
    let [a, b, c, d, e, _] = [
        f.coef[0], f.coef[1], f.coef[2], f.coef[3], f.coef[4], f.coef[5],
    ];

    let (ee, ff, gg) = (1.0 + d * d, d * e, 1.0 + e * e);
    let w = (1.0 + d * d + e * e).sqrt();
    let (l, m, nn) = (2.0 * a / w, b / w, 2.0 * c / w);
    let det_i = ee * gg - ff * ff;
    let gauss = (l * nn - m * m) / det_i;
    let mean = (ee * nn - 2.0 * ff * m + gg * l) / (2.0 * det_i);
    let disc = (mean * mean - gauss).max(0.0).sqrt();
    let (k1, k2) = (mean + disc, mean - disc);

    // shape operator S = I⁻¹ II, eigenvector for k1 in (u, v)
    let s11 = (gg * l - ff * m) / det_i;
    let s12 = (gg * m - ff * nn) / det_i;
    let s21 = (ee * m - ff * l) / det_i;
    let s22 = (ee * nn - ff * m) / det_i;
    let cand_a = Vector2::new(s12, k1 - s11);
    let cand_b = Vector2::new(k1 - s22, s21);
    let mut v = if cand_a.norm() >= cand_b.norm() {
        cand_a
    } else {
        cand_b
    };
    if v.norm() < 1e-14 * (k1.abs() + k2.abs()).max(1e-300) {
        v = Vector2::new(1.0, 0.0);
    }
    let normal = (n0 - t1 * d - t2 * e) / w;
    let dir1 = ((t1 + n0 * d) * v.x + (t2 + n0 * e) * v.y).normalize();
    let dir2 = normal.cross(&dir1).normalize();
    VertexCurvature {
        k1,
        k2,
        gauss,
        dir1,
        dir2,
        normal,
        degenerate: false,
        interior: true,
    }
}

/// Result of fitting a torus to a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusFit {
    pub spec: TorusSpec,
    pub patch: TorusPatch,
    /// RMS point-to-surface distance, mm.
    pub rms: f64,
}

/// Fits a placed torus to a mesh sampling part of its inner side.
///
/// Initial radii come from curvature estimates: `r2` from the median tube
/// curvature and `r1` from the largest circumferential curvature magnitude.
/// Radii and pose are then refined by Levenberg–Marquardt on the
/// point-to-torus distance. Both assignments of the two principal families to
/// tube and circumference are tried; the lower residual wins.
pub fn fit_torus(mesh: &SurfaceMesh) -> Result<TorusFit> {
    let stride = ((mesh.nu.min(mesh.nv) - 1) / 8).max(1);
    let curv = estimate_curvatures_with_stride(mesh, stride)?;
    let diag = mesh.bbox_diagonal();
    if !(diag > 0.0) {
        return Err(Error::Geometry("mesh has zero extent".into()));
    }

    let samples: Vec<(Vector3<f64>, &VertexCurvature)> = mesh
        .vertices
        .iter()
        .zip(&curv)
        .filter(|(_, c)| c.interior && !c.degenerate)
        .map(|(p, c)| (*p, c))
        .collect();
    if samples.is_empty() {
        return Err(Error::Geometry(
            "no usable interior vertices for curvature estimation".into(),
        ));
    }
    // Gaussian curvature made dimensionless by the mesh extent
    let negative = samples
        .iter()
        .filter(|(_, c)| c.gauss * diag * diag < -1e-9)
        .count();
    if negative == 0 {
        return Err(Error::UnsupportedTarget(
            "nonnegative Gaussian curvature".into(),
        ));
    }
    if negative < samples.len() {
        return Err(Error::UnsupportedTarget(format!(
            "mixed-sign Gaussian curvature ({} of {} interior vertices negative)",
            negative,
            samples.len()
        )));
    }

    let mut best: Option<TorusFit> = None;
    for side in [1.0, -1.0] {
        let Some(init) = initial_guess(&samples, side) else {
            continue;
        };
        let Some(fit) = refine_torus(&mesh.vertices, init) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| fit.rms < b.rms) {
            best = Some(fit);
        }
    }
    let (spec, frame, rms) = best
        .map(|b| (b.spec, b.patch.frame, b.rms))
        .ok_or_else(|| Error::Geometry("torus fit did not converge".into()))?;

    // ψ measured from the patch centroid
    let centroid = mesh.vertices.iter().sum::<Vector3<f64>>() / mesh.vertices.len() as f64;
    let axis = frame.axis();
    let radial = centroid - frame.origin;
    let e_ref = (radial - axis * radial.dot(&axis))
        .try_normalize(1e-300)
        .ok_or_else(|| Error::Geometry("patch centroid lies on the torus axis".into()))?;
    let frame = TorusFrame {
        origin: frame.origin,
        rotation: Matrix3::from_columns(&[e_ref, axis.cross(&e_ref), axis]),
    };
    let probe = TorusPatch {
        spec,
        beta_range: (PI, PI),
        psi_range: (0.0, 0.0),
        frame,
    };
    let mut beta = (f64::INFINITY, f64::NEG_INFINITY);
    let mut psi = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &mesh.vertices {
        let c = probe.locate(v);
        beta = (beta.0.min(c.beta), beta.1.max(c.beta));
        psi = (psi.0.min(c.psi), psi.1.max(c.psi));
    }
    let patch = TorusPatch::placed(spec, beta, psi, frame)?;
    Ok(TorusFit { spec, patch, rms })
}

#[derive(Debug, Clone, Copy)]
struct TorusParams {
    r1: f64,
    r2: f64,
    origin: Vector3<f64>,
    axis: Vector3<f64>,
}

fn initial_guess(samples: &[(Vector3<f64>, &VertexCurvature)], side: f64) -> Option<TorusParams> {
    // `side` flips the normal so that the tube curvature is the positive family
    let mut tube: Vec<f64> = samples
        .iter()
        .map(|(_, c)| if side > 0.0 { c.k1 } else { -c.k2 })
        .collect();
    let circ_max = samples
        .iter()
        .map(|(_, c)| if side > 0.0 { c.k2 } else { -c.k1 })
        .fold(0.0, |m: f64, k| m.max(-k));
    tube.sort_by(f64::total_cmp);
    let k_tube = tube[tube.len() / 2];
    if !(k_tube > 0.0 && circ_max > 0.0) {
        return None;
    }
    let r2 = 1.0 / k_tube;
    let r1 = 1.0 / circ_max;

    let first = if side > 0.0 {
        samples[0].1.dir1
    } else {
        samples[0].1.dir2
    };
    let mut axis = Vector3::zeros();
    let mut normal = Vector3::zeros();
    let mut centre = Vector3::zeros();
    for (p, c) in samples {
        let d = if side > 0.0 { c.dir1 } else { c.dir2 };
        axis += if d.dot(&first) >= 0.0 { d } else { -d };
        let n = c.normal * side;
        normal += n;
        centre += p + n * r2;
    }
    let count = samples.len() as f64;
    let axis = axis.try_normalize(1e-300)?;
    centre /= count;
    let radial = (normal - axis * normal.dot(&axis)).try_normalize(1e-300)?;
    Some(TorusParams {
        r1,
        r2,
        origin: centre - radial * (r1 + r2),
        axis,
    })
}

fn torus_residuals(points: &[Vector3<f64>], p: &TorusParams, out: &mut Vec<f64>) {
    out.clear();
    let rh = p.r1 + p.r2;
    out.extend(points.iter().map(|q| {
        let d = q - p.origin;
        let z = d.dot(&p.axis);
        let rho = (d - p.axis * z).norm();
        (rho - rh).hypot(z) - p.r2
    }));
}

fn perpendicular_basis(a: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if a.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let b1 = a.cross(&helper).normalize();
    let b2 = a.cross(&b1);
    (b1, b2)
}

fn apply_step(p: &TorusParams, dx: &SVector<f64, 7>) -> TorusParams {
    let (b1, b2) = perpendicular_basis(&p.axis);
    TorusParams {
        r1: p.r1 + dx[0],
        r2: p.r2 + dx[1],
        origin: p.origin + Vector3::new(dx[2], dx[3], dx[4]),
        axis: (p.axis + b1 * dx[5] + b2 * dx[6]).normalize(),
    }
}

fn refine_torus(points: &[Vector3<f64>], init: TorusParams) -> Option<TorusFit> {
    let mut p = init;
    let mut r = Vec::new();
    let mut rp = Vec::new();
    let mut rm = Vec::new();
    torus_residuals(points, &p, &mut r);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;

    for _ in 0..200 {
        let scale = p.r1 + p.r2;
        let steps = [
            1e-6 * scale,
            1e-6 * scale,
            1e-6 * scale,
            1e-6 * scale,
            1e-6 * scale,
            1e-7,
            1e-7,
        ];
        let mut jac = vec![SVector::<f64, 7>::zeros(); points.len()];
        for (k, h) in steps.iter().enumerate() {
            let mut dx = SVector::<f64, 7>::zeros();
            dx[k] = *h;
            torus_residuals(points, &apply_step(&p, &dx), &mut rp);
            dx[k] = -*h;
            torus_residuals(points, &apply_step(&p, &dx), &mut rm);
            for (row, (a, b)) in jac.iter_mut().zip(rp.iter().zip(&rm)) {
                row[k] = (a - b) / (2.0 * h);
            }
        }
        let mut jtj = SMatrix::<f64, 7, 7>::zeros();
        let mut jtr = SVector::<f64, 7>::zeros();
        for (row, res) in jac.iter().zip(&r) {
            jtj += row * row.transpose();
            jtr += row * *res;
        }

        let mut improved = false;
        for _ in 0..20 {
            let mut lhs = jtj;
            for k in 0..7 {
                lhs[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let Some(dx) = lhs.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = apply_step(&p, &dx);
            if !(trial.r1 > 0.0 && trial.r2 > 0.0) {
                lambda *= 10.0;
                continue;
            }
            torus_residuals(points, &trial, &mut rp);
            let trial_cost: f64 = rp.iter().map(|v| v * v).sum();
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost.max(1e-300);
                p = trial;
                std::mem::swap(&mut r, &mut rp);
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 4.0;
        }
        if !improved || cost < 1e-30 * points.len() as f64 {
            break;
        }
    }

    let spec = TorusSpec::new(p.r1, p.r2).ok()?;
    // patch must sit on the inner side of the tube
    let inner = points
        .iter()
        .filter(|q| {
            let d = *q - p.origin;
            let z = d.dot(&p.axis);
            (d - p.axis * z).norm() < spec.rh()
        })
        .count();
    if inner * 2 < points.len() {
        return None;
    }
    let (e1, e2) = perpendicular_basis(&p.axis);
    let frame = TorusFrame {
        origin: p.origin,
        rotation: Matrix3::from_columns(&[e1, e2, p.axis]),
    };
    Some(TorusFit {
        spec,
        patch: TorusPatch {
            spec,
            beta_range: (PI, PI),
            psi_range: (0.0, 0.0),
            frame,
        },
        rms: (cost / points.len() as f64).sqrt(),
    })
}

/// Arc length along the inner middle circle for an angular span `dpsi`.
pub fn middle_circle_arc(spec: &TorusSpec, dpsi: f64) -> f64 {
    spec.r1 * dpsi
}

/// Arc length along the tube circle for an angular span `dbeta`.
pub fn tube_arc(spec: &TorusSpec, dbeta: f64) -> f64 {
    spec.r2 * dbeta
}

/// Patch flattened into the plane spanned by the principal directions:
/// `X` runs along the middle circle (κ₁ direction, arc length `r1·ψ`), `Y`
/// along the tube circle (κ₂ direction, arc length `r2·(β − π)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlattenedPatch {
    /// Corners A, B, C, D in (X, Y), mm.
    pub inner: [Vector2<f64>; 4],
    /// Axis-aligned bounding rectangle of the corners, `(min, max)`.
    pub outer: (Vector2<f64>, Vector2<f64>),
    /// |AB|, the printing x edge, mm.
    pub l_ab: f64,
    /// |AD|, the printing y edge, mm.
    pub l_ad: f64,
    /// Projection of AB onto the middle-circle direction, mm.
    pub am: f64,
    /// Projection of AB onto the tube direction, mm.
    pub bm: f64,
    /// Principal angle: from the printing x-axis (AB) to the κ₁ direction,
    /// degrees in (-90, 90]. Its magnitude is `atan(BM/AM)`.
    pub phi_deg: f64,
    /// Interior angle at A between AB and AD, degrees.
    pub corner_angle_deg: f64,
}

/// Tolerance on the z-symmetry of opposite corners, relative to `r2`.
pub const CORNER_SYMMETRY_TOL: f64 = 1e-3;

pub fn flatten_patch(patch: &TorusPatch, corners: &[Corner; 4]) -> Result<FlattenedPatch> {
    let spec = &patch.spec;
    for (label, c) in ["A", "B", "C", "D"].iter().zip(corners) {
        if !on_inner_side(c.beta) {
            return Err(Error::Geometry(format!(
                "corner {label} at β = {:.6} rad is not on the inner side of the torus",
                c.beta
            )));
        }
        if !patch.contains(c) {
            return Err(Error::Geometry(format!(
                "corner {label} lies outside the patch"
            )));
        }
    }
    let z = |c: &Corner| spec.r2 * c.beta.sin();
    let tol = CORNER_SYMMETRY_TOL * spec.r2;
    for (p, q, names) in [(0, 2, "A/C"), (1, 3, "B/D")] {
        let gap = (z(&corners[p]) + z(&corners[q])).abs();
        if gap > tol {
            return Err(Error::Geometry(format!(
                "corners {names} are not mirror images about the middle circle (|z + z'| = {gap:.3e} mm)"
            )));
        }
    }

    let psi_mean = corners.iter().map(|c| c.psi).sum::<f64>() / 4.0;
    let inner = corners.map(|c| {
        Vector2::new(
            middle_circle_arc(spec, c.psi - psi_mean),
            tube_arc(spec, c.beta - PI),
        )
    });
    let ab = inner[1] - inner[0];
    let ad = inner[3] - inner[0];
    if !(ab.norm() > 0.0 && ad.norm() > 0.0) {
        return Err(Error::Geometry("degenerate corner rectangle".into()));
    }
    let handed = ab.perp(&ad);
    if handed == 0.0 {
        return Err(Error::Geometry("corners are collinear".into()));
    }
    let (am, bm) = (ab.x.abs(), ab.y.abs());
    // direction of AB measured from X, as a line angle
    let alpha = if ab.x == 0.0 {
        90.0
    } else {
        (ab.y / ab.x).atan().to_degrees()
    };
    let phi_deg = wrap_half_turn(-handed.signum() * alpha);

    let mut lo = inner[0];
    let mut hi = inner[0];
    for p in &inner[1..] {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Ok(FlattenedPatch {
        inner,
        outer: (lo, hi),
        l_ab: ab.norm(),
        l_ad: ad.norm(),
        am,
        bm,
        phi_deg,
        corner_angle_deg: handed.abs().atan2(ab.dot(&ad)).to_degrees(),
    })
}

/// Maps printing-plane coordinates `(u, v)` (u along AB, v along AD, origin at
/// the rectangle centre) into torus coordinates, for a patch centred on the
/// inner middle circle at ψ = 0 whose κ₁ direction makes `phi_deg` with AB.
pub fn printing_to_torus(spec: &TorusSpec, phi_deg: f64, u: f64, v: f64) -> Corner {
    let (s, c) = sin_cos_deg(phi_deg);
    let x = u * c + v * s;
    let y = -u * s + v * c;
    Corner {
        beta: PI + y / spec.r2,
        psi: x / spec.r1,
    }
}

/// A centred `l_ab × l_ad` rectangle laid on the inner side of a torus, with
/// its κ₁ direction at `phi_deg` from AB. Returns the patch and A, B, C, D.
pub fn rectangle_on_torus(
    spec: TorusSpec,
    phi_deg: f64,
    l_ab: f64,
    l_ad: f64,
) -> Result<(TorusPatch, [Corner; 4])> {
    parallelogram_on_torus(spec, phi_deg, l_ab, l_ad, 90.0)
}

/// Like [`rectangle_on_torus`], with an interior angle `angle_deg` at A
/// between AB and AD.
pub fn parallelogram_on_torus(
    spec: TorusSpec,
    phi_deg: f64,
    l_ab: f64,
    l_ad: f64,
    angle_deg: f64,
) -> Result<(TorusPatch, [Corner; 4])> {
    spec.validate()?;
    if !(l_ab > 0.0 && l_ad > 0.0) {
        return Err(Error::Validation(
            "corner quadrilateral edges must be positive".into(),
        ));
    }
    if !(angle_deg > 0.0 && angle_deg < 180.0) {
        return Err(Error::Validation(format!(
            "corner angle must lie in (0, 180) degrees, got {angle_deg}"
        )));
    }
    let (s, c) = sin_cos_deg(angle_deg);
    let ab = Vector2::new(l_ab, 0.0);
    let ad = Vector2::new(l_ad * c, l_ad * s);
    let centre = (ab + ad) * 0.5;
    let corners = [Vector2::zeros(), ab, ab + ad, ad]
        .map(|p| p - centre)
        .map(|p| printing_to_torus(&spec, phi_deg, p.x, p.y));
    let mut beta = (f64::INFINITY, f64::NEG_INFINITY);
    let mut psi = (f64::INFINITY, f64::NEG_INFINITY);
    for c in &corners {
        beta = (beta.0.min(c.beta), beta.1.max(c.beta));
        psi = (psi.0.min(c.psi), psi.1.max(c.psi));
    }
    let patch = TorusPatch::new(spec, beta, psi)?;
    Ok((patch, corners))
}

/// Samples the printing rectangle of [`rectangle_on_torus`] as an `nu × nv`
/// grid (i along AB, j along AD), so the mesh corners are A, B, C, D.
pub fn sample_rectangle(
    patch: &TorusPatch,
    phi_deg: f64,
    l_ab: f64,
    l_ad: f64,
    nu: usize,
    nv: usize,
) -> Result<SurfaceMesh> {
    if nu < 2 || nv < 2 {
        return Err(Error::Validation(
            "preview grid must be at least 2×2".into(),
        ));
    }
    SurfaceMesh::from_fn(nu, nv, |i, j| {
        let u = l_ab * (i as f64 / (nu - 1) as f64 - 0.5);
        let v = l_ad * (j as f64 / (nv - 1) as f64 - 0.5);
        let c = printing_to_torus(&patch.spec, phi_deg, u, v);
        patch.point(c.beta, c.psi)
    })
}

/// Small-deflection preview of a deployed `a × b` plate: in-plane affine
/// stretch plus the quadratic deflection implied by the curvatures.
pub fn quadratic_preview(
    state: &MidplaneState,
    a: f64,
    b: f64,
    nu: usize,
    nv: usize,
) -> Result<SurfaceMesh> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Validation(
            "plate dimensions must be positive".into(),
        ));
    }
    if nu < 2 || nv < 2 {
        return Err(Error::Validation(
            "preview grid must be at least 2×2".into(),
        ));
    }
    let (ex, ey, g) = (state.eps0[0], state.eps0[1], state.eps0[2]);
    let (kx, ky, kxy) = (state.kappa[0], state.kappa[1], state.kappa[2]);
    SurfaceMesh::from_fn(nu, nv, |i, j| {
        let x = a * (i as f64 / (nu - 1) as f64 - 0.5);
        let y = b * (j as f64 / (nv - 1) as f64 - 0.5);
        Vector3::new(
            (1.0 + ex) * x + 0.5 * g * y,
            0.5 * g * x + (1.0 + ey) * y,
            -0.5 * kx * x * x - 0.5 * ky * y * y - 0.5 * kxy * x * y,
        )
    })
}

pub fn obj_string(mesh: &SurfaceMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 48);
    let _ = writeln!(out, "# grid {} {}", mesh.nu, mesh.nv);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:.8e} {:.8e} {:.8e}", v.x, v.y, v.z);
    }
    for i in 0..mesh.nu - 1 {
        for j in 0..mesh.nv - 1 {
            let idx = |i, j| mesh.index(i, j) + 1;
            let _ = writeln!(
                out,
                "f {} {} {} {}",
                idx(i, j),
                idx(i + 1, j),
                idx(i + 1, j + 1),
                idx(i, j + 1)
            );
        }
    }
    out
}

pub fn export_obj(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, obj_string(mesh).as_bytes())
}

pub fn parse_obj(text: &str) -> Result<SurfaceMesh> {
    let bad = |line: usize, msg: &str| Error::Parse {
        what: "OBJ".into(),
        message: format!("line {line}: {msg}"),
    };
    let mut grid: Option<(usize, usize)> = None;
    let mut vertices = Vec::new();
    let mut faces: Vec<[usize; 4]> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut it = comment.split_whitespace();
            if it.next() == Some("grid") {
                let dims: Vec<usize> = it
                    .map(|t| t.parse().map_err(|_| bad(line_no, "bad grid size")))
                    .collect::<Result<_>>()?;
                if dims.len() != 2 {
                    return Err(bad(line_no, "grid comment needs exactly two sizes"));
                }
                grid = Some((dims[0], dims[1]));
            }
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .map(|t| t.parse().map_err(|_| bad(line_no, "bad vertex coordinate")))
                    .collect::<Result<_>>()?;
                if c.len() < 3 {
                    return Err(bad(line_no, "vertex needs three coordinates"));
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| bad(line_no, "bad face index"))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 4 {
                    return Err(Error::Topology(format!(
                        "line {line_no}: only quad faces are supported"
                    )));
                }
                faces.push([idx[0], idx[1], idx[2], idx[3]]);
            }
            Some("vn" | "vt" | "o" | "g" | "s" | "mtllib" | "usemtl") => {}
            Some(other) => return Err(bad(line_no, &format!("unsupported record {other:?}"))),
            None => {}
        }
    }
    let (nu, nv) =
        grid.ok_or_else(|| Error::Topology("missing '# grid nu nv' metadata comment".into()))?;
    let mesh = SurfaceMesh::new(nu, nv, vertices)?;
    if !faces.is_empty() {
        if faces.len() != mesh.quad_count() {
            return Err(Error::Topology(format!(
                "{} faces do not match a {nu}×{nv} grid",
                faces.len()
            )));
        }
        let mut expected = Vec::with_capacity(faces.len());
        for i in 0..nu - 1 {
            for j in 0..nv - 1 {
                let idx = |i, j| mesh.index(i, j) + 1;
                expected.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        let canon = |f: &[usize; 4]| {
            let mut s = *f;
            s.sort_unstable();
            s
        };
        let mut have: Vec<[usize; 4]> = faces.iter().map(canon).collect();
        let mut want: Vec<[usize; 4]> = expected.iter().map(canon).collect();
        have.sort_unstable();
        want.sort_unstable();
        if have != want {
            return Err(Error::Topology(
                "faces do not follow the declared grid layout".into(),
            ));
        }
    }
    Ok(mesh)
}

pub fn import_obj(path: &Path) -> Result<SurfaceMesh> {
    parse_obj(&crate::io::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameterization_examples() {
        let spec = TorusSpec::new(10.0, 5.0).unwrap();
        assert_eq!(spec.rh(), 15.0);
        let p = torus_point(&spec, PI, 0.0);
        assert!((p - Vector3::new(10.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(torus_point(&spec, 0.0, 0.0), Vector3::new(20.0, 0.0, 0.0));
        let p = torus_point(&spec, FRAC_PI_2, FRAC_PI_2);
        assert!((p - Vector3::new(0.0, 15.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn analytic_curvatures() {
        let spec = TorusSpec::new(10.0, 5.0).unwrap();
        let (k1, k2, k) = torus_curvatures(&spec, FRAC_PI_2);
        assert!(k1.abs() < 1e-16 && k.abs() < 1e-16);
        assert_eq!(k2, 0.2);
        let (k1, k2, k) = torus_curvatures(&spec, PI);
        assert_eq!(k1, -0.1);
        assert_eq!(k2, 0.2);
        assert!((k + 0.02).abs() < 1e-17);
    }

    #[test]
    fn invalid_specs() {
        assert!(TorusSpec::new(0.0, 1.0).is_err());
        assert!(TorusSpec::new(1.0, -1.0).is_err());
        let spec = TorusSpec::new(10.0, 5.0).unwrap();
        assert!(matches!(
            TorusPatch::new(spec, (1.0, 3.0), (0.0, 0.1)),
            Err(Error::UnsupportedTarget(_))
        ));
    }

    #[test]
    fn arc_lengths() {
        let spec = TorusSpec::new(50.0, 5.0).unwrap();
        assert!((middle_circle_arc(&spec, 0.2) - 10.0).abs() < 1e-12);
        let whole = middle_circle_arc(&spec, 0.3);
        let halves = middle_circle_arc(&spec, 0.15) + middle_circle_arc(&spec, 0.15);
        assert_eq!(whole, halves);
        assert!((tube_arc(&spec, 0.4) - 2.0).abs() < 1e-15);
    }

    fn flat(corners: [(f64, f64); 4]) -> Result<FlattenedPatch> {
        let spec = TorusSpec::new(10.0, 5.0).unwrap();
        let patch = TorusPatch::new(spec, (2.0, 4.3), (-1.0, 1.0)).unwrap();
        flatten_patch(&patch, &corners.map(|(b, p)| Corner::new(b, p)))
    }

    #[test]
    fn axis_aligned_rectangle_has_zero_angle() {
        // AB along the middle circle: BM = 0
        let f = flat([
            (PI - 0.2, -0.3),
            (PI - 0.2, 0.3),
            (PI + 0.2, 0.3),
            (PI + 0.2, -0.3),
        ])
        .unwrap();
        assert_eq!(f.bm, 0.0);
        assert_eq!(f.phi_deg, 0.0);
        assert!((f.l_ab - 6.0).abs() < 1e-12);
        assert!((f.l_ad - 2.0).abs() < 1e-12);
        assert!((f.corner_angle_deg - 90.0).abs() < 1e-12);
    }

    #[test]
    fn equal_projections_give_45_degrees() {
        let spec = TorusSpec::new(10.0, 5.0).unwrap();
        let (patch, corners) = rectangle_on_torus(spec, 45.0, 4.0, 3.0).unwrap();
        let f = flatten_patch(&patch, &corners).unwrap();
        assert!((f.am - f.bm).abs() < 1e-12);
        assert!((f.phi_deg - 45.0).abs() < 1e-12);
        assert!((f.bm / f.am).atan().to_degrees() - 45.0 < 1e-12);
        assert!((f.l_ab - 4.0).abs() < 1e-12 && (f.l_ad - 3.0).abs() < 1e-12);
        // inner rectangle inscribed in the outer one
        for p in &f.inner {
            assert!(p.x >= f.outer.0.x && p.x <= f.outer.1.x);
            assert!(p.y >= f.outer.0.y && p.y <= f.outer.1.y);
        }
    }

    #[test]
    fn rectangle_angle_round_trip() {
        let spec = TorusSpec::new(12.0, 7.0).unwrap();
        for phi in [-80.0, -30.0, 0.0, 10.0, 60.0, 90.0] {
            let (patch, corners) = rectangle_on_torus(spec, phi, 5.0, 2.0).unwrap();
            let f = flatten_patch(&patch, &corners).unwrap();
            assert!((f.phi_deg - phi).abs() < 1e-9, "{phi} -> {}", f.phi_deg);
        }
    }

    #[test]
    fn parallelogram_keeps_its_corner_angle() {
        let spec = TorusSpec::new(12.0, 7.0).unwrap();
        let (patch, corners) = parallelogram_on_torus(spec, 25.0, 5.0, 3.0, 80.0).unwrap();
        let f = flatten_patch(&patch, &corners).unwrap();
        assert!((f.corner_angle_deg - 80.0).abs() < 1e-9);
        assert!((f.phi_deg - 25.0).abs() < 1e-9);
        assert!((f.l_ab - 5.0).abs() < 1e-12 && (f.l_ad - 3.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_corners_rejected() {
        let r = flat([
            (PI - 0.2, -0.3),
            (PI - 0.2, 0.3),
            (PI + 0.4, 0.3),
            (PI + 0.2, -0.3),
        ]);
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn zero_state_preview_is_flat() {
        let m = quadratic_preview(&MidplaneState::zero(), 10.0, 6.0, 3, 4).unwrap();
        assert_eq!(m.vertex(0, 0), Vector3::new(-5.0, -3.0, 0.0));
        assert_eq!(m.vertex(2, 3), Vector3::new(5.0, 3.0, 0.0));
        assert!(m.vertices.iter().all(|v| v.z == 0.0));
    }

    #[test]
    fn obj_small_grid_has_one_face() {
        let m = SurfaceMesh::from_fn(2, 2, |i, j| Vector3::new(i as f64, j as f64, 0.0)).unwrap();
        let text = obj_string(&m);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 1);
        assert!(text.starts_with("# grid 2 2\n"));
        assert_eq!(parse_obj(&text).unwrap(), m);
    }

    #[test]
    fn obj_requires_grid_metadata() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 3 4 2\n";
        assert!(matches!(parse_obj(text), Err(Error::Topology(_))));
        let wrong = "# grid 2 2\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 1\n";
        assert!(matches!(parse_obj(wrong), Err(Error::Topology(_))));
        assert!(matches!(
            parse_obj("# grid 2 2\nv 0 0 x\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn plane_curvature_is_zero() {
        let m = SurfaceMesh::from_fn(9, 7, |i, j| {
            Vector3::new(0.3 * i as f64, 0.2 * j as f64 + 0.05 * i as f64, 0.0)
        })
        .unwrap();
        for c in estimate_curvatures(&m).unwrap() {
            assert!(!c.degenerate);
            assert!(c.k1.abs() < 1e-9 && c.k2.abs() < 1e-9 && c.gauss.abs() < 1e-9);
        }
    }

    #[test]
    fn too_small_for_stencil() {
        let m = SurfaceMesh::from_fn(2, 5, |i, j| Vector3::new(i as f64, j as f64, 0.0)).unwrap();
        assert!(matches!(estimate_curvatures(&m), Err(Error::Topology(_))));
    }

    #[test]
    fn collapsed_neighbourhood_is_flagged_not_fatal() {
        let mut m =
            SurfaceMesh::from_fn(5, 5, |i, j| Vector3::new(i as f64, j as f64, 0.0)).unwrap();
        for j in 0..5 {
            let idx = m.index(1, j);
            m.vertices[idx] = m.vertex(2, j);
        }
        let curv = estimate_curvatures(&m).unwrap();
        assert!(curv[m.index(2, 2)].degenerate);
        assert_eq!(curv.len(), 25);
    }
}
