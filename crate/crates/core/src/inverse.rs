//! Inverse design: from a target surface with negative Gaussian curvature to
//! a print plan (printing angles, layer thicknesses, flat plate dimensions and
//! activation temperature), plus verification of a plan against its target.
//!
//! The target is superimposed on a torus. Its principal curvatures are the
//! signed circumferential curvature on the inner middle circle, `-1/r1`, and
//! the tube curvature `1/r2`; the principal angle comes from flattening the
//! target's corner rectangle. The design space is searched on a grid and
//! every promising local minimum is refined on the continuous forward model.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::angle::{direction_distance, wrap_half_turn};
use crate::designmap::{
    check_thicknesses, classify_mode, curvatures_from_principal, principal_curvatures, theta_axis,
    AngleTable, ModeLabel, ModeTolerances, PrincipalCurvature,
};
use crate::error::{Error, Result};
use crate::laminate::{solve_plies, transform_recovery, transform_stiffness, MidplaneState, Ply};
use crate::material::{recovery_strains, reduced_stiffness, MaterialCard, ProcessRecord};
use crate::torusgeom::{
    fit_torus, flatten_patch, import_obj, parallelogram_on_torus, rectangle_on_torus, Corner,
    FlattenedPatch, SurfaceMesh, TorusPatch, TorusSpec,
};

/// A target surface: an analytic torus patch with its corner rectangle, or a
/// grid mesh with the vertex indices of its corners.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSurface {
    Analytic {
        patch: TorusPatch,
        /// A, B, C, D; AB is the printing x edge, AD the printing y edge.
        corners: [Corner; 4],
    },
    Mesh {
        mesh: SurfaceMesh,
        corners: [usize; 4],
    },
}

impl TargetSurface {
    /// Analytic target on an unplaced torus; the patch is the bounding range of the corners.
    pub fn analytic(spec: TorusSpec, corners: [Corner; 4]) -> Result<Self> {
        let mut beta = (f64::INFINITY, f64::NEG_INFINITY);
        let mut psi = (f64::INFINITY, f64::NEG_INFINITY);
        for c in &corners {
            if !(c.beta.is_finite() && c.psi.is_finite()) {
                return Err(Error::Validation("corner angles must be finite".into()));
            }
            beta = (beta.0.min(c.beta), beta.1.max(c.beta));
            psi = (psi.0.min(c.psi), psi.1.max(c.psi));
        }
        let patch = TorusPatch::new(spec, beta, psi)?;
        Ok(Self::Analytic { patch, corners })
    }

    /// Mesh target whose grid corners are A, B, C, D.
    pub fn mesh(mesh: SurfaceMesh) -> Self {
        let corners = mesh.corner_indices();
        Self::Mesh { mesh, corners }
    }

    /// Analytic target realising the curvatures `kappa` with a deployed
    /// `l_ab × l_ad` corner rectangle.
    pub fn from_curvatures(kappa: &Vector3<f64>, l_ab: f64, l_ad: f64) -> Result<Self> {
        let (spec, phi) = torus_for_curvatures(kappa)?;
        let (patch, corners) = rectangle_on_torus(spec, phi, l_ab, l_ad)?;
        Ok(Self::Analytic { patch, corners })
    }

    /// Analytic target matching the deployed shape of an `a × b` plate in
    /// `state`: its curvatures, and the corner quadrilateral spanned by the
    /// deployed plate edges, with AB along the printing x-axis.
    pub fn from_deployed(state: &MidplaneState, a: f64, b: f64) -> Result<Self> {
        let (spec, phi) = torus_for_curvatures(&state.kappa)?;
        let f = deformation_gradient(state);
        if !(f.determinant() > 0.0) {
            return Err(Error::SingularMap(
                "deployment map is not orientation preserving".into(),
            ));
        }
        let (l_ab, l_ad) = deployed_edges(state, a, b);
        let angle = corner_angle_deg(&f);
        let (patch, corners) = parallelogram_on_torus(spec, phi, l_ab, l_ad, angle)?;
        Ok(Self::Analytic { patch, corners })
    }
}

fn torus_for_curvatures(kappa: &Vector3<f64>) -> Result<(TorusSpec, f64)> {
    let pc = principal_curvatures(kappa[0], kappa[1], kappa[2]);
    if !(pc.k1 > 0.0 && pc.k2 < 0.0) {
        return Err(Error::UnsupportedTarget(
            "nonnegative Gaussian curvature".into(),
        ));
    }
    let spec = TorusSpec::new(-1.0 / pc.k2, 1.0 / pc.k1)?;
    Ok((spec, wrap_half_turn(pc.phi_deg + 90.0)))
}

/// On-disk form of an analytic target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticTargetFile {
    pub r1_mm: f64,
    pub r2_mm: f64,
    pub corners: Vec<CornerDeg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CornerDeg {
    pub beta_deg: f64,
    pub psi_deg: f64,
}

impl AnalyticTargetFile {
    pub fn into_target(&self) -> Result<TargetSurface> {
        let spec = TorusSpec::new(self.r1_mm, self.r2_mm)?;
        let corners: [CornerDeg; 4] = self.corners.clone().try_into().map_err(|_| {
            Error::Validation(format!(
                "target needs exactly 4 corners, got {}",
                self.corners.len()
            ))
        })?;
        TargetSurface::analytic(
            spec,
            corners.map(|c| Corner::new(c.beta_deg.to_radians(), c.psi_deg.to_radians())),
        )
    }

    pub fn from_target(target: &TargetSurface) -> Option<Self> {
        match target {
            TargetSurface::Analytic { patch, corners } => Some(Self {
                r1_mm: patch.spec.r1,
                r2_mm: patch.spec.r2,
                corners: corners
                    .iter()
                    .map(|c| CornerDeg {
                        beta_deg: c.beta.to_degrees(),
                        psi_deg: c.psi.to_degrees(),
                    })
                    .collect(),
            }),
            TargetSurface::Mesh { .. } => None,
        }
    }
}

/// Loads a target from a `.json` analytic description or a `.obj` grid mesh.
pub fn load_target(path: &Path) -> Result<TargetSurface> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("obj") => Ok(TargetSurface::mesh(import_obj(path)?)),
        Some("json") => {
            let text = crate::io::read_to_string(path)?;
            let file: AnalyticTargetFile =
                serde_json::from_str(&text).map_err(|e| Error::Parse {
                    what: "target".into(),
                    message: e.to_string(),
                })?;
            file.into_target()
        }
        _ => Err(Error::Validation(format!(
            "target {} must be a .json or .obj file",
            path.display()
        ))),
    }
}

/// Torus superposition of a target: the patch, its corners and the flattening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetGeometry {
    pub patch: TorusPatch,
    pub corners: [Corner; 4],
    pub flattened: FlattenedPatch,
    /// RMS torus-fit residual for mesh targets, mm.
    pub fit_rms: Option<f64>,
}

pub fn target_geometry(target: &TargetSurface) -> Result<TargetGeometry> {
    let (patch, corners, fit_rms) = match target {
        TargetSurface::Analytic { patch, corners } => (*patch, *corners, None),
        TargetSurface::Mesh { mesh, corners } => {
            if corners.iter().any(|&c| c >= mesh.vertices.len()) {
                return Err(Error::Validation("corner index outside the mesh".into()));
            }
            let fit = fit_torus(mesh)?;
            let located = corners.map(|c| fit.patch.locate(&mesh.vertices[c]));
            (fit.patch, located, Some(fit.rms))
        }
    };
    let flattened = flatten_patch(&patch, &corners)?;
    Ok(TargetGeometry {
        patch,
        corners,
        flattened,
        fit_rms,
    })
}

/// Structural-frame target curvatures and the principal description they came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTarget {
    pub kx: f64,
    pub ky: f64,
    pub kxy: f64,
    /// `k1` is the signed circumferential curvature `-1/r1`, `k2` the tube
    /// curvature `1/r2`, `phi_deg` the angle from printing x to the `k1` direction.
    pub principal: PrincipalCurvature,
}

impl CurvatureTarget {
    pub fn from_principal(principal: PrincipalCurvature) -> Self {
        let (kx, ky, kxy) = curvatures_from_principal(&principal);
        Self {
            kx,
            ky,
            kxy,
            principal,
        }
    }

    pub fn kappa(&self) -> Vector3<f64> {
        Vector3::new(self.kx, self.ky, self.kxy)
    }

    pub fn norm(&self) -> f64 {
        self.kappa().norm()
    }
}

pub fn curvature_target(target: &TargetSurface) -> Result<CurvatureTarget> {
    Ok(curvature_from_geometry(&target_geometry(target)?))
}

pub fn curvature_from_geometry(geometry: &TargetGeometry) -> CurvatureTarget {
    let spec = geometry.patch.spec;
    CurvatureTarget::from_principal(PrincipalCurvature {
        k1: -1.0 / spec.r1,
        k2: 1.0 / spec.r2,
        phi_deg: geometry.flattened.phi_deg,
    })
}

/// Forward model of one bilayer family at fixed thicknesses and temperature,
/// continuous in the printing angles.
#[derive(Debug, Clone, Copy)]
pub struct BilayerModel {
    q: Matrix3<f64>,
    eps1: f64,
    eps2: f64,
    t1: f64,
    t2: f64,
}

impl BilayerModel {
    pub fn new(material: &MaterialCard, t1: f64, t2: f64, t_a: f64) -> Result<Self> {
        check_thicknesses(t1, t2)?;
        let r = recovery_strains(material, t_a)?;
        Ok(Self {
            q: reduced_stiffness(&material.elastic)?,
            eps1: r.eps1,
            eps2: r.eps2,
            t1,
            t2,
        })
    }

    pub fn state(&self, theta1: f64, theta2: f64) -> Result<MidplaneState> {
        let h = self.t1 + self.t2;
        let z1 = -0.5 * h + self.t1;
        let ply = |theta: f64, z_bottom: f64, z_top: f64| Ply {
            qbar: transform_stiffness(&self.q, theta),
            alpha: transform_recovery(self.eps1, self.eps2, theta),
            z_bottom,
            z_top,
        };
        solve_plies(&[ply(theta1, -0.5 * h, z1), ply(theta2, z1, 0.5 * h)])
    }

    fn kappa(&self, theta: Vector2<f64>) -> Vector3<f64> {
        // only called at angles where the grid solve already succeeded nearby;
        // a failure here is treated as an infinitely poor match
        self.state(theta.x, theta.y)
            .map(|s| s.kappa)
            .unwrap_or_else(|_| Vector3::repeat(f64::INFINITY))
    }
}

/// A refined angle pair matching the target curvatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub theta1_deg: f64,
    pub theta2_deg: f64,
    /// ‖κ(θ₁, θ₂) − s·target‖₂ for the matched orientation `s`, 1/mm.
    pub residual: f64,
    pub state: MidplaneState,
    /// The match is against the negated target (opposite surface normal).
    pub normal_flipped: bool,
    /// The residual is locally flat along some direction: the candidate is one
    /// point of a continuum of near-equivalent designs.
    pub flat: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Grid step, degrees; must divide 180.
    pub step: f64,
    /// Candidacy threshold relative to ‖target‖₂.
    pub threshold_rel: f64,
    /// Grid minima up to this multiple of the threshold are refined.
    pub refine_factor: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            step: 1.0,
            threshold_rel: 0.05,
            refine_factor: 4.0,
        }
    }
}

pub fn search_candidates(
    target: &CurvatureTarget,
    material: &MaterialCard,
    t1: f64,
    t2: f64,
    t_a: f64,
    step: f64,
) -> Result<Vec<Candidate>> {
    let options = SearchOptions {
        step,
        ..SearchOptions::default()
    };
    search_candidates_with(target, material, t1, t2, t_a, &options)
}

fn orientation_residual(kappa: &Vector3<f64>, target: &Vector3<f64>) -> (f64, bool) {
    let plus = (kappa - target).norm();
    let minus = (kappa + target).norm();
    if minus < plus {
        (minus, true)
    } else {
        (plus, false)
    }
}

pub fn search_candidates_with(
    target: &CurvatureTarget,
    material: &MaterialCard,
    t1: f64,
    t2: f64,
    t_a: f64,
    options: &SearchOptions,
) -> Result<Vec<Candidate>> {
    let goal = target.kappa();
    if !goal.iter().all(|v| v.is_finite()) || goal.norm() == 0.0 {
        return Err(Error::UnsupportedTarget(
            "target curvature must be finite and nonzero".into(),
        ));
    }
    if !(options.threshold_rel > 0.0 && options.refine_factor >= 1.0) {
        return Err(Error::Validation("invalid candidacy threshold".into()));
    }
    let model = BilayerModel::new(material, t1, t2, t_a)?;
    let axis = theta_axis(options.step)?;
    let table = AngleTable::new(material, t_a, &axis)?;
    // +90 duplicates -90; the search grid is cyclic over the unique angles
    let n = axis.len() - 1;

    let mut grid = Vec::with_capacity(n * n);
    let mut kappa = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let state = solve_plies(&table.bilayer(i, j, t1, t2))?;
            grid.push(orientation_residual(&state.kappa, &goal).0);
            kappa.push(state.kappa);
        }
    }

    let threshold = options.threshold_rel * goal.norm();
    let best_grid = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let limit = options.refine_factor * threshold;
    // each seed is refined against one orientation of the target
    let mut seeds: Vec<(Vector2<f64>, f64)> = seed_cells(&grid, n, limit)
        .into_iter()
        .map(|(i, j)| {
            let flipped = orientation_residual(&kappa[i * n + j], &goal).1;
            (
                Vector2::new(axis[i], axis[j]),
                if flipped { -1.0 } else { 1.0 },
            )
        })
        .collect();
    for seed in diagonal_seeds(&kappa, n, &axis, options.step, &goal, limit) {
        let across = seed.y - seed.x;
        seeds.push((seed, 1.0));
        seeds.push((Vector2::new(seed.x, seed.x - across), -1.0));
    }

    let mut found: Vec<Candidate> = Vec::new();
    let mut best = best_grid;
    for (seed, sign) in seeds {
        let theta = refine(&model, &(goal * sign), seed, options.step);
        let cand = make_candidate(&model, &goal, theta)?;
        best = best.min(cand.residual);
        if cand.residual <= threshold {
            push_unique(&mut found, cand);
        }
    }

    // close the set under the bilayer symmetries
    let swap = layer_swap_symmetric(t1, t2);
    let mut images = Vec::new();
    for c in &found {
        let (a, b) = (c.theta1_deg, c.theta2_deg);
        let mut pairs = vec![(-a, -b)];
        if swap {
            pairs.push((b, a));
            pairs.push((-b, -a));
        }
        for (p, q) in pairs {
            let image = make_candidate(&model, &goal, Vector2::new(p, q))?;
            if image.residual <= threshold {
                images.push(image);
            }
        }
    }
    for image in images {
        push_unique(&mut found, image);
    }

    if found.is_empty() {
        return Err(Error::Infeasible { best, threshold });
    }
    found.sort_by(|x, y| {
        x.residual
            .total_cmp(&y.residual)
            .then(x.theta1_deg.total_cmp(&y.theta1_deg))
            .then(x.theta2_deg.total_cmp(&y.theta2_deg))
    });
    Ok(found)
}

/// Grid cells to refine: strict 2-D local minima under `limit` (and the few
/// lowest ones regardless, for targets smaller than the grid resolves), plus
/// 1-D minima along a row or column so that narrow diagonal valleys holding
/// several exact solutions are sampled along their length. 1-D seeds closer
/// than two cells to an accepted seed are dropped.
fn seed_cells(grid: &[f64], n: usize, limit: f64) -> Vec<(usize, usize)> {
    let at = |i: usize, j: usize| grid[(i % n) * n + j % n];
    let mut primary = Vec::new();
    let mut secondary = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let r = at(i, j);
            let mut is_min = true;
            'nb: for di in [n - 1, 0, 1] {
                for dj in [n - 1, 0, 1] {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ii, jj) = ((i + di) % n, (j + dj) % n);
                    // ties broken by index so plateaus yield one seed per run
                    let other = at(ii, jj);
                    if other < r || (other == r && (ii, jj) < (i, j)) {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if is_min {
                primary.push((r, i, j));
                continue;
            }
            if r > limit {
                continue;
            }
            let row_min = r <= at(i, j + n - 1) && r <= at(i, j + 1);
            let col_min = r <= at(i + n - 1, j) && r <= at(i + 1, j);
            if row_min || col_min {
                secondary.push((r, i, j));
            }
        }
    }
    let by_residual = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2)))
    };
    primary.sort_by(by_residual);
    secondary.sort_by(by_residual);
    let primary: Vec<(usize, usize)> = primary
        .iter()
        .enumerate()
        .filter(|(rank, c)| c.0 <= limit || *rank < ALWAYS_REFINED)
        .map(|(_, c)| (c.1, c.2))
        .collect();
    let cyclic = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(n - d)
    };
    let mut seeds = primary;
    for (_, i, j) in secondary {
        if seeds
            .iter()
            .all(|&(p, q)| cyclic(p, i).max(cyclic(q, j)) >= 2)
        {
            seeds.push((i, j));
        }
    }
    seeds
}

const ALWAYS_REFINED: usize = 8;

/// Seeds next to the θ₁ = θ₂ line, where κ vanishes and small targets are
/// reached within a fraction of a grid cell. Across the line
/// κ(θ, θ + δ) ≈ δ·g(θ); the best δ and its linearised residual are taken
/// from the grid neighbours of each diagonal cell.
fn diagonal_seeds(
    kappa: &[Vector3<f64>],
    n: usize,
    axis: &[f64],
    step: f64,
    goal: &Vector3<f64>,
    limit: f64,
) -> Vec<Vector2<f64>> {
    let fit: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let up = kappa[k * n + (k + 1) % n];
            let down = kappa[k * n + (k + n - 1) % n];
            let g = (up - down) / (2.0 * step);
            let gg = g.norm_squared();
            if gg == 0.0 {
                return (f64::INFINITY, 0.0);
            }
            let delta = g.dot(goal) / gg;
            ((g * delta - goal).norm(), delta)
        })
        .collect();
    (0..n)
        .filter(|&k| {
            let r = fit[k].0;
            r <= limit
                && r <= fit[(k + n - 1) % n].0
                && r <= fit[(k + 1) % n].0
                && fit[k].1.abs() <= 3.0 * step
        })
        .map(|k| Vector2::new(axis[k], axis[k] + fit[k].1))
        .collect()
}

fn layer_swap_symmetric(t1: f64, t2: f64) -> bool {
    (t1 - t2).abs() <= 1e-12 * t1.max(t2)
}

const SAME_ANGLE_DEG: f64 = 1e-4;

fn same_pair(a: &Candidate, b: &Candidate) -> bool {
    direction_distance(a.theta1_deg, b.theta1_deg) <= SAME_ANGLE_DEG
        && direction_distance(a.theta2_deg, b.theta2_deg) <= SAME_ANGLE_DEG
}

fn push_unique(list: &mut Vec<Candidate>, cand: Candidate) {
    match list.iter_mut().find(|c| same_pair(c, &cand)) {
        Some(existing) => {
            if cand.residual < existing.residual {
                *existing = cand;
            }
        }
        None => list.push(cand),
    }
}

fn make_candidate(
    model: &BilayerModel,
    goal: &Vector3<f64>,
    theta: Vector2<f64>,
) -> Result<Candidate> {
    let t1 = wrap_half_turn(theta.x);
    let t2 = wrap_half_turn(theta.y);
    let state = model.state(t1, t2)?;
    let (residual, normal_flipped) = orientation_residual(&state.kappa, goal);
    let jac = jacobian(model, Vector2::new(t1, t2));
    let sv = jac.svd(false, false).singular_values;
    let flat = !(sv.min() > 1e-6 * sv.max());
    Ok(Candidate {
        theta1_deg: t1,
        theta2_deg: t2,
        residual,
        state,
        normal_flipped,
        flat,
    })
}

fn jacobian(model: &BilayerModel, theta: Vector2<f64>) -> nalgebra::Matrix3x2<f64> {
    let h = 1e-5;
    let mut jac = nalgebra::Matrix3x2::zeros();
    for k in 0..2 {
        let mut e = Vector2::zeros();
        e[k] = h;
        let d = (model.kappa(theta + e) - model.kappa(theta - e)) / (2.0 * h);
        jac.set_column(k, &d);
    }
    jac
}

/// Coordinate-wise golden-section descent down to 1e-3°, then a damped
/// Gauss–Newton polish, both on ‖κ(θ) − goal‖.
fn refine(
    model: &BilayerModel,
    goal: &Vector3<f64>,
    seed: Vector2<f64>,
    step: f64,
) -> Vector2<f64> {
    let f = |t: Vector2<f64>| (model.kappa(t) - goal).norm();
    let mut theta = seed;
    let mut radius = step;
    for _ in 0..60 {
        let start = theta;
        for k in 0..2 {
            let mut lo = theta;
            let mut hi = theta;
            lo[k] -= radius;
            hi[k] += radius;
            theta = golden(&f, lo, hi, 1e-3);
        }
        let moved = (theta - start).abs().max();
        if moved < 1e-3 {
            break;
        }
        radius = (2.0 * moved).clamp(2e-3, step);
    }
    polish(model, goal, theta)
}

fn golden(
    f: &impl Fn(Vector2<f64>) -> f64,
    mut a: Vector2<f64>,
    mut b: Vector2<f64>,
    tol: f64,
) -> Vector2<f64> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - (b - a) * g;
    let mut d = a + (b - a) * g;
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs().max() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * g;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * g;
            fd = f(d);
        }
    }
    if fc < fd {
        c
    } else {
        d
    }
}

fn polish(model: &BilayerModel, g: &Vector3<f64>, start: Vector2<f64>) -> Vector2<f64> {
    let mut theta = start;
    let mut r = model.kappa(theta) - *g;
    let mut mu = 1e-6;
    for _ in 0..50 {
        let jac = jacobian(model, theta);
        let jtj = jac.transpose() * jac;
        let jtr = jac.transpose() * r;
        let mut accepted = false;
        for _ in 0..12 {
            let lhs = jtj + Matrix2::identity() * (mu * jtj.trace().max(1e-300));
            let Some(delta) = lhs.lu().solve(&(-jtr)) else {
                mu *= 10.0;
                continue;
            };
            let trial = theta + delta;
            let rt = model.kappa(trial) - *g;
            if rt.norm() < r.norm() {
                theta = trial;
                r = rt;
                mu = (mu * 0.1).max(1e-12);
                accepted = delta.abs().max() > 1e-13;
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    theta
}

/// Filtering knobs. Bounds are on the flat plate dimensions, mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterCriteria {
    pub max_a: Option<f64>,
    pub max_b: Option<f64>,
    /// Residuals this close to the best rank as equal to it, 1/mm.
    pub residual_tie: f64,
    /// Corner-angle mismatches this close to the best rank as equal to it, degrees.
    pub corner_tie_deg: f64,
}

impl Default for FilterCriteria {
    fn default() -> Self {
        Self {
            max_a: None,
            max_b: None,
            residual_tie: 1e-10,
            corner_tie_deg: 1e-6,
        }
    }
}

/// A surviving candidate with its flat plate dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate: Candidate,
    pub a_mm: f64,
    pub b_mm: f64,
    /// |deployed corner angle − target corner angle|, degrees.
    pub corner_mismatch_deg: f64,
}

/// Deduplicates symmetry-equivalent candidates, rejects those whose flat
/// dimensions break the bounds, and ranks the rest by curvature residual,
/// then deployed corner-angle mismatch, then orientation (target normal
/// first), then |γxy⁰|.
pub fn filter_candidates(
    candidates: &[Candidate],
    flattened: &FlattenedPatch,
    layer_swap: bool,
    criteria: &FilterCriteria,
) -> Result<Vec<RankedCandidate>> {
    if candidates.is_empty() {
        return Err(Error::Validation("no candidates to filter".into()));
    }
    let mut unique: Vec<Candidate> = Vec::new();
    for c in candidates {
        let mut c = *c;
        c.theta1_deg = wrap_half_turn(c.theta1_deg);
        c.theta2_deg = wrap_half_turn(c.theta2_deg);
        if layer_swap && c.theta1_deg < c.theta2_deg {
            // the swapped layup deploys with the same strains and opposite curvature
            c = Candidate {
                theta1_deg: c.theta2_deg,
                theta2_deg: c.theta1_deg,
                state: MidplaneState {
                    eps0: c.state.eps0,
                    kappa: -c.state.kappa,
                },
                normal_flipped: !c.normal_flipped,
                ..c
            };
        }
        push_unique(&mut unique, c);
    }

    let mut reasons = Vec::new();
    let mut kept = Vec::new();
    for c in unique {
        let label = format!("({:.3}°, {:.3}°)", c.theta1_deg, c.theta2_deg);
        let (a, b) = match initial_dimensions(&c.state, flattened) {
            Ok(ab) => ab,
            Err(e) => {
                reasons.push(format!("{label}: {e}"));
                continue;
            }
        };
        if let Some(max_a) = criteria.max_a {
            if a > max_a {
                reasons.push(format!("{label}: a = {a:.4} mm exceeds max_a = {max_a} mm"));
                continue;
            }
        }
        if let Some(max_b) = criteria.max_b {
            if b > max_b {
                reasons.push(format!("{label}: b = {b:.4} mm exceeds max_b = {max_b} mm"));
                continue;
            }
        }
        let corner = corner_angle_deg(&deformation_gradient(&c.state));
        kept.push(RankedCandidate {
            candidate: c,
            a_mm: a,
            b_mm: b,
            corner_mismatch_deg: (corner - flattened.corner_angle_deg).abs(),
        });
    }
    if kept.is_empty() {
        return Err(Error::OverConstrained { reasons });
    }
    let bucket = |values: Vec<f64>, tie: f64| {
        let floor = values.iter().copied().fold(f64::INFINITY, f64::min);
        move |v: f64| if v - floor <= tie { floor } else { v }
    };
    let rank_residual = bucket(
        kept.iter().map(|k| k.candidate.residual).collect(),
        criteria.residual_tie.max(0.0),
    );
    let rank_corner = bucket(
        kept.iter().map(|k| k.corner_mismatch_deg).collect(),
        criteria.corner_tie_deg.max(0.0),
    );
    kept.sort_by(|x, y| {
        let (p, q) = (&x.candidate, &y.candidate);
        rank_residual(p.residual)
            .total_cmp(&rank_residual(q.residual))
            .then(rank_corner(x.corner_mismatch_deg).total_cmp(&rank_corner(y.corner_mismatch_deg)))
            .then(p.normal_flipped.cmp(&q.normal_flipped))
            .then(
                p.state
                    .gamma_xy()
                    .abs()
                    .total_cmp(&q.state.gamma_xy().abs()),
            )
            .then(p.theta1_deg.total_cmp(&q.theta1_deg))
            .then(p.theta2_deg.total_cmp(&q.theta2_deg))
    });
    Ok(kept)
}

/// In-plane deployment map of the flat plate.
pub fn deformation_gradient(state: &MidplaneState) -> Matrix2<f64> {
    let half = 0.5 * state.eps0[2];
    Matrix2::new(1.0 + state.eps0[0], half, half, 1.0 + state.eps0[1])
}

/// Angle between the deployed images of the plate edges, degrees.
pub fn corner_angle_deg(f: &Matrix2<f64>) -> f64 {
    let (ex, ey) = (f.column(0), f.column(1));
    (ex.x * ey.y - ex.y * ey.x)
        .abs()
        .atan2(ex.dot(&ey))
        .to_degrees()
}

/// Flat plate edges `(a, b)` whose deployed images have the lengths of AB and AD.
pub fn initial_dimensions(state: &MidplaneState, flattened: &FlattenedPatch) -> Result<(f64, f64)> {
    if !(flattened.l_ab > 0.0 && flattened.l_ad > 0.0) {
        return Err(Error::Validation(
            "deployed edge lengths must be positive".into(),
        ));
    }
    let (sx, sy) = (1.0 + state.eps0[0], 1.0 + state.eps0[1]);
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::SingularMap(format!(
            "non-positive stretch (1+εx = {sx}, 1+εy = {sy})"
        )));
    }
    let f = deformation_gradient(state);
    if !(f.determinant() > 0.0) {
        return Err(Error::SingularMap(format!(
            "deformation gradient determinant {} is not positive",
            f.determinant()
        )));
    }
    let ex = f.column(0).norm();
    let ey = f.column(1).norm();
    Ok((flattened.l_ab / ex, flattened.l_ad / ey))
}

/// Deployed lengths of the images of the flat plate edges.
pub fn deployed_edges(state: &MidplaneState, a: f64, b: f64) -> (f64, f64) {
    let f = deformation_gradient(state);
    (a * f.column(0).norm(), b * f.column(1).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanResiduals {
    pub kappa_per_mm: f64,
    pub dims_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrintPlan {
    #[serde(rename = "a_mm")]
    pub a: f64,
    #[serde(rename = "b_mm")]
    pub b: f64,
    #[serde(rename = "theta1_deg")]
    pub theta1: f64,
    #[serde(rename = "theta2_deg")]
    pub theta2: f64,
    #[serde(rename = "t1_mm")]
    pub t1: f64,
    #[serde(rename = "t2_mm")]
    pub t2: f64,
    #[serde(rename = "ta_c")]
    pub t_a: f64,
    #[serde(rename = "t_act_s")]
    pub t_act: f64,
    pub material: String,
    pub residuals: PlanResiduals,
    pub process: ProcessRecord,
}

impl PrintPlan {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "print plan".into(),
            message: e.to_string(),
        })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::io::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_mm", self.a),
            ("b_mm", self.b),
            ("t1_mm", self.t1),
            ("t2_mm", self.t2),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("plan {name} must be positive")));
            }
        }
        for (name, v) in [("theta1_deg", self.theta1), ("theta2_deg", self.theta2)] {
            if !(v.is_finite() && (-90.0..=90.0).contains(&v)) {
                return Err(Error::Validation(format!(
                    "plan {name} must lie in [-90, 90]"
                )));
            }
        }
        if !(self.t_a.is_finite() && self.t_act.is_finite()) {
            return Err(Error::Validation("plan temperatures must be finite".into()));
        }
        if !(self.residuals.kappa_per_mm.is_finite() && self.residuals.dims_mm.is_finite()) {
            return Err(Error::Validation("plan residuals must be finite".into()));
        }
        Ok(())
    }

    /// Forward solve of the planned layup.
    pub fn deployed_state(&self, material: &MaterialCard) -> Result<MidplaneState> {
        self.check_material(material)?;
        BilayerModel::new(material, self.t1, self.t2, self.t_a)?.state(self.theta1, self.theta2)
    }

    pub fn check_material(&self, material: &MaterialCard) -> Result<()> {
        if material.name != self.material {
            return Err(Error::Validation(format!(
                "plan was made for material {:?}, got {:?}",
                self.material, material.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanOptions {
    pub search: SearchOptions,
    pub filter: FilterCriteria,
}

/// A plan together with what led to it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: PrintPlan,
    pub target: CurvatureTarget,
    pub geometry: TargetGeometry,
    pub ranked: Vec<RankedCandidate>,
}

/// Layer thicknesses `(t1, t2)` for a ratio `t1/t2` and a total thickness.
pub fn split_thickness(ratio: f64, total: f64) -> Result<(f64, f64)> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Validation(format!(
            "thickness ratio must be positive, got {ratio}"
        )));
    }
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Validation(format!(
            "total thickness must be positive, got {total}"
        )));
    }
    Ok((total * ratio / (1.0 + ratio), total / (1.0 + ratio)))
}

pub fn plan_pipeline(
    target: &TargetSurface,
    material: &Arc<MaterialCard>,
    thickness_ratio: f64,
    total_thickness: f64,
    t_a: f64,
    options: &PlanOptions,
) -> Result<PrintPlan> {
    plan_detailed(
        target,
        material,
        thickness_ratio,
        total_thickness,
        t_a,
        options,
    )
    .map(|o| o.plan)
}

pub fn plan_detailed(
    target: &TargetSurface,
    material: &Arc<MaterialCard>,
    thickness_ratio: f64,
    total_thickness: f64,
    t_a: f64,
    options: &PlanOptions,
) -> Result<PlanOutcome> {
    material.check_activation(t_a)?;
    let (t1, t2) = split_thickness(thickness_ratio, total_thickness)?;
    let geometry = target_geometry(target)?;
    plan_for_geometry(&geometry, material, t1, t2, t_a, options)
}

fn plan_for_geometry(
    geometry: &TargetGeometry,
    material: &Arc<MaterialCard>,
    t1: f64,
    t2: f64,
    t_a: f64,
    options: &PlanOptions,
) -> Result<PlanOutcome> {
    let target = curvature_from_geometry(geometry);
    let candidates = search_candidates_with(&target, material, t1, t2, t_a, &options.search)?;
    let ranked = filter_candidates(
        &candidates,
        &geometry.flattened,
        layer_swap_symmetric(t1, t2),
        &options.filter,
    )?;
    let top = ranked[0];
    let (l_ab, l_ad) = deployed_edges(&top.candidate.state, top.a_mm, top.b_mm);
    let dims = (l_ab - geometry.flattened.l_ab)
        .abs()
        .max((l_ad - geometry.flattened.l_ad).abs());
    let recovery = recovery_strains(material, t_a)?;
    let plan = PrintPlan {
        a: top.a_mm,
        b: top.b_mm,
        theta1: top.candidate.theta1_deg,
        theta2: top.candidate.theta2_deg,
        t1,
        t2,
        t_a,
        t_act: recovery.t_act,
        material: material.name.clone(),
        residuals: PlanResiduals {
            kappa_per_mm: top.candidate.residual,
            dims_mm: dims,
        },
        process: material.process,
    };
    Ok(PlanOutcome {
        plan,
        target,
        geometry: *geometry,
        ranked,
    })
}

/// Runs the pipeline over every `(ratio, t_a)` pair and keeps the plan with
/// the smallest curvature residual (ties: smaller dimension residual, then
/// sweep order). Every temperature is checked against the card first.
pub fn plan_sweep(
    target: &TargetSurface,
    material: &Arc<MaterialCard>,
    ratios: &[f64],
    t_as: &[f64],
    total_thickness: f64,
    options: &PlanOptions,
) -> Result<PlanOutcome> {
    if ratios.is_empty() || t_as.is_empty() {
        return Err(Error::Validation("sweep lists must be non-empty".into()));
    }
    for &t_a in t_as {
        material.check_activation(t_a)?;
    }
    let splits = ratios
        .iter()
        .map(|&r| split_thickness(r, total_thickness))
        .collect::<Result<Vec<_>>>()?;
    let geometry = target_geometry(target)?;

    let mut best: Option<PlanOutcome> = None;
    let mut first_err = None;
    for &(t1, t2) in &splits {
        for &t_a in t_as {
            match plan_for_geometry(&geometry, material, t1, t2, t_a, options) {
                Ok(outcome) => {
                    let better = best.as_ref().is_none_or(|b| {
                        let (p, q) = (&outcome.plan.residuals, &b.plan.residuals);
                        p.kappa_per_mm
                            .total_cmp(&q.kappa_per_mm)
                            .then(p.dims_mm.total_cmp(&q.dims_mm))
                            == Ordering::Less
                    });
                    if better {
                        best = Some(outcome);
                    }
                }
                Err(e) => {
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("sweep lists are non-empty"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationTolerances {
    pub kappa_per_mm: f64,
    pub dims_mm: f64,
}

impl Default for VerificationTolerances {
    fn default() -> Self {
        Self {
            kappa_per_mm: 1e-6,
            dims_mm: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationChecks {
    pub kappa: bool,
    pub dims: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationReport {
    pub residuals: PlanResiduals,
    pub mode: ModeLabel,
    pub normal_flipped: bool,
    pub state: MidplaneState,
    pub tolerances: VerificationTolerances,
    pub checks: VerificationChecks,
    pub passed: bool,
    /// Deployed shape: the flattened corner rectangle mapped back onto the target torus.
    #[serde(skip)]
    pub preview: Option<SurfaceMesh>,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn verify_plan(
    plan: &PrintPlan,
    target: &TargetSurface,
    material: &MaterialCard,
) -> Result<VerificationReport> {
    verify_plan_with(
        plan,
        target,
        material,
        &VerificationTolerances::default(),
        (21, 21),
    )
}

pub fn verify_plan_with(
    plan: &PrintPlan,
    target: &TargetSurface,
    material: &MaterialCard,
    tolerances: &VerificationTolerances,
    preview_grid: (usize, usize),
) -> Result<VerificationReport> {
    plan.validate()?;
    let state = plan.deployed_state(material)?;
    let geometry = target_geometry(target)?;
    let goal = curvature_from_geometry(&geometry).kappa();
    let (kappa_res, normal_flipped) = orientation_residual(&state.kappa, &goal);
    let (l_ab, l_ad) = deployed_edges(&state, plan.a, plan.b);
    let dims = (l_ab - geometry.flattened.l_ab)
        .abs()
        .max((l_ad - geometry.flattened.l_ad).abs());
    let tol_kappa = ModeTolerances::default().kappa_for_scale(state.kappa.abs().max());
    let checks = VerificationChecks {
        kappa: kappa_res <= tolerances.kappa_per_mm,
        dims: dims <= tolerances.dims_mm,
    };
    Ok(VerificationReport {
        residuals: PlanResiduals {
            kappa_per_mm: kappa_res,
            dims_mm: dims,
        },
        mode: classify_mode(&state, tol_kappa, ModeTolerances::default().gamma),
        normal_flipped,
        state,
        tolerances: *tolerances,
        checks,
        passed: checks.kappa && checks.dims,
        preview: Some(torus_preview(&geometry, preview_grid.0, preview_grid.1)?),
    })
}

/// The flattened corner rectangle mapped back onto the target torus, `nu × nv`
/// vertices with i along AB and j along AD.
pub fn torus_preview(geometry: &TargetGeometry, nu: usize, nv: usize) -> Result<SurfaceMesh> {
    if nu < 2 || nv < 2 {
        return Err(Error::Validation(
            "preview grid must be at least 2×2".into(),
        ));
    }
    let spec = geometry.patch.spec;
    let psi_mean = geometry.corners.iter().map(|c| c.psi).sum::<f64>() / 4.0;
    let [a, b, c, d] = geometry.flattened.inner;
    SurfaceMesh::from_fn(nu, nv, |i, j| {
        let s = i as f64 / (nu - 1) as f64;
        let t = j as f64 / (nv - 1) as f64;
        let p =
            a * ((1.0 - s) * (1.0 - t)) + b * (s * (1.0 - t)) + c * (s * t) + d * ((1.0 - s) * t);
        geometry
            .patch
            .point(PI + p.y / spec.r2, psi_mean + p.x / spec.r1)
    })
}
