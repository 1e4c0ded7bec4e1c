//! The (θ₁, θ₂) design space of a bilayer: principal and Gaussian curvature,
//! deformation-mode labels, full-grid sweeps and their CSV/SVG exports.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::angle::sin_cos_deg;
use crate::error::{Error, Result};
use crate::laminate::{solve_plies, transform_recovery, transform_stiffness, MidplaneState, Ply};
use crate::material::{recovery_strains, reduced_stiffness, MaterialCard};

/// Principal curvatures `k1 ≥ k2` (1/mm) and the angle `phi_deg` from the
/// structural x-axis to the `k1` direction, in (-90, 90].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrincipalCurvature {
    pub k1: f64,
    pub k2: f64,
    pub phi_deg: f64,
}

/// Mohr's circle of curvature: principal values and direction of `(κx, κy, κxy)`.
pub fn principal_curvatures(kx: f64, ky: f64, kxy: f64) -> PrincipalCurvature {
    let mean = 0.5 * (kx + ky);
    let dev = 0.5 * (kx - ky);
    let twist = 0.5 * kxy;
    let radius = dev.hypot(twist);
    let phi_deg = if dev == 0.0 && twist == 0.0 {
        0.0
    } else {
        let phi = 0.5 * kxy.atan2(kx - ky).to_degrees();
        if phi <= -90.0 {
            phi + 180.0
        } else {
            phi
        }
    };
    PrincipalCurvature {
        k1: mean + radius,
        k2: mean - radius,
        phi_deg,
    }
}

/// Inverse Mohr transform. Accepts any `(k1, k2)` ordering: `k1` is simply
/// the curvature along `phi_deg`.
pub fn curvatures_from_principal(pc: &PrincipalCurvature) -> (f64, f64, f64) {
    let (s, c) = sin_cos_deg(pc.phi_deg);
    (
        pc.k1 * c * c + pc.k2 * s * s,
        pc.k1 * s * s + pc.k2 * c * c,
        2.0 * (pc.k1 - pc.k2) * s * c,
    )
}

pub fn gaussian_curvature(pc: &PrincipalCurvature) -> f64 {
    pc.k1 * pc.k2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeLabel {
    InPlaneAxial,
    InPlaneShear,
    Bending,
    Twisting,
}

impl ModeLabel {
    pub const ALL: [ModeLabel; 4] = [
        ModeLabel::InPlaneAxial,
        ModeLabel::InPlaneShear,
        ModeLabel::Bending,
        ModeLabel::Twisting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModeLabel::InPlaneAxial => "InPlaneAxial",
            ModeLabel::InPlaneShear => "InPlaneShear",
            ModeLabel::Bending => "Bending",
            ModeLabel::Twisting => "Twisting",
        }
    }

    fn colour(self) -> &'static str {
        match self {
            ModeLabel::InPlaneAxial => "#1b9e77",
            ModeLabel::InPlaneShear => "#7570b3",
            ModeLabel::Bending => "#d95f02",
            ModeLabel::Twisting => "#e7298a",
        }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Zero-curvature thresholds. The curvature threshold is the larger of an
/// absolute floor and a fraction of a reference curvature magnitude (the
/// largest |κ| over a map, or over a single state when there is no map).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTolerances {
    pub kappa_abs: f64,
    pub kappa_rel: f64,
    pub gamma: f64,
}

impl Default for ModeTolerances {
    fn default() -> Self {
        Self {
            kappa_abs: 1e-6,
            kappa_rel: 1e-3,
            gamma: 1e-6,
        }
    }
}

impl ModeTolerances {
    pub fn kappa_for_scale(&self, kappa_scale: f64) -> f64 {
        self.kappa_abs.max(self.kappa_rel * kappa_scale)
    }

    /// Labels a lone state, using its own largest curvature as the reference.
    pub fn classify(&self, state: &MidplaneState) -> ModeLabel {
        let tol = self.kappa_for_scale(state.kappa.abs().max());
        classify_mode(state, tol, self.gamma)
    }
}

pub fn classify_mode(state: &MidplaneState, tol_kappa: f64, tol_gamma: f64) -> ModeLabel {
    let k = &state.kappa;
    if k.abs().max() <= tol_kappa {
        if state.gamma_xy().abs() > tol_gamma {
            ModeLabel::InPlaneShear
        } else {
            ModeLabel::InPlaneAxial
        }
    } else if k[2].abs() <= tol_kappa {
        ModeLabel::Bending
    } else {
        ModeLabel::Twisting
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCell {
    pub theta1: f64,
    pub theta2: f64,
    pub state: MidplaneState,
    pub principal: PrincipalCurvature,
    /// Gaussian curvature, 1/mm².
    pub gauss: f64,
    pub mode: ModeLabel,
}

/// Full (θ₁, θ₂) grid for one thickness pair and activation temperature.
/// Cells are stored row-major: `cells[i * n + j]` has `θ₁ = axis[i]`, `θ₂ = axis[j]`.
#[derive(Debug, Clone)]
pub struct DesignMapGrid {
    pub theta_axis: Vec<f64>,
    pub t1: f64,
    pub t2: f64,
    pub t_a: f64,
    pub tol_kappa: f64,
    pub tol_gamma: f64,
    pub cells: Vec<MapCell>,
}

impl DesignMapGrid {
    pub fn n(&self) -> usize {
        self.theta_axis.len()
    }

    pub fn cell(&self, i: usize, j: usize) -> &MapCell {
        &self.cells[i * self.n() + j]
    }

    /// Index of an axis angle, if it lies on the grid.
    pub fn index_of(&self, theta: f64) -> Option<usize> {
        self.theta_axis
            .iter()
            .position(|&t| (t - theta).abs() < 1e-9)
    }

    pub fn at(&self, theta1: f64, theta2: f64) -> Option<&MapCell> {
        Some(self.cell(self.index_of(theta1)?, self.index_of(theta2)?))
    }

    pub fn step(&self) -> f64 {
        self.theta_axis[1] - self.theta_axis[0]
    }
}

/// Validates a grid step and returns the number of samples per axis.
pub fn axis_len(step: f64) -> Result<usize> {
    if !(step.is_finite() && step > 0.0 && step <= 180.0) {
        return Err(Error::Validation(format!(
            "grid step must be in (0, 180] degrees, got {step}"
        )));
    }
    let count = 180.0 / step;
    let rounded = count.round();
    if (count - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(Error::Validation(format!(
            "grid step {step}° does not divide 180° exactly"
        )));
    }
    Ok(rounded as usize + 1)
}

pub fn theta_axis(step: f64) -> Result<Vec<f64>> {
    let n = axis_len(step)?;
    let h = 180.0 / (n - 1) as f64;
    Ok((0..n).map(|i| -90.0 + h * i as f64).collect())
}

/// Per-angle structural stiffness and recovery strain of one material at `t_a`.
pub(crate) struct AngleTable {
    qbar: Vec<nalgebra::Matrix3<f64>>,
    alpha: Vec<nalgebra::Vector3<f64>>,
}

impl AngleTable {
    pub(crate) fn new(material: &MaterialCard, t_a: f64, angles: &[f64]) -> Result<Self> {
        material.validate()?;
        let r = recovery_strains(material, t_a)?;
        let q = reduced_stiffness(&material.elastic)?;
        Ok(Self {
            qbar: angles.iter().map(|&t| transform_stiffness(&q, t)).collect(),
            alpha: angles
                .iter()
                .map(|&t| transform_recovery(r.eps1, r.eps2, t))
                .collect(),
        })
    }

    pub(crate) fn bilayer(&self, i: usize, j: usize, t1: f64, t2: f64) -> [Ply; 2] {
        let h = t1 + t2;
        let z0 = -0.5 * h;
        let z1 = z0 + t1;
        [
            Ply {
                qbar: self.qbar[i],
                alpha: self.alpha[i],
                z_bottom: z0,
                z_top: z1,
            },
            Ply {
                qbar: self.qbar[j],
                alpha: self.alpha[j],
                z_bottom: z1,
                z_top: 0.5 * h,
            },
        ]
    }
}

pub(crate) fn check_thicknesses(t1: f64, t2: f64) -> Result<()> {
    for (k, t) in [(1, t1), (2, t2)] {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Validation(format!(
                "layer {k} thickness must be positive, got {t}"
            )));
        }
    }
    Ok(())
}

pub fn sweep_map(
    material: &Arc<MaterialCard>,
    t1: f64,
    t2: f64,
    t_a: f64,
    step: f64,
) -> Result<DesignMapGrid> {
    sweep_map_with(material, t1, t2, t_a, step, &ModeTolerances::default())
}

pub fn sweep_map_with(
    material: &Arc<MaterialCard>,
    t1: f64,
    t2: f64,
    t_a: f64,
    step: f64,
    tolerances: &ModeTolerances,
) -> Result<DesignMapGrid> {
    check_thicknesses(t1, t2)?;
    let axis = theta_axis(step)?;
    let table = AngleTable::new(material, t_a, &axis)?;
    let n = axis.len();

    let mut states = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            states.push(solve_plies(&table.bilayer(i, j, t1, t2))?);
        }
    }
    let kappa_scale = states
        .iter()
        .map(|s| s.kappa.abs().max())
        .fold(0.0, f64::max);
    let tol_kappa = tolerances.kappa_for_scale(kappa_scale);

    let cells = states
        .into_iter()
        .enumerate()
        .map(|(idx, state)| {
            let principal = principal_curvatures(state.kappa[0], state.kappa[1], state.kappa[2]);
            MapCell {
                theta1: axis[idx / n],
                theta2: axis[idx % n],
                state,
                principal,
                gauss: gaussian_curvature(&principal),
                mode: classify_mode(&state, tol_kappa, tolerances.gamma),
            }
        })
        .collect();

    Ok(DesignMapGrid {
        theta_axis: axis,
        t1,
        t2,
        t_a,
        tol_kappa,
        tol_gamma: tolerances.gamma,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapField {
    EpsX,
    EpsY,
    GammaXy,
    KappaX,
    KappaY,
    KappaXy,
    Gauss,
    Mode,
}

impl MapField {
    pub const NUMERIC: [MapField; 7] = [
        MapField::EpsX,
        MapField::EpsY,
        MapField::GammaXy,
        MapField::KappaX,
        MapField::KappaY,
        MapField::KappaXy,
        MapField::Gauss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MapField::EpsX => "eps_x",
            MapField::EpsY => "eps_y",
            MapField::GammaXy => "gamma_xy",
            MapField::KappaX => "kappa_x",
            MapField::KappaY => "kappa_y",
            MapField::KappaXy => "kappa_xy",
            MapField::Gauss => "K",
            MapField::Mode => "mode",
        }
    }

    /// Numeric value of the field at a cell; `None` for the categorical mode.
    pub fn value(self, cell: &MapCell) -> Option<f64> {
        let s = &cell.state;
        Some(match self {
            MapField::EpsX => s.eps0[0],
            MapField::EpsY => s.eps0[1],
            MapField::GammaXy => s.eps0[2],
            MapField::KappaX => s.kappa[0],
            MapField::KappaY => s.kappa[1],
            MapField::KappaXy => s.kappa[2],
            MapField::Gauss => cell.gauss,
            MapField::Mode => return None,
        })
    }
}

impl FromStr for MapField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "eps_x" => MapField::EpsX,
            "eps_y" => MapField::EpsY,
            "gamma_xy" => MapField::GammaXy,
            "kappa_x" => MapField::KappaX,
            "kappa_y" => MapField::KappaY,
            "kappa_xy" => MapField::KappaXy,
            "K" => MapField::Gauss,
            "mode" => MapField::Mode,
            other => {
                return Err(Error::Validation(format!(
                    "unknown map field {other:?} (expected eps_x, eps_y, gamma_xy, kappa_x, kappa_y, kappa_xy, K or mode)"
                )))
            }
        })
    }
}

#[derive(Serialize)]
struct CsvRow {
    theta1_deg: f64,
    theta2_deg: f64,
    eps_x: f64,
    eps_y: f64,
    gamma_xy: f64,
    kappa_x: f64,
    kappa_y: f64,
    kappa_xy: f64,
    k1: f64,
    k2: f64,
    phi_deg: f64,
    #[serde(rename = "K")]
    gauss: f64,
    mode: &'static str,
}

pub fn map_csv(grid: &DesignMapGrid) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &grid.cells {
        w.serialize(CsvRow {
            theta1_deg: c.theta1,
            theta2_deg: c.theta2,
            eps_x: c.state.eps0[0],
            eps_y: c.state.eps0[1],
            gamma_xy: c.state.eps0[2],
            kappa_x: c.state.kappa[0],
            kappa_y: c.state.kappa[1],
            kappa_xy: c.state.kappa[2],
            k1: c.principal.k1,
            k2: c.principal.k2,
            phi_deg: c.principal.phi_deg,
            gauss: c.gauss,
            mode: c.mode.as_str(),
        })
        .expect("writing CSV into memory cannot fail");
    }
    w.into_inner().expect("in-memory CSV writer flushes")
}

pub fn export_map_csv(grid: &DesignMapGrid, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &map_csv(grid))
}

pub fn render_map_svg(grid: &DesignMapGrid, field: MapField, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, map_svg(grid, field).as_bytes())
}

const CELL_AREA_PX: usize = 540;
const MARGIN: usize = 60;
const LEGEND_W: usize = 170;

fn diverging(t: f64) -> String {
    // white at zero, blue for negative, red for positive
    let (r, g, b) = if t < 0.0 {
        (33.0, 102.0, 172.0)
    } else {
        (178.0, 24.0, 43.0)
    };
    let a = t.abs().min(1.0);
    let mix = |c: f64| (255.0 + (c - 255.0) * a).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(r), mix(g), mix(b))
}

/// Static SVG heatmap: θ₁ left to right, θ₂ bottom to top.
pub fn map_svg(grid: &DesignMapGrid, field: MapField) -> String {
    let n = grid.n();
    let px = (CELL_AREA_PX / n).max(1);
    let side = px * n;
    let width = MARGIN * 2 + side + LEGEND_W;
    let height = MARGIN * 2 + side;

    let scale = grid
        .cells
        .iter()
        .filter_map(|c| field.value(c))
        .fold(0.0, |m: f64, v| m.max(v.abs()));

    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">
<title>{} for t1 = {} mm, t2 = {} mm, Ta = {} °C</title>
<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>
<g shape-rendering="crispEdges">"##,
        field.name(),
        grid.t1,
        grid.t2,
        grid.t_a
    );
    for i in 0..n {
        for j in 0..n {
            let c = grid.cell(i, j);
            let fill = match field.value(c) {
                Some(v) if scale > 0.0 => diverging(v / scale),
                Some(_) => "#ffffff".to_string(),
                None => c.mode.colour().to_string(),
            };
            let x = MARGIN + i * px;
            let y = MARGIN + (n - 1 - j) * px;
            let _ = writeln!(
                out,
                r#"<rect x="{x}" y="{y}" width="{px}" height="{px}" fill="{fill}"/>"#
            );
        }
    }
    out.push_str("</g>\n");

    // axes
    let bottom = MARGIN + side;
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{side}" height="{side}" fill="none" stroke="#000000"/>
<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">θ1 (deg)</text>
<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 {} {})">θ2 (deg)</text>"##,
        MARGIN + side / 2,
        bottom + 40,
        MARGIN - 40,
        MARGIN + side / 2,
        MARGIN - 40,
        MARGIN + side / 2
    );
    for tick in [-90, -45, 0, 45, 90] {
        let frac = (tick + 90) as f64 / 180.0;
        let x = MARGIN as f64 + frac * side as f64;
        let y = bottom as f64 - frac * side as f64;
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{tick}</text>
<text x="{}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{tick}</text>"#,
            bottom + 16,
            MARGIN - 6,
            y + 4.0
        );
    }

    // legend
    let lx = MARGIN * 2 + side;
    let _ = writeln!(
        out,
        r#"<g font-family="sans-serif" font-size="12"><text x="{lx}" y="{}">{}</text>"#,
        MARGIN - 10,
        field.name()
    );
    if field == MapField::Mode {
        for (k, mode) in ModeLabel::ALL.iter().enumerate() {
            let y = MARGIN + k * 24;
            let _ = writeln!(
                out,
                r#"<rect x="{lx}" y="{y}" width="16" height="16" fill="{}"/><text x="{}" y="{}">{}</text>"#,
                mode.colour(),
                lx + 22,
                y + 13,
                mode
            );
        }
    } else {
        let steps = 20;
        let bar_h = side / steps;
        for k in 0..=steps {
            let t = 1.0 - 2.0 * k as f64 / steps as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{lx}" y="{}" width="20" height="{bar_h}" fill="{}"/>"#,
                MARGIN + k * bar_h,
                diverging(t)
            );
        }
        for (k, v) in [(0, scale), (steps / 2, 0.0), (steps, -scale)] {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}">{v:.4e}</text>"#,
                lx + 26,
                MARGIN + k * bar_h + bar_h / 2 + 4
            );
        }
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Extreme value of one numeric field and where it occurs.
#[derive(Debug, Clone, Serialize)]
pub struct FieldExtrema {
    pub field: &'static str,
    pub min: f64,
    pub min_at_deg: [f64; 2],
    pub max: f64,
    pub max_at_deg: [f64; 2],
}

pub fn field_extrema(grid: &DesignMapGrid, field: MapField) -> Option<FieldExtrema> {
    let mut it = grid
        .cells
        .iter()
        .filter_map(|c| field.value(c).map(|v| (v, [c.theta1, c.theta2])));
    let first = it.next()?;
    let (mut lo, mut hi) = (first, first);
    for (v, at) in it {
        if v < lo.0 {
            lo = (v, at);
        }
        if v > hi.0 {
            hi = (v, at);
        }
    }
    Some(FieldExtrema {
        field: field.name(),
        min: lo.0,
        min_at_deg: lo.1,
        max: hi.0,
        max_at_deg: hi.1,
    })
}

/// Angles on the θ₁ = θ₂ diagonal where |γxy⁰| reaches its maximum
/// (ties within 1e-12 relative are all reported).
pub fn diagonal_shear_argmax(grid: &DesignMapGrid) -> Vec<f64> {
    let n = grid.n();
    let values: Vec<f64> = (0..n)
        .map(|i| grid.cell(i, i).state.gamma_xy().abs())
        .collect();
    let max = values.iter().copied().fold(0.0, f64::max);
    grid.theta_axis
        .iter()
        .zip(&values)
        .filter(|(_, &v)| max > 0.0 && v >= max * (1.0 - 1e-12))
        .map(|(&t, _)| t)
        .collect()
}
