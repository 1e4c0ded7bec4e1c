//! Classical lamination theory for printed laminates with recovery strains.
//!
//! Layer 1 is the bottom (first-printed) layer and occupies `z < 0`. Shear
//! strain and twist are engineering components: `γxy = 2εxy`,
//! `κxy = -2 ∂²w/∂x∂y`, with `κx = -∂²w/∂x²` and `κy = -∂²w/∂y²`.
//! A positive `κx` puts the centre of curvature on the `-z` side.

use std::sync::Arc;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::angle::sin_cos_deg;
use crate::error::{Error, Result};
use crate::material::{recovery_strains, reduced_stiffness, MaterialCard};

/// Largest admissible condition estimate of the equilibrated 6×6 system.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct LayerSpec {
    /// Printing angle, degrees counter-clockwise from the structural x-axis.
    pub theta_deg: f64,
    /// Layer thickness, mm.
    pub thickness: f64,
    pub material: Arc<MaterialCard>,
}

impl LayerSpec {
    pub fn new(theta_deg: f64, thickness: f64, material: Arc<MaterialCard>) -> Self {
        Self {
            theta_deg,
            thickness,
            material,
        }
    }
}

/// Ordered stack of layers, bottom to top, with interface coordinates
/// `z[0] = -h/2 < z[1] < … < z[n] = h/2`.
#[derive(Debug, Clone)]
pub struct Layup {
    layers: Vec<LayerSpec>,
    z: Vec<f64>,
}

impl Layup {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("layup has no layers".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if !(layer.thickness.is_finite() && layer.thickness > 0.0) {
                return Err(Error::Validation(format!(
                    "layer {} thickness must be positive, got {}",
                    k + 1,
                    layer.thickness
                )));
            }
            if !(-90.0..=90.0).contains(&layer.theta_deg) {
                return Err(Error::Validation(format!(
                    "layer {} angle {}° outside [-90, 90]",
                    k + 1,
                    layer.theta_deg
                )));
            }
            layer.material.validate()?;
        }
        let h: f64 = layers.iter().map(|l| l.thickness).sum();
        let mut z = Vec::with_capacity(layers.len() + 1);
        z.push(-0.5 * h);
        for layer in &layers[..layers.len() - 1] {
            let last = *z.last().unwrap();
            z.push(last + layer.thickness);
        }
        z.push(0.5 * h);
        Ok(Self { layers, z })
    }

    /// Two layers of one material: `theta1`/`t1` at the bottom, `theta2`/`t2` on top.
    pub fn bilayer(
        material: Arc<MaterialCard>,
        theta1: f64,
        theta2: f64,
        t1: f64,
        t2: f64,
    ) -> Result<Self> {
        Self::new(vec![
            LayerSpec::new(theta1, t1, material.clone()),
            LayerSpec::new(theta2, t2, material),
        ])
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn interfaces(&self) -> &[f64] {
        &self.z
    }

    pub fn thickness(&self) -> f64 {
        self.z[self.z.len() - 1] - self.z[0]
    }

    /// Same layers stacked in the opposite order.
    pub fn reversed(&self) -> Self {
        let mut layers = self.layers.clone();
        layers.reverse();
        Self::new(layers).expect("reversing a valid layup keeps it valid")
    }

    /// Resolves every layer into structural-frame stiffness and recovery strain.
    pub fn plies(&self, t_a: f64) -> Result<Vec<Ply>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(k, layer)| {
                let r = recovery_strains(&layer.material, t_a)?;
                let q = reduced_stiffness(&layer.material.elastic)?;
                Ok(Ply {
                    qbar: transform_stiffness(&q, layer.theta_deg),
                    alpha: transform_recovery(r.eps1, r.eps2, layer.theta_deg),
                    z_bottom: self.z[k],
                    z_top: self.z[k + 1],
                })
            })
            .collect()
    }
}

/// A layer resolved at one activation temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ply {
    pub qbar: Matrix3<f64>,
    pub alpha: Vector3<f64>,
    pub z_bottom: f64,
    pub z_top: f64,
}

impl Ply {
    fn moments(&self) -> (f64, f64, f64) {
        let (z0, z1) = (self.z_bottom, self.z_top);
        (
            z1 - z0,
            0.5 * (z1 * z1 - z0 * z0),
            (z1 * z1 * z1 - z0 * z0 * z0) / 3.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbdMatrices {
    /// Extension stiffness, N/mm.
    pub a: Matrix3<f64>,
    /// Extension–bending coupling, N.
    pub b: Matrix3<f64>,
    /// Bending stiffness, N·mm.
    pub d: Matrix3<f64>,
}

impl AbdMatrices {
    pub fn block(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.a);
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&self.b);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&self.b);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.d);
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalResultants {
    /// Thermal force resultant (Nx, Ny, Nxy), N/mm.
    pub n_t: Vector3<f64>,
    /// Thermal moment resultant (Mx, My, Mxy), N.
    pub m_t: Vector3<f64>,
}

impl ThermalResultants {
    pub fn stacked(&self) -> Vector6<f64> {
        Vector6::new(
            self.n_t[0],
            self.n_t[1],
            self.n_t[2],
            self.m_t[0],
            self.m_t[1],
            self.m_t[2],
        )
    }
}

/// Deployed midplane strains (εx⁰, εy⁰, γxy⁰) and curvatures (κx, κy, κxy, 1/mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "MidplaneRecord", into = "MidplaneRecord")]
pub struct MidplaneState {
    pub eps0: Vector3<f64>,
    pub kappa: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MidplaneRecord {
    eps_x: f64,
    eps_y: f64,
    gamma_xy: f64,
    kappa_x: f64,
    kappa_y: f64,
    kappa_xy: f64,
}

impl From<MidplaneRecord> for MidplaneState {
    fn from(r: MidplaneRecord) -> Self {
        Self {
            eps0: Vector3::new(r.eps_x, r.eps_y, r.gamma_xy),
            kappa: Vector3::new(r.kappa_x, r.kappa_y, r.kappa_xy),
        }
    }
}

impl From<MidplaneState> for MidplaneRecord {
    fn from(s: MidplaneState) -> Self {
        Self {
            eps_x: s.eps0[0],
            eps_y: s.eps0[1],
            gamma_xy: s.eps0[2],
            kappa_x: s.kappa[0],
            kappa_y: s.kappa[1],
            kappa_xy: s.kappa[2],
        }
    }
}

impl MidplaneState {
    pub fn zero() -> Self {
        Self {
            eps0: Vector3::zeros(),
            kappa: Vector3::zeros(),
        }
    }

    pub fn gamma_xy(&self) -> f64 {
        self.eps0[2]
    }
}

/// Rotates the on-axis reduced stiffness into the structural frame (Q̄).
pub fn transform_stiffness(q: &Matrix3<f64>, theta_deg: f64) -> Matrix3<f64> {
    let (s, c) = sin_cos_deg(theta_deg);
    let (q11, q12, q22, q66) = (q[(0, 0)], q[(0, 1)], q[(1, 1)], q[(2, 2)]);
    let (c2, s2) = (c * c, s * s);
    let (c4, s4, c2s2) = (c2 * c2, s2 * s2, c2 * s2);

    let b11 = q11 * c4 + 2.0 * (q12 + 2.0 * q66) * c2s2 + q22 * s4;
    let b22 = q11 * s4 + 2.0 * (q12 + 2.0 * q66) * c2s2 + q22 * c4;
    let b12 = (q11 + q22 - 4.0 * q66) * c2s2 + q12 * (c4 + s4);
    let b66 = (q11 + q22 - 2.0 * q12 - 2.0 * q66) * c2s2 + q66 * (c4 + s4);
    let b16 = (q11 - q12 - 2.0 * q66) * s * c * c2 + (q12 - q22 + 2.0 * q66) * s * s2 * c;
    let b26 = (q11 - q12 - 2.0 * q66) * s * s2 * c + (q12 - q22 + 2.0 * q66) * s * c * c2;

    Matrix3::new(
        b11, b12, b16, //
        b12, b22, b26, //
        b16, b26, b66,
    )
}

/// Recovery strains of a layer printed at `theta_deg`, in the structural
/// frame, as `(αx, αy, αxy)` with engineering shear.
pub fn transform_recovery(eps1: f64, eps2: f64, theta_deg: f64) -> Vector3<f64> {
    let (s, c) = sin_cos_deg(theta_deg);
    Vector3::new(
        eps1 * c * c + eps2 * s * s,
        eps1 * s * s + eps2 * c * c,
        2.0 * (eps1 - eps2) * s * c,
    )
}

pub fn abd_from_plies(plies: &[Ply]) -> AbdMatrices {
    let mut abd = AbdMatrices {
        a: Matrix3::zeros(),
        b: Matrix3::zeros(),
        d: Matrix3::zeros(),
    };
    for ply in plies {
        let (m0, m1, m2) = ply.moments();
        abd.a += ply.qbar * m0;
        abd.b += ply.qbar * m1;
        abd.d += ply.qbar * m2;
    }
    abd
}

pub fn resultants_from_plies(plies: &[Ply]) -> ThermalResultants {
    let mut th = ThermalResultants {
        n_t: Vector3::zeros(),
        m_t: Vector3::zeros(),
    };
    for ply in plies {
        let (m0, m1, _) = ply.moments();
        let f = ply.qbar * ply.alpha;
        th.n_t += f * m0;
        th.m_t += f * m1;
    }
    th
}

/// A, B and D of the layup. Stiffness does not depend on the activation
/// temperature in this model.
pub fn assemble_abd(layup: &Layup) -> AbdMatrices {
    let mut abd = AbdMatrices {
        a: Matrix3::zeros(),
        b: Matrix3::zeros(),
        d: Matrix3::zeros(),
    };
    for (k, layer) in layup.layers().iter().enumerate() {
        let q = reduced_stiffness(&layer.material.elastic)
            .expect("layup materials are validated on construction");
        let qbar = transform_stiffness(&q, layer.theta_deg);
        let (z0, z1) = (layup.z[k], layup.z[k + 1]);
        abd.a += qbar * (z1 - z0);
        abd.b += qbar * (0.5 * (z1 * z1 - z0 * z0));
        abd.d += qbar * ((z1 * z1 * z1 - z0 * z0 * z0) / 3.0);
    }
    abd
}

pub fn thermal_resultants(layup: &Layup, t_a: f64) -> Result<ThermalResultants> {
    Ok(resultants_from_plies(&layup.plies(t_a)?))
}

/// Solves `[A B; B D]·(ε, κ) = (Nᵀ, Mᵀ)` for a plate free of external loads.
pub fn solve_free_recovery(abd: &AbdMatrices, th: &ThermalResultants) -> Result<MidplaneState> {
    let k = abd.block();
    let rhs = th.stacked();

    // symmetric diagonal equilibration: N/mm, N and N·mm blocks differ in scale
    let mut scale = Vector6::zeros();
    for i in 0..6 {
        let d = k[(i, i)];
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::Singular {
                condition: f64::INFINITY,
            });
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let ks = Matrix6::from_fn(|i, j| k[(i, j)] * scale[i] * scale[j]);
    let bs = rhs.component_mul(&scale);

    let lu = ks.lu();
    let inverse = lu.try_inverse().ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    let condition = norm1(&ks) * norm1(&inverse);
    if !(condition.is_finite() && condition < MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }

    let mut y = lu.solve(&bs).ok_or(Error::Singular { condition })?;
    // one step of iterative refinement
    let r = bs - ks * y;
    if let Some(dy) = lu.solve(&r) {
        y += dy;
    }
    let x = y.component_mul(&scale);
    Ok(MidplaneState {
        eps0: Vector3::new(x[0], x[1], x[2]),
        kappa: Vector3::new(x[3], x[4], x[5]),
    })
}

/// Free-recovery state of a layup activated at `t_a`.
pub fn free_recovery(layup: &Layup, t_a: f64) -> Result<MidplaneState> {
    let plies = layup.plies(t_a)?;
    solve_plies(&plies)
}

pub fn solve_plies(plies: &[Ply]) -> Result<MidplaneState> {
    solve_free_recovery(&abd_from_plies(plies), &resultants_from_plies(plies))
}

fn norm1(m: &Matrix6<f64>) -> f64 {
    (0..6)
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Through-thickness in-plane stress of a laminate in a given midplane state.
#[derive(Debug, Clone)]
pub struct StressProfile {
    plies: Vec<Ply>,
    state: MidplaneState,
}

/// Builds the stress sampler `σ_k(z) = Q̄_k (ε + zκ − ᾱ_k)` for the layup.
pub fn lamina_stresses(layup: &Layup, state: &MidplaneState, t_a: f64) -> Result<StressProfile> {
    Ok(StressProfile {
        plies: layup.plies(t_a)?,
        state: *state,
    })
}

impl StressProfile {
    pub fn plies(&self) -> &[Ply] {
        &self.plies
    }

    pub fn bounds(&self) -> (f64, f64) {
        (
            self.plies[0].z_bottom,
            self.plies[self.plies.len() - 1].z_top,
        )
    }

    /// Stress at height `z`. An interface belongs to the layer below it.
    pub fn at(&self, z: f64) -> Result<Vector3<f64>> {
        let (lower, upper) = self.bounds();
        if !(z >= lower && z <= upper) {
            return Err(Error::Domain { z, lower, upper });
        }
        let k = self
            .plies
            .iter()
            .position(|p| z <= p.z_top)
            .unwrap_or(self.plies.len() - 1);
        Ok(self.in_layer(k, z))
    }

    /// Stress evaluated with layer `k`'s constitutive law (no range check on `z`).
    pub fn in_layer(&self, k: usize, z: f64) -> Vector3<f64> {
        let ply = &self.plies[k];
        let strain = self.state.eps0 + self.state.kappa * z - ply.alpha;
        ply.qbar * strain
    }

    /// `(∫σ dz, ∫σ z dz)` over the thickness, by two-point Gauss–Legendre per
    /// layer (exact for the linear stress field).
    pub fn net_resultants(&self) -> (Vector3<f64>, Vector3<f64>) {
        let g = 1.0 / 3f64.sqrt();
        let mut n = Vector3::zeros();
        let mut m = Vector3::zeros();
        for (k, ply) in self.plies.iter().enumerate() {
            let mid = 0.5 * (ply.z_bottom + ply.z_top);
            let half = 0.5 * (ply.z_top - ply.z_bottom);
            for z in [mid - half * g, mid + half * g] {
                let s = self.in_layer(k, z);
                n += s * half;
                m += s * (z * half);
            }
        }
        (n, m)
    }
}
