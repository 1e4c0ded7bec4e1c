//! Lamina material cards: elastic constants plus the temperature-indexed
//! anisotropic recovery strains of a printed single layer.
//!
//! Recovery strains enter the laminate equations as thermal strains under a
//! unit temperature change, so `eps1`/`eps2` play the role of the expansion
//! coefficients directly.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticConstants {
    /// Longitudinal modulus along the printing direction, MPa.
    #[serde(rename = "e1_mpa")]
    pub e1: f64,
    /// Transverse modulus, MPa.
    #[serde(rename = "e2_mpa")]
    pub e2: f64,
    /// Major in-plane Poisson ratio.
    pub nu12: f64,
    /// In-plane shear modulus, MPa.
    #[serde(rename = "g12_mpa")]
    pub g12: f64,
}

impl ElasticConstants {
    pub fn nu21(&self) -> f64 {
        self.nu12 * self.e2 / self.e1
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.e1, self.e2, self.nu12, self.g12]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("elastic constants must be finite".into()));
        }
        if self.e1 <= 0.0 || self.e2 <= 0.0 || self.g12 <= 0.0 {
            return Err(Error::Validation(format!(
                "moduli must be positive (e1 = {}, e2 = {}, g12 = {})",
                self.e1, self.e2, self.g12
            )));
        }
        if self.nu12 <= 0.0 {
            return Err(Error::Validation(format!(
                "nu12 must be positive, got {}",
                self.nu12
            )));
        }
        if self.nu12 * self.nu21() >= 1.0 {
            return Err(Error::Validation(format!(
                "plane-stress stiffness not positive definite: nu12·nu21 = {} ≥ 1",
                self.nu12 * self.nu21()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryPoint {
    /// Activation temperature, °C.
    #[serde(rename = "ta_c")]
    pub t_a: f64,
    /// Steady-state strain along the printing direction (negative: shrink).
    pub eps1: f64,
    /// Steady-state strain across the printing direction (non-negative).
    pub eps2: f64,
    /// Time to reach the steady state, s.
    #[serde(rename = "t_act_s")]
    pub t_act: f64,
}

/// Printing conditions under which the recovery table was calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessRecord {
    pub nozzle_speed_mm_s: f64,
    pub nozzle_temp_c: f64,
    pub layer_height_mm: f64,
    pub flow_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialCard {
    pub name: String,
    #[serde(rename = "tg_c")]
    pub t_g: f64,
    pub elastic: ElasticConstants,
    pub recovery: Vec<RecoveryPoint>,
    pub process: ProcessRecord,
}

/// Interpolated recovery response at one activation temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryState {
    pub eps1: f64,
    pub eps2: f64,
    pub t_act: f64,
}

impl MaterialCard {
    pub fn from_json(text: &str) -> Result<Self> {
        let card: MaterialCard = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "material card".into(),
            message: e.to_string(),
        })?;
        card.validate()?;
        Ok(card)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Validation("material name is empty".into()));
        }
        if !self.t_g.is_finite() {
            return Err(Error::Validation("tg_c must be finite".into()));
        }
        self.elastic.validate()?;
        if self.recovery.is_empty() {
            return Err(Error::Validation("recovery table is empty".into()));
        }
        for (i, p) in self.recovery.iter().enumerate() {
            if ![p.t_a, p.eps1, p.eps2, p.t_act]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::Validation(format!(
                    "recovery point {i} has non-finite entries"
                )));
            }
            if p.t_a <= self.t_g {
                return Err(Error::Validation(format!(
                    "recovery point {i}: ta_c = {} does not exceed tg_c = {}",
                    p.t_a, self.t_g
                )));
            }
            if !(p.eps1 < 0.0 && p.eps2 >= 0.0) {
                return Err(Error::Validation(format!(
                    "recovery point {i}: expected eps1 < 0 <= eps2, got ({}, {})",
                    p.eps1, p.eps2
                )));
            }
            if p.t_act <= 0.0 {
                return Err(Error::Validation(format!(
                    "recovery point {i}: t_act_s must be positive"
                )));
            }
            if i > 0 && p.t_a <= self.recovery[i - 1].t_a {
                return Err(Error::Validation(format!(
                    "recovery table not strictly increasing in ta_c at point {i}"
                )));
            }
        }
        let pr = &self.process;
        let process_ok = [
            pr.nozzle_speed_mm_s,
            pr.nozzle_temp_c,
            pr.layer_height_mm,
            pr.flow_pct,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if !process_ok {
            return Err(Error::Validation(
                "process record entries must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    /// Calibrated activation-temperature range `(min, max)`, °C.
    pub fn calibrated_range(&self) -> (f64, f64) {
        let first = self.recovery.first().map_or(f64::NAN, |p| p.t_a);
        let last = self.recovery.last().map_or(f64::NAN, |p| p.t_a);
        (first, last)
    }

    /// Checks that `t_a` activates the material and lies in the calibrated range.
    pub fn check_activation(&self, t_a: f64) -> Result<()> {
        if !(t_a > self.t_g) {
            return Err(Error::BelowTg { t_a, t_g: self.t_g });
        }
        let (min, max) = self.calibrated_range();
        if !(t_a >= min && t_a <= max) {
            return Err(Error::OutOfRange { t_a, min, max });
        }
        Ok(())
    }
}

pub fn load_material_card(path: impl AsRef<Path>) -> Result<MaterialCard> {
    let text = crate::io::read_to_string(path.as_ref())?;
    MaterialCard::from_json(&text)
}

/// Piecewise-linear interpolation of the recovery table; no extrapolation.
pub fn recovery_strains(card: &MaterialCard, t_a: f64) -> Result<RecoveryState> {
    card.check_activation(t_a)?;
    let table = &card.recovery;
    // first knot with ta >= t_a; exists because t_a <= max
    let hi = table.partition_point(|p| p.t_a < t_a);
    let upper = table[hi];
    if upper.t_a == t_a || hi == 0 {
        return Ok(RecoveryState {
            eps1: upper.eps1,
            eps2: upper.eps2,
            t_act: upper.t_act,
        });
    }
    let lower = table[hi - 1];
    let w = (t_a - lower.t_a) / (upper.t_a - lower.t_a);
    let lerp = |a: f64, b: f64| a + w * (b - a);
    Ok(RecoveryState {
        eps1: lerp(lower.eps1, upper.eps1),
        eps2: lerp(lower.eps2, upper.eps2),
        t_act: lerp(lower.t_act, upper.t_act),
    })
}

/// Plane-stress reduced stiffness in the lamina axes, `[Q11 Q12 0; Q12 Q22 0; 0 0 Q66]`, MPa.
pub fn reduced_stiffness(elastic: &ElasticConstants) -> Result<Matrix3<f64>> {
    elastic.validate()?;
    let nu21 = elastic.nu21();
    let denom = 1.0 - elastic.nu12 * nu21;
    let q11 = elastic.e1 / denom;
    let q22 = elastic.e2 / denom;
    let q12 = elastic.nu12 * q22;
    let q66 = elastic.g12;
    Ok(Matrix3::new(
        q11, q12, 0.0, //
        q12, q22, 0.0, //
        0.0, 0.0, q66,
    ))
}
