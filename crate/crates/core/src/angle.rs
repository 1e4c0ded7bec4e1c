//! Degree-based trigonometry that is exact at multiples of 45°.
//!
//! Printing angles live on a 1° grid, and several design-map loci (pure axial
//! shrinkage at [0°, 0°] and [90°, 90°], zero twist at [0°, 90°]) depend on
//! sin/cos vanishing exactly there. `f64::to_radians().sin_cos()` leaves
//! residues of order 1e-17 that would otherwise leak into mode labels.

use std::f64::consts::FRAC_1_SQRT_2;

/// `(sin θ, cos θ)` for `θ` in degrees.
pub fn sin_cos_deg(theta: f64) -> (f64, f64) {
    let r = theta.rem_euclid(360.0);
    // nearest quadrant boundary and the small remainder in [-45, 45]
    let q = (r / 90.0).round();
    let rem = r - 90.0 * q;
    let (s, c) = if rem == 0.0 {
        (0.0, 1.0)
    } else if rem == 45.0 {
        (FRAC_1_SQRT_2, FRAC_1_SQRT_2)
    } else if rem == -45.0 {
        (-FRAC_1_SQRT_2, FRAC_1_SQRT_2)
    } else {
        rem.to_radians().sin_cos()
    };
    match q as i64 % 4 {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

/// Maps an angle in degrees into `(-90, 90]`, the period of a printing direction.
pub fn wrap_half_turn(theta: f64) -> f64 {
    let mut t = (theta + 90.0).rem_euclid(180.0) - 90.0;
    if t <= -90.0 {
        t += 180.0;
    }
    t
}

/// Smallest distance between two printing directions, in degrees (period 180°).
pub fn direction_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}
