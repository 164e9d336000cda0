//! Ray-optics estimates for an emitter inside an air-clad cylindrical core.
//!
//! Lengths are in micrometres. `a` is the core radius, `r` the emitter's
//! distance from the axis and `n` the core index.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::GeometryError;

/// Slack allowed on the arccos argument before it is treated as an error.
const ARCCOS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberGeometry {
    pub core_radius: f64,
    pub index: f64,
    pub offset: f64,
    pub wavelength: f64,
}

impl FiberGeometry {
    pub fn new(
        core_radius: f64,
        index: f64,
        offset: f64,
        wavelength: f64,
    ) -> Result<Self, GeometryError> {
        let g = Self {
            core_radius,
            index,
            offset,
            wavelength,
        };
        g.validate()?;
        Ok(g)
    }

    /// Geometry with unit core radius and the emitter at `r/a`.
    pub fn normalized(index: f64, r_over_a: f64) -> Result<Self, GeometryError> {
        Self::new(1.0, index, r_over_a, 1.0)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        check_index(self.index)?;
        if !(self.core_radius.is_finite() && self.core_radius > 0.0) {
            return Err(GeometryError::InvalidGeometry(format!(
                "core radius {} must be > 0",
                self.core_radius
            )));
        }
        if !(self.offset >= 0.0 && self.offset <= self.core_radius) {
            return Err(GeometryError::InvalidGeometry(format!(
                "offset {} must lie in [0, {}]",
                self.offset, self.core_radius
            )));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(GeometryError::InvalidGeometry(format!(
                "wavelength {} must be > 0",
                self.wavelength
            )));
        }
        Ok(())
    }

    pub fn r_over_a(&self) -> f64 {
        self.offset / self.core_radius
    }
}

fn check_index(n: f64) -> Result<(), GeometryError> {
    if n.is_finite() && n > 1.0 {
        Ok(())
    } else {
        Err(GeometryError::InvalidIndex(n))
    }
}

/// Fraction of isotropic emission captured by both directions of the guided
/// cone, `1 - 1/n`.
pub fn channeling_efficiency(n: f64) -> Result<f64, GeometryError> {
    check_index(n)?;
    Ok(1.0 - 1.0 / n)
}

/// Smallest offset at which total internal reflection can trap rays, `a/n`.
pub fn critical_offset(g: &FiberGeometry) -> Result<f64, GeometryError> {
    g.validate()?;
    Ok(g.core_radius / g.index)
}

/// Share of the core cross-section outside the critical radius, `1 - 1/n^2`.
pub fn tir_area_fraction(g: &FiberGeometry) -> Result<f64, GeometryError> {
    g.validate()?;
    Ok(1.0 - 1.0 / (g.index * g.index))
}

fn clamped_acos(x: f64) -> Result<f64, GeometryError> {
    if x.abs() <= 1.0 {
        Ok(x.acos())
    } else if x.abs() <= 1.0 + ARCCOS_SLACK {
        Ok(x.signum().acos().abs())
    } else {
        Err(GeometryError::InvalidGeometry(format!(
            "arccos argument {x} outside [-1, 1]"
        )))
    }
}

/// Azimuths `(phi_plus, phi_minus)` bounding the emission directions that
/// meet the wall exactly at the critical angle. `None` below the critical
/// offset, where no ray is trapped; equal angles exactly at it.
pub fn azimuthal_solutions(g: &FiberGeometry) -> Result<Option<(f64, f64)>, GeometryError> {
    g.validate()?;
    let n2 = g.index * g.index;
    let rho = g.r_over_a();
    if rho * g.index < 1.0 {
        return Ok(None);
    }
    let disc = (1.0 - n2 * (1.0 - (n2 - 1.0) * rho * rho)).max(0.0);
    let root = disc.sqrt();
    let scale = 1.0 / (n2 * rho);
    let plus = clamped_acos(scale * (1.0 + root))?;
    let minus = clamped_acos(scale * (1.0 - root))?;
    Ok(Some((plus, minus)))
}

/// Trapped share of the emission, `|phi_minus - phi_plus| / pi`.
pub fn confinement_efficiency(g: &FiberGeometry) -> Result<f64, GeometryError> {
    Ok(azimuthal_solutions(g)?.map_or(0.0, |(p, m)| (m - p).abs() / PI))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSet {
    pub modes: Vec<u32>,
    pub count: usize,
}

impl ModeSet {
    /// `m=13..18 count=6`, or `m=none count=0`.
    pub fn summary(&self) -> String {
        match (self.modes.first(), self.modes.last()) {
            (Some(a), Some(b)) if a == b => format!("m={a} count={}", self.count),
            (Some(a), Some(b)) => format!("m={a}..{b} count={}", self.count),
            _ => "m=none count=0".to_owned(),
        }
    }
}

/// Whole numbers `m` with `2 pi a / n < m lambda / (2 n) < 2 pi a`, i.e.
/// standing waves fitting between the critical circle and the wall.
pub fn wgm_mode_numbers(g: &FiberGeometry) -> Result<ModeSet, GeometryError> {
    g.validate()?;
    let lo = 4.0 * PI * g.core_radius / g.wavelength;
    let hi = g.index * lo;
    let first = lo.floor() + 1.0;
    let modes: Vec<u32> = if hi > first {
        let last = hi.ceil() - 1.0;
        (first as u64..=last as u64).map(|m| m as u32).collect()
    } else {
        Vec::new()
    };
    Ok(ModeSet {
        count: modes.len(),
        modes,
    })
}

/// `(r/a, eta)` on `points` evenly spaced offsets from 0 to `max_r_over_a`.
pub fn confinement_sweep(
    index: f64,
    points: usize,
    max_r_over_a: f64,
) -> Result<Vec<(f64, f64)>, GeometryError> {
    check_index(index)?;
    if points < 2 || !(max_r_over_a > 0.0 && max_r_over_a <= 1.0) {
        return Err(GeometryError::InvalidGeometry(format!(
            "sweep needs >= 2 points up to r/a in (0, 1], got {points} up to {max_r_over_a}"
        )));
    }
    (0..points)
        .map(|i| {
            let x = max_r_over_a * i as f64 / (points - 1) as f64;
            Ok((
                x,
                confinement_efficiency(&FiberGeometry::normalized(index, x)?)?,
            ))
        })
        .collect()
}

/// `(lambda, mode count)` for each wavelength.
pub fn mode_count_sweep(
    core_radius: f64,
    index: f64,
    wavelengths: &[f64],
) -> Result<Vec<(f64, usize)>, GeometryError> {
    wavelengths
        .iter()
        .map(|&l| {
            Ok((
                l,
                wgm_mode_numbers(&FiberGeometry::new(core_radius, index, 0.0, l)?)?.count,
            ))
        })
        .collect()
}
