//! Array layouts, wavevectors, steering vectors and target geometry.
//!
//! Azimuth is measured in the x-y plane from +x, elevation from the x-y
//! plane. Steering vectors use the narrowband approximation: every subcarrier
//! shares the carrier wavelength.

use nalgebra::Vector3;

use crate::{cis, CVec, Error, Result, C64, SPEED_OF_LIGHT};

pub type Position3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angles {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Angles {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Angles { azimuth, elevation }
    }

    /// Unit vector pointing along these angles.
    pub fn direction(&self) -> Vector3<f64> {
        let (sp, cp) = self.elevation.sin_cos();
        let (ss, cs) = self.azimuth.sin_cos();
        Vector3::new(cp * cs, cp * ss, sp)
    }

    /// Angles of a nonzero vector. Fails when the horizontal range vanishes.
    pub fn of_vector(d: &Vector3<f64>) -> Result<Self> {
        let rho = d.x.hypot(d.y);
        if !(rho > 1e-12 * d.norm().max(1.0)) || !d.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "zero horizontal range for direction [{}, {}, {}]",
                d.x, d.y, d.z
            )));
        }
        Ok(Angles::new(d.y.atan2(d.x), (d.z / rho).atan()))
    }
}

pub fn wavelength(carrier_freq: f64) -> f64 {
    SPEED_OF_LIGHT / carrier_freq
}

pub fn wavenumber(carrier_freq: f64) -> f64 {
    2.0 * std::f64::consts::PI / wavelength(carrier_freq)
}

pub fn wavevector(angles: Angles, carrier_freq: f64) -> Vector3<f64> {
    angles.direction() * wavenumber(carrier_freq)
}

/// `(dk/dpsi, dk/dphi)`.
pub fn wavevector_derivatives(angles: Angles, carrier_freq: f64) -> (Vector3<f64>, Vector3<f64>) {
    let k = wavenumber(carrier_freq);
    let (sp, cp) = angles.elevation.sin_cos();
    let (ss, cs) = angles.azimuth.sin_cos();
    (
        Vector3::new(-cp * ss, cp * cs, 0.0) * k,
        Vector3::new(-sp * cs, -sp * ss, cp) * k,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    /// Uniform planar array in the y-z plane.
    Planar { ny: usize, nz: usize },
    /// Uniform linear array along y.
    Linear { m: usize },
}

/// Element positions relative to the array's phase center, plus the phase
/// center's global position.
#[derive(Debug, Clone)]
pub struct ArrayLayout {
    pub kind: LayoutKind,
    pub origin: Position3,
    pub elements: Vec<Position3>,
}

impl ArrayLayout {
    /// Half-wavelength UPA in the y-z plane; `m_y` runs fastest.
    pub fn planar(ny: usize, nz: usize, wavelength: f64, origin: Position3) -> Result<Self> {
        if ny == 0 || nz == 0 || ny % 2 == 0 || nz % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "planar arrays need odd per-axis counts, got {ny}x{nz}"
            )));
        }
        let half = wavelength / 2.0;
        let (hy, hz) = ((ny as i64 - 1) / 2, (nz as i64 - 1) / 2);
        let mut elements = Vec::with_capacity(ny * nz);
        for mz in -hz..=hz {
            for my in -hy..=hy {
                elements.push(Vector3::new(0.0, my as f64 * half, mz as f64 * half));
            }
        }
        Ok(ArrayLayout {
            kind: LayoutKind::Planar { ny, nz },
            origin,
            elements,
        })
    }

    /// Half-wavelength ULA along y, centered on `origin`.
    pub fn linear_y(m: usize, wavelength: f64, origin: Position3) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("empty linear array".into()));
        }
        let half = wavelength / 2.0;
        let c = (m as f64 - 1.0) / 2.0;
        let elements = (0..m)
            .map(|i| Vector3::new(0.0, (i as f64 - c) * half, 0.0))
            .collect();
        Ok(ArrayLayout {
            kind: LayoutKind::Linear { m },
            origin,
            elements,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn global_positions(&self) -> Vec<Position3> {
        self.elements.iter().map(|p| p + self.origin).collect()
    }

    /// Index of the element sitting at the phase center, if any.
    pub fn center_index(&self) -> Option<usize> {
        self.elements.iter().position(|p| p.norm() == 0.0)
    }
}

/// `[exp(j k^T p_m)]_m` over the local element positions.
pub fn steering(layout: &ArrayLayout, angles: Angles, carrier_freq: f64) -> CVec {
    let k = wavevector(angles, carrier_freq);
    CVec::from_iterator(layout.len(), layout.elements.iter().map(|p| cis(k.dot(p))))
}

/// Derivatives of [`steering`] with respect to azimuth and elevation.
pub fn steering_derivatives(layout: &ArrayLayout, angles: Angles, carrier_freq: f64) -> (CVec, CVec) {
    let a = steering(layout, angles, carrier_freq);
    let (dk_psi, dk_phi) = wavevector_derivatives(angles, carrier_freq);
    let j = C64::i();
    let d_psi = CVec::from_fn(layout.len(), |m, _| j * dk_psi.dot(&layout.elements[m]) * a[m]);
    let d_phi = CVec::from_fn(layout.len(), |m, _| j * dk_phi.dot(&layout.elements[m]) * a[m]);
    (d_psi, d_phi)
}

/// Target angles seen from the transmit AP at the origin and from the target
/// toward the receive reference point `e`.
pub fn target_angles(q: &Position3, e: &Position3) -> Result<(Angles, Angles)> {
    if q.norm() == 0.0 || (e - q).norm() == 0.0 {
        return Err(Error::InvalidGeometry("target coincides with an AP".into()));
    }
    Ok((Angles::of_vector(q)?, Angles::of_vector(&(e - q))?))
}

/// Bistatic delay `(|q| + |e - q|) / c`.
pub fn round_trip_delay(q: &Position3, e: &Position3) -> f64 {
    (q.norm() + (e - q).norm()) / SPEED_OF_LIGHT
}

/// Path delay from the origin to a UE at `p0`, optionally via a cluster.
pub fn ue_delay(p0: &Position3, cluster: Option<&Position3>) -> f64 {
    match cluster {
        None => p0.norm() / SPEED_OF_LIGHT,
        Some(p) => (p.norm() + (p0 - p).norm()) / SPEED_OF_LIGHT,
    }
}
