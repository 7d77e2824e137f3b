//! Channel synthesis: pathloss, UE multipath channels, the enclosed-box
//! channel between RIS and receive antennas, and the two-way radar channel.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{self, Angles, ArrayLayout, Position3};
use crate::{cis, CMat, CVec, Error, Result, C64, SPEED_OF_LIGHT};

/// OFDM numerology. Subcarrier indices are centered on the carrier:
/// `v = -V/2, .., V/2 - 1`.
#[derive(Debug, Clone)]
pub struct Ofdm {
    pub carrier: f64,
    pub spacing: f64,
    pub indices: Vec<i64>,
}

impl Ofdm {
    /// `V` subcarriers over bandwidth `B`, spacing `B / V`.
    pub fn new(carrier: f64, bandwidth: f64, count: usize) -> Self {
        let half = (count / 2) as i64;
        Ofdm {
            carrier,
            spacing: bandwidth / count as f64,
            indices: (0..count as i64).map(|i| i - half).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Baseband frequency offset of subcarrier slot `vi`.
    pub fn offset(&self, vi: usize) -> f64 {
        self.indices[vi] as f64 * self.spacing
    }

    /// `exp(-j 2 pi v df tau)`.
    pub fn delay_phase(&self, vi: usize, tau: f64) -> C64 {
        cis(-2.0 * std::f64::consts::PI * self.offset(vi) * tau)
    }
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pathloss {
    UmiLos,
    UmiNlos,
    /// Product of two free-space link amplitudes.
    BistaticFreeSpace,
}

/// Pathloss amplitude `beta`; `beta^2` is the linear power gain.
pub fn pathloss(kind: Pathloss, distances: &[f64], carrier: f64) -> Result<f64> {
    let expected = match kind {
        Pathloss::BistaticFreeSpace => 2,
        _ => 1,
    };
    if distances.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "{kind:?} takes {expected} distance(s), got {}",
            distances.len()
        )));
    }
    if let Some(d) = distances.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive distance {d}")));
    }
    let f_ghz = carrier / 1e9;
    let db = |pl: f64| 10f64.powf(-pl / 20.0);
    Ok(match kind {
        Pathloss::UmiLos => db(32.4 + 21.0 * distances[0].log10() + 20.0 * f_ghz.log10()),
        Pathloss::UmiNlos => db(35.3 * distances[0].log10() + 22.4 + 21.3 * f_ghz.log10()),
        Pathloss::BistaticFreeSpace => {
            let lam = SPEED_OF_LIGHT / carrier;
            let link = |d: f64| lam / (4.0 * std::f64::consts::PI * d);
            link(distances[0]) * link(distances[1])
        }
    })
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub position: Position3,
    pub angles: Angles,
    pub delay: f64,
    /// Large-scale power `beta^2`.
    pub power: f64,
    pub steering: CVec,
}

/// Point-cluster multipath model of one UE; cluster 0 is the LoS path.
#[derive(Debug, Clone)]
pub struct UeChannelModel {
    pub position: Position3,
    pub clusters: Vec<Cluster>,
}

/// Large-scale powers of a UE's NLoS clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClusterPowers {
    /// UMi-NLOS over the total path length and an extra penalty in dB.
    Pathloss { nlos_penalty_db: f64 },
    /// The UMi-LOS power at the UE distance is split: `los_share` on the LoS
    /// path and the rest over the NLoS clusters in proportion to their
    /// UMi-NLOS gains.
    Split { los_share: f64 },
}

impl UeChannelModel {
    /// LoS path to `position` plus one NLoS path per scatterer. NLoS paths
    /// use UMi-NLOS over the total path length and an extra penalty in dB.
    pub fn new(
        position: Position3,
        scatterers: &[Position3],
        tx: &ArrayLayout,
        carrier: f64,
        nlos_penalty_db: f64,
    ) -> Result<Self> {
        Self::with_powers(position, scatterers, tx, carrier, ClusterPowers::Pathloss { nlos_penalty_db })
    }

    pub fn with_powers(
        position: Position3,
        scatterers: &[Position3],
        tx: &ArrayLayout,
        carrier: f64,
        powers: ClusterPowers,
    ) -> Result<Self> {
        let los = pathloss(Pathloss::UmiLos, &[position.norm()], carrier)?;
        let nlos = scatterers
            .iter()
            .map(|p| {
                let length = p.norm() + (position - p).norm();
                let beta = pathloss(Pathloss::UmiNlos, &[length], carrier)?;
                Ok(beta * beta)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (los_power, nlos_powers) = match powers {
            ClusterPowers::Pathloss { nlos_penalty_db } => {
                let pen = 10f64.powf(-nlos_penalty_db / 10.0);
                (los * los, nlos.iter().map(|p| p * pen).collect::<Vec<_>>())
            }
            ClusterPowers::Split { los_share } => {
                if !(0.0..=1.0).contains(&los_share) {
                    return Err(Error::InvalidArgument(format!("LoS share {los_share} outside [0, 1]")));
                }
                let total = los * los;
                let sum: f64 = nlos.iter().sum();
                if nlos.is_empty() {
                    (total, Vec::new())
                } else {
                    let rest = (1.0 - los_share) * total;
                    (los_share * total, nlos.iter().map(|p| rest * p / sum).collect())
                }
            }
        };
        let mut clusters = Vec::with_capacity(scatterers.len() + 1);
        clusters.push(Self::cluster(position, position, None, los_power, tx, carrier)?);
        for (p, power) in scatterers.iter().zip(nlos_powers) {
            clusters.push(Self::cluster(position, *p, Some(p), power, tx, carrier)?);
        }
        Ok(UeChannelModel { position, clusters })
    }

    fn cluster(
        ue: Position3,
        at: Position3,
        via: Option<&Position3>,
        power: f64,
        tx: &ArrayLayout,
        carrier: f64,
    ) -> Result<Cluster> {
        let angles = Angles::of_vector(&at)?;
        Ok(Cluster {
            position: at,
            angles,
            delay: geometry::ue_delay(&ue, via),
            power,
            steering: geometry::steering(tx, angles, carrier),
        })
    }

    /// Replaces every NLoS cluster by `rays` sub-rays of equal power whose
    /// azimuth and elevation are offset by Gaussian draws of standard
    /// deviation `spread` (rad). Sub-rays keep the cluster position and
    /// delay. The LoS path stays a single ray.
    pub fn with_angular_spread<R: Rng + ?Sized>(
        mut self,
        rays: usize,
        spread: f64,
        tx: &ArrayLayout,
        carrier: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if rays == 0 || !(spread >= 0.0) {
            return Err(Error::InvalidArgument(format!("{rays} rays with spread {spread}")));
        }
        if rays == 1 && spread == 0.0 {
            return Ok(self);
        }
        let normal = rand_distr::Normal::new(0.0, spread).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut clusters = vec![self.clusters[0].clone()];
        for c in &self.clusters[1..] {
            for _ in 0..rays {
                let angles = Angles::new(c.angles.azimuth + rng.sample(normal), c.angles.elevation + rng.sample(normal));
                clusters.push(Cluster {
                    angles,
                    power: c.power / rays as f64,
                    steering: geometry::steering(tx, angles, carrier),
                    ..c.clone()
                });
            }
        }
        self.clusters = clusters;
        Ok(self)
    }

    pub fn antennas(&self) -> usize {
        self.clusters[0].steering.len()
    }

    /// Small-scale gains `alpha_n ~ CN(0, beta_n^2)`, one draw per block.
    pub fn draw_gains<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<C64> {
        self.clusters.iter().map(|c| complex_normal(rng, c.power)).collect()
    }

    /// `b_v = sum_n alpha_n exp(-j 2 pi v df tau_n) a_Tx(psi_n, phi_n)`.
    pub fn channel(&self, gains: &[C64], ofdm: &Ofdm, vi: usize) -> CVec {
        let mut b = CVec::zeros(self.antennas());
        for (c, g) in self.clusters.iter().zip(gains) {
            b.axpy(*g * ofdm.delay_phase(vi, c.delay), &c.steering, C64::new(1.0, 0.0));
        }
        b
    }

    /// `R = sum_n beta_n^2 a_n a_n^H`.
    pub fn correlation(&self) -> CMat {
        let m = self.antennas();
        let mut r = CMat::zeros(m, m);
        for c in &self.clusters {
            r.ger(
                C64::new(c.power, 0.0),
                &c.steering,
                &c.steering.conjugate(),
                C64::new(1.0, 0.0),
            );
        }
        r
    }
}

/// Per-subcarrier channel between RIS elements and receive antennas.
#[derive(Debug, Clone)]
pub struct NearFieldChannel {
    /// `T_v`, receive antennas x RIS elements, one per subcarrier slot.
    pub t: Vec<CMat>,
    pub scatterers: Vec<Position3>,
    /// Per-column NLoS scaling.
    pub kappa: Vec<f64>,
}

impl NearFieldChannel {
    /// `T_v^H T_v` per subcarrier.
    pub fn gram(&self) -> Vec<CMat> {
        self.t.iter().map(|t| t.adjoint() * t).collect()
    }
}

/// Reflection points on the lateral faces of a box enclosing the RIS and the
/// receive array, `count` of them (at most 4): face midpoints at half depth.
pub fn enclosed_box_scatterers(ris: &ArrayLayout, rx_center: &Position3, wavelength: f64, count: usize) -> Result<Vec<Position3>> {
    let (ny, nz) = match ris.kind {
        geometry::LayoutKind::Planar { ny, nz } => (ny, nz),
        _ => return Err(Error::InvalidArgument("RIS must be planar".into())),
    };
    if count > 4 {
        return Err(Error::InvalidArgument(format!("box has 4 lateral faces, asked for {count}")));
    }
    let mid = (ris.origin + rx_center) / 2.0;
    let hy = ny as f64 * wavelength / 4.0;
    let hz = nz as f64 * wavelength / 4.0;
    let faces = [
        Vector3::new(0.0, hy, 0.0),
        Vector3::new(0.0, -hy, 0.0),
        Vector3::new(0.0, 0.0, hz),
        Vector3::new(0.0, 0.0, -hz),
    ];
    Ok(faces.iter().take(count).map(|f| mid + f).collect())
}

/// Builds `T_v` for every subcarrier. NLoS amplitudes are drawn once; the
/// NLoS part of each column is scaled so that the column has unit norm at the
/// carrier (`v = 0`). Without scatterers the LoS column itself is scaled.
pub fn build_nearfield_channel<R: Rng + ?Sized>(
    ris: &ArrayLayout,
    rx: &ArrayLayout,
    scatterers: &[Position3],
    ofdm: &Ofdm,
    rng: &mut R,
) -> Result<NearFieldChannel> {
    let fc = ofdm.carrier;
    let k0 = geometry::wavenumber(fc);
    let amp = |d: f64| SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * fc * d);
    let r_pos = ris.global_positions();
    let p_pos = rx.global_positions();
    let (m_rx, n) = (p_pos.len(), r_pos.len());

    // Path lengths and gains, indexed [path][m][n]; path 0 is LoS.
    let paths = scatterers.len() + 1;
    let mut dist = vec![vec![vec![0.0; n]; m_rx]; paths];
    let mut gain = vec![vec![vec![C64::new(0.0, 0.0); n]; m_rx]; paths];
    for (mi, p) in p_pos.iter().enumerate() {
        for (ni, r) in r_pos.iter().enumerate() {
            let d0 = (r - p).norm();
            if !(d0 > 0.0) {
                return Err(Error::InvalidGeometry("RIS element coincides with an antenna".into()));
            }
            dist[0][mi][ni] = d0;
            gain[0][mi][ni] = C64::new(amp(d0), 0.0);
        }
    }
    for (i, z) in scatterers.iter().enumerate() {
        for (ni, r) in r_pos.iter().enumerate() {
            for (mi, p) in p_pos.iter().enumerate() {
                let d = (r - z).norm() + (z - p).norm();
                dist[i + 1][mi][ni] = d;
                let a = amp(d);
                gain[i + 1][mi][ni] = complex_normal(rng, a * a);
            }
        }
    }

    let term = |path: usize, mi: usize, ni: usize, vi: Option<usize>| -> C64 {
        let d = dist[path][mi][ni];
        let mut z = gain[path][mi][ni] * cis(-k0 * d);
        if let Some(vi) = vi {
            z *= ofdm.delay_phase(vi, d / SPEED_OF_LIGHT);
        }
        z
    };

    let mut kappa = vec![1.0; n];
    let mut los_scale = vec![1.0; n];
    for ni in 0..n {
        let l = CVec::from_fn(m_rx, |mi, _| term(0, mi, ni, None));
        if scatterers.is_empty() {
            los_scale[ni] = 1.0 / l.norm();
            continue;
        }
        let g = CVec::from_fn(m_rx, |mi, _| (1..paths).map(|p| term(p, mi, ni, None)).sum::<C64>());
        let lg = l.dotc(&g).re;
        let gg = g.norm_squared();
        let disc = lg * lg - gg * (l.norm_squared() - 1.0);
        if !(gg > 0.0) || disc < 0.0 {
            return Err(Error::Singular(format!("cannot normalize column {ni} of the RIS channel")));
        }
        kappa[ni] = (-lg + disc.sqrt()) / gg;
    }

    let t = (0..ofdm.len())
        .map(|vi| {
            CMat::from_fn(m_rx, n, |mi, ni| {
                let mut z = term(0, mi, ni, Some(vi)) * los_scale[ni];
                for p in 1..paths {
                    z += term(p, mi, ni, Some(vi)) * kappa[ni];
                }
                z
            })
        })
        .collect();
    Ok(NearFieldChannel {
        t,
        scatterers: scatterers.to_vec(),
        kappa,
    })
}

/// The sensing receiver: an RIS-integrated array or a plain array.
#[derive(Debug, Clone)]
pub enum Receiver {
    Ris {
        ris: ArrayLayout,
        rx: ArrayLayout,
        nearfield: NearFieldChannel,
    },
    Direct {
        rx: ArrayLayout,
    },
}

impl Receiver {
    /// Point the target-to-receiver angles and delay refer to.
    pub fn reference(&self) -> Position3 {
        match self {
            Receiver::Ris { ris, .. } => ris.origin,
            Receiver::Direct { rx } => rx.origin,
        }
    }

    pub fn antennas(&self) -> usize {
        match self {
            Receiver::Ris { rx, .. } | Receiver::Direct { rx } => rx.len(),
        }
    }

    /// Number of RIS elements, zero without an RIS.
    pub fn ris_elements(&self) -> usize {
        match self {
            Receiver::Ris { ris, .. } => ris.len(),
            Receiver::Direct { .. } => 0,
        }
    }

    /// Array response seen before the RIS phase shifts: `a_RIS` or `a_Rx`.
    pub fn front_steering(&self, angles: Angles, carrier: f64) -> (CVec, CVec, CVec) {
        let layout = match self {
            Receiver::Ris { ris, .. } => ris,
            Receiver::Direct { rx } => rx,
        };
        let a = geometry::steering(layout, angles, carrier);
        let (dp, de) = geometry::steering_derivatives(layout, angles, carrier);
        (a, dp, de)
    }

    /// Maps a front-side vector `x` to antenna space: `T_v diag(theta) x`,
    /// or `x` itself without an RIS.
    pub fn propagate(&self, x: &CVec, theta: &CVec, vi: usize) -> CVec {
        match self {
            Receiver::Ris { nearfield, .. } => &nearfield.t[vi] * x.component_mul(theta),
            Receiver::Direct { .. } => x.clone(),
        }
    }
}

/// Target parameters entering the radar channel.
#[derive(Debug, Clone, Copy)]
pub struct RadarChannelParams {
    pub q: Position3,
    pub alpha: C64,
}

/// `|alpha_t| = beta_t * delta` at target position `q`.
pub fn radar_amplitude(q: &Position3, e: &Position3, carrier: f64, rcs_linear: f64) -> Result<f64> {
    let beta = pathloss(Pathloss::BistaticFreeSpace, &[q.norm(), (e - q).norm()], carrier)?;
    Ok(beta * rcs_linear.sqrt())
}

/// `H_v = alpha exp(-j 2 pi v df tau) g_v a_Tx^H(psi_0, phi_0)`, where
/// `g_v = T_v Theta a_RIS(psi_t, phi_t)` (or the plain receive response).
pub fn build_radar_channel(
    params: &RadarChannelParams,
    receiver: &Receiver,
    tx: &ArrayLayout,
    theta: &CVec,
    ofdm: &Ofdm,
    vi: usize,
) -> Result<CMat> {
    let e = receiver.reference();
    let (tx_ang, rx_ang) = geometry::target_angles(&params.q, &e)?;
    let tau = geometry::round_trip_delay(&params.q, &e);
    let h = geometry::steering(tx, tx_ang, ofdm.carrier);
    let (a, _, _) = receiver.front_steering(rx_ang, ofdm.carrier);
    let g = receiver.propagate(&a, theta, vi);
    Ok(g * h.adjoint() * (params.alpha * ofdm.delay_phase(vi, tau)))
}
