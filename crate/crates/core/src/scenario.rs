//! One seeded drop of the deployment: UE positions and multipath, the
//! enclosed-box channel of the RIS receiver, the uncertainty grid and the
//! precoders of the run realization.

use crate::channels::{build_nearfield_channel, enclosed_box_scatterers, Ofdm, RadarChannelParams, Receiver, UeChannelModel, ClusterPowers};
use crate::comm::Downlink;
use crate::config::ScenarioConfig;
use crate::estimation::{analog_combiner, sorted_eigen, LmmseEstimator, PilotBook};
use crate::geometry::{wavelength, ArrayLayout, Position3};
use crate::optimizer::{build_uncertainty_grid, UncertaintyGrid};
use crate::precoding::{comm_analog, sensing_analog, PrecoderBank, SensingRegion, Strategy};
use crate::rng::{ids, stream};
use crate::{db_to_linear, CMat, CVec, Error, Result};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub ofdm: Ofdm,
    pub tx: ArrayLayout,
    pub ues: Vec<UeChannelModel>,
    pub correlations: Vec<CMat>,
    pub region: SensingRegion,
    pub grid: UncertaintyGrid,
    pub ris_receiver: Receiver,
    pub noise_var: f64,
}

/// Uniform point in the box `corner + [0, size]`.
fn uniform_in<R: rand::Rng + ?Sized>(rng: &mut R, corner: &Position3, size: &Position3) -> Position3 {
    Position3::from_fn(|c, _| corner[c] + size[c] * rng.random::<f64>())
}

/// Receive array of `m` antennas: a planar `r x r` array when `m = r^2`
/// with odd `r > 1`, otherwise a linear array along y.
pub fn rx_layout(m: usize, wavelength: f64, origin: Position3) -> Result<ArrayLayout> {
    let r = (m as f64).sqrt().round() as usize;
    if r > 1 && r * r == m && r % 2 == 1 {
        ArrayLayout::planar(r, r, wavelength, origin)
    } else {
        ArrayLayout::linear_y(m, wavelength, origin)
    }
}

impl Scenario {
    pub fn new(config: &ScenarioConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let fc = cfg.ofdm.carrier_hz;
        let lam = wavelength(fc);
        let ofdm = Ofdm::new(fc, cfg.ofdm.bandwidth_hz, cfg.ofdm.subcarriers);
        let tx = ArrayLayout::planar(cfg.arrays.tx_y, cfg.arrays.tx_z, lam, Position3::zeros())?;

        let corner = ScenarioConfig::position(cfg.geometry.ue_corner);
        let size = ScenarioConfig::position(cfg.geometry.ue_size);
        let s_corner = cfg.channel.scatter_corner.map_or(corner, ScenarioConfig::position);
        let s_size = cfg.channel.scatter_size.map_or(size, ScenarioConfig::position);
        let powers = match cfg.channel.los_share {
            Some(los_share) => ClusterPowers::Split { los_share },
            None => ClusterPowers::Pathloss { nlos_penalty_db: cfg.channel.nlos_penalty_db },
        };
        let mut rng = stream(seed, ids::LAYOUT);
        let mut rays = stream(seed, ids::RAYS);
        let mut ues = Vec::with_capacity(cfg.users);
        for _ in 0..cfg.users {
            let p = uniform_in(&mut rng, &corner, &size);
            let scatterers: Vec<Position3> = (1..cfg.channel.clusters_per_ue)
                .map(|_| uniform_in(&mut rng, &s_corner, &s_size))
                .collect();
            let ue = UeChannelModel::with_powers(p, &scatterers, &tx, fc, powers)?;
            ues.push(ue.with_angular_spread(
                cfg.channel.rays_per_cluster,
                cfg.channel.angular_spread_deg.to_radians(),
                &tx,
                fc,
                &mut rays,
            )?);
        }
        let correlations = ues.iter().map(|u| u.correlation()).collect();

        let q = ScenarioConfig::position(cfg.geometry.target);
        let box_size = ScenarioConfig::position(cfg.sensing.region_size);
        let region = SensingRegion::from_box(&q, &box_size)?;
        let grid = build_uncertainty_grid(q, box_size, cfg.sensing.grid_points, seed)?;

        let e = ScenarioConfig::position(cfg.geometry.ris);
        let rx_c = ScenarioConfig::position(cfg.geometry.rx);
        let ris = ArrayLayout::planar(cfg.arrays.ris_y, cfg.arrays.ris_z, lam, e)?;
        let rx = rx_layout(cfg.arrays.rx, lam, rx_c)?;
        let scatterers = enclosed_box_scatterers(&ris, &rx_c, lam, cfg.channel.ris_paths - 1)?;
        let nearfield = build_nearfield_channel(&ris, &rx, &scatterers, &ofdm, &mut stream(seed, ids::NEARFIELD))?;
        let noise_var = cfg.noise_var();
        Ok(Scenario {
            config: cfg,
            seed,
            ofdm,
            tx,
            ues,
            correlations,
            region,
            grid,
            ris_receiver: Receiver::Ris { ris, rx, nearfield },
            noise_var,
        })
    }

    pub fn users(&self) -> usize {
        self.ues.len()
    }

    /// Plain receive array of `m` antennas at the receive-array position.
    pub fn direct_receiver(&self, m: usize) -> Result<Receiver> {
        let lam = wavelength(self.ofdm.carrier);
        let rx = rx_layout(m, lam, ScenarioConfig::position(self.config.geometry.rx))?;
        Ok(Receiver::Direct { rx })
    }

    /// Dominant eigenvector of every `R_k`.
    pub fn dominant_eigenvectors(&self) -> Vec<CVec> {
        self.correlations
            .iter()
            .map(|r| sorted_eigen(r).1.column(0).into_owned())
            .collect()
    }

    /// Downlink of this drop for a sensing strategy, RF-chain count and
    /// per-UE pilot power in W.
    pub fn downlink(&self, strategy: Strategy, n_rf: usize, pilot_power: f64) -> Result<Downlink> {
        let k = self.users();
        let q = strategy.streams(self.config.sensing.n_a);
        if k + q > n_rf {
            return Err(Error::Config(format!("{k} UEs and {q} sensing streams exceed {n_rf} RF chains")));
        }
        let combiner = analog_combiner(&self.correlations, n_rf)?;
        let powers = vec![pilot_power; k];
        let book = PilotBook::dft(self.config.frame.tau_p, k)?;
        let estimator = LmmseEstimator::new(&self.correlations, &combiner, &powers, self.noise_var, book)?;
        Ok(Downlink {
            ofdm: self.ofdm.clone(),
            ues: self.ues.clone(),
            combiner,
            estimator,
            pilot_powers: powers,
            noise_var: self.noise_var,
            w_comm: comm_analog(&self.dominant_eigenvectors()),
            w_sense: sensing_analog(strategy, &self.region, self.config.sensing.n_a, &self.tx, self.ofdm.carrier),
            strategy,
            perfect_csi: self.config.run.perfect_csi,
        })
    }

    /// Downlink with the configured strategy, `N_RF` and pilot power.
    pub fn default_downlink(&self) -> Result<Downlink> {
        self.downlink(self.config.sensing.strategy, self.config.n_rf, self.config.pilot_power())
    }

    /// Precoders of the run realization: coherence block 0 of stream
    /// `REALIZATION`.
    pub fn realization(&self, link: &Downlink) -> Result<PrecoderBank> {
        let block = link.draw_block(&mut stream(self.seed, ids::REALIZATION));
        link.precoders(&block)
    }

    /// Target hypotheses seen by `receiver` at RCS `rcs_db`, over the grid
    /// or, with `perfect`, at the nominal position only.
    pub fn targets(&self, receiver: &Receiver, rcs_db: f64, perfect: bool) -> Result<Vec<RadarChannelParams>> {
        let grid = if perfect {
            UncertaintyGrid::single(self.grid.center)
        } else {
            self.grid.clone()
        };
        grid.targets(&receiver.reference(), self.ofdm.carrier, db_to_linear(rcs_db))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn desk() -> ScenarioConfig {
        ScenarioConfig::for_profile(Profile::Desk)
    }

    #[test]
    fn ues_inside_region_and_reproducible() {
        let cfg = desk();
        let a = Scenario::new(&cfg, 3).unwrap();
        let b = Scenario::new(&cfg, 3).unwrap();
        let c = Scenario::new(&cfg, 4).unwrap();
        assert_eq!(a.users(), 5);
        for (u, v) in a.ues.iter().zip(&b.ues) {
            assert_eq!(u.position, v.position);
            assert_eq!(u.clusters.len(), 1 + 7 * 10);
            let p = u.position;
            assert!(p.x >= 60.0 && p.x <= 100.0 && p.y >= 30.0 && p.y <= 50.0 && p.z == -9.0);
            for cl in &u.clusters[1..] {
                let s = cl.position;
                assert!(s.x >= 20.0 && s.x <= 120.0 && s.y >= -80.0 && s.y <= 20.0);
            }
        }
        assert_ne!(a.ues[0].position, c.ues[0].position);
        assert_eq!(a.grid.len(), 5);
        assert_eq!(a.ris_receiver.ris_elements(), 49);
        assert_eq!(a.ris_receiver.antennas(), 4);
    }

    #[test]
    fn point_clusters_without_spread() {
        let mut cfg = desk();
        cfg.channel.clusters_per_ue = 4;
        cfg.channel.los_share = None;
        cfg.channel.scatter_corner = None;
        cfg.channel.scatter_size = None;
        cfg.channel.rays_per_cluster = 1;
        cfg.channel.angular_spread_deg = 0.0;
        let s = Scenario::new(&cfg, 3).unwrap();
        for u in &s.ues {
            assert_eq!(u.clusters.len(), 4);
            for cl in &u.clusters[1..] {
                assert!(cl.position.x >= 60.0 && cl.position.x <= 100.0);
            }
        }
    }

    #[test]
    fn receiver_layouts() {
        let lam = wavelength(30e9);
        assert_eq!(rx_layout(25, lam, Position3::zeros()).unwrap().len(), 25);
        assert!(matches!(rx_layout(25, lam, Position3::zeros()).unwrap().kind, crate::geometry::LayoutKind::Planar { ny: 5, nz: 5 }));
        assert!(matches!(rx_layout(4, lam, Position3::zeros()).unwrap().kind, crate::geometry::LayoutKind::Linear { m: 4 }));
    }

    #[test]
    fn downlink_shapes() {
        let s = Scenario::new(&desk(), 1).unwrap();
        for (strategy, q) in [(Strategy::Sd, 9), (Strategy::S, 3), (Strategy::Se, 9)] {
            let link = s.downlink(strategy, 20, 0.1).unwrap();
            assert_eq!(link.combiner.shape(), (49, 20));
            assert_eq!(link.w_comm.shape(), (49, 5));
            assert_eq!(link.w_sense.shape(), (49, q));
            let bank = s.realization(&link).unwrap();
            assert_eq!(bank.subcarriers(), 8);
            assert_eq!(bank.streams(), 5 + q);
            for f in &bank.precoders {
                for c in f.column_iter() {
                    let n = c.norm();
                    assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
                }
            }
        }
        assert!(s.downlink(Strategy::Sd, 10, 0.1).is_err());
    }

    #[test]
    fn realization_is_deterministic() {
        let s = Scenario::new(&desk(), 2).unwrap();
        let link = s.default_downlink().unwrap();
        let a = s.realization(&link).unwrap();
        let b = s.realization(&link).unwrap();
        assert_eq!(a.precoders, b.precoders);
    }

    #[test]
    fn targets_scale_with_rcs() {
        let s = Scenario::new(&desk(), 1).unwrap();
        let t0 = s.targets(&s.ris_receiver, -20.0, false).unwrap();
        let t1 = s.targets(&s.ris_receiver, 0.0, false).unwrap();
        assert_eq!(t0.len(), 5);
        for (a, b) in t0.iter().zip(&t1) {
            assert!((b.alpha.re / a.alpha.re - 10.0).abs() < 1e-12);
        }
        let p = s.targets(&s.ris_receiver, -20.0, true).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].q, Position3::new(50.0, 50.0, 5.0));
    }
}
