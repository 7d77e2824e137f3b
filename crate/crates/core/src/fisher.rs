//! Channel-domain FIM over `eta = [psi_0, psi_t, phi_0, phi_t, tau_t, |alpha_t|,
//! arg alpha_t]`, the Jacobian to `eta_bar = [q, |alpha_t|, arg alpha_t]`, the
//! location-domain FIM and the PEB.
//!
//! Every channel derivative is rank one, `dH_v/deta_i = x_{i,v} y_i^H`, so the
//! trace form of the FIM reduces to
//! `J_ij = (2/sigma^2) sum_v Re{(x_i^H x_j)(y_j^H S_v y_i)}` with
//! `S_v = tau_s F_v P_v^2 F_v^H`.

use nalgebra::{DMatrix, Matrix5, SMatrix};

use crate::channels::{Ofdm, RadarChannelParams, Receiver};
use crate::geometry::{self, Angles, ArrayLayout, Position3};
use crate::{cis, CMat, CVec, Error, Result, C64, SPEED_OF_LIGHT};

pub const PARAMS: usize = 7;
pub const LOCATION_PARAMS: usize = 5;

pub type ChannelFim = SMatrix<f64, PARAMS, PARAMS>;
pub type Jacobian = SMatrix<f64, PARAMS, LOCATION_PARAMS>;
pub type LocationFim = Matrix5<f64>;

/// Indices into `eta`.
pub mod idx {
    pub const PSI_0: usize = 0;
    pub const PSI_T: usize = 1;
    pub const PHI_0: usize = 2;
    pub const PHI_T: usize = 3;
    pub const TAU: usize = 4;
    pub const GAIN: usize = 5;
    pub const PHASE: usize = 6;
}

/// Channel parameters of a target at `params.q` seen by a receiver at `e`.
pub fn eta_of(params: &RadarChannelParams, e: &Position3) -> Result<[f64; PARAMS]> {
    let (t0, tr) = geometry::target_angles(&params.q, e)?;
    Ok([
        t0.azimuth,
        tr.azimuth,
        t0.elevation,
        tr.elevation,
        geometry::round_trip_delay(&params.q, e),
        params.alpha.norm(),
        params.alpha.arg(),
    ])
}

/// Radar channel on slot `vi` written directly in terms of `eta`.
pub fn channel_at_eta(
    eta: &[f64; PARAMS],
    receiver: &Receiver,
    tx: &ArrayLayout,
    theta: &CVec,
    ofdm: &Ofdm,
    vi: usize,
) -> CMat {
    let fc = ofdm.carrier;
    let h = geometry::steering(tx, Angles::new(eta[idx::PSI_0], eta[idx::PHI_0]), fc);
    let (a, _, _) = receiver.front_steering(Angles::new(eta[idx::PSI_T], eta[idx::PHI_T]), fc);
    let alpha = cis(eta[idx::PHASE]) * eta[idx::GAIN];
    receiver.propagate(&a, theta, vi) * h.adjoint() * (alpha * ofdm.delay_phase(vi, eta[idx::TAU]))
}

/// Rank-one factors of the channel derivatives. `front[v][i]` is the
/// receive-side factor before the RIS (so `x[v][i] = T_v diag(theta) front[v][i]`).
#[derive(Debug, Clone)]
pub struct RankOneDerivatives {
    pub front: Vec<Vec<CVec>>,
    pub x: Vec<Vec<CVec>>,
    pub y: Vec<CVec>,
}

impl RankOneDerivatives {
    pub fn new(
        params: &RadarChannelParams,
        receiver: &Receiver,
        tx: &ArrayLayout,
        theta: &CVec,
        ofdm: &Ofdm,
    ) -> Result<Self> {
        let gain = params.alpha.norm();
        if !(gain > 0.0) {
            return Err(Error::Singular("target gain |alpha_t| is zero".into()));
        }
        let fc = ofdm.carrier;
        let e = receiver.reference();
        let (t0, tr) = geometry::target_angles(&params.q, &e)?;
        let tau = geometry::round_trip_delay(&params.q, &e);
        let h = geometry::steering(tx, t0, fc);
        let (dh_psi, dh_phi) = geometry::steering_derivatives(tx, t0, fc);
        let (a, da_psi, da_phi) = receiver.front_steering(tr, fc);
        let unit_phase = params.alpha / gain;
        let j = C64::i();

        let mut front = Vec::with_capacity(ofdm.len());
        let mut x = Vec::with_capacity(ofdm.len());
        for vi in 0..ofdm.len() {
            let ac = params.alpha * ofdm.delay_phase(vi, tau);
            let dtau = C64::new(0.0, -2.0 * std::f64::consts::PI * ofdm.offset(vi));
            let f = vec![
                &a * ac,
                &da_psi * ac,
                &a * ac,
                &da_phi * ac,
                &a * (ac * dtau),
                &a * (ac / params.alpha * unit_phase),
                &a * (ac * j),
            ];
            x.push(f.iter().map(|u| receiver.propagate(u, theta, vi)).collect());
            front.push(f);
        }
        let y = vec![
            dh_psi,
            h.clone(),
            dh_phi,
            h.clone(),
            h.clone(),
            h.clone(),
            h,
        ];
        Ok(RankOneDerivatives { front, x, y })
    }

    pub fn subcarriers(&self) -> usize {
        self.x.len()
    }

    /// Full matrices `dH_v/deta_i`, i = 0..7.
    pub fn matrices(&self, vi: usize) -> Vec<CMat> {
        (0..PARAMS).map(|i| &self.x[vi][i] * self.y[i].adjoint()).collect()
    }

    /// `P[(s, i)] = f_s^H y_i`.
    fn projections(&self, f: &CMat) -> CMat {
        f.adjoint() * CMat::from_columns(&self.y)
    }

    /// Per-stream FIM contributions on slot `vi`: `J = sum_s rho_s G_s`.
    pub fn stream_fims(&self, vi: usize, f: &CMat, noise_var: f64, tau_s: f64) -> Vec<ChannelFim> {
        let p = self.projections(f);
        let gram = SMatrix::<C64, PARAMS, PARAMS>::from_fn(|i, j| self.x[vi][i].dotc(&self.x[vi][j]));
        let scale = 2.0 * tau_s / noise_var;
        (0..f.ncols())
            .map(|s| ChannelFim::from_fn(|i, j| scale * (gram[(i, j)] * p[(s, j)].conj() * p[(s, i)]).re))
            .collect()
    }
}

/// `dH_v/deta_i` for all seven parameters.
pub fn radar_channel_derivatives(
    params: &RadarChannelParams,
    receiver: &Receiver,
    tx: &ArrayLayout,
    theta: &CVec,
    ofdm: &Ofdm,
    vi: usize,
) -> Result<Vec<CMat>> {
    Ok(RankOneDerivatives::new(params, receiver, tx, theta, ofdm)?.matrices(vi))
}

/// `S_v = tau_s sum_s rho_{s,v} f_s f_s^H`.
pub fn signal_covariance(f: &CMat, rho: &[f64], tau_s: f64) -> CMat {
    let scaled = CMat::from_fn(f.nrows(), f.ncols(), |m, s| f[(m, s)] * rho[s].sqrt());
    &scaled * scaled.adjoint() * C64::new(tau_s, 0.0)
}

/// Trace form `(2/sigma^2) sum_v Re Tr(S_v dH_i^H dH_j)` from full matrices.
pub fn channel_fim(covariances: &[CMat], derivatives: &[Vec<CMat>], noise_var: f64) -> ChannelFim {
    let mut j = ChannelFim::zeros();
    for (s, d) in covariances.iter().zip(derivatives) {
        let sd: Vec<CMat> = d.iter().map(|di| s * di.adjoint()).collect();
        for a in 0..PARAMS {
            for b in a..PARAMS {
                let v = (&sd[a] * &d[b]).trace().re * 2.0 / noise_var;
                j[(a, b)] += v;
                if a != b {
                    j[(b, a)] += v;
                }
            }
        }
    }
    j
}

/// `[Xi]_{i,j} = d eta_i / d eta_bar_j`, with `|alpha_t|` treated as free.
pub fn jacobian_xi(q: &Position3, e: &Position3) -> Result<Jacobian> {
    geometry::target_angles(q, e)?;
    let d_r = e - q;
    let (g_psi0, g_phi0) = angle_gradients(q);
    let (g_psit, g_phit) = angle_gradients(&d_r);
    let g_tau = (q / q.norm() - d_r / d_r.norm()) / SPEED_OF_LIGHT;
    let mut xi = Jacobian::zeros();
    for c in 0..3 {
        xi[(idx::PSI_0, c)] = g_psi0[c];
        xi[(idx::PHI_0, c)] = g_phi0[c];
        xi[(idx::PSI_T, c)] = -g_psit[c];
        xi[(idx::PHI_T, c)] = -g_phit[c];
        xi[(idx::TAU, c)] = g_tau[c];
    }
    xi[(idx::GAIN, 3)] = 1.0;
    xi[(idx::PHASE, 4)] = 1.0;
    Ok(xi)
}

/// Gradients of azimuth and elevation of a vector `d` with respect to `d`.
fn angle_gradients(d: &Position3) -> (Position3, Position3) {
    let rho2 = d.x * d.x + d.y * d.y;
    let rho = rho2.sqrt();
    let r2 = d.norm_squared();
    (
        Position3::new(-d.y / rho2, d.x / rho2, 0.0),
        Position3::new(-d.x * d.z / (rho * r2), -d.y * d.z / (rho * r2), rho / r2),
    )
}

pub fn location_fim(j: &ChannelFim, xi: &Jacobian) -> LocationFim {
    let jb = xi.transpose() * j * xi;
    (jb + jb.transpose()) * 0.5
}

/// `sqrt(trace of the position block of J_bar^{-1})`, `+inf` when `J_bar` is
/// singular.
pub fn peb(jbar: &LocationFim) -> f64 {
    squared_peb(jbar).sqrt()
}

pub fn squared_peb(jbar: &LocationFim) -> f64 {
    if !jbar.iter().all(|v| v.is_finite()) {
        return f64::INFINITY;
    }
    // Equilibrate before factoring: position and nuisance entries differ by
    // many orders of magnitude.
    let d = LocationFim::from_diagonal(&jbar.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }));
    let scaled = d * jbar * d;
    let Some(chol) = scaled.cholesky() else {
        return f64::INFINITY;
    };
    let inv = d * chol.inverse() * d;
    let v = inv[(0, 0)] + inv[(1, 1)] + inv[(2, 2)];
    if v.is_finite() && v >= 0.0 {
        v
    } else {
        f64::INFINITY
    }
}

/// Everything needed to evaluate the FIM at one point of the uncertainty grid.
#[derive(Debug, Clone)]
pub struct FimBundle {
    pub j: ChannelFim,
    pub xi: Jacobian,
    pub jbar: LocationFim,
    pub peb: f64,
    pub point: RadarChannelParams,
}

/// Direct evaluation of the FIM and PEB of one target hypothesis.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &RadarChannelParams,
    receiver: &Receiver,
    tx: &ArrayLayout,
    theta: &CVec,
    ofdm: &Ofdm,
    precoders: &[CMat],
    rho: &DMatrix<f64>,
    noise_var: f64,
    tau_s: f64,
) -> Result<FimBundle> {
    let d = RankOneDerivatives::new(params, receiver, tx, theta, ofdm)?;
    let xi = jacobian_xi(&params.q, &receiver.reference())?;
    let mut j = ChannelFim::zeros();
    for (vi, f) in precoders.iter().enumerate() {
        for (s, g) in d.stream_fims(vi, f, noise_var, tau_s).iter().enumerate() {
            j += g * rho[(s, vi)];
        }
    }
    let jbar = location_fim(&j, &xi);
    Ok(FimBundle { j, xi, jbar, peb: peb(&jbar), point: *params })
}

/// `J_bar(rho) = sum_{s,v} rho_{s,v} maps[v][s]` at one grid point.
#[derive(Debug, Clone)]
pub struct FimMaps {
    pub maps: Vec<Vec<LocationFim>>,
}

impl FimMaps {
    pub fn new(d: &RankOneDerivatives, xi: &Jacobian, precoders: &[CMat], noise_var: f64, tau_s: f64) -> Self {
        let maps = precoders
            .iter()
            .enumerate()
            .map(|(vi, f)| {
                d.stream_fims(vi, f, noise_var, tau_s)
                    .iter()
                    .map(|g| location_fim(g, xi))
                    .collect()
            })
            .collect();
        FimMaps { maps }
    }

    pub fn evaluate(&self, rho: &DMatrix<f64>) -> LocationFim {
        let mut out = LocationFim::zeros();
        for (vi, per) in self.maps.iter().enumerate() {
            for (s, m) in per.iter().enumerate() {
                out += m * rho[(s, vi)];
            }
        }
        out
    }
}

/// Hadamard form of the FIM in the RIS phases: returns `M[k][l]` with
/// `[mix^T J mix]_{k,l} = Re theta^H M[k][l] theta`. With `mix = I_7` this is
/// the channel-domain FIM; with `mix = Xi` the location-domain one.
pub fn gamma_form<const C: usize>(
    d: &RankOneDerivatives,
    mix: &SMatrix<f64, PARAMS, C>,
    gram: &[CMat],
    precoders: &[CMat],
    rho: &DMatrix<f64>,
    noise_var: f64,
    tau_s: f64,
) -> Vec<Vec<CMat>> {
    let n = d.front.first().map_or(0, |f| f[0].len());
    let mut out = vec![vec![CMat::zeros(n, n); C]; C];
    for (vi, f) in precoders.iter().enumerate() {
        let p = d.projections(f);
        // A[i, j] = y_j^H S_v y_i
        let a = SMatrix::<C64, PARAMS, PARAMS>::from_fn(|i, j| {
            (0..f.ncols())
                .map(|s| p[(s, i)] * p[(s, j)].conj() * (tau_s * rho[(s, vi)]))
                .sum::<C64>()
        });
        let u = CMat::from_columns(&d.front[vi]);
        let u_conj = u.conjugate();
        let ut = u.transpose();
        for k in 0..C {
            for l in k..C {
                let core = SMatrix::<C64, PARAMS, PARAMS>::from_fn(|i, j| a[(i, j)] * (mix[(i, k)] * mix[(j, l)]));
                let core = DMatrix::from_iterator(PARAMS, PARAMS, core.iter().copied());
                let m = (&u_conj * core * &ut).component_mul(&gram[vi]);
                out[k][l] += m * C64::new(2.0 / noise_var, 0.0);
            }
        }
    }
    for k in 0..C {
        for l in 0..k {
            out[k][l] = out[l][k].adjoint();
        }
    }
    out
}

/// Evaluates `Re theta^H M theta` entry-wise.
pub fn evaluate_gamma_form<const C: usize>(m: &[Vec<CMat>], theta: &CVec) -> SMatrix<f64, C, C> {
    SMatrix::<f64, C, C>::from_fn(|k, l| theta.dotc(&(&m[k][l] * theta)).re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{build_nearfield_channel, enclosed_box_scatterers, radar_amplitude};
    use crate::rng::stream;
    use rand::Rng;

    const FC: f64 = 30e9;

    fn lam() -> f64 {
        geometry::wavelength(FC)
    }

    fn e() -> Position3 {
        Position3::new(100.0, 13.0, 10.0)
    }

    fn receiver(seed: u64, ofdm: &Ofdm) -> Receiver {
        let rx_c = Position3::new(100.3, 13.0, 10.0);
        let ris = ArrayLayout::planar(5, 5, lam(), e()).unwrap();
        let rx = ArrayLayout::linear_y(4, lam(), rx_c).unwrap();
        let sc = enclosed_box_scatterers(&ris, &rx_c, lam(), 4).unwrap();
        let nf = build_nearfield_channel(&ris, &rx, &sc, ofdm, &mut stream(seed, 2)).unwrap();
        Receiver::Ris { ris, rx, nearfield: nf }
    }

    fn tx() -> ArrayLayout {
        ArrayLayout::planar(5, 5, lam(), Position3::zeros()).unwrap()
    }

    fn random_theta(n: usize, rng: &mut impl Rng) -> CVec {
        CVec::from_fn(n, |_, _| cis(rng.random_range(-3.2..3.2)))
    }

    fn random_point(rng: &mut impl Rng) -> RadarChannelParams {
        let q = Position3::new(
            rng.random_range(40.0..60.0),
            rng.random_range(40.0..60.0),
            rng.random_range(0.0..10.0),
        );
        let alpha = cis(rng.random_range(-3.0..3.0)) * radar_amplitude(&q, &e(), FC, 0.01).unwrap();
        RadarChannelParams { q, alpha }
    }

    fn random_precoders(m: usize, s: usize, v: usize, rng: &mut impl Rng) -> Vec<CMat> {
        (0..v)
            .map(|_| {
                let f = CMat::from_fn(m, s, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                let norms: Vec<f64> = f.column_iter().map(|c| c.norm()).collect();
                CMat::from_fn(m, s, |i, j| f[(i, j)] / norms[j])
            })
            .collect()
    }

    fn rel(a: &CMat, b: &CMat) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn eta_channel_matches_builder() {
        let ofdm = Ofdm::new(FC, 40e6, 4);
        let r = receiver(1, &ofdm);
        let mut rng = stream(3, 0);
        let p = random_point(&mut rng);
        let th = random_theta(25, &mut rng);
        let eta = eta_of(&p, &e()).unwrap();
        for vi in 0..4 {
            let a = channel_at_eta(&eta, &r, &tx(), &th, &ofdm, vi);
            let b = crate::channels::build_radar_channel(&p, &r, &tx(), &th, &ofdm, vi).unwrap();
            assert!(rel(&a, &b) < 1e-13);
        }
    }

    #[test]
    fn trivial_derivatives() {
        let ofdm = Ofdm::new(FC, 40e6, 4);
        let r = receiver(1, &ofdm);
        let mut rng = stream(4, 0);
        let p = random_point(&mut rng);
        let th = random_theta(25, &mut rng);
        let zero = ofdm.indices.iter().position(|&v| v == 0).unwrap();
        let d = radar_channel_derivatives(&p, &r, &tx(), &th, &ofdm, zero).unwrap();
        assert_eq!(d[idx::TAU].norm(), 0.0);
        for vi in 0..4 {
            let h = crate::channels::build_radar_channel(&p, &r, &tx(), &th, &ofdm, vi).unwrap();
            let d = radar_channel_derivatives(&p, &r, &tx(), &th, &ofdm, vi).unwrap();
            assert!(rel(&d[idx::PHASE], &(&h * C64::i())) < 1e-14);
            assert!(rel(&d[idx::GAIN], &(&h / C64::new(p.alpha.norm(), 0.0))) < 1e-14);
        }
        let zero_gain = RadarChannelParams { q: p.q, alpha: C64::new(0.0, 0.0) };
        assert!(matches!(
            radar_channel_derivatives(&zero_gain, &r, &tx(), &th, &ofdm, 0),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let ofdm = Ofdm::new(FC, 40e6, 4);
        let mut rng = stream(5, 0);
        let direct = Receiver::Direct { rx: ArrayLayout::linear_y(4, lam(), e()).unwrap() };
        let ris = receiver(2, &ofdm);
        for trial in 0..20 {
            let r = if trial % 2 == 0 { &ris } else { &direct };
            let p = random_point(&mut rng);
            let th = random_theta(25, &mut rng);
            let eta = eta_of(&p, &r.reference()).unwrap();
            let steps = [1e-6, 1e-6, 1e-6, 1e-6, 1e-13, 1e-6 * eta[5], 1e-6];
            let vi = trial % 4;
            let d = radar_channel_derivatives(&p, r, &tx(), &th, &ofdm, vi).unwrap();
            for i in 0..PARAMS {
                let (mut up, mut dn) = (eta, eta);
                up[i] += steps[i];
                dn[i] -= steps[i];
                let fd = (channel_at_eta(&up, r, &tx(), &th, &ofdm, vi) - channel_at_eta(&dn, r, &tx(), &th, &ofdm, vi))
                    / C64::new(2.0 * steps[i], 0.0);
                if d[i].norm() == 0.0 {
                    assert!(fd.norm() < 1e-9 * channel_at_eta(&eta, r, &tx(), &th, &ofdm, vi).norm() / steps[i]);
                } else {
                    let err = rel(&fd, &d[i]);
                    assert!(err < 1e-5, "param {i}: {err}");
                }
            }
        }
    }

    fn eta_position(q: &Position3) -> [f64; 5] {
        let (t0, tr) = geometry::target_angles(q, &e()).unwrap();
        [t0.azimuth, tr.azimuth, t0.elevation, tr.elevation, geometry::round_trip_delay(q, &e())]
    }

    #[test]
    fn xi_matches_finite_differences() {
        let mut rng = stream(6, 0);
        for _ in 0..100 {
            let q = random_point(&mut rng).q;
            let xi = jacobian_xi(&q, &e()).unwrap();
            for c in 0..3 {
                let h = 1e-4;
                let (mut up, mut dn) = (q, q);
                up[c] += h;
                dn[c] -= h;
                let (a, b) = (eta_position(&up), eta_position(&dn));
                for i in 0..5 {
                    let fd = (a[i] - b[i]) / (2.0 * h);
                    let scale = xi.fixed_view::<1, 3>(i, 0).norm();
                    assert!((fd - xi[(i, c)]).abs() < 1e-6 * scale, "row {i} col {c}");
                }
            }
            assert_eq!(xi.fixed_view::<2, 5>(5, 0).into_owned(), SMatrix::<f64, 2, 5>::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0));
            assert_eq!(xi.fixed_view::<5, 2>(0, 3).norm(), 0.0);
        }
    }

    #[test]
    fn xi_delay_row_scenario_value() {
        let q = Position3::new(50.0, 50.0, 5.0);
        let xi = jacobian_xi(&q, &e()).unwrap();
        // e_x - q_x = +50, so the receive leg enters with a minus sign
        let expect = (50.0 / q.norm() - 50.0 / (e() - q).norm()) / SPEED_OF_LIGHT;
        assert!((xi[(idx::TAU, 0)] - expect).abs() < 1e-12 * expect.abs());
        let h = 1e-4;
        let fd = (geometry::round_trip_delay(&(q + Position3::new(h, 0.0, 0.0)), &e())
            - geometry::round_trip_delay(&(q - Position3::new(h, 0.0, 0.0)), &e()))
            / (2.0 * h);
        assert!((fd - expect).abs() < 1e-6 * expect.abs());
        assert!((q.norm() - 70.887).abs() < 1e-3);
        assert!(((e() - q).norm() - 62.402).abs() < 1e-3);
    }

    /// Sum over subcarriers, streams and symbol slots of
    /// `Re{(dH_i f x)^H (dH_j f x)}` with unit symbols.
    fn brute_force_fim(d: &[Vec<CMat>], f: &[CMat], rho: &DMatrix<f64>, noise: f64, tau_s: usize) -> ChannelFim {
        let mut j = ChannelFim::zeros();
        for (vi, dv) in d.iter().enumerate() {
            for slot in 0..tau_s {
                // orthogonal unit-modulus symbols across streams: DFT rows
                let s_count = f[vi].ncols();
                let x = CVec::from_fn(s_count, |s, _| {
                    cis(2.0 * std::f64::consts::PI * (s * slot) as f64 / tau_s as f64) * rho[(s, vi)].sqrt()
                });
                let sig = &f[vi] * x;
                let dy: Vec<CVec> = dv.iter().map(|m| m * &sig).collect();
                for a in 0..PARAMS {
                    for b in 0..PARAMS {
                        j[(a, b)] += 2.0 / noise * dy[a].dotc(&dy[b]).re;
                    }
                }
            }
        }
        j
    }

    #[test]
    fn trace_form_matches_triple_sum_and_stream_maps() {
        let ofdm = Ofdm::new(FC, 40e6, 4);
        let r = receiver(3, &ofdm);
        let mut rng = stream(7, 0);
        let tau_s = 10;
        let noise = 1e-12;
        for _ in 0..5 {
            let p = random_point(&mut rng);
            let th = random_theta(25, &mut rng);
            // S <= tau_s so DFT symbols are orthogonal and X = tau_s I exactly
            let f = random_precoders(25, 6, 4, &mut rng);
            let rho = DMatrix::from_fn(6, 4, |_, _| rng.random_range(0.0..1.0));
            let rd = RankOneDerivatives::new(&p, &r, &tx(), &th, &ofdm).unwrap();
            let mats: Vec<Vec<CMat>> = (0..4).map(|vi| rd.matrices(vi)).collect();
            let covs: Vec<CMat> = (0..4)
                .map(|vi| signal_covariance(&f[vi], rho.column(vi).as_slice(), tau_s as f64))
                .collect();
            let trace = channel_fim(&covs, &mats, noise);
            let brute = brute_force_fim(&mats, &f, &rho, noise, tau_s);
            assert!((trace - brute).norm() / brute.norm() < 1e-10);
            let mut maps = ChannelFim::zeros();
            for vi in 0..4 {
                for (s, g) in rd.stream_fims(vi, &f[vi], noise, tau_s as f64).iter().enumerate() {
                    maps += g * rho[(s, vi)];
                }
            }
            assert!((maps - trace).norm() / trace.norm() < 1e-12);
            let min_eig = trace.symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-8 * trace.trace());
        }
    }

    #[test]
    fn gamma_form_matches_direct_fim() {
        let ofdm = Ofdm::new(FC, 40e6, 4);
        let r = receiver(4, &ofdm);
        let gram = match &r {
            Receiver::Ris { nearfield, .. } => nearfield.gram(),
            _ => unreachable!(),
        };
        let mut rng = stream(8, 0);
        let p = random_point(&mut rng);
        let f = random_precoders(25, 5, 4, &mut rng);
        let rho = DMatrix::from_fn(5, 4, |_, _| rng.random_range(0.0..1.0));
        let xi = jacobian_xi(&p.q, &e()).unwrap();
        let ones = CVec::from_element(25, C64::new(1.0, 0.0));
        let base = RankOneDerivatives::new(&p, &r, &tx(), &ones, &ofdm).unwrap();
        let q_channel = gamma_form(&base, &ChannelFim::identity(), &gram, &f, &rho, 1e-12, 10.0);
        let q_location = gamma_form(&base, &xi, &gram, &f, &rho, 1e-12, 10.0);
        for _ in 0..20 {
            let th = random_theta(25, &mut rng);
            let direct = evaluate(&p, &r, &tx(), &th, &ofdm, &f, &rho, 1e-12, 10.0).unwrap();
            let jc: ChannelFim = evaluate_gamma_form(&q_channel, &th);
            let jl: LocationFim = evaluate_gamma_form(&q_location, &th);
            assert!((jc - direct.j).norm() / direct.j.norm() < 1e-8);
            assert!((jl - direct.jbar).norm() / direct.jbar.norm() < 1e-8);
        }
    }

    #[test]
    fn affine_in_power() {
        let ofdm = Ofdm::new(FC, 40e6, 2);
        let r = receiver(5, &ofdm);
        let mut rng = stream(9, 0);
        let p = random_point(&mut rng);
        let th = random_theta(25, &mut rng);
        let f = random_precoders(25, 3, 2, &mut rng);
        let r1 = DMatrix::from_fn(3, 2, |_, _| rng.random_range(0.0..1.0));
        let r2 = DMatrix::from_fn(3, 2, |_, _| rng.random_range(0.0..1.0));
        let ev = |rho: &DMatrix<f64>| evaluate(&p, &r, &tx(), &th, &ofdm, &f, rho, 1e-12, 10.0).unwrap();
        let (a, b, c) = (ev(&r1), ev(&r2), ev(&(&r1 + &r2)));
        assert!((a.j + b.j - c.j).norm() / c.j.norm() < 1e-12);
        let two = ev(&(&r1 * 2.0));
        assert!((a.j * 2.0 - two.j).norm() / two.j.norm() < 1e-12);
        let zero = ev(&DMatrix::zeros(3, 2));
        assert_eq!(zero.j.norm(), 0.0);
        assert_eq!(zero.peb, f64::INFINITY);
    }

    #[test]
    fn peb_of_identity_and_singular() {
        assert!((peb(&LocationFim::identity()) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(peb(&LocationFim::zeros()), f64::INFINITY);
        let mut rank_deficient = LocationFim::identity();
        rank_deficient[(2, 2)] = 0.0;
        assert_eq!(peb(&rank_deficient), f64::INFINITY);
        assert_eq!(peb(&(LocationFim::identity() * f64::NAN)), f64::INFINITY);
    }

    #[test]
    fn peb_scales_inversely_with_gain_and_ignores_global_phase() {
        let ofdm = Ofdm::new(FC, 40e6, 4);
        let r = receiver(6, &ofdm);
        let mut rng = stream(10, 0);
        for _ in 0..5 {
            let p = random_point(&mut rng);
            let th = random_theta(25, &mut rng);
            let f = random_precoders(25, 5, 4, &mut rng);
            let rho = DMatrix::from_fn(5, 4, |_, _| rng.random_range(0.0..1.0));
            let ev = |p: &RadarChannelParams, th: &CVec| evaluate(p, &r, &tx(), th, &ofdm, &f, &rho, 1e-12, 10.0).unwrap();
            let base = ev(&p, &th);
            let louder = RadarChannelParams { q: p.q, alpha: p.alpha * 10.0 };
            let ratio = base.peb / ev(&louder, &th).peb;
            assert!((ratio - 10.0).abs() < 1e-9 * 10.0, "{ratio}");
            let rotated = ev(&p, &(&th * cis(0.7)));
            assert!((rotated.j - base.j).norm() / base.j.norm() < 1e-12);
            let min_eig = base.jbar.symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-8 * base.jbar.trace());
        }
    }
}
