//! Uplink pilot training through the analog combiner and LMMSE estimation of
//! the UE channels.

use nalgebra::SymmetricEigen;
use rand::Rng;

use crate::channels::complex_normal;
use crate::{cis, CMat, CVec, Error, Result, C64};

/// Orthogonal pilot sequences (columns, squared norm `tau_p`) and the
/// UE-to-pilot assignment.
#[derive(Debug, Clone)]
pub struct PilotBook {
    pub sequences: CMat,
    pub assignment: Vec<usize>,
}

impl PilotBook {
    /// DFT columns of size `tau_p`; UE `k` gets pilot `k`.
    pub fn dft(tau_p: usize, ues: usize) -> Result<Self> {
        if tau_p < ues {
            return Err(Error::InvalidArgument(format!(
                "tau_p = {tau_p} pilots cannot serve {ues} UEs without contamination"
            )));
        }
        let sequences = CMat::from_fn(tau_p, tau_p, |t, i| {
            cis(-2.0 * std::f64::consts::PI * (i * t) as f64 / tau_p as f64)
        });
        Ok(PilotBook {
            sequences,
            assignment: (0..ues).collect(),
        })
    }

    pub fn length(&self) -> usize {
        self.sequences.nrows()
    }

    pub fn pilot(&self, ue: usize) -> CVec {
        self.sequences.column(self.assignment[ue]).into_owned()
    }

    /// `Y zeta_k^* / sqrt(tau_p)`: the despread observation of UE `k`.
    pub fn despread(&self, y: &CMat, ue: usize) -> CVec {
        let z = self.pilot(ue).conjugate();
        y * z / C64::new((self.length() as f64).sqrt(), 0.0)
    }
}

/// Eigenvalues in descending order with matching eigenvectors. Ties keep
/// the decomposition's order; each eigenvector's first significant entry is
/// made real-positive.
pub fn sorted_eigen(r: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(r.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(r.nrows(), order.len());
    for (c, &i) in order.iter().enumerate() {
        let mut u = eig.eigenvectors.column(i).into_owned();
        let peak = u.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if let Some(first) = u.iter().find(|z| z.norm() > 1e-8 * peak).copied() {
            u *= first.conj() / first.norm();
        }
        vectors.set_column(c, &u);
    }
    (values, vectors)
}

/// `G = [u_{1,1}, .., u_{1,L}, .., u_{K,L}]` with `L = N_RF / K`.
pub fn analog_combiner(correlations: &[CMat], n_rf: usize) -> Result<CMat> {
    let k = correlations.len();
    if k == 0 || n_rf % k != 0 {
        return Err(Error::InvalidArgument(format!("N_RF = {n_rf} is not a multiple of K = {k}")));
    }
    let l = n_rf / k;
    let m = correlations[0].nrows();
    if l > m {
        return Err(Error::InvalidArgument(format!("{l} eigenvectors per UE exceed {m} antennas")));
    }
    let mut g = CMat::zeros(m, n_rf);
    for (ki, r) in correlations.iter().enumerate() {
        let (_, u) = sorted_eigen(r);
        for li in 0..l {
            g.set_column(ki * l + li, &u.column(li));
        }
    }
    Ok(g)
}

/// `Y_v^p = sum_k sqrt(mu_k) G^H b_k zeta_k^T + G^H N_v`.
pub fn pilot_observation<R: Rng + ?Sized>(
    channels: &[CVec],
    powers: &[f64],
    g: &CMat,
    book: &PilotBook,
    noise_var: f64,
    rng: &mut R,
) -> CMat {
    let tau_p = book.length();
    let m = g.nrows();
    let mut signal = CMat::zeros(m, tau_p);
    for (k, b) in channels.iter().enumerate() {
        let zeta = book.pilot(k);
        signal.ger(C64::new(powers[k].sqrt(), 0.0), b, &zeta, C64::new(1.0, 0.0));
    }
    if noise_var > 0.0 {
        signal += CMat::from_fn(m, tau_p, |_, _| complex_normal(rng, noise_var));
    }
    g.adjoint() * signal
}

/// LMMSE filters, one per UE, applied to despread observations.
#[derive(Debug, Clone)]
pub struct LmmseEstimator {
    filters: Vec<CMat>,
    pub book: PilotBook,
}

impl LmmseEstimator {
    /// Filter `sqrt(mu tau_p) R G (mu tau_p G^H R G + sigma^2 G^H G)^{-1}`.
    ///
    /// Evaluated through the thin SVD `G = U S V^H` as
    /// `sqrt(mu tau_p) R U (mu tau_p U^H R U + sigma^2 I)^{-1} S^{-1} V^H`,
    /// which is the same matrix when `G` has full column rank. Combiner
    /// columns of nearby UEs are often nearly collinear, which makes the
    /// direct inverse useless in floating point.
    pub fn new(correlations: &[CMat], g: &CMat, powers: &[f64], noise_var: f64, book: PilotBook) -> Result<Self> {
        let tau_p = book.length() as f64;
        let (u, s, vh) = thin_svd(g)?;
        let r = s.len();
        let back = CMat::from_fn(r, g.ncols(), |i, j| vh[(i, j)] / s[i]);
        let filters = correlations
            .iter()
            .zip(powers)
            .enumerate()
            .map(|(k, (rk, &mu))| {
                let ru = rk * &u;
                let inner = (u.adjoint() * &ru) * C64::new(mu * tau_p, 0.0)
                    + CMat::identity(r, r) * C64::new(noise_var, 0.0);
                let inv = inner.clone().try_inverse().filter(|m| m.iter().all(|z| z.is_finite()));
                let inv = inv.ok_or_else(|| Error::Singular(format!("LMMSE inner matrix of UE {k}")))?;
                check_inverse(&inner, &inv, k)?;
                Ok(ru * inv * &back * C64::new((mu * tau_p).sqrt(), 0.0))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LmmseEstimator { filters, book })
    }

    pub fn filter(&self, ue: usize) -> &CMat {
        &self.filters[ue]
    }

    pub fn estimate(&self, y: &CMat, ue: usize) -> CVec {
        &self.filters[ue] * self.book.despread(y, ue)
    }
}

/// Singular values of `G` below this fraction of the largest are treated as
/// zero.
const RANK_TOL: f64 = 1e-10;

/// `(U, s, V^H)` restricted to the numerical rank of `g`.
fn thin_svd(g: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    let svd = g.clone().svd(true, true);
    let (u, vh) = match (svd.u, svd.v_t) {
        (Some(u), Some(vh)) => (u, vh),
        _ => return Err(Error::Singular("SVD of the combiner".into())),
    };
    let top = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_TOL * top)
        .collect();
    if keep.is_empty() {
        return Err(Error::Singular("combiner is zero".into()));
    }
    let s = keep.iter().map(|&i| svd.singular_values[i]).collect();
    Ok((u.select_columns(&keep), s, vh.select_rows(&keep)))
}

fn check_inverse(m: &CMat, inv: &CMat, ue: usize) -> Result<()> {
    let n = m.nrows();
    let resid = (m * inv - CMat::identity(n, n)).norm();
    if !(resid <= 1e-6 * (n as f64).sqrt()) {
        return Err(Error::Singular(format!(
            "LMMSE inner matrix of UE {ue} is ill-conditioned (residual {resid:.2e})"
        )));
    }
    Ok(())
}

/// One-shot LMMSE estimate for a single UE.
pub fn lmmse_estimate(y: &CMat, correlation: &CMat, g: &CMat, power: f64, noise_var: f64, book: &PilotBook, ue: usize) -> Result<CVec> {
    let mut single = book.clone();
    single.assignment = vec![book.assignment[ue]];
    let est = LmmseEstimator::new(std::slice::from_ref(correlation), g, &[power], noise_var, single)?;
    Ok(est.estimate(y, 0))
}

/// Scaled least squares, `G (G^H G)^{-1} Y zeta^* / (sqrt(mu) tau_p)`, with
/// the pseudo-inverse on a rank-deficient `G`.
pub fn ls_estimate(y: &CMat, g: &CMat, power: f64, book: &PilotBook, ue: usize) -> Result<CVec> {
    let (u, s, vh) = thin_svd(g)?;
    let tau_p = book.length() as f64;
    let z = vh * (y * book.pilot(ue).conjugate());
    let z = CVec::from_fn(s.len(), |i, _| z[i] / s[i]);
    Ok(u * z / C64::new(power.sqrt() * tau_p, 0.0))
}

/// `sum_v ||b_v - b^_v||^2 / ||b_v||^2`.
pub fn channel_mse(truth: &[CVec], estimate: &[CVec]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::InvalidArgument("channel and estimate counts differ".into()));
    }
    truth
        .iter()
        .zip(estimate)
        .map(|(b, bh)| {
            let p = b.norm_squared();
            if !(p > 0.0) {
                return Err(Error::InvalidArgument("zero-norm true channel".into()));
            }
            if b.len() != bh.len() {
                return Err(Error::InvalidArgument("channel and estimate lengths differ".into()));
            }
            Ok((b - bh).norm_squared() / p)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{Ofdm, UeChannelModel};
    use crate::geometry::{wavelength, ArrayLayout, Position3};
    use crate::rng::stream;

    const FC: f64 = 30e9;

    fn models(n: usize) -> Vec<UeChannelModel> {
        let tx = ArrayLayout::planar(n, n, wavelength(FC), Position3::zeros()).unwrap();
        let ues = [
            (Position3::new(70.0, 40.0, -9.0), vec![Position3::new(85.0, 33.0, -9.0), Position3::new(62.0, 47.0, -9.0)]),
            (Position3::new(92.0, 34.0, -9.0), vec![Position3::new(75.0, 45.0, -9.0), Position3::new(98.0, 49.0, -9.0)]),
        ];
        ues.iter()
            .map(|(p, s)| UeChannelModel::new(*p, s, &tx, FC, 0.0).unwrap())
            .collect()
    }

    #[test]
    fn pilot_book_is_orthogonal() {
        let book = PilotBook::dft(5, 5).unwrap();
        let gram = book.sequences.adjoint() * &book.sequences;
        assert!((gram - CMat::identity(5, 5) * C64::new(5.0, 0.0)).norm() < 1e-12);
        assert!(PilotBook::dft(4, 5).is_err());
    }

    #[test]
    fn combiner_collects_top_eigenvectors() {
        let ms = models(3);
        let rs: Vec<CMat> = ms.iter().map(|m| m.correlation()).collect();
        let g = analog_combiner(&rs, 4).unwrap();
        assert_eq!(g.shape(), (9, 4));
        let (vals, vecs) = sorted_eigen(&rs[1]);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        assert!((g.column(2) - vecs.column(0)).norm() < 1e-12);
        assert!(g.column(2)[0].im.abs() < 1e-12 && g.column(2)[0].re > 0.0);
        assert!(analog_combiner(&rs, 3).is_err());
    }

    #[test]
    fn observation_shape_and_noiseless_despreading() {
        let ms = models(7);
        let rs: Vec<CMat> = ms.iter().map(|m| m.correlation()).collect();
        let ofdm = Ofdm::new(FC, 40e6, 8);
        let mut rng = stream(1, 0);
        let gains: Vec<_> = ms.iter().map(|m| m.draw_gains(&mut rng)).collect();
        let b: Vec<CVec> = ms.iter().zip(&gains).map(|(m, g)| m.channel(g, &ofdm, 2)).collect();
        let g = analog_combiner(&rs, 20).unwrap();
        let book = PilotBook::dft(5, 2).unwrap();
        let y = pilot_observation(&b, &[0.1, 0.2], &g, &book, 0.0, &mut rng);
        assert_eq!(y.shape(), (20, 5));
        for k in 0..2 {
            let r = &y * book.pilot(k).conjugate() / C64::new(5.0, 0.0);
            let expected = g.adjoint() * &b[k] * C64::new([0.1f64, 0.2][k].sqrt(), 0.0);
            assert!((r - &expected).norm() < 1e-12 * expected.norm());
        }
        let zero = pilot_observation(&b, &[0.0, 0.0], &g, &book, 0.0, &mut rng);
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn zero_power_gives_zero_estimate() {
        let ms = models(3);
        let rs: Vec<CMat> = ms.iter().map(|m| m.correlation()).collect();
        let g = analog_combiner(&rs, 4).unwrap();
        let book = PilotBook::dft(2, 2).unwrap();
        let y = CMat::from_fn(4, 2, |r, c| C64::new(r as f64, c as f64));
        let est = lmmse_estimate(&y, &rs[0], &g, 0.0, 1e-12, &book, 0).unwrap();
        assert_eq!(est.norm(), 0.0);
        assert!(matches!(lmmse_estimate(&y, &rs[0], &g, 0.0, 0.0, &book, 0), Err(Error::Singular(_))));
    }

    #[test]
    fn filter_matches_direct_inverse() {
        let ms = models(3);
        let rs: Vec<CMat> = ms.iter().map(|m| m.correlation()).collect();
        let g = analog_combiner(&rs, 4).unwrap();
        let book = PilotBook::dft(2, 2).unwrap();
        let (mu, noise, tau) = (0.1, noise_for_snr(&rs), 2.0);
        let est = LmmseEstimator::new(&rs, &g, &[mu, mu], noise, book).unwrap();
        for (k, r) in rs.iter().enumerate() {
            let inner = g.adjoint() * r * &g * C64::new(mu * tau, 0.0) + g.adjoint() * &g * C64::new(noise, 0.0);
            let direct = r * &g * inner.try_inverse().unwrap() * C64::new((mu * tau).sqrt(), 0.0);
            assert!((est.filter(k) - &direct).norm() < 1e-8 * direct.norm());
        }
    }

    #[test]
    fn noiseless_single_ue_estimate_is_eigenprojection() {
        let ms = models(5);
        let r = ms[0].correlation();
        let (vals, u) = sorted_eigen(&r);
        let l = 2;
        let g = u.columns(0, l).into_owned();
        let book = PilotBook::dft(1, 1).unwrap();
        let est = LmmseEstimator::new(std::slice::from_ref(&r), &g, &[0.1], 1e-30, book.clone()).unwrap();
        let proj = &g * g.adjoint();
        let ofdm = Ofdm::new(FC, 40e6, 4);
        let mut rng = stream(2, 0);
        let mut err = 0.0;
        let mut pow = 0.0;
        for _ in 0..2000 {
            let gains = ms[0].draw_gains(&mut rng);
            let b = ms[0].channel(&gains, &ofdm, 1);
            let y = pilot_observation(std::slice::from_ref(&b), &[0.1], &g, &book, 0.0, &mut rng);
            let bh = est.estimate(&y, 0);
            assert!((&bh - &proj * &b).norm() < 1e-6 * b.norm());
            err += (&b - &bh).norm_squared();
            pow += b.norm_squared();
        }
        let discarded: f64 = vals[l..].iter().sum::<f64>() / vals.iter().sum::<f64>();
        assert!((err / pow - discarded).abs() < 0.1 * discarded.max(1e-3), "{} vs {}", err / pow, discarded);
    }

    struct Trial {
        b: Vec<CVec>,
        lmmse: Vec<CVec>,
        ls: Vec<CVec>,
    }

    fn trials(n: usize, noise: f64, seed: u64) -> (Vec<CMat>, CMat, Vec<Trial>) {
        let ms = models(3);
        let rs: Vec<CMat> = ms.iter().map(|m| m.correlation()).collect();
        let g = analog_combiner(&rs, 4).unwrap();
        let book = PilotBook::dft(2, 2).unwrap();
        let mu = [0.1, 0.1];
        let est = LmmseEstimator::new(&rs, &g, &mu, noise, book.clone()).unwrap();
        let ofdm = Ofdm::new(FC, 40e6, 2);
        let mut rng = stream(seed, 0);
        let out = (0..n)
            .map(|_| {
                let b: Vec<CVec> = ms.iter().map(|m| m.channel(&m.draw_gains(&mut rng), &ofdm, 0)).collect();
                let y = pilot_observation(&b, &mu, &g, &book, noise, &mut rng);
                Trial {
                    lmmse: (0..2).map(|k| est.estimate(&y, k)).collect(),
                    ls: (0..2).map(|k| ls_estimate(&y, &g, mu[k], &book, k).unwrap()).collect(),
                    b,
                }
            })
            .collect();
        (rs, g, out)
    }

    fn noise_for_snr(rs: &[CMat]) -> f64 {
        // per-antenna received power of UE 0 at the pilot power, 0 dB SNR
        0.1 * rs[0].trace().re / rs[0].nrows() as f64
    }

    #[test]
    fn lmmse_error_is_orthogonal_to_estimate() {
        let rs: Vec<CMat> = models(3).iter().map(|m| m.correlation()).collect();
        let noise = noise_for_snr(&rs);
        let (rs, _, ts) = trials(100_000, noise, 3);
        for k in 0..2 {
            let mut cross = CMat::zeros(9, 9);
            for t in &ts {
                let err = &t.b[k] - &t.lmmse[k];
                cross.ger(C64::new(1.0, 0.0), &t.lmmse[k], &err.conjugate(), C64::new(1.0, 0.0));
            }
            cross /= C64::new(ts.len() as f64, 0.0);
            assert!(cross.norm() < 0.05 * rs[k].norm(), "{}", cross.norm() / rs[k].norm());
        }
    }

    #[test]
    fn estimate_lies_in_span_of_rg() {
        let rs: Vec<CMat> = models(3).iter().map(|m| m.correlation()).collect();
        let noise = noise_for_snr(&rs);
        let (rs, g, ts) = trials(20, noise, 4);
        for k in 0..2 {
            let rg = &rs[k] * &g;
            let svd = rg.clone().svd(true, false);
            let top = svd.singular_values.max();
            let u = svd.u.unwrap();
            let cols: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&i| svd.singular_values[i] > 1e-10 * top)
                .collect();
            let basis = u.select_columns(&cols);
            for t in &ts {
                let x = &t.lmmse[k];
                let resid = x - &basis * (basis.adjoint() * x);
                assert!(resid.norm() < 1e-9 * x.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn lmmse_beats_least_squares() {
        let rs: Vec<CMat> = models(3).iter().map(|m| m.correlation()).collect();
        let noise = noise_for_snr(&rs);
        let (_, _, ts) = trials(5000, noise, 5);
        for k in 0..2 {
            let mse = |f: &dyn Fn(&Trial) -> &CVec| {
                ts.iter().map(|t| (&t.b[k] - f(t)).norm_squared() / t.b[k].norm_squared()).sum::<f64>()
            };
            let lm = mse(&|t| &t.lmmse[k]);
            let ls = mse(&|t| &t.ls[k]);
            assert!(lm < ls, "UE {k}: {lm} vs {ls}");
        }
    }

    #[test]
    fn mse_edge_cases() {
        let b: Vec<CVec> = (0..4).map(|i| CVec::from_element(3, C64::new(1.0 + i as f64, 0.5))).collect();
        assert_eq!(channel_mse(&b, &b).unwrap(), 0.0);
        let zeros: Vec<CVec> = (0..4).map(|_| CVec::zeros(3)).collect();
        assert!((channel_mse(&b, &zeros).unwrap() - 4.0).abs() < 1e-15);
        assert!(channel_mse(&zeros, &b).is_err());
    }
}
