//! Downlink SINR expectation terms by Monte Carlo, the use-and-then-forget
//! SE bound and the affine SINR constraint rows used by the optimizer.

use nalgebra::DMatrix;

use crate::channels::{Ofdm, UeChannelModel};
use crate::estimation::{pilot_observation, LmmseEstimator};
use crate::par::{self, Mode};
use crate::precoding::{build_bank, PrecoderBank, Strategy};
use crate::rng::{ids, stream};
use crate::{CMat, CVec, Error, Result, C64};

/// Communication side of one deployment: UE channel statistics, the uplink
/// estimator and the analog precoders. Everything that varies per coherence
/// block is drawn in [`Downlink::draw_block`].
#[derive(Debug, Clone)]
pub struct Downlink {
    pub ofdm: Ofdm,
    pub ues: Vec<UeChannelModel>,
    pub combiner: CMat,
    pub estimator: LmmseEstimator,
    pub pilot_powers: Vec<f64>,
    pub noise_var: f64,
    pub w_comm: CMat,
    pub w_sense: CMat,
    pub strategy: Strategy,
    /// Use true channels in place of estimates.
    pub perfect_csi: bool,
}

/// True channels and estimates of one coherence block, indexed `[k][v]`.
#[derive(Debug, Clone)]
pub struct Block {
    pub channels: Vec<Vec<CVec>>,
    pub estimates: Vec<Vec<CVec>>,
}

impl Downlink {
    pub fn users(&self) -> usize {
        self.ues.len()
    }

    pub fn draw_block<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Block {
        let gains: Vec<Vec<C64>> = self.ues.iter().map(|u| u.draw_gains(rng)).collect();
        let v = self.ofdm.len();
        let channels: Vec<Vec<CVec>> = self
            .ues
            .iter()
            .zip(&gains)
            .map(|(u, g)| (0..v).map(|vi| u.channel(g, &self.ofdm, vi)).collect())
            .collect();
        let estimates = if self.perfect_csi {
            channels.clone()
        } else {
            let mut est = vec![Vec::with_capacity(v); self.users()];
            for vi in 0..v {
                let at_v: Vec<CVec> = channels.iter().map(|c| c[vi].clone()).collect();
                let y = pilot_observation(
                    &at_v,
                    &self.pilot_powers,
                    &self.combiner,
                    &self.estimator.book,
                    self.noise_var,
                    rng,
                );
                for (k, e) in est.iter_mut().enumerate() {
                    e.push(self.estimator.estimate(&y, k));
                }
            }
            est
        };
        Block { channels, estimates }
    }

    pub fn precoders(&self, block: &Block) -> Result<PrecoderBank> {
        build_bank(
            self.strategy,
            &self.w_comm,
            &self.w_sense,
            &block.estimates,
            &self.pilot_powers,
            self.noise_var,
        )
    }

    /// Inner products of one block: `gains[v][(k, s)] = b_{k,v}^H f_{s,v}`
    /// and `leaks[v][(k, q)] = (b - b^)^H f_{K+q,v}`.
    pub fn block_terms(&self, block: &Block, bank: &PrecoderBank) -> BlockTerms {
        let k = self.users();
        let gains = (0..bank.subcarriers())
            .map(|vi| {
                let f = &bank.precoders[vi];
                DMatrix::from_fn(k, bank.streams(), |u, s| block.channels[u][vi].dotc(&f.column(s)))
            })
            .collect();
        let leaks = (0..bank.subcarriers())
            .map(|vi| {
                let f = &bank.precoders[vi];
                DMatrix::from_fn(k, bank.sensing, |u, q| {
                    let err = &block.channels[u][vi] - &block.estimates[u][vi];
                    err.dotc(&f.column(bank.comm + q))
                })
            })
            .collect();
        BlockTerms { gains, leaks }
    }
}

#[derive(Debug, Clone)]
pub struct BlockTerms {
    pub gains: Vec<DMatrix<C64>>,
    pub leaks: Vec<DMatrix<C64>>,
}

/// Expectation terms of the SINR, frozen per optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrCoefficients {
    /// `a[(k, v)] = |E b^H f_k|^2`.
    pub signal: DMatrix<f64>,
    /// Per subcarrier, `c[(k, j)] = E |b_k^H f_j|^2` for communication streams.
    pub interference: Vec<DMatrix<f64>>,
    /// Per subcarrier, `e[(k, q)] = E |b~_k^H f_q|^2` for sensing streams.
    pub leak: Vec<DMatrix<f64>>,
    pub noise: Vec<f64>,
    pub samples: usize,
}

impl SinrCoefficients {
    pub fn users(&self) -> usize {
        self.signal.nrows()
    }

    pub fn subcarriers(&self) -> usize {
        self.signal.ncols()
    }

    pub fn sensing(&self) -> usize {
        self.leak.first().map_or(0, |l| l.ncols())
    }

    pub fn streams(&self) -> usize {
        self.users() + self.sensing()
    }

    /// Sample means over `terms`, summed in slice order.
    pub fn from_terms(terms: &[BlockTerms], noise: Vec<f64>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one Monte Carlo block is required".into()))?;
        let n = terms.len() as f64;
        let nv = first.gains.len();
        let k = first.gains.first().map_or(0, |g| g.nrows());
        if noise.len() != k {
            return Err(Error::InvalidArgument("one noise variance per UE is required".into()));
        }
        let q = first.leaks.first().map_or(0, |l| l.ncols());
        let mut mean_gain = vec![DMatrix::<C64>::zeros(k, k); nv];
        let mut interference = vec![DMatrix::<f64>::zeros(k, k); nv];
        let mut leak = vec![DMatrix::<f64>::zeros(k, q); nv];
        for t in terms {
            for vi in 0..nv {
                for u in 0..k {
                    mean_gain[vi][(u, u)] += t.gains[vi][(u, u)];
                    for j in 0..k {
                        interference[vi][(u, j)] += t.gains[vi][(u, j)].norm_sqr();
                    }
                    for s in 0..q {
                        leak[vi][(u, s)] += t.leaks[vi][(u, s)].norm_sqr();
                    }
                }
            }
        }
        let signal = DMatrix::from_fn(k, nv, |u, vi| (mean_gain[vi][(u, u)] / n).norm_sqr());
        for m in interference.iter_mut() {
            *m /= n;
        }
        for m in leak.iter_mut() {
            *m /= n;
        }
        Ok(SinrCoefficients {
            signal,
            interference,
            leak,
            noise,
            samples: terms.len(),
        })
    }

    /// `f_{k,v}(rho) = rho_{k,v} a_{k,v}`.
    pub fn numerator(&self, rho: &DMatrix<f64>, k: usize, v: usize) -> f64 {
        rho[(k, v)] * self.signal[(k, v)]
    }

    /// `g_{k,v}(rho)`, interference plus leakage plus noise.
    pub fn denominator(&self, rho: &DMatrix<f64>, k: usize, v: usize) -> f64 {
        let nk = self.users();
        let c = &self.interference[v];
        let inter: f64 = (0..nk).map(|j| rho[(j, v)] * c[(k, j)]).sum::<f64>() - rho[(k, v)] * self.signal[(k, v)];
        let leak: f64 = (0..self.sensing()).map(|q| rho[(nk + q, v)] * self.leak[v][(k, q)]).sum();
        inter + leak + self.noise[k]
    }

    /// Row of `f - gamma g >= 0` over the streams of subcarrier `v`:
    /// returns per-stream coefficients and the right-hand side `gamma sigma_k^2`.
    pub fn constraint_row(&self, k: usize, v: usize, gamma: f64) -> (Vec<f64>, f64) {
        let nk = self.users();
        let a = self.signal[(k, v)];
        let mut row: Vec<f64> = (0..nk).map(|j| -gamma * self.interference[v][(k, j)]).collect();
        row[k] += a * (1.0 + gamma);
        row.extend((0..self.sensing()).map(|q| -gamma * self.leak[v][(k, q)]));
        (row, gamma * self.noise[k])
    }
}

/// Effective SINR of UE `k` on subcarrier `v` under power allocation
/// `rho` (streams x subcarriers).
pub fn sinr(coeffs: &SinrCoefficients, rho: &DMatrix<f64>, k: usize, v: usize) -> f64 {
    let f = coeffs.numerator(rho, k, v);
    if f == 0.0 {
        return 0.0;
    }
    f / coeffs.denominator(rho, k, v)
}

/// Use-and-then-forget SE, `((tau_c - tau_p)/tau_c) log2(1 + sinr)`.
pub fn se(sinr: f64, tau_c: usize, tau_p: usize) -> f64 {
    debug_assert!(tau_p < tau_c);
    (tau_c - tau_p) as f64 / tau_c as f64 * (1.0 + sinr).log2()
}

/// SINR needed for SE `gamma`.
pub fn sinr_threshold(gamma: f64, tau_c: usize, tau_p: usize) -> f64 {
    (tau_c as f64 / (tau_c - tau_p) as f64 * gamma).exp2() - 1.0
}

/// Monte Carlo block `b` uses RNG stream `MC_BASE + b`, so every strategy
/// sees the same channel draws.
pub fn monte_carlo_terms(link: &Downlink, n_mc: usize, seed: u64, mode: Mode) -> Result<Vec<BlockTerms>> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    par::map_range(mode, n_mc, |b| {
        let mut rng = stream(seed, ids::MC_BASE + b as u64);
        let block = link.draw_block(&mut rng);
        let bank = link.precoders(&block)?;
        Ok(link.block_terms(&block, &bank))
    })
    .into_iter()
    .collect()
}

pub fn estimate_coefficients(link: &Downlink, n_mc: usize, seed: u64, mode: Mode) -> Result<SinrCoefficients> {
    let terms = monte_carlo_terms(link, n_mc, seed, mode)?;
    SinrCoefficients::from_terms(&terms, vec![link.noise_var; link.users()])
}
