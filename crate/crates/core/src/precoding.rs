//! Hybrid precoders: analog communication beams, RZF digital precoding,
//! sensing analog banks and zero-forcing digital sensing precoders.

use serde::{Deserialize, Serialize};

use crate::geometry::{self, Angles, ArrayLayout, Position3};
use crate::{cis, CMat, CVec, Error, Result, C64};

/// Sensing analog bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Sum-derivative: directional, azimuth-derivative and elevation-derivative beams.
    Sd,
    /// Sum-only: directional beams.
    S,
    /// Extended sum-only: as many directional beams as `Sd` has columns.
    Se,
}

impl Strategy {
    pub fn streams(self, n_a: usize) -> usize {
        match self {
            Strategy::S => n_a,
            Strategy::Sd | Strategy::Se => 3 * n_a,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Sd => "sd",
            Strategy::S => "s",
            Strategy::Se => "se",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sd" => Ok(Strategy::Sd),
            "s" => Ok(Strategy::S),
            "se" => Ok(Strategy::Se),
            other => Err(Error::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

/// `(1/sqrt(M)) exp(j arg(target_m))`; zero entries get phase 0. This is the
/// maximizer of `|target^H w|` over unit-modulus `w`.
pub fn unit_modulus_project(target: &CVec) -> CVec {
    let s = 1.0 / (target.len() as f64).sqrt();
    target.map(|z| if z.norm() > 0.0 { z / z.norm() * s } else { C64::new(s, 0.0) })
}

/// Columns are the analog approximations of each UE's dominant eigenvector.
pub fn comm_analog(dominant: &[CVec]) -> CMat {
    let cols: Vec<CVec> = dominant.iter().map(unit_modulus_project).collect();
    CMat::from_columns(&cols)
}

/// Angular rectangle covering a box of candidate target positions, as seen
/// from the transmit AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingRegion {
    pub azimuth: (f64, f64),
    pub elevation: (f64, f64),
}

impl SensingRegion {
    /// Bounding rectangle of the angles of the 8 box corners.
    pub fn from_box(center: &Position3, size: &Position3) -> Result<Self> {
        let mut az = (f64::INFINITY, f64::NEG_INFINITY);
        let mut el = (f64::INFINITY, f64::NEG_INFINITY);
        for corner in box_corners(center, size) {
            let a = Angles::of_vector(&corner)?;
            az = (az.0.min(a.azimuth), az.1.max(a.azimuth));
            el = (el.0.min(a.elevation), el.1.max(a.elevation));
        }
        Ok(SensingRegion { azimuth: az, elevation: el })
    }

    pub fn contains(&self, a: Angles) -> bool {
        let tol = 1e-12;
        a.azimuth >= self.azimuth.0 - tol
            && a.azimuth <= self.azimuth.1 + tol
            && a.elevation >= self.elevation.0 - tol
            && a.elevation <= self.elevation.1 + tol
    }

    /// Sensing directions: `n_a` azimuths at mid elevation for `Sd`/`S`, an
    /// `n_a x 3` azimuth-elevation grid for `Se`.
    pub fn grid(&self, strategy: Strategy, n_a: usize) -> Vec<Angles> {
        let mid = (self.elevation.0 + self.elevation.1) / 2.0;
        let az = linspace(self.azimuth, n_a);
        match strategy {
            Strategy::Sd | Strategy::S => az.into_iter().map(|a| Angles::new(a, mid)).collect(),
            Strategy::Se => linspace(self.elevation, 3)
                .into_iter()
                .flat_map(|e| az.iter().map(move |&a| Angles::new(a, e)))
                .collect(),
        }
    }
}

pub fn box_corners(center: &Position3, size: &Position3) -> Vec<Position3> {
    let h = size / 2.0;
    let mut out = Vec::with_capacity(8);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                out.push(center + Position3::new(sx * h.x, sy * h.y, sz * h.z));
            }
        }
    }
    out
}

fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![(lo + hi) / 2.0],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Unit-norm sensing analog columns for `strategy`.
pub fn sensing_analog(strategy: Strategy, region: &SensingRegion, n_a: usize, tx: &ArrayLayout, carrier: f64) -> CMat {
    let points = region.grid(strategy, n_a);
    let scale = C64::new(1.0 / (tx.len() as f64).sqrt(), 0.0);
    let dir: Vec<CVec> = points.iter().map(|&a| geometry::steering(tx, a, carrier) * scale).collect();
    let cols = match strategy {
        Strategy::S | Strategy::Se => dir,
        Strategy::Sd => {
            let derivs: Vec<(CVec, CVec)> = points
                .iter()
                .map(|&a| geometry::steering_derivatives(tx, a, carrier))
                .collect();
            let mut cols = dir;
            cols.extend(derivs.iter().map(|(d, _)| unit_modulus_project(d)));
            cols.extend(derivs.iter().map(|(_, d)| unit_modulus_project(d)));
            cols
        }
    };
    CMat::from_columns(&cols)
}

/// RZF digital communication precoders from effective channel estimates
/// `W^H b^_k`, normalized so that `||W d_k|| = 1`.
pub fn rzf(effective: &[CVec], w: &CMat, powers: &[f64], noise_var: f64) -> Result<Vec<CVec>> {
    let n = w.ncols();
    let mut a = CMat::identity(n, n) * C64::new(noise_var, 0.0);
    for (b, &mu) in effective.iter().zip(powers) {
        a.ger(C64::new(mu, 0.0), b, &b.conjugate(), C64::new(1.0, 0.0));
    }
    let lu = a.lu();
    effective
        .iter()
        .zip(powers)
        .enumerate()
        .map(|(k, (b, &mu))| {
            let d = lu
                .solve(&(b * C64::new(mu.sqrt(), 0.0)))
                .ok_or_else(|| Error::Singular("RZF regularized Gram matrix".into()))?;
            normalize(w, d).ok_or_else(|| Error::Singular(format!("RZF precoder of UE {k} vanishes")))
        })
        .collect()
}

fn normalize(w: &CMat, d: CVec) -> Option<CVec> {
    let n = (w * &d).norm();
    (n > 0.0 && n.is_finite()).then(|| d / C64::new(n, 0.0))
}

/// Projected norm below this fraction of `||W^H w_q||` drops the beam.
pub const DEGENERATE_BEAM: f64 = 1e-8;

/// Zero-forcing sensing precoders `(I - U U^H) W^H w_q`, normalized by
/// `||W d||`. Beams falling inside the UE subspace come back as zero columns
/// and their indices are listed in the second return value.
pub fn sensing_zf(w: &CMat, sensing_cols: &CMat, effective: &[CVec]) -> (Vec<CVec>, Vec<usize>) {
    let n = w.ncols();
    let u = orthonormal_basis(effective, n);
    let mut dropped = Vec::new();
    let cols = sensing_cols
        .column_iter()
        .enumerate()
        .map(|(q, wq)| {
            let raw = w.adjoint() * wq;
            let proj = &raw - &u * (u.adjoint() * &raw);
            if proj.norm() < DEGENERATE_BEAM * raw.norm() {
                log::warn!("sensing beam {q} lies in the UE subspace; dropped");
                dropped.push(q);
                return CVec::zeros(n);
            }
            normalize(w, proj).unwrap_or_else(|| {
                dropped.push(q);
                CVec::zeros(n)
            })
        })
        .collect();
    (cols, dropped)
}

/// Orthonormal basis of the span of `vectors` (numerical rank via SVD).
pub fn orthonormal_basis(vectors: &[CVec], dim: usize) -> CMat {
    if vectors.is_empty() {
        return CMat::zeros(dim, 0);
    }
    let b = CMat::from_columns(vectors);
    let svd = b.svd(true, false);
    let top = svd.singular_values.max();
    let u = svd.u.expect("left singular vectors requested");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * top)
        .collect();
    u.select_columns(&keep)
}

/// Analog matrix `W = [W^K, W^Q]`, per-subcarrier digital `D_v` and the
/// assembled `F_v = W D_v`.
#[derive(Debug, Clone)]
pub struct PrecoderBank {
    pub strategy: Strategy,
    pub analog: CMat,
    pub digital: Vec<CMat>,
    pub precoders: Vec<CMat>,
    pub comm: usize,
    pub sensing: usize,
    /// `(subcarrier slot, sensing index)` of dropped beams.
    pub dropped: Vec<(usize, usize)>,
}

impl PrecoderBank {
    pub fn streams(&self) -> usize {
        self.comm + self.sensing
    }

    pub fn subcarriers(&self) -> usize {
        self.precoders.len()
    }
}

/// Builds `D_v = [D^K, D^Q]` and `F_v` from per-subcarrier effective channel
/// estimates. `digital[v] = (comm columns, sensing columns)`.
pub fn assemble(
    strategy: Strategy,
    w_comm: &CMat,
    w_sense: &CMat,
    digital: Vec<(Vec<CVec>, Vec<CVec>)>,
    dropped: Vec<(usize, usize)>,
) -> Result<PrecoderBank> {
    if w_comm.nrows() != w_sense.nrows() {
        return Err(Error::InvalidArgument("analog blocks have different antenna counts".into()));
    }
    let (k, q) = (w_comm.ncols(), w_sense.ncols());
    let mut w = CMat::zeros(w_comm.nrows(), k + q);
    w.columns_mut(0, k).copy_from(w_comm);
    w.columns_mut(k, q).copy_from(w_sense);
    let mut ds = Vec::with_capacity(digital.len());
    let mut fs = Vec::with_capacity(digital.len());
    for (vi, (dc, dq)) in digital.into_iter().enumerate() {
        if dc.len() != k || dq.len() != q || dc.iter().chain(&dq).any(|d| d.len() != k + q) {
            return Err(Error::InvalidArgument(format!("digital precoder shape mismatch on slot {vi}")));
        }
        let d = CMat::from_columns(&dc.into_iter().chain(dq).collect::<Vec<_>>());
        fs.push(&w * &d);
        ds.push(d);
    }
    Ok(PrecoderBank {
        strategy,
        analog: w,
        digital: ds,
        precoders: fs,
        comm: k,
        sensing: q,
        dropped,
    })
}

/// Digital precoders for all subcarriers from channel estimates
/// `estimates[k][v]`, then assembly.
pub fn build_bank(
    strategy: Strategy,
    w_comm: &CMat,
    w_sense: &CMat,
    estimates: &[Vec<CVec>],
    powers: &[f64],
    noise_var: f64,
) -> Result<PrecoderBank> {
    let k = w_comm.ncols();
    let q = w_sense.ncols();
    let mut w = CMat::zeros(w_comm.nrows(), k + q);
    w.columns_mut(0, k).copy_from(w_comm);
    w.columns_mut(k, q).copy_from(w_sense);
    let slots = estimates.first().map_or(0, |e| e.len());
    let mut digital = Vec::with_capacity(slots);
    let mut dropped = Vec::new();
    for vi in 0..slots {
        let eff: Vec<CVec> = estimates.iter().map(|e| w.adjoint() * &e[vi]).collect();
        let dc = rzf(&eff, &w, powers, noise_var)?;
        let (dq, drop) = sensing_zf(&w, w_sense, &eff);
        dropped.extend(drop.into_iter().map(|d| (vi, d)));
        digital.push((dc, dq));
    }
    assemble(strategy, w_comm, w_sense, digital, dropped)
}

/// Random unit-modulus vector helper used by tests and the optimizer.
pub fn phases_to_vector(phases: &[f64]) -> CVec {
    CVec::from_iterator(phases.len(), phases.iter().map(|&p| cis(p)))
}
