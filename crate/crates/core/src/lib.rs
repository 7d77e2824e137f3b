//! Bistatic mmWave joint radar/communications with an RIS-integrated receive
//! array.
//!
//! The crate synthesizes UE and radar channels, estimates UE channels through
//! a hybrid analog combiner, builds communication and sensing precoders,
//! evaluates the Fisher information of the target position and minimizes the
//! worst-case position error bound (PEB) over an uncertainty region by
//! alternating a power-allocation SDP and an RIS semidefinite relaxation.
//!
//! Module map:
//!
//! - [`geometry`]: array layouts, wavevectors, steering vectors, target angles
//! - [`channels`]: pathloss, UE multipath channels, the enclosed-box channel
//!   between RIS and receive antennas, the two-way radar channel
//! - [`estimation`]: pilots, analog combiner, LMMSE estimates, MSE
//! - [`precoding`]: analog/digital communication and sensing precoders
//! - [`comm`]: Monte Carlo SINR coefficients and spectral efficiency
//! - [`fisher`]: channel and location-domain FIM, PEB
//! - [`optimizer`]: uncertainty grid, power SDP, RIS SDR, alternating loop
//! - [`config`], [`scenario`], [`runner`]: experiment plumbing

pub mod channels;
pub mod comm;
pub mod config;
pub mod estimation;
pub mod fisher;
pub mod geometry;
pub mod optimizer;
pub mod par;
pub mod precoding;
pub mod rng;
pub mod runner;
pub mod scenario;

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerically singular: {0}")]
    Singular(String),
    #[error("infeasible: UE {ue} on subcarrier {subcarrier}: {detail}")]
    Infeasible {
        ue: usize,
        subcarrier: i64,
        detail: String,
    },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}
