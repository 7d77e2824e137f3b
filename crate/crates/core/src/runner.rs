//! Experiment orchestration and result persistence.
//!
//! Every experiment returns [`ResultRow`]s sorted by experiment, tag, metric,
//! sweep value and seed. Rows are written as CSV with the fixed header
//! [`CSV_COLUMNS`]; an infinite metric (a failed or infeasible run) is
//! written as `inf`. `wall_ms` is zero unless `run.timing` is set, so two
//! runs with the same configuration and seed produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::channels::{RadarChannelParams, Receiver};
use crate::comm::{estimate_coefficients, se, sinr, sinr_threshold, SinrCoefficients};
use crate::config::ScenarioConfig;
use crate::estimation::{analog_combiner, channel_mse, pilot_observation, LmmseEstimator, PilotBook};
use crate::optimizer::{
    optimize_power_only, random_theta, run_algorithm1, AlgorithmSettings, CommConstraints, OptState, SensingSetup,
};
use crate::par::{self, Mode};
use crate::precoding::Strategy;
use crate::rng::{ids, stream};
use crate::scenario::Scenario;
use crate::{dbm_to_watt, CVec, Error, Result};

pub const CSV_COLUMNS: [&str; 10] = [
    "experiment",
    "sweep_var",
    "sweep_val",
    "tag",
    "metric_name",
    "metric_value",
    "unit",
    "seed",
    "iters",
    "wall_ms",
];

/// One output line. `seed` is the seed of the row, or the first seed of the
/// averaged set. `iters` counts Monte Carlo blocks (fig2) or Algorithm-1
/// iterations summed over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub sweep_var: String,
    #[serde(serialize_with = "write_float", deserialize_with = "read_float")]
    pub sweep_val: f64,
    pub tag: String,
    pub metric_name: String,
    #[serde(serialize_with = "write_float", deserialize_with = "read_float")]
    pub metric_value: f64,
    pub unit: String,
    pub seed: u64,
    pub iters: usize,
    pub wall_ms: u64,
}

fn write_float<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_float(*v))
}

fn read_float<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let text = String::deserialize(d)?;
    text.trim().parse::<f64>().map_err(serde::de::Error::custom)
}

/// Shortest round-trip decimal; `inf`, `-inf` and `NaN` for non-finite values.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        let s = format!("{v}");
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{v}")
    }
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (&a.experiment, &a.tag, &a.metric_name)
            .cmp(&(&b.experiment, &b.tag, &b.metric_name))
            .then(a.sweep_val.total_cmp(&b.sweep_val))
            .then(a.seed.cmp(&b.seed))
    });
}

pub fn write_csv<W: std::io::Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn persist(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::InvalidArgument(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn load(path: &Path) -> Result<Vec<ResultRow>> {
    read_csv(std::fs::File::open(path)?)
}

/// Console table: one line per (experiment, tag, metric), one column per
/// sweep value.
pub fn emit_summary(rows: &[ResultRow]) -> String {
    let mut groups: BTreeMap<(&str, &str, &str, &str), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((&r.experiment, &r.metric_name, &r.unit, &r.tag))
            .or_default()
            .push(r);
    }
    let mut out = String::new();
    let mut last = None;
    for ((exp, metric, unit, tag), rs) in &groups {
        if last != Some((exp, metric)) {
            let vals: Vec<String> = rs.iter().map(|r| format!("{:>11}", format_float(r.sweep_val))).collect();
            let _ = writeln!(out, "{exp} / {metric} [{unit}] vs {}", rs[0].sweep_var);
            let _ = writeln!(out, "  {:<12}{}", "tag", vals.join(""));
            last = Some((exp, metric));
        }
        let vals: Vec<String> = rs.iter().map(|r| format!("{:>11.4e}", r.metric_value)).collect();
        let _ = writeln!(out, "  {:<12}{}", tag, vals.join(""));
    }
    out
}

fn elapsed_ms(cfg: &ScenarioConfig, start: Instant) -> u64 {
    if cfg.run.timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// Mean of per-seed values; infinite if any seed failed.
fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

struct Sample {
    sweep_val: f64,
    tag: String,
    metric: &'static str,
    unit: &'static str,
    seed: u64,
    value: f64,
    iters: usize,
}

/// Averages samples over seeds (or keeps them per seed) and builds rows.
fn collect_rows(cfg: &ScenarioConfig, experiment: &str, sweep_var: &str, samples: Vec<Sample>, wall_ms: u64) -> Vec<ResultRow> {
    let row = |s: &Sample, value: f64, seed: u64, iters: usize| ResultRow {
        experiment: experiment.into(),
        sweep_var: sweep_var.into(),
        sweep_val: s.sweep_val,
        tag: s.tag.clone(),
        metric_name: s.metric.into(),
        metric_value: value,
        unit: s.unit.into(),
        seed,
        iters,
        wall_ms,
    };
    let mut rows = if cfg.run.averaged {
        let mut groups: BTreeMap<(String, &str, u64), Vec<&Sample>> = BTreeMap::new();
        for s in &samples {
            groups.entry((s.tag.clone(), s.metric, s.sweep_val.to_bits())).or_default().push(s);
        }
        groups
            .values()
            .map(|g| {
                let values: Vec<f64> = g.iter().map(|s| s.value).collect();
                let iters = g.iter().map(|s| s.iters).sum();
                row(g[0], mean(&values), cfg.run.seed, iters)
            })
            .collect()
    } else {
        samples.iter().map(|s| row(s, s.value, s.seed, s.iters)).collect::<Vec<_>>()
    };
    sort_rows(&mut rows);
    rows
}

/// Per-UE MSE, normalized per subcarrier, averaged over `n_mc` blocks.
/// Block `b` draws from stream `MC_BASE + b`, so every `(N_RF, mu)` sees the
/// same channels and pilot noise.
pub fn channel_mse_per_ue(scn: &Scenario, n_rf: usize, pilot_power: f64, n_mc: usize, mode: Mode) -> Result<Vec<f64>> {
    let k = scn.users();
    let v = scn.ofdm.len();
    let g = analog_combiner(&scn.correlations, n_rf)?;
    let powers = vec![pilot_power; k];
    let book = PilotBook::dft(scn.config.frame.tau_p, k)?;
    let est = LmmseEstimator::new(&scn.correlations, &g, &powers, scn.noise_var, book.clone())?;
    let per_block = par::map_range(mode, n_mc, |b| -> Result<Vec<f64>> {
        let mut rng = stream(scn.seed, ids::MC_BASE + b as u64);
        let gains: Vec<_> = scn.ues.iter().map(|u| u.draw_gains(&mut rng)).collect();
        let channels: Vec<Vec<CVec>> = scn
            .ues
            .iter()
            .zip(&gains)
            .map(|(u, gk)| (0..v).map(|vi| u.channel(gk, &scn.ofdm, vi)).collect())
            .collect();
        let mut estimates = vec![Vec::with_capacity(v); k];
        for vi in 0..v {
            let at_v: Vec<CVec> = channels.iter().map(|c| c[vi].clone()).collect();
            let y = pilot_observation(&at_v, &powers, &g, &book, scn.noise_var, &mut rng);
            for (ue, e) in estimates.iter_mut().enumerate() {
                e.push(est.estimate(&y, ue));
            }
        }
        (0..k)
            .map(|ue| Ok(channel_mse(&channels[ue], &estimates[ue])? / v as f64))
            .collect()
    });
    let mut acc = vec![0.0; k];
    for blk in per_block {
        for (a, m) in acc.iter_mut().zip(blk?) {
            *a += m;
        }
    }
    Ok(acc.into_iter().map(|a| a / n_mc as f64).collect())
}

/// Max-over-UEs channel-estimation MSE vs pilot power for each `N_RF`.
/// Per-UE MSE is averaged over blocks and seeds before the maximum.
pub fn run_fig2(cfg: &ScenarioConfig, mode: Mode) -> Result<Vec<ResultRow>> {
    let start = Instant::now();
    let mut per_ue: BTreeMap<(usize, u64), Vec<Vec<f64>>> = BTreeMap::new();
    for seed in cfg.seed_list() {
        let scn = Scenario::new(cfg, seed)?;
        for &n_rf in &cfg.sweeps.n_rf {
            for &mu in &cfg.sweeps.pilot_dbm {
                let m = channel_mse_per_ue(&scn, n_rf, dbm_to_watt(mu), cfg.run.n_mc, mode)?;
                per_ue.entry((n_rf, mu.to_bits())).or_default().push(m);
            }
        }
    }
    let wall = elapsed_ms(cfg, start);
    let seeds = cfg.seed_list();
    let mut samples = Vec::new();
    for ((n_rf, mu_bits), runs) in &per_ue {
        let tag = format!("nrf{n_rf}");
        let mu = f64::from_bits(*mu_bits);
        if cfg.run.averaged {
            let k = runs[0].len();
            let avg: Vec<f64> = (0..k).map(|u| mean(&runs.iter().map(|r| r[u]).collect::<Vec<_>>())).collect();
            samples.push(Sample {
                sweep_val: mu,
                tag,
                metric: "max_mse",
                unit: "1",
                seed: cfg.run.seed,
                value: avg.iter().copied().fold(0.0, f64::max),
                iters: cfg.run.n_mc * runs.len(),
            });
        } else {
            for (r, &seed) in runs.iter().zip(&seeds) {
                samples.push(Sample {
                    sweep_val: mu,
                    tag: tag.clone(),
                    metric: "max_mse",
                    unit: "1",
                    seed,
                    value: r.iter().copied().fold(0.0, f64::max),
                    iters: cfg.run.n_mc,
                });
            }
        }
    }
    Ok(collect_rows(cfg, "fig2", "pilot_dbm", samples, wall))
}

/// How the RIS is configured in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Algorithm 1.
    Optimized,
    /// Random phases from stream `THETA0`, power allocation only.
    RandomRis,
    /// Plain receive array of this many antennas, power allocation only.
    NoRis(usize),
}

impl Method {
    pub fn tag(self) -> String {
        match self {
            Method::Optimized => "optimized".into(),
            Method::RandomRis => "random".into(),
            Method::NoRis(m) => format!("noris-{m}"),
        }
    }
}

/// Communication side of one seed and strategy: SINR coefficients and the
/// precoders of the run realization.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub strategy: Strategy,
    pub coeffs: SinrCoefficients,
    pub precoders: Vec<DMatrix<crate::C64>>,
}

pub fn prepare(scn: &Scenario, strategy: Strategy, mode: Mode) -> Result<Prepared> {
    let cfg = &scn.config;
    let link = scn.downlink(strategy, cfg.n_rf, cfg.pilot_power())?;
    let coeffs = estimate_coefficients(&link, cfg.run.n_mc, scn.seed, mode)?;
    let bank = scn.realization(&link)?;
    Ok(Prepared {
        strategy,
        coeffs,
        precoders: bank.precoders,
    })
}

pub fn algorithm_settings(cfg: &ScenarioConfig, mode: Mode) -> AlgorithmSettings {
    AlgorithmSettings {
        max_iter: cfg.run.max_iter,
        tolerance: cfg.run.tolerance_m,
        draws: cfg.run.draws,
        mode,
        ..AlgorithmSettings::default()
    }
}

/// Result of one optimization and its evaluation over the RCS sweep.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub state: OptState,
    pub receiver: Receiver,
    /// Worst-case PEB at every `sweeps.rcs_db` entry.
    pub pebs: Vec<f64>,
}

impl SeedRun {
    fn failed(cfg: &ScenarioConfig, receiver: Receiver, theta: CVec, streams: usize) -> Self {
        let v = cfg.ofdm.subcarriers;
        SeedRun {
            state: OptState {
                theta,
                rho: DMatrix::zeros(streams, v),
                u: Vec::new(),
                r: f64::INFINITY,
                trace: vec![f64::INFINITY],
                relaxation: Vec::new(),
                iterations: 0,
            },
            receiver,
            pebs: vec![f64::INFINITY; cfg.sweeps.rcs_db.len()],
        }
    }
}

fn sensing_setup<'a>(
    scn: &'a Scenario,
    receiver: &'a Receiver,
    prep: &'a Prepared,
    targets: &'a [RadarChannelParams],
) -> SensingSetup<'a> {
    SensingSetup {
        receiver,
        tx: &scn.tx,
        ofdm: &scn.ofdm,
        precoders: &prep.precoders,
        targets,
        noise_var: scn.noise_var,
        tau_s: scn.config.frame.tau_s as f64,
    }
}

/// Optimizes at `sweeps.reference_rcs_db` over the grid (or only at the
/// nominal point with `perfect`) and evaluates the same `theta` and `rho`
/// at every swept RCS. Infeasible SINR targets and solver failures give an
/// infinite PEB.
pub fn run_seed(scn: &Scenario, prep: &Prepared, method: Method, perfect: bool, mode: Mode) -> Result<SeedRun> {
    let cfg = &scn.config;
    let receiver = match method {
        Method::NoRis(m) => scn.direct_receiver(m)?,
        _ => scn.ris_receiver.clone(),
    };
    let theta0 = match method {
        Method::NoRis(_) => CVec::zeros(0),
        _ => random_theta(receiver.ris_elements(), scn.seed),
    };
    let comm = CommConstraints {
        coeffs: &prep.coeffs,
        gamma: sinr_threshold(cfg.se_target, cfg.frame.tau_c, cfg.frame.tau_p),
        budget: cfg.tx_power(),
    };
    let settings = algorithm_settings(cfg, mode);
    let reference = scn.targets(&receiver, cfg.sweeps.reference_rcs_db, perfect)?;
    let setup = sensing_setup(scn, &receiver, prep, &reference);
    let outcome = match method {
        Method::Optimized => run_algorithm1(&setup, &comm, &theta0, &settings, scn.seed),
        _ => optimize_power_only(&setup, &comm, &theta0, &settings),
    };
    let state = match outcome {
        Ok(s) => s,
        Err(e @ (Error::Infeasible { .. } | Error::Solver(_) | Error::Singular(_))) => {
            log::warn!("seed {} {:?} {}: {e}", scn.seed, prep.strategy, method.tag());
            return Ok(SeedRun::failed(cfg, receiver, theta0, prep.coeffs.streams()));
        }
        Err(e) => return Err(e),
    };
    let pebs = cfg
        .sweeps
        .rcs_db
        .iter()
        .map(|&rcs| {
            let targets = scn.targets(&receiver, rcs, perfect)?;
            sensing_setup(scn, &receiver, prep, &targets).worst_case_peb(&state.theta, &state.rho, mode)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SeedRun { state, receiver, pebs })
}

fn peb_samples(cfg: &ScenarioConfig, tag: String, seed: u64, run: &SeedRun) -> Vec<Sample> {
    cfg.sweeps
        .rcs_db
        .iter()
        .zip(&run.pebs)
        .map(|(&rcs, &peb)| Sample {
            sweep_val: rcs,
            tag: tag.clone(),
            metric: "worst_peb",
            unit: "m",
            seed,
            value: peb,
            iters: run.state.iterations,
        })
        .collect()
}

/// Worst-case PEB vs RCS for every strategy, optimized over the grid and
/// at the nominal point only.
pub fn run_fig3(cfg: &ScenarioConfig, mode: Mode) -> Result<Vec<ResultRow>> {
    let start = Instant::now();
    let mut samples = Vec::new();
    for seed in cfg.seed_list() {
        let scn = Scenario::new(cfg, seed)?;
        for strategy in [Strategy::Sd, Strategy::S, Strategy::Se] {
            let prep = prepare(&scn, strategy, mode)?;
            for (perfect, label) in [(false, "grid"), (true, "perfect")] {
                let run = run_seed(&scn, &prep, Method::Optimized, perfect, mode)?;
                samples.extend(peb_samples(cfg, format!("{}-{label}", strategy.tag()), seed, &run));
            }
        }
    }
    Ok(collect_rows(cfg, "fig3", "rcs_db", samples, elapsed_ms(cfg, start)))
}

/// Worst-case PEB vs RCS for the optimized RIS, a random RIS and the two
/// no-RIS arrays, with the configured strategy.
pub fn run_fig4(cfg: &ScenarioConfig, mode: Mode) -> Result<Vec<ResultRow>> {
    let start = Instant::now();
    let mut samples = Vec::new();
    let mut methods = vec![Method::Optimized, Method::RandomRis];
    methods.extend(cfg.arrays.rx_no_ris.iter().map(|&m| Method::NoRis(m)));
    for seed in cfg.seed_list() {
        let scn = Scenario::new(cfg, seed)?;
        let prep = prepare(&scn, cfg.sensing.strategy, mode)?;
        for &method in &methods {
            let run = run_seed(&scn, &prep, method, false, mode)?;
            samples.extend(peb_samples(cfg, method.tag(), seed, &run));
        }
    }
    Ok(collect_rows(cfg, "fig4", "rcs_db", samples, elapsed_ms(cfg, start)))
}

/// Constraint check of an optimizer output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    /// Smallest SE over UEs and subcarriers (b/s/Hz).
    pub min_se: f64,
    /// Total allocated power (W).
    pub total_power: f64,
    /// Largest `| |theta_n| - 1 |`.
    pub modulus_error: f64,
}

pub fn feasibility(cfg: &ScenarioConfig, coeffs: &SinrCoefficients, state: &OptState) -> Feasibility {
    let mut min_se = f64::INFINITY;
    for k in 0..coeffs.users() {
        for v in 0..coeffs.subcarriers() {
            min_se = min_se.min(se(sinr(coeffs, &state.rho, k, v), cfg.frame.tau_c, cfg.frame.tau_p));
        }
    }
    Feasibility {
        min_se,
        total_power: state.rho.sum(),
        modulus_error: state.theta.iter().map(|t| (t.norm() - 1.0).abs()).fold(0.0, f64::max),
    }
}

/// One Algorithm-1 run with the configured strategy and the first seed:
/// the PEB trace per iteration, the final PEB at every RCS and the
/// constraint values of the output.
pub fn run_optimize(cfg: &ScenarioConfig, mode: Mode) -> Result<Vec<ResultRow>> {
    let start = Instant::now();
    let seed = cfg.run.seed;
    let scn = Scenario::new(cfg, seed)?;
    let prep = prepare(&scn, cfg.sensing.strategy, mode)?;
    let run = run_seed(&scn, &prep, Method::Optimized, false, mode)?;
    let wall = elapsed_ms(cfg, start);
    let iters = run.state.iterations;
    let row = |sweep_var: &str, sweep_val: f64, metric: &str, value: f64, unit: &str| ResultRow {
        experiment: "optimize".into(),
        sweep_var: sweep_var.into(),
        sweep_val,
        tag: prep.strategy.tag().into(),
        metric_name: metric.into(),
        metric_value: value,
        unit: unit.into(),
        seed,
        iters,
        wall_ms: wall,
    };
    let mut rows: Vec<ResultRow> = run
        .state
        .trace
        .iter()
        .enumerate()
        .map(|(i, &p)| row("iteration", i as f64, "worst_peb", p, "m"))
        .collect();
    rows.extend(
        cfg.sweeps
            .rcs_db
            .iter()
            .zip(&run.pebs)
            .map(|(&rcs, &p)| row("rcs_db", rcs, "final_peb", p, "m")),
    );
    let reference = cfg.sweeps.reference_rcs_db;
    if run.state.r.is_finite() {
        let f = feasibility(cfg, &prep.coeffs, &run.state);
        rows.push(row("rcs_db", reference, "min_se", f.min_se, "b/s/Hz"));
        rows.push(row("rcs_db", reference, "total_power", f.total_power, "W"));
        rows.push(row("rcs_db", reference, "modulus_error", f.modulus_error, "1"));
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// One invariant of the `validate` suite: passes when `value <= limit`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

/// Largest relative Frobenius error between the analytic channel
/// derivatives and central differences over the grid, first and last slot.
pub fn derivative_error(scn: &Scenario, theta: &CVec, rcs_db: f64) -> Result<f64> {
    let receiver = &scn.ris_receiver;
    let e = receiver.reference();
    let last = scn.ofdm.len() - 1;
    let mut worst = 0.0f64;
    for t in scn.targets(receiver, rcs_db, false)? {
        let eta = crate::fisher::eta_of(&t, &e)?;
        for vi in [0, last] {
            let d = crate::fisher::radar_channel_derivatives(&t, receiver, &scn.tx, theta, &scn.ofdm, vi)?;
            for (i, di) in d.iter().enumerate() {
                let h = 1e-6 * if eta[i] != 0.0 { eta[i].abs() } else { 1.0 };
                let (mut up, mut down) = (eta, eta);
                up[i] += h;
                down[i] -= h;
                let fd = (crate::fisher::channel_at_eta(&up, receiver, &scn.tx, theta, &scn.ofdm, vi)
                    - crate::fisher::channel_at_eta(&down, receiver, &scn.tx, theta, &scn.ofdm, vi))
                    / crate::C64::new(2.0 * h, 0.0);
                worst = worst.max((di - fd).norm() / di.norm());
            }
        }
    }
    Ok(worst)
}

/// Invariant suite on the first seed with the configured strategy: channel
/// derivatives, the amplitude scaling law, Schur-epigraph exactness,
/// Algorithm-1 monotonicity, constraint satisfaction and determinism.
pub fn run_validate(cfg: &ScenarioConfig, mode: Mode) -> Result<Vec<Check>> {
    let scn = Scenario::new(cfg, cfg.run.seed)?;
    let prep = prepare(&scn, cfg.sensing.strategy, mode)?;
    let theta0 = random_theta(scn.ris_receiver.ris_elements(), scn.seed);
    let reference = cfg.sweeps.reference_rcs_db;
    let mut checks = vec![Check {
        name: "derivative_rel_error",
        value: derivative_error(&scn, &theta0, reference)?,
        limit: 1e-5,
    }];

    let settings = algorithm_settings(cfg, mode);
    let comm = CommConstraints {
        coeffs: &prep.coeffs,
        gamma: sinr_threshold(cfg.se_target, cfg.frame.tau_c, cfg.frame.tau_p),
        budget: cfg.tx_power(),
    };
    let targets = scn.targets(&scn.ris_receiver, reference, false)?;
    let setup = sensing_setup(&scn, &scn.ris_receiver, &prep, &targets);
    let power = optimize_power_only(&setup, &comm, &theta0, &settings)?;
    checks.push(Check {
        name: "schur_gap_m",
        value: (power.r.sqrt() - power.worst_case_peb()).abs(),
        limit: 1e-6,
    });

    let louder = scn.targets(&scn.ris_receiver, reference + 20.0, false)?;
    let peb_louder = sensing_setup(&scn, &scn.ris_receiver, &prep, &louder).worst_case_peb(&theta0, &power.rho, mode)?;
    checks.push(Check {
        name: "scaling_rel_error",
        value: (10.0 * peb_louder / power.worst_case_peb() - 1.0).abs(),
        limit: 1e-9,
    });

    let run = run_seed(&scn, &prep, Method::Optimized, false, mode)?;
    let rise = run.state.trace.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    checks.push(Check {
        name: "trace_increase_m",
        value: rise,
        limit: 1e-6,
    });
    let f = feasibility(cfg, &prep.coeffs, &run.state);
    checks.push(Check {
        name: "se_shortfall",
        value: cfg.se_target - f.min_se,
        limit: 1e-6,
    });
    checks.push(Check {
        name: "power_excess_w",
        value: f.total_power - cfg.tx_power(),
        limit: 1e-6,
    });
    checks.push(Check {
        name: "modulus_error",
        value: f.modulus_error,
        limit: 1e-12,
    });

    let mut a = Vec::new();
    let mut b = Vec::new();
    write_csv(&run_optimize(cfg, mode)?, &mut a)?;
    write_csv(&run_optimize(cfg, mode)?, &mut b)?;
    checks.push(Check {
        name: "csv_mismatch",
        value: if a == b { 0.0 } else { 1.0 },
        limit: 0.0,
    });
    Ok(checks)
}

pub fn check_rows(cfg: &ScenarioConfig, checks: &[Check]) -> Vec<ResultRow> {
    checks
        .iter()
        .map(|c| ResultRow {
            experiment: "validate".into(),
            sweep_var: "limit".into(),
            sweep_val: c.limit,
            tag: if c.passed() { "pass" } else { "fail" }.into(),
            metric_name: c.name.into(),
            metric_value: c.value,
            unit: "1".into(),
            seed: cfg.run.seed,
            iters: 0,
            wall_ms: 0,
        })
        .collect()
}
