//! Worst-case PEB minimization over a discretized uncertainty region.
//!
//! The worst case is put in epigraph form through Schur complements: for
//! `J_bar > 0`, `[[J_bar, e_b], [e_b^T, u_b]] >= 0` iff `u_b >= [J_bar^{-1}]_{bb}`,
//! and `sum_b u_{n,b} <= r` bounds the squared PEB at grid point `n`. The
//! power allocation is then an SDP in `rho`; the RIS phases are handled by a
//! semidefinite relaxation in `Gamma = theta theta^H` followed by Gaussian
//! randomization. Algorithm 1 alternates the two.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use risjrc_sdp::{hermitian, ConicProblem, Constraint, Settings, Solution, Status};

use crate::channels::{complex_normal, radar_amplitude, Ofdm, RadarChannelParams, Receiver};
use crate::comm::SinrCoefficients;
use crate::fisher::{self, FimMaps, LocationFim, RankOneDerivatives};
use crate::geometry::{ArrayLayout, Position3};
use crate::par::{self, Mode};
use crate::precoding::box_corners;
use crate::rng::{ids, stream};
use crate::{cis, CMat, CVec, Error, Result, C64};

/// Candidate target positions inside the box `center +/- size/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyGrid {
    pub center: Position3,
    pub size: Position3,
    pub points: Vec<Position3>,
}

impl UncertaintyGrid {
    /// A single known position ("perfect" mode).
    pub fn single(q: Position3) -> Self {
        UncertaintyGrid {
            center: q,
            size: Position3::zeros(),
            points: vec![q],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: &Position3) -> bool {
        (0..3).all(|c| (p[c] - self.center[c]).abs() <= self.size[c] / 2.0 + 1e-9)
    }

    /// Target hypotheses with `|alpha_t| = beta_t(q_n) delta` and zero phase.
    pub fn targets(&self, e: &Position3, carrier: f64, rcs_linear: f64) -> Result<Vec<RadarChannelParams>> {
        self.points
            .iter()
            .map(|q| {
                Ok(RadarChannelParams {
                    q: *q,
                    alpha: C64::new(radar_amplitude(q, e, carrier, rcs_linear)?, 0.0),
                })
            })
            .collect()
    }
}

/// Corner order: the first four form a regular tetrahedron of the box, so
/// small grids still span it.
const CORNER_ORDER: [usize; 8] = [0, 3, 5, 6, 7, 4, 2, 1];

/// `n = 1`: center. `1 < n < 9`: center and the first `n - 1` corners.
/// `n >= 9`: 8 corners, center, and `n - 9` Latin-hypercube samples.
pub fn build_uncertainty_grid(center: Position3, size: Position3, n: usize, seed: u64) -> Result<UncertaintyGrid> {
    if n < 1 {
        return Err(Error::InvalidArgument("the uncertainty grid needs at least one point".into()));
    }
    if size.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidArgument("uncertainty box size must be nonnegative".into()));
    }
    let corners = box_corners(&center, &size);
    let mut points = vec![center];
    points.extend(CORNER_ORDER.iter().take(n.saturating_sub(1).min(8)).map(|&i| corners[i]));
    if n > 9 {
        let extra = n - 9;
        let mut rng = stream(seed, ids::GRID);
        let mut strata: Vec<Vec<usize>> = Vec::new();
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..extra).collect();
            for i in (1..extra).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            strata.push(perm);
        }
        for i in 0..extra {
            let mut p = center;
            for c in 0..3 {
                let u = (strata[c][i] as f64 + rng.random::<f64>()) / extra as f64;
                p[c] += (u - 0.5) * size[c];
            }
            points.push(p);
        }
    }
    Ok(UncertaintyGrid { center, size, points })
}

/// The three `6 x 6` LMI blocks `[[J_bar, e_b], [e_b^T, u_b]]`.
pub fn schur_epigraph_blocks(jbar: &LocationFim, u: [f64; 3]) -> [DMatrix<f64>; 3] {
    std::array::from_fn(|b| {
        let mut m = DMatrix::zeros(6, 6);
        m.view_mut((0, 0), (5, 5)).copy_from(jbar);
        m[(b, 5)] = 1.0;
        m[(5, b)] = 1.0;
        m[(5, 5)] = u[b];
        m
    })
}

/// Diagonal equilibration `J_tilde = D J_bar D`, with one scale shared by the
/// three position coordinates so that `PEB^2 = pos^2 * r_tilde`.
#[derive(Debug, Clone)]
struct Scaling {
    pos: f64,
    nuisance: Vec<[f64; 2]>,
}

impl Scaling {
    fn from_reference(refs: &[LocationFim]) -> Self {
        let inv_sqrt = |v: f64| if v > 0.0 && v.is_finite() { 1.0 / v.sqrt() } else { 1.0 };
        let mean_pos = refs.iter().map(|j| j[(0, 0)] + j[(1, 1)] + j[(2, 2)]).sum::<f64>() / (3 * refs.len()) as f64;
        Scaling {
            pos: inv_sqrt(mean_pos),
            nuisance: refs.iter().map(|j| [inv_sqrt(j[(3, 3)]), inv_sqrt(j[(4, 4)])]).collect(),
        }
    }

    fn d(&self, n: usize, k: usize) -> f64 {
        if k < 3 {
            self.pos
        } else {
            self.nuisance[n][k - 3]
        }
    }
}

/// Epigraph blocks of every grid point with their linking constraints:
/// `Z_{n,b}[k,l]` shared across `b`, `Z_{n,b}[k,5] = delta_kb` and
/// `sum_b Z_{n,b}[5,5] + s_n = r`. Returns the block indices; the caller
/// ties `Z_{n,0}[k,l]` to the FIM.
fn add_epigraph(p: &mut ConicProblem, points: usize, r_index: usize, slack_start: usize) -> Vec<[usize; 3]> {
    let mut blocks = Vec::with_capacity(points);
    for n in 0..points {
        let z: [usize; 3] = std::array::from_fn(|_| p.add_psd_block(6));
        for b in 1..3 {
            for k in 0..5 {
                for l in k..5 {
                    p.add_constraint(Constraint::new(0.0).pick(z[b], k, l, 1.0).pick(z[0], k, l, -1.0));
                }
            }
        }
        for (b, &zb) in z.iter().enumerate() {
            for k in 0..5 {
                p.add_constraint(Constraint::new(if k == b { 1.0 } else { 0.0 }).pick(zb, k, 5, 1.0));
            }
        }
        let mut sum = Constraint::new(0.0).lp(slack_start + n, 1.0).lp(r_index, -1.0);
        for &zb in &z {
            sum = sum.pick(zb, 5, 5, 1.0);
        }
        p.add_constraint(sum);
        blocks.push(z);
    }
    blocks
}

fn read_u(sol: &Solution, blocks: &[[usize; 3]], scale: f64) -> Vec<[f64; 3]> {
    blocks
        .iter()
        .map(|z| std::array::from_fn(|b| sol.x_psd[z[b]][(5, 5)] * scale))
        .collect()
}

fn check_status(sol: &Solution, what: &str) -> Result<()> {
    if sol.status.is_solved() {
        Ok(())
    } else {
        Err(Error::Solver(format!(
            "{what}: {:?} after {} iterations (primal {:.1e}, dual {:.1e}, gap {:.1e})",
            sol.status, sol.iterations, sol.primal_infeasibility, sol.dual_infeasibility, sol.relative_gap
        )))
    }
}

/// Inputs of the power-allocation subproblem.
#[derive(Debug, Clone, Copy)]
pub struct PowerProblem<'a> {
    /// `J_bar_n(rho)` per grid point.
    pub maps: &'a [FimMaps],
    /// SINR coefficients and SINR threshold; `None` drops the SE constraints.
    pub sinr: Option<(&'a SinrCoefficients, f64)>,
    /// Total power budget in W.
    pub budget: f64,
    /// Subcarrier indices used in infeasibility reports.
    pub labels: &'a [i64],
}

#[derive(Debug, Clone)]
pub struct PowerSolution {
    /// Streams x subcarriers, in W.
    pub rho: DMatrix<f64>,
    /// Epigraph value, an upper bound on every squared grid PEB.
    pub r: f64,
    pub u: Vec<[f64; 3]>,
    pub status: Status,
    pub iterations: usize,
}

/// Minimum-power allocation meeting every SINR target with sensing streams
/// off. Sensing power only adds leakage, so this is feasible iff the full
/// problem is. Fails with the binding UE and subcarrier otherwise.
pub fn check_sinr_feasibility(coeffs: &SinrCoefficients, gamma: f64, budget: f64, labels: &[i64]) -> Result<DMatrix<f64>> {
    let (k, nv) = (coeffs.users(), coeffs.subcarriers());
    let label = |v: usize| labels.get(v).copied().unwrap_or(v as i64);
    let mut rho = DMatrix::zeros(coeffs.streams(), nv);
    let mut per_v = vec![0.0; nv];
    for v in 0..nv {
        let c = &coeffs.interference[v];
        let a = DMatrix::from_fn(k, k, |i, j| {
            let diag = if i == j { coeffs.signal[(i, v)] * (1.0 + gamma) } else { 0.0 };
            diag - gamma * c[(i, j)]
        });
        let b = nalgebra::DVector::from_fn(k, |i, _| gamma * coeffs.noise[i]);
        let x = a.lu().solve(&b).filter(|x| x.iter().all(|v| v.is_finite()));
        let Some(x) = x else {
            return Err(Error::Infeasible {
                ue: 0,
                subcarrier: label(v),
                detail: "SINR system is singular".into(),
            });
        };
        if let Some((ue, _)) = x.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
            return Err(Error::Infeasible {
                ue,
                subcarrier: label(v),
                detail: format!("SINR target {gamma:.4} is interference-limited"),
            });
        }
        for i in 0..k {
            rho[(i, v)] = x[i];
        }
        per_v[v] = x.sum();
    }
    let total: f64 = per_v.iter().sum();
    if total > budget {
        let (v, _) = per_v.iter().enumerate().fold((0, f64::MIN), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        let ue = (0..k).fold(0, |best, i| if rho[(i, v)] > rho[(best, v)] { i } else { best });
        return Err(Error::Infeasible {
            ue,
            subcarrier: label(v),
            detail: format!("minimum power {total:.4e} W exceeds the budget {budget:.4e} W"),
        });
    }
    Ok(rho)
}

/// Relative slack on each normalized SINR row.
const SINR_MARGIN: f64 = 1e-6;

/// Problem (26): minimize the worst-case squared PEB over `rho >= 0` subject
/// to the SINR targets and `sum rho <= budget`.
pub fn solve_power_allocation(problem: &PowerProblem, settings: &Settings) -> Result<PowerSolution> {
    let maps = problem.maps;
    if maps.is_empty() {
        return Err(Error::InvalidArgument("no grid points".into()));
    }
    let nv = maps[0].maps.len();
    let ns = maps[0].maps.first().map_or(0, |m| m.len());
    let budget = problem.budget;
    if let Some((c, g)) = problem.sinr {
        check_sinr_feasibility(c, g, budget, problem.labels)?;
    }
    let uniform = DMatrix::from_element(ns, nv, budget / (ns * nv) as f64);
    let scaling = Scaling::from_reference(&maps.iter().map(|m| m.evaluate(&uniform)).collect::<Vec<_>>());

    let mut p = ConicProblem::new();
    let rho0 = p.add_lp_vars(ns * nv);
    let r_idx = p.add_lp_vars(1);
    let slack = p.add_lp_vars(maps.len());
    let power_slack = p.add_lp_vars(1);
    let var = |s: usize, v: usize| rho0 + v * ns + s;
    p.set_objective_lp(r_idx, 1.0);
    let blocks = add_epigraph(&mut p, maps.len(), r_idx, slack);
    for (n, m) in maps.iter().enumerate() {
        for k in 0..5 {
            for l in k..5 {
                let dd = scaling.d(n, k) * scaling.d(n, l) * budget;
                let mut c = Constraint::new(0.0).pick(blocks[n][0], k, l, 1.0);
                for (v, per) in m.maps.iter().enumerate() {
                    for (s, j) in per.iter().enumerate() {
                        let a = j[(k, l)] * dd;
                        if a != 0.0 {
                            c = c.lp(var(s, v), -a);
                        }
                    }
                }
                p.add_constraint(c);
            }
        }
    }
    if let Some((coeffs, gamma)) = problem.sinr {
        let w = p.add_lp_vars(coeffs.users() * nv);
        for v in 0..nv {
            for k in 0..coeffs.users() {
                let (row, rhs) = coeffs.constraint_row(k, v, gamma);
                let scale = row.iter().fold(0.0f64, |m, a| m.max(a.abs())) * budget;
                let mut c = Constraint::new(rhs / scale * (1.0 + SINR_MARGIN)).lp(w + k * nv + v, -1.0);
                for (s, a) in row.iter().enumerate() {
                    if *a != 0.0 {
                        c = c.lp(var(s, v), a * budget / scale);
                    }
                }
                p.add_constraint(c);
            }
        }
    }
    let mut total = Constraint::new(1.0).lp(power_slack, 1.0);
    for i in 0..ns * nv {
        total = total.lp(rho0 + i, 1.0);
    }
    p.add_constraint(total);

    let sol = risjrc_sdp::solve(&p, settings).map_err(|e| Error::Solver(e.to_string()))?;
    if sol.status.is_infeasible() {
        return Err(Error::Infeasible {
            ue: 0,
            subcarrier: 0,
            detail: format!("power subproblem reported {:?}", sol.status),
        });
    }
    check_status(&sol, "power allocation")?;
    let mut rho = DMatrix::from_fn(ns, nv, |s, v| (sol.x_lp[var(s, v)] * budget).max(0.0));
    let used = rho.sum();
    if used > budget {
        rho *= budget / used;
    }
    let pos2 = scaling.pos * scaling.pos;
    Ok(PowerSolution {
        rho,
        r: sol.x_lp[r_idx] * pos2,
        u: read_u(&sol, &blocks, pos2),
        status: sol.status,
        iterations: sol.iterations,
    })
}

/// Hadamard-form FIM matrices of one grid point: `J_bar[k][l] = Re theta^H M[k][l] theta`.
pub type GammaForms = Vec<Vec<CMat>>;

pub fn evaluate_forms(forms: &GammaForms, theta: &CVec) -> LocationFim {
    let m: LocationFim = fisher::evaluate_gamma_form(forms, theta);
    (m + m.transpose()) * 0.5
}

/// Worst-case PEB over the grid from Hadamard forms.
pub fn worst_case_peb_forms(forms: &[GammaForms], theta: &CVec) -> f64 {
    forms.iter().map(|f| fisher::peb(&evaluate_forms(f, theta))).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    pub gamma: CMat,
    /// Relaxed optimum of the squared worst-case PEB (a lower bound for any
    /// rank-one `Gamma`).
    pub r: f64,
    pub status: Status,
    pub iterations: usize,
}

/// Problem (28) without the rank constraint.
pub fn solve_ris_sdr(forms: &[GammaForms], reference: &CVec, settings: &Settings) -> Result<RelaxedSolution> {
    let n_ris = reference.len();
    if forms.is_empty() || n_ris == 0 {
        return Err(Error::InvalidArgument("RIS relaxation needs grid points and RIS elements".into()));
    }
    let scaling = Scaling::from_reference(&forms.iter().map(|f| evaluate_forms(f, reference)).collect::<Vec<_>>());
    let mut p = ConicProblem::new();
    let x = p.add_psd_block(2 * n_ris);
    let r_idx = p.add_lp_vars(1);
    let slack = p.add_lp_vars(forms.len());
    p.set_objective_lp(r_idx, 1.0);
    for i in 0..n_ris {
        p.add_constraint(Constraint::new(1.0).pick(x, i, i, 0.5).pick(x, n_ris + i, n_ris + i, 0.5));
    }
    let blocks = add_epigraph(&mut p, forms.len(), r_idx, slack);
    for (n, f) in forms.iter().enumerate() {
        for k in 0..5 {
            for l in k..5 {
                let herm = (&f[k][l] + f[k][l].adjoint()) * C64::new(0.5, 0.0);
                let coeff = hermitian::embed(&herm) * (-0.5 * scaling.d(n, k) * scaling.d(n, l));
                p.add_constraint(Constraint::new(0.0).pick(blocks[n][0], k, l, 1.0).dense(x, coeff));
            }
        }
    }
    let sol = risjrc_sdp::solve(&p, settings).map_err(|e| Error::Solver(e.to_string()))?;
    check_status(&sol, "RIS relaxation")?;
    Ok(RelaxedSolution {
        gamma: hermitian::collapse(&sol.x_psd[x]),
        r: sol.x_lp[r_idx] * scaling.pos * scaling.pos,
        status: sol.status,
        iterations: sol.iterations,
    })
}

/// Rotates `theta` so that its first entry is real and positive, keeping
/// every entry on the unit circle.
pub fn fix_global_phase(theta: &CVec) -> CVec {
    let ref_phase = theta.iter().next().map_or(0.0, |z| z.arg());
    theta.map(|z| cis(z.arg() - ref_phase))
}

fn unit_phases(g: &CVec) -> CVec {
    fix_global_phase(g)
}

/// Draws `g = U Lambda^{1/2} w`, `w ~ CN(0, I)`, keeps `exp(j arg g)`, adds the
/// top-eigenvector candidate, and returns the candidate with the smallest
/// `objective` together with that value. Draws are consumed from `rng` in
/// order, so a longer run extends a shorter one.
pub fn gaussian_randomization<R, F>(gamma: &CMat, draws: usize, rng: &mut R, objective: F) -> (CVec, f64)
where
    R: Rng + ?Sized,
    F: Fn(&CVec) -> f64,
{
    let n = gamma.nrows();
    let herm = (gamma + gamma.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let top = (0..n).fold(0, |b, i| if eig.eigenvalues[i] > eig.eigenvalues[b] { i } else { b });
    let mut best = unit_phases(&eig.eigenvectors.column(top).into_owned());
    let mut best_val = objective(&best);
    let root = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, c)] * eig.eigenvalues[c].max(0.0).sqrt());
    for _ in 0..draws {
        let w = CVec::from_fn(n, |_, _| complex_normal(rng, 1.0));
        let cand = unit_phases(&(&root * w));
        let val = objective(&cand);
        if val < best_val {
            best = cand;
            best_val = val;
        }
    }
    (best, best_val)
}

/// Fixed data of the sensing side of one run.
#[derive(Debug, Clone, Copy)]
pub struct SensingSetup<'a> {
    pub receiver: &'a Receiver,
    pub tx: &'a ArrayLayout,
    pub ofdm: &'a Ofdm,
    /// `F_v` of the run realization.
    pub precoders: &'a [CMat],
    /// Grid hypotheses.
    pub targets: &'a [RadarChannelParams],
    pub noise_var: f64,
    pub tau_s: f64,
}

impl SensingSetup<'_> {
    pub fn fim_maps(&self, theta: &CVec, mode: Mode) -> Result<Vec<FimMaps>> {
        par::map(mode, self.targets, |t| {
            let d = RankOneDerivatives::new(t, self.receiver, self.tx, theta, self.ofdm)?;
            let xi = fisher::jacobian_xi(&t.q, &self.receiver.reference())?;
            Ok(FimMaps::new(&d, &xi, self.precoders, self.noise_var, self.tau_s))
        })
        .into_iter()
        .collect()
    }

    pub fn gamma_forms(&self, rho: &DMatrix<f64>, mode: Mode) -> Result<Vec<GammaForms>> {
        let gram = match self.receiver {
            Receiver::Ris { nearfield, .. } => nearfield.gram(),
            Receiver::Direct { .. } => return Err(Error::InvalidArgument("no RIS to configure".into())),
        };
        let ones = CVec::from_element(self.receiver.ris_elements(), C64::new(1.0, 0.0));
        par::map(mode, self.targets, |t| {
            let d = RankOneDerivatives::new(t, self.receiver, self.tx, &ones, self.ofdm)?;
            let xi = fisher::jacobian_xi(&t.q, &self.receiver.reference())?;
            Ok(fisher::gamma_form(&d, &xi, &gram, self.precoders, rho, self.noise_var, self.tau_s))
        })
        .into_iter()
        .collect()
    }

    /// Direct PEB at every grid point.
    pub fn pebs(&self, theta: &CVec, rho: &DMatrix<f64>, mode: Mode) -> Result<Vec<f64>> {
        Ok(self.fim_maps(theta, mode)?.iter().map(|m| fisher::peb(&m.evaluate(rho))).collect())
    }

    pub fn worst_case_peb(&self, theta: &CVec, rho: &DMatrix<f64>, mode: Mode) -> Result<f64> {
        Ok(self.pebs(theta, rho, mode)?.into_iter().fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone)]
pub struct AlgorithmSettings {
    pub max_iter: usize,
    /// Stop when the worst-case PEB changes by less than this (m).
    pub tolerance: f64,
    pub draws: usize,
    pub sdp: Settings,
    pub mode: Mode,
}

impl Default for AlgorithmSettings {
    fn default() -> Self {
        AlgorithmSettings {
            max_iter: 20,
            tolerance: 1e-3,
            draws: 100,
            sdp: Settings::default(),
            mode: Mode::default(),
        }
    }
}

/// SE-constraint data of a run.
#[derive(Debug, Clone, Copy)]
pub struct CommConstraints<'a> {
    pub coeffs: &'a SinrCoefficients,
    pub gamma: f64,
    pub budget: f64,
}

#[derive(Debug, Clone)]
pub struct OptState {
    pub theta: CVec,
    pub rho: DMatrix<f64>,
    pub u: Vec<[f64; 3]>,
    pub r: f64,
    /// Worst-case PEB after the initial power step and after every iteration.
    pub trace: Vec<f64>,
    /// Relaxed RIS optima (squared PEB) per iteration.
    pub relaxation: Vec<f64>,
    pub iterations: usize,
}

impl OptState {
    pub fn worst_case_peb(&self) -> f64 {
        self.trace.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Uniform random unit-modulus phases from stream `THETA0` of `seed`.
pub fn random_theta(n: usize, seed: u64) -> CVec {
    let mut rng = stream(seed, ids::THETA0);
    CVec::from_fn(n, |_, _| cis(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)))
}

fn power_step(
    setup: &SensingSetup,
    comm: &CommConstraints,
    theta: &CVec,
    settings: &AlgorithmSettings,
) -> Result<PowerSolution> {
    let maps = setup.fim_maps(theta, settings.mode)?;
    solve_power_allocation(
        &PowerProblem {
            maps: &maps,
            sinr: Some((comm.coeffs, comm.gamma)),
            budget: comm.budget,
            labels: &setup.ofdm.indices,
        },
        &settings.sdp,
    )
}

/// Power allocation only, for a fixed `theta` (random-RIS and no-RIS baselines).
pub fn optimize_power_only(
    setup: &SensingSetup,
    comm: &CommConstraints,
    theta: &CVec,
    settings: &AlgorithmSettings,
) -> Result<OptState> {
    let sol = power_step(setup, comm, theta, settings)?;
    let peb = setup.worst_case_peb(theta, &sol.rho, settings.mode)?;
    Ok(OptState {
        theta: theta.clone(),
        rho: sol.rho,
        u: sol.u,
        r: sol.r,
        trace: vec![peb],
        relaxation: Vec::new(),
        iterations: 0,
    })
}

/// Algorithm 1 from `theta0`. Each iteration solves the power subproblem and
/// then the RIS subproblem; a step is kept only if it does not increase the
/// worst-case PEB.
pub fn run_algorithm1(
    setup: &SensingSetup,
    comm: &CommConstraints,
    theta0: &CVec,
    settings: &AlgorithmSettings,
    seed: u64,
) -> Result<OptState> {
    let mode = settings.mode;
    let mut state = optimize_power_only(setup, comm, theta0, settings)?;
    let mut current = state.worst_case_peb();
    let mut rng = stream(seed, ids::RANDOMIZATION);
    for it in 1..=settings.max_iter {
        let before = current;
        if it > 1 {
            match power_step(setup, comm, &state.theta, settings) {
                Ok(sol) => {
                    let val = setup.worst_case_peb(&state.theta, &sol.rho, mode)?;
                    if val <= current {
                        current = val;
                        state.rho = sol.rho;
                        state.u = sol.u;
                        state.r = sol.r;
                    }
                }
                Err(e) => log::warn!("power step failed at iteration {it}, keeping previous iterate: {e}"),
            }
        }
        let forms = setup.gamma_forms(&state.rho, mode)?;
        match solve_ris_sdr(&forms, &state.theta, &settings.sdp) {
            Ok(relaxed) => {
                state.relaxation.push(relaxed.r);
                let (cand, _) = gaussian_randomization(&relaxed.gamma, settings.draws, &mut rng, |t| {
                    worst_case_peb_forms(&forms, t)
                });
                let val = setup.worst_case_peb(&cand, &state.rho, mode)?;
                if val <= current {
                    current = val;
                    state.theta = cand;
                }
            }
            Err(e) => log::warn!("RIS step failed at iteration {it}, keeping previous iterate: {e}"),
        }
        state.trace.push(current);
        state.iterations = it;
        if (before - current).abs() < settings.tolerance {
            break;
        }
    }
    Ok(state)
}
