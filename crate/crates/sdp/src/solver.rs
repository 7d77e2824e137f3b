//! HKM primal-dual path-following with Mehrotra predictor-corrector steps.
//!
//! Newton system at `(X, y, Z)` with centering target `Rc`:
//!
//! ```text
//! A(dX)          = b - A(X)
//! A'(dy) + dZ    = C - Z - A'(y)          (= Rd)
//! dX = sym(Rc Z^-1 - X - X dZ Z^-1)
//! ```
//!
//! which reduces to the Schur system `M dy = b - A(Rc Z^-1) + A(X Rd Z^-1)`
//! with `M_ij = Tr(A_i X A_j Z^-1)`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::problem::{ConicProblem, SymMatrix};
use crate::{Settings, Solution, Status};

enum Term {
    Dense(DMatrix<f64>),
    Sparse {
        canon: Vec<(usize, usize, f64)>,
        full: Vec<(usize, usize, f64)>,
    },
}

impl Term {
    fn from_sym(m: &SymMatrix) -> Term {
        match m {
            SymMatrix::Dense(a) => Term::Dense(a.clone()),
            SymMatrix::Sparse(e) => {
                let mut full = Vec::with_capacity(2 * e.len());
                for &(r, c, v) in e {
                    full.push((r, c, v));
                    if r != c {
                        full.push((c, r, v));
                    }
                }
                Term::Sparse {
                    canon: e.clone(),
                    full,
                }
            }
        }
    }

    fn trace_with(&self, k: &DMatrix<f64>) -> f64 {
        match self {
            Term::Dense(a) => a.dot(k),
            Term::Sparse { canon, .. } => canon
                .iter()
                .map(|&(r, c, v)| {
                    if r == c {
                        v * k[(r, r)]
                    } else {
                        v * (k[(r, c)] + k[(c, r)])
                    }
                })
                .sum(),
        }
    }

    fn add_scaled_to(&self, s: f64, k: &mut DMatrix<f64>) {
        match self {
            Term::Dense(a) => *k += a * s,
            Term::Sparse { full, .. } => {
                for &(r, c, v) in full {
                    k[(r, c)] += s * v;
                }
            }
        }
    }
}

struct Block {
    n: usize,
    objective: DMatrix<f64>,
    terms: Vec<(usize, Term)>,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dx_lp: DVector<f64>,
    dy: DVector<f64>,
    dz: Vec<DMatrix<f64>>,
    dz_lp: DVector<f64>,
}

pub(crate) struct Ipm {
    blocks: Vec<Block>,
    c_lp: DVector<f64>,
    a_lp: DMatrix<f64>,
    b: DVector<f64>,
    m: usize,
}

fn symmetrize(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (k[(r, c)] + k[(c, r)]);
            k[(r, c)] = v;
            k[(c, r)] = v;
        }
    }
}

fn spd_inverse(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut inv = Cholesky::new(x.clone())?.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Largest `a <= cap` with `X + a dX` PSD, assuming `X` positive definite.
fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>, cap: f64) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(t) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(s) = l.solve_lower_triangular(&t.transpose()) else {
        return 0.0;
    };
    let mut s = s;
    symmetrize(&mut s);
    let lmin = SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lmin < 0.0 {
        (-1.0 / lmin).min(cap)
    } else {
        cap
    }
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>, cap: f64) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(cap, f64::min)
}

impl Ipm {
    pub(crate) fn new(p: &ConicProblem) -> Ipm {
        let m = p.constraints.len();
        let mut blocks: Vec<Block> = p
            .psd_sizes
            .iter()
            .zip(&p.objective_psd)
            .map(|(&n, c)| {
                let mut objective = DMatrix::zeros(n, n);
                if let Some(c) = c {
                    c.add_scaled_to(1.0, &mut objective);
                }
                Block {
                    n,
                    objective,
                    terms: Vec::new(),
                }
            })
            .collect();
        let mut a_lp = DMatrix::zeros(m, p.lp_size);
        let mut b = DVector::zeros(m);
        for (i, con) in p.constraints.iter().enumerate() {
            for (k, a) in &con.psd {
                blocks[*k].terms.push((i, Term::from_sym(a)));
            }
            for &(j, v) in &con.lp {
                a_lp[(i, j)] += v;
            }
            b[i] = con.rhs;
        }
        let mut c_lp = DVector::zeros(p.lp_size);
        for &(j, v) in &p.objective_lp {
            c_lp[j] += v;
        }
        Ipm {
            blocks,
            c_lp,
            a_lp,
            b,
            m,
        }
    }

    fn apply_a(&self, x: &[DMatrix<f64>], x_lp: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.a_lp * x_lp;
        for (blk, xk) in self.blocks.iter().zip(x) {
            for (i, t) in &blk.terms {
                out[*i] += t.trace_with(xk);
            }
        }
        out
    }

    fn apply_at(&self, y: &DVector<f64>) -> (Vec<DMatrix<f64>>, DVector<f64>) {
        let psd = self
            .blocks
            .iter()
            .map(|blk| {
                let mut k = DMatrix::zeros(blk.n, blk.n);
                for (i, t) in &blk.terms {
                    t.add_scaled_to(y[*i], &mut k);
                }
                k
            })
            .collect();
        (psd, self.a_lp.tr_mul(y))
    }

    fn schur_matrix(
        &self,
        x: &[DMatrix<f64>],
        zinv: &[DMatrix<f64>],
        x_lp: &DVector<f64>,
        z_lp: &DVector<f64>,
    ) -> DMatrix<f64> {
        let m = self.m;
        let mut schur = DMatrix::zeros(m, m);
        for (k, blk) in self.blocks.iter().enumerate() {
            let (xk, zk) = (&x[k], &zinv[k]);
            for (ti, (i, ai)) in blk.terms.iter().enumerate() {
                match ai {
                    Term::Dense(a) => {
                        let p = xk * a * zk;
                        for (j, aj) in &blk.terms {
                            let v = aj.trace_with(&p);
                            schur[(*i, *j)] += v;
                            if matches!(aj, Term::Sparse { .. }) {
                                schur[(*j, *i)] += v;
                            }
                        }
                    }
                    Term::Sparse { full: fi, .. } => {
                        for (j, aj) in &blk.terms[ti..] {
                            let Term::Sparse { full: fj, .. } = aj else {
                                continue;
                            };
                            let mut v = 0.0;
                            for &(a, bb, va) in fi {
                                for &(c, d, vb) in fj {
                                    v += va * vb * xk[(bb, c)] * zk[(d, a)];
                                }
                            }
                            schur[(*i, *j)] += v;
                            if i != j {
                                schur[(*j, *i)] += v;
                            }
                        }
                    }
                }
            }
        }
        if self.a_lp.ncols() > 0 {
            let mut scaled = self.a_lp.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col *= x_lp[j] / z_lp[j];
            }
            schur += &scaled * self.a_lp.transpose();
        }
        symmetrize(&mut schur);
        schur
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        chol: &Cholesky<f64, nalgebra::Dyn>,
        x: &[DMatrix<f64>],
        zinv: &[DMatrix<f64>],
        x_lp: &DVector<f64>,
        z_lp: &DVector<f64>,
        rd: &[DMatrix<f64>],
        rd_lp: &DVector<f64>,
        rc: &[DMatrix<f64>],
        rc_lp: &DVector<f64>,
    ) -> Direction {
        // G = Rc Z^-1 - X Rd Z^-1 per block
        let g: Vec<DMatrix<f64>> = (0..self.blocks.len())
            .map(|k| (&rc[k] - &x[k] * &rd[k]) * &zinv[k])
            .collect();
        let g_lp = DVector::from_iterator(
            x_lp.len(),
            (0..x_lp.len()).map(|j| (rc_lp[j] - x_lp[j] * rd_lp[j]) / z_lp[j]),
        );
        let rhs = &self.b - self.apply_a(&g, &g_lp);
        let mut dy = chol.solve(&rhs);
        let mut refine = 0;
        loop {
            let (aty, aty_lp) = self.apply_at(&dy);
            let dz: Vec<DMatrix<f64>> = rd.iter().zip(&aty).map(|(r, a)| r - a).collect();
            let dz_lp = rd_lp - aty_lp;
            let next: Vec<DMatrix<f64>> = (0..self.blocks.len())
                .map(|k| {
                    let mut d = (&rc[k] - &x[k] * &dz[k]) * &zinv[k];
                    symmetrize(&mut d);
                    d
                })
                .collect();
            let next_lp = DVector::from_iterator(
                x_lp.len(),
                (0..x_lp.len()).map(|j| (rc_lp[j] - x_lp[j] * dz_lp[j]) / z_lp[j]),
            );
            // Residual against the operator itself, not the assembled Schur matrix.
            let res = &self.b - self.apply_a(&next, &next_lp);
            if refine == REFINE_STEPS || res.norm() <= f64::EPSILON * (1.0 + self.b.norm()) {
                let dx = next.into_iter().zip(x).map(|(n, xk)| n - xk).collect();
                return Direction {
                    dx,
                    dx_lp: next_lp - x_lp,
                    dy,
                    dz,
                    dz_lp,
                };
            }
            dy += chol.solve(&res);
            refine += 1;
        }
    }

    fn steps(
        &self,
        x: &[DMatrix<f64>],
        z: &[DMatrix<f64>],
        x_lp: &DVector<f64>,
        z_lp: &DVector<f64>,
        d: &Direction,
    ) -> (f64, f64) {
        let mut ap = max_step_lp(x_lp, &d.dx_lp, f64::INFINITY);
        let mut ad = max_step_lp(z_lp, &d.dz_lp, f64::INFINITY);
        for k in 0..self.blocks.len() {
            ap = max_step_psd(&x[k], &d.dx[k], ap);
            ad = max_step_psd(&z[k], &d.dz[k], ad);
        }
        (ap, ad)
    }

    pub(crate) fn solve(&self, settings: &Settings) -> Solution {
        let nb = self.blocks.len();
        let n_lp = self.c_lp.len();
        let total_dim = (self.blocks.iter().map(|b| b.n).sum::<usize>() + n_lp) as f64;

        // Infeasible starting point scaled to the data.
        let mut norms_sq: Vec<f64> = (0..self.m).map(|i| self.a_lp.row(i).norm_squared()).collect();
        for blk in &self.blocks {
            for (i, t) in &blk.terms {
                let mut k = DMatrix::zeros(blk.n, blk.n);
                t.add_scaled_to(1.0, &mut k);
                norms_sq[*i] += k.norm_squared();
            }
        }
        let norms: Vec<f64> = norms_sq.into_iter().map(f64::sqrt).collect();
        let max_a = norms.iter().copied().fold(0.0, f64::max);
        let c_norm = (self.blocks.iter().map(|b| b.objective.norm_squared()).sum::<f64>()
            + self.c_lp.norm_squared())
        .sqrt();
        let xi_for = |n: f64| -> f64 {
            let mut v = 10.0f64.max(n.sqrt());
            for i in 0..self.m {
                v = v.max(n.sqrt() * (1.0 + self.b[i].abs()) / (1.0 + norms[i]));
            }
            v
        };
        let eta_for = |n: f64| -> f64 { 10.0f64.max(n.sqrt()).max((1.0 + max_a.max(c_norm)) / n.sqrt()) };

        let mut x: Vec<DMatrix<f64>> = self
            .blocks
            .iter()
            .map(|b| DMatrix::identity(b.n, b.n) * xi_for(b.n as f64))
            .collect();
        let mut z: Vec<DMatrix<f64>> = self
            .blocks
            .iter()
            .map(|b| DMatrix::identity(b.n, b.n) * eta_for(b.n as f64))
            .collect();
        let mut x_lp = DVector::from_element(n_lp, xi_for(1.0));
        let mut z_lp = DVector::from_element(n_lp, eta_for(1.0));
        let mut y = DVector::zeros(self.m);

        let b_norm = self.b.norm();
        let mut status = Status::IterationLimit;
        let mut iterations = 0;
        let (mut pinf, mut dinf, mut rel_gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let (mut pobj, mut dobj) = (f64::NAN, f64::NAN);
        let mut best_merit = f64::INFINITY;
        let mut stall = 0usize;
        // Best iterate seen, returned when progress stalls.
        let mut best: Option<Snapshot> = None;

        for it in 0..settings.max_iter {
            iterations = it;
            let ax = self.apply_a(&x, &x_lp);
            let rp = &self.b - &ax;
            let (aty, aty_lp) = self.apply_at(&y);
            let rd: Vec<DMatrix<f64>> = (0..nb)
                .map(|k| &self.blocks[k].objective - &z[k] - &aty[k])
                .collect();
            let rd_lp = &self.c_lp - &z_lp - &aty_lp;

            pobj = self
                .blocks
                .iter()
                .zip(&x)
                .map(|(b, xk)| b.objective.dot(xk))
                .sum::<f64>()
                + self.c_lp.dot(&x_lp);
            dobj = self.b.dot(&y);
            let xz: f64 = x.iter().zip(&z).map(|(a, b)| a.dot(b)).sum::<f64>() + x_lp.dot(&z_lp);
            let rd_norm = (rd.iter().map(|r| r.norm_squared()).sum::<f64>() + rd_lp.norm_squared()).sqrt();
            pinf = rp.norm() / (1.0 + b_norm);
            dinf = rd_norm / (1.0 + c_norm);
            rel_gap = (pobj - dobj).abs().max(xz.abs()) / (1.0 + pobj.abs() + dobj.abs());
            if settings.verbose {
                log::debug!(
                    "ipm it {it:3} pobj {pobj:+.9e} dobj {dobj:+.9e} gap {rel_gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e}"
                );
            }
            if pinf < settings.tol_feas && dinf < settings.tol_feas && rel_gap < settings.tol_gap {
                status = Status::Optimal;
                break;
            }

            // Farkas-type certificates along diverging iterates.
            let cz = (self.blocks.iter().zip(&rd).map(|(b, r)| (&b.objective - r).norm_squared()).sum::<f64>()
                + (&self.c_lp - &rd_lp).norm_squared())
            .sqrt();
            if dobj > 1e8 * (1.0 + c_norm) && cz / dobj < 1e-8 {
                status = Status::PrimalInfeasible;
                break;
            }
            if -pobj > 1e8 * (1.0 + b_norm) && ax.norm() / (-pobj) < 1e-8 {
                status = Status::DualInfeasible;
                break;
            }

            let merit = pinf.max(dinf).max(rel_gap);
            if best.as_ref().is_none_or(|b| merit < b.merit) {
                best = Some(Snapshot {
                    merit,
                    x: x.clone(),
                    x_lp: x_lp.clone(),
                    y: y.clone(),
                    z: z.clone(),
                    z_lp: z_lp.clone(),
                    pobj,
                    dobj,
                    pinf,
                    dinf,
                    rel_gap,
                });
            }
            if merit < 0.5 * best_merit {
                best_merit = merit;
                stall = 0;
            } else {
                stall += 1;
                if stall > 12 {
                    status = if merit < settings.tol_near {
                        Status::NearOptimal
                    } else {
                        Status::NumericalFailure
                    };
                    break;
                }
            }

            let mu = xz / total_dim;
            let zinv: Option<Vec<DMatrix<f64>>> = z.iter().map(spd_inverse).collect();
            let Some(zinv) = zinv else {
                status = Status::NumericalFailure;
                break;
            };
            let schur = self.schur_matrix(&x, &zinv, &x_lp, &z_lp);
            let chol = match Cholesky::new(schur.clone()) {
                Some(c) => c,
                None => {
                    let scale = schur.diagonal().amax().max(1e-300);
                    let mut reg = None;
                    let mut delta = 1e-14;
                    while delta < 1e-6 {
                        let mut s = schur.clone();
                        for i in 0..self.m {
                            s[(i, i)] += delta * scale;
                        }
                        if let Some(c) = Cholesky::new(s) {
                            reg = Some(c);
                            break;
                        }
                        delta *= 100.0;
                    }
                    match reg {
                        Some(c) => c,
                        None => {
                            status = if pinf.max(dinf).max(rel_gap) < settings.tol_near {
                                Status::NearOptimal
                            } else {
                                Status::NumericalFailure
                            };
                            break;
                        }
                    }
                }
            };

            // Predictor.
            let zero_rc: Vec<DMatrix<f64>> = self.blocks.iter().map(|b| DMatrix::zeros(b.n, b.n)).collect();
            let zero_rc_lp = DVector::zeros(n_lp);
            let pred = self.direction(&chol, &x, &zinv, &x_lp, &z_lp, &rd, &rd_lp, &zero_rc, &zero_rc_lp);
            let (ap, ad) = self.steps(&x, &z, &x_lp, &z_lp, &pred);
            let (ap, ad) = (ap.min(1.0), ad.min(1.0));
            let xz_aff: f64 = (0..nb)
                .map(|k| (&x[k] + &pred.dx[k] * ap).dot(&(&z[k] + &pred.dz[k] * ad)))
                .sum::<f64>()
                + (&x_lp + &pred.dx_lp * ap).dot(&(&z_lp + &pred.dz_lp * ad));
            let sigma = (xz_aff / xz).clamp(0.0, 1.0).powi(3);

            // Corrector.
            let rc: Vec<DMatrix<f64>> = (0..nb)
                .map(|k| {
                    DMatrix::identity(self.blocks[k].n, self.blocks[k].n) * (sigma * mu)
                        - &pred.dx[k] * &pred.dz[k]
                })
                .collect();
            let rc_lp = DVector::from_iterator(
                n_lp,
                (0..n_lp).map(|j| sigma * mu - pred.dx_lp[j] * pred.dz_lp[j]),
            );
            let dir = self.direction(&chol, &x, &zinv, &x_lp, &z_lp, &rd, &rd_lp, &rc, &rc_lp);
            let (ap, ad) = self.steps(&x, &z, &x_lp, &z_lp, &dir);
            let ap = (settings.step_fraction * ap).min(1.0);
            let ad = (settings.step_fraction * ad).min(1.0);

            for k in 0..nb {
                x[k] += &dir.dx[k] * ap;
                z[k] += &dir.dz[k] * ad;
                symmetrize(&mut x[k]);
                symmetrize(&mut z[k]);
            }
            x_lp += &dir.dx_lp * ap;
            z_lp += &dir.dz_lp * ad;
            y += &dir.dy * ad;
        }

        if !matches!(status, Status::Optimal | Status::PrimalInfeasible | Status::DualInfeasible) {
            if let Some(b) = best.filter(|b| b.merit < pinf.max(dinf).max(rel_gap)) {
                x = b.x;
                x_lp = b.x_lp;
                y = b.y;
                z = b.z;
                z_lp = b.z_lp;
                (pobj, dobj, pinf, dinf, rel_gap) = (b.pobj, b.dobj, b.pinf, b.dinf, b.rel_gap);
            }
            let merit = pinf.max(dinf).max(rel_gap);
            if merit < settings.tol_gap.max(settings.tol_feas) {
                status = Status::Optimal;
            } else if merit < settings.tol_near {
                status = Status::NearOptimal;
            }
        }

        Solution {
            status,
            x_psd: x,
            x_lp,
            y,
            z_psd: z,
            z_lp,
            primal_objective: pobj,
            dual_objective: dobj,
            iterations,
            primal_infeasibility: pinf,
            dual_infeasibility: dinf,
            relative_gap: rel_gap,
        }
    }
}

/// Correction passes on `dy`, measured against the primal residual of the
/// full step. The Schur matrix is badly conditioned near the optimum.
const REFINE_STEPS: usize = 2;

struct Snapshot {
    merit: f64,
    x: Vec<DMatrix<f64>>,
    x_lp: DVector<f64>,
    y: DVector<f64>,
    z: Vec<DMatrix<f64>>,
    z_lp: DVector<f64>,
    pobj: f64,
    dobj: f64,
    pinf: f64,
    dinf: f64,
    rel_gap: f64,
}
