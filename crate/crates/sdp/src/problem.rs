//! Problem data for block-diagonal conic programs in standard primal form.

use nalgebra::DMatrix;

use crate::SdpError;

/// A symmetric coefficient matrix attached to one PSD block.
///
/// Sparse entries are stored once per symmetric pair: `(r, c, v)` places `v`
/// at both `(r, c)` and `(c, r)`. Repeated entries accumulate.
#[derive(Debug, Clone)]
pub enum SymMatrix {
    Sparse(Vec<(usize, usize, f64)>),
    Dense(DMatrix<f64>),
}

impl SymMatrix {
    /// `Tr(A K)` for symmetric `A`; `K` may be non-symmetric.
    pub fn trace_with(&self, k: &DMatrix<f64>) -> f64 {
        match self {
            SymMatrix::Dense(a) => a.dot(k),
            SymMatrix::Sparse(entries) => entries
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

    /// `K += s * A`.
    pub fn add_scaled_to(&self, s: f64, k: &mut DMatrix<f64>) {
        match self {
            SymMatrix::Dense(a) => *k += a * s,
            SymMatrix::Sparse(entries) => {
                for &(r, c, v) in entries {
                    k[(r, c)] += s * v;
                    if r != c {
                        k[(c, r)] += s * v;
                    }
                }
            }
        }
    }

    pub fn frobenius_norm(&self, n: usize) -> f64 {
        match self {
            SymMatrix::Dense(a) => a.norm(),
            SymMatrix::Sparse(_) => {
                let mut m = DMatrix::zeros(n, n);
                self.add_scaled_to(1.0, &mut m);
                m.norm()
            }
        }
    }

    fn max_index(&self) -> usize {
        match self {
            SymMatrix::Dense(a) => a.nrows().max(a.ncols()),
            SymMatrix::Sparse(e) => e.iter().map(|&(r, c, _)| r.max(c) + 1).max().unwrap_or(0),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            SymMatrix::Dense(a) => a.iter().all(|v| v.is_finite()),
            SymMatrix::Sparse(e) => e.iter().all(|&(_, _, v)| v.is_finite()),
        }
    }
}

/// One affine equality `sum_k <A_k, X_k> + a' x_lp = rhs`.
#[derive(Debug, Clone, Default)]
pub struct Constraint {
    pub psd: Vec<(usize, SymMatrix)>,
    pub lp: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(rhs: f64) -> Self {
        Constraint {
            psd: Vec::new(),
            lp: Vec::new(),
            rhs,
        }
    }

    /// Adds `v` at `(r, c)` and `(c, r)` of the coefficient for `block`.
    pub fn entry(mut self, block: usize, r: usize, c: usize, v: f64) -> Self {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        match self.psd.iter_mut().find(|(b, _)| *b == block) {
            Some((_, SymMatrix::Sparse(entries))) => entries.push((r, c, v)),
            Some((_, SymMatrix::Dense(a))) => {
                a[(r, c)] += v;
                if r != c {
                    a[(c, r)] += v;
                }
            }
            None => self.psd.push((block, SymMatrix::Sparse(vec![(r, c, v)]))),
        }
        self
    }

    /// Coefficient `<A, X_k>` that picks out the symmetric entry `X_k[r, c]`.
    pub fn pick(self, block: usize, r: usize, c: usize, v: f64) -> Self {
        if r == c {
            self.entry(block, r, c, v)
        } else {
            self.entry(block, r, c, 0.5 * v)
        }
    }

    pub fn dense(mut self, block: usize, a: DMatrix<f64>) -> Self {
        match self.psd.iter_mut().find(|(b, _)| *b == block) {
            Some((_, existing)) => {
                let mut merged = a;
                existing.add_scaled_to(1.0, &mut merged);
                *existing = SymMatrix::Dense(merged);
            }
            None => self.psd.push((block, SymMatrix::Dense(a))),
        }
        self
    }

    pub fn lp(mut self, index: usize, v: f64) -> Self {
        self.lp.push((index, v));
        self
    }
}

/// `minimize <C, X>  s.t.  <A_i, X> = b_i,  X_k ⪰ 0,  x_lp ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    pub(crate) psd_sizes: Vec<usize>,
    pub(crate) lp_size: usize,
    pub(crate) objective_psd: Vec<Option<SymMatrix>>,
    pub(crate) objective_lp: Vec<(usize, f64)>,
    pub(crate) constraints: Vec<Constraint>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an `n x n` PSD block and returns its index.
    pub fn add_psd_block(&mut self, n: usize) -> usize {
        self.psd_sizes.push(n);
        self.objective_psd.push(None);
        self.psd_sizes.len() - 1
    }

    /// Adds `n` nonnegative scalar variables and returns the first index.
    pub fn add_lp_vars(&mut self, n: usize) -> usize {
        let first = self.lp_size;
        self.lp_size += n;
        first
    }

    pub fn set_objective_psd(&mut self, block: usize, c: SymMatrix) {
        self.objective_psd[block] = Some(c);
    }

    pub fn set_objective_lp(&mut self, index: usize, c: f64) {
        self.objective_lp.push((index, c));
    }

    pub fn add_constraint(&mut self, c: Constraint) -> usize {
        self.constraints.push(c);
        self.constraints.len() - 1
    }

    pub fn psd_sizes(&self) -> &[usize] {
        &self.psd_sizes
    }

    pub fn lp_size(&self) -> usize {
        self.lp_size
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if self.constraints.is_empty() {
            return Err(SdpError::InvalidProblem("no constraints".into()));
        }
        if self.psd_sizes.iter().any(|&n| n == 0) {
            return Err(SdpError::InvalidProblem("empty PSD block".into()));
        }
        let check_block = |block: usize, m: &SymMatrix, what: &str| -> Result<(), SdpError> {
            let n = *self.psd_sizes.get(block).ok_or_else(|| {
                SdpError::InvalidProblem(format!("{what}: unknown PSD block {block}"))
            })?;
            if m.max_index() > n {
                return Err(SdpError::InvalidProblem(format!(
                    "{what}: coefficient exceeds block {block} of size {n}"
                )));
            }
            if let SymMatrix::Dense(a) = m {
                if a.nrows() != n || a.ncols() != n {
                    return Err(SdpError::InvalidProblem(format!(
                        "{what}: dense coefficient is {}x{}, block {block} is {n}x{n}",
                        a.nrows(),
                        a.ncols()
                    )));
                }
            }
            if !m.is_finite() {
                return Err(SdpError::InvalidProblem(format!("{what}: non-finite data")));
            }
            Ok(())
        };
        for (k, c) in self.objective_psd.iter().enumerate() {
            if let Some(c) = c {
                check_block(k, c, "objective")?;
            }
        }
        for &(j, v) in &self.objective_lp {
            if j >= self.lp_size || !v.is_finite() {
                return Err(SdpError::InvalidProblem(format!("objective: bad LP term {j}")));
            }
        }
        for (i, con) in self.constraints.iter().enumerate() {
            let what = format!("constraint {i}");
            let mut seen = Vec::new();
            for (block, m) in &con.psd {
                if seen.contains(block) {
                    return Err(SdpError::InvalidProblem(format!(
                        "{what}: block {block} listed twice"
                    )));
                }
                seen.push(*block);
                check_block(*block, m, &what)?;
            }
            for &(j, v) in &con.lp {
                if j >= self.lp_size || !v.is_finite() {
                    return Err(SdpError::InvalidProblem(format!("{what}: bad LP term {j}")));
                }
            }
            if !con.rhs.is_finite() {
                return Err(SdpError::InvalidProblem(format!("{what}: non-finite rhs")));
            }
        }
        Ok(())
    }
}
