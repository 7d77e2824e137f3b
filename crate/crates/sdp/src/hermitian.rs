//! Real embedding of complex Hermitian matrices.
//!
//! A Hermitian `H = A + jB` maps to `[[A, -B], [B, A]]`, which is PSD iff `H`
//! is. For Hermitian `H` and any real symmetric `2n x 2n` matrix `X`,
//! `<embed(H), X> = 2 Re Tr(H collapse(X))`, so a linear functional of a
//! Hermitian variable can be posed on the real block with coefficient
//! `embed(H) / 2`.

use nalgebra::{Complex, DMatrix};

pub fn embed(h: &DMatrix<Complex<f64>>) -> DMatrix<f64> {
    let n = h.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            let z = h[(r, c)];
            out[(r, c)] = z.re;
            out[(r + n, c + n)] = z.re;
            out[(r, c + n)] = -z.im;
            out[(r + n, c)] = z.im;
        }
    }
    out
}

/// Hermitian matrix represented by a real symmetric `2n x 2n` matrix,
/// averaging the two diagonal copies. Maps PSD to PSD.
pub fn collapse(x: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    let n = x.nrows() / 2;
    DMatrix::from_fn(n, n, |r, c| {
        Complex::new(
            0.5 * (x[(r, c)] + x[(r + n, c + n)]),
            0.5 * (x[(r + n, c)] - x[(r, c + n)]),
        )
    })
}
