use ndarray::Array2;

use super::{Tape, Var};
use crate::error::{Error, Result};

/// Central finite differences of a scalar function of one matrix.
pub fn finite_difference<F>(mut f: F, at: &Array2<f64>, h: f64) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut probe = at.clone();
    let mut out = Array2::zeros(at.dim());
    for idx in 0..at.len() {
        let (r, c) = (idx / at.ncols(), idx % at.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe);
        probe[[r, c]] = orig - h;
        let down = f(&probe);
        probe[[r, c]] = orig;
        out[[r, c]] = (up - down) / (2.0 * h);
    }
    out
}

/// Max over coordinates of `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

/// Compares the tape gradient of `f` at `leaf` against central differences
/// with step `h`, returning the max relative error.
pub fn grad_check<F>(f: F, leaf: &Array2<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!("step {h} outside [1e-7, 1e-3]")));
    }
    let mut tape = Tape::new();
    let x = tape.param(leaf.clone());
    let loss = f(&mut tape, x);
    let analytic = tape.backward(loss)?.take(x).expect("leaf gradient");
    let numeric = finite_difference(
        |probe| {
            let mut t = Tape::new();
            let x = t.param(probe.clone());
            let y = f(&mut t, x);
            t.scalar_value(y)
        },
        leaf,
        h,
    );
    Ok(relative_error(&analytic, &numeric))
}
