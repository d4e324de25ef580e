//! Global operation counter used as the linear-complexity certificate.
//!
//! Every kernel bumps the counter by the number of elementary steps it
//! performs (mask entries touched, element contributions, nodes visited).
//! The counter is thread-local so parallel test binaries do not interfere.

use std::cell::Cell;

thread_local! {
    static COUNT: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub fn add(n: u64) {
    COUNT.with(|c| c.set(c.get().wrapping_add(n)));
}

pub fn get() -> u64 {
    COUNT.with(|c| c.get())
}

pub fn reset() {
    COUNT.with(|c| c.set(0));
}

/// Runs `f` and returns its result together with the operations it spent.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = get();
    let r = f();
    (r, get().wrapping_sub(before))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in lx.iter().zip(&ly) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}
