//! FFT helpers on top of `rustfft` and a chirp-z evaluator for equispaced
//! non-integer frequency sums.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::C64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// In-place forward DFT, `X_j = sum_k x_k e^{-2 pi i jk/n}`.
pub fn fft(buf: &mut [C64]) {
    if buf.len() > 1 {
        plan(buf.len(), false).process(buf);
    }
}

/// In-place unnormalized inverse DFT.
pub fn ifft(buf: &mut [C64]) {
    if buf.len() > 1 {
        plan(buf.len(), true).process(buf);
    }
}

/// Evaluates `X_l = sum_{j<m} a_j e^{i theta j l}` for `l < len` (Bluestein).
pub fn czt(a: &[C64], theta: f64, len: usize) -> Vec<C64> {
    let m = a.len();
    if m == 0 || len == 0 {
        return vec![C64::new(0.0, 0.0); len];
    }
    let size = (m + len - 1).next_power_of_two();
    let chirp = |k: i64| C64::from_polar(1.0, 0.5 * theta * ((k * k) as f64));
    let mut u = vec![C64::new(0.0, 0.0); size];
    for (j, &aj) in a.iter().enumerate() {
        u[j] = aj * chirp(j as i64);
    }
    // v_k = e^{-i theta k^2/2} for k in -(m-1)..len-1, stored circularly
    let mut v = vec![C64::new(0.0, 0.0); size];
    for k in 0..len {
        v[k] = chirp(k as i64).conj();
    }
    for k in 1..m {
        v[size - k] = chirp(k as i64).conj();
    }
    fft(&mut u);
    fft(&mut v);
    for (x, y) in u.iter_mut().zip(&v) {
        *x *= *y;
    }
    ifft(&mut u);
    let scale = 1.0 / size as f64;
    (0..len).map(|l| u[l] * scale * chirp(l as i64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_roundtrip() {
        let x: Vec<C64> = (0..16).map(|k| C64::new(k as f64, (k * k) as f64 * 0.1)).collect();
        let mut y = x.clone();
        fft(&mut y);
        ifft(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b / 16.0).norm() < 1e-12);
        }
    }

    #[test]
    fn czt_matches_direct_sum() {
        let a: Vec<C64> = (0..13).map(|j| C64::new((j as f64).sin(), (j as f64 * 0.7).cos())).collect();
        let theta = 0.3717;
        let got = czt(&a, theta, 9);
        for (l, g) in got.iter().enumerate() {
            let want: C64 = a
                .iter()
                .enumerate()
                .map(|(j, &aj)| aj * C64::from_polar(1.0, theta * (j * l) as f64))
                .sum();
            assert!((g - want).norm() < 1e-11, "l={l}");
        }
    }
}
