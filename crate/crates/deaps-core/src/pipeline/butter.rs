//! Butterworth high-pass design and zero-phase IIR filtering.
//!
//! The filter is designed with the bilinear transform: analog Butterworth
//! poles are prewarped to the requested cutoff, moved to the high-pass
//! configuration, and mapped into the z-plane. Zero-phase application runs
//! the filter forward and backward over an odd-symmetric edge extension,
//! with the internal state initialized to the filter's step-response steady
//! state so the edges carry no startup transient.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Discrete-time IIR filter in transfer-function form; `a[0]` is 1.
#[derive(Debug, Clone)]
pub struct Iir {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

/// Designs an order-`n` Butterworth high-pass at `cutoff_hz` for rate `fs`.
pub fn butter_highpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Iir> {
    if order == 0 {
        return Err(Error::config("filter order must be positive"));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(Error::config(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
            fs / 2.0
        )));
    }

    // Prewarped analog cutoff in rad/s, so the digital response crosses
    // -3 dB exactly at cutoff_hz.
    let warped = 2.0 * fs * (std::f64::consts::PI * cutoff_hz / fs).tan();

    // Analog low-pass prototype poles on the unit circle's left half,
    // transformed to high-pass by s -> warped / s.
    let n = order;
    let mut z_poles = Vec::with_capacity(n);
    for k in 0..n {
        let theta = std::f64::consts::PI * (2.0 * k as f64 + n as f64 + 1.0) / (2.0 * n as f64);
        let lp = Complex::new(theta.cos(), theta.sin());
        let hp = Complex::new(warped, 0.0) / lp;
        // Bilinear transform s -> 2 fs (1 - z^-1)/(1 + z^-1).
        let two_fs = Complex::new(2.0 * fs, 0.0);
        z_poles.push((two_fs + hp) / (two_fs - hp));
    }

    // Denominator polynomial from the pole set; complex conjugate pairs
    // make the imaginary parts cancel.
    let mut a_c = vec![Complex::new(1.0, 0.0)];
    for p in &z_poles {
        let mut next = vec![Complex::new(0.0, 0.0); a_c.len() + 1];
        for (i, &c) in a_c.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * p;
        }
        a_c = next;
    }
    let a: Vec<f64> = a_c.iter().map(|c| c.re).collect();

    // All n zeros sit at z = 1 (DC), so the unnormalized numerator is
    // (1 - z^-1)^n; the gain pins |H| = 1 at the Nyquist point z = -1.
    let mut b = vec![0.0; n + 1];
    for (k, bk) in b.iter_mut().enumerate() {
        *bk = binomial(n, k) * if k % 2 == 0 { 1.0 } else { -1.0 };
    }
    let a_at_nyquist: f64 = a
        .iter()
        .enumerate()
        .map(|(k, &ak)| ak * if k % 2 == 0 { 1.0 } else { -1.0 })
        .sum();
    let gain = a_at_nyquist.abs() / 2f64.powi(n as i32);
    for bk in b.iter_mut() {
        *bk *= gain;
    }

    Ok(Iir { b, a })
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// Direct-form II transposed filter pass with initial state `zi`.
fn lfilter(f: &Iir, x: &[f64], zi: &[f64]) -> Vec<f64> {
    let order = f.a.len().max(f.b.len()) - 1;
    let mut b = f.b.clone();
    let mut a = f.a.clone();
    b.resize(order + 1, 0.0);
    a.resize(order + 1, 0.0);
    let mut z = zi.to_vec();
    z.resize(order, 0.0);

    let mut y = Vec::with_capacity(x.len());
    for &xn in x {
        let yn = b[0] * xn + z[0];
        for i in 0..order - 1 {
            z[i] = b[i + 1] * xn + z[i + 1] - a[i + 1] * yn;
        }
        z[order - 1] = b[order] * xn - a[order] * yn;
        y.push(yn);
    }
    y
}

/// Steady-state internal filter state for a unit-step input, used to start
/// each pass of [`filtfilt`] without a transient.
fn lfilter_zi(f: &Iir) -> Result<Vec<f64>> {
    let order = f.a.len().max(f.b.len()) - 1;
    let mut b = f.b.clone();
    let mut a = f.a.clone();
    b.resize(order + 1, 0.0);
    a.resize(order + 1, 0.0);

    // Solve (I - A^T) zi = B where A is the companion matrix of `a` and
    // B[i] = b[i+1] - a[i+1] b[0].
    let mut m = DMatrix::<f64>::identity(order, order);
    for i in 0..order {
        m[(i, 0)] += a[i + 1];
        if i + 1 < order {
            m[(i, i + 1)] -= 1.0;
        }
    }
    let rhs = DVector::from_iterator(order, (0..order).map(|i| b[i + 1] - a[i + 1] * b[0]));
    let zi = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::data("filter state system is singular"))?;
    Ok(zi.iter().copied().collect())
}

/// Zero-phase filtering with the minimal conventional padding of three
/// filter orders. Sufficient for filters whose poles sit well inside the
/// unit circle; narrow low-cutoff designs should pass a settling-derived
/// pad through [`filtfilt_with_pad`] instead.
pub fn filtfilt(f: &Iir, x: &[f64]) -> Result<Vec<f64>> {
    let order = f.a.len().max(f.b.len()) - 1;
    filtfilt_with_pad(f, x, 3 * order)
}

/// Zero-phase filtering: forward pass, backward pass, odd edge extension of
/// `pad` samples at each end to absorb startup and reversal transients.
pub fn filtfilt_with_pad(f: &Iir, x: &[f64], pad: usize) -> Result<Vec<f64>> {
    let order = f.a.len().max(f.b.len()) - 1;
    let pad = pad.max(order);
    if x.len() <= pad {
        return Err(Error::data(format!(
            "record of {} samples is too short for zero-phase filtering (needs more than {pad})",
            x.len()
        )));
    }

    // Odd extension mirrors the signal around its endpoints, which keeps the
    // filter from seeing a step at the boundaries.
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in (n - pad - 1..n - 1).rev() {
        ext.push(2.0 * x[n - 1] - x[i]);
    }

    let zi = lfilter_zi(f)?;
    let scaled: Vec<f64> = zi.iter().map(|z| z * ext[0]).collect();
    let mut y = lfilter(f, &ext, &scaled);

    y.reverse();
    let scaled: Vec<f64> = zi.iter().map(|z| z * y[0]).collect();
    let mut y = lfilter(f, &y, &scaled);
    y.reverse();

    Ok(y[pad..pad + n].to_vec())
}
