//! Windowed-sinc resampling between arbitrary rates.
//!
//! Each output sample is an inner product between the input and a
//! Hann-windowed sinc kernel centered at the output instant, with the
//! kernel cutoff placed below the narrower of the two Nyquist limits so
//! downsampling cannot alias. Per-sample weight normalization pins the DC
//! gain to exactly one, which also flattens the passband to well under a
//! percent. Edges are mirror-extended.

/// Number of sinc lobes kept on each side of the kernel center.
const LOBES: f64 = 32.0;
/// Cutoff as a fraction of the narrower Nyquist frequency.
const ROLLOFF: f64 = 0.9;

/// Resamples `x` from `fs_in` to `fs_out`. Equal rates pass through
/// unchanged; otherwise the output holds `round(n * fs_out / fs_in)`
/// samples so duration is preserved to within one sample.
pub fn resample(x: &[f32], fs_in: f64, fs_out: f64) -> Vec<f32> {
    if (fs_in - fs_out).abs() < 1e-9 || x.is_empty() {
        return x.to_vec();
    }
    let n_in = x.len();
    let n_out = ((n_in as f64) * fs_out / fs_in).round() as usize;
    if n_in == 1 {
        return vec![x[0]; n_out];
    }

    let fc = ROLLOFF * 0.5 * fs_in.min(fs_out);
    let half_width_s = LOBES / (2.0 * fc);
    let half_width_in = (half_width_s * fs_in).ceil() as isize;

    let mirror = |idx: isize| -> f64 {
        let mut i = idx;
        let n = n_in as isize;
        // Reflect around the endpoints until the index lands inside.
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * n - 2 - i;
            }
        }
        x[i as usize] as f64
    };

    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let t = k as f64 / fs_out;
        let center = t * fs_in;
        let n0 = center.floor() as isize;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for n in (n0 - half_width_in)..=(n0 + half_width_in + 1) {
            let dt = t - n as f64 / fs_in;
            let u = dt / half_width_s;
            if u.abs() >= 1.0 {
                continue;
            }
            let hann = 0.5 * (1.0 + (std::f64::consts::PI * u).cos());
            let w = sinc(2.0 * fc * dt) * hann;
            acc += w * mirror(n);
            wsum += w;
        }
        out.push((acc / wsum) as f32);
    }
    out
}

fn sinc(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        1.0
    } else {
        let pv = std::f64::consts::PI * v;
        pv.sin() / pv
    }
}
