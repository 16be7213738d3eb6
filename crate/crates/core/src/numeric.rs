//! Small numerical kernels shared by the solver and the observables:
//! trapezoid integration of sampled data, adaptive Simpson quadrature and a
//! direct discrete Fourier transform evaluated on an arbitrary frequency grid.

use alloc::vec::Vec;

use num_complex::Complex64 as C64;

/// Trapezoid rule on uniformly spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

/// Exact integral over `[lo, hi]` of the piecewise-linear interpolant of
/// samples taken at `t_k = k·h`. The interval is clipped to the sampled range.
pub fn integrate_window(values: &[f64], h: f64, lo: f64, hi: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let t_max = (n - 1) as f64 * h;
    let lo = lo.max(0.0);
    let hi = hi.min(t_max);
    if hi <= lo {
        return 0.0;
    }
    let interp = |t: f64| {
        let x = (t / h).clamp(0.0, (n - 1) as f64);
        let k = (x.floor() as usize).min(n - 2);
        let f = x - k as f64;
        values[k] * (1.0 - f) + values[k + 1] * f
    };
    let k_lo = (lo / h).ceil() as usize;
    let k_hi = ((hi / h).floor() as usize).min(n - 1);
    if k_lo > k_hi {
        // Both ends inside one interval.
        return 0.5 * (interp(lo) + interp(hi)) * (hi - lo);
    }
    let t_lo = k_lo as f64 * h;
    let t_hi = k_hi as f64 * h;
    let mut total = 0.5 * (interp(lo) + values[k_lo]) * (t_lo - lo);
    total += 0.5 * (values[k_hi] + interp(hi)) * (hi - t_hi);
    if k_hi > k_lo {
        total += trapezoid(&values[k_lo..=k_hi], h);
    }
    total
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Continuous-time Fourier amplitude `Σ x_k e^{iω t_k} h` of samples starting
/// at `t0` with spacing `h`, at each angular frequency in `freqs`.
///
/// With this sign a component `e^{-iω₀t}` peaks at `ω = ω₀`, matching the
/// carrier convention of [`crate::model::Pulse`].
pub fn fourier(samples: &[C64], t0: f64, h: f64, freqs: &[f64]) -> Vec<C64> {
    freqs
        .iter()
        .map(|&w| {
            // Rotate by a fixed phasor instead of calling exp per sample.
            let step = C64::from_polar(1.0, w * h);
            let mut phasor = C64::from_polar(1.0, w * t0);
            let mut acc = C64::new(0.0, 0.0);
            for &x in samples {
                acc += x * phasor;
                phasor *= step;
            }
            acc * h
        })
        .collect()
}

/// Uniform frequency grid over `[-π/h, π/h)` with `oversample` points per
/// natural resolution `2π/(n h)`.
pub fn frequency_grid(n: usize, h: f64, oversample: usize) -> Vec<f64> {
    let m = (n * oversample.max(1)).max(2);
    let span = 2.0 * core::f64::consts::PI / h;
    (0..m)
        .map(|k| -0.5 * span + span * k as f64 / m as f64)
        .collect()
}

/// Power-weighted mean angular frequency of a sampled complex waveform.
/// Returns `None` for a waveform with no power.
pub fn spectral_centroid(samples: &[C64], h: f64) -> Option<f64> {
    let freqs = frequency_grid(samples.len(), h, 2);
    let spec = fourier(samples, 0.0, h, &freqs);
    let (mut num, mut den) = (0.0, 0.0);
    for (w, a) in freqs.iter().zip(&spec) {
        let p = a.norm_sqr();
        num += w * p;
        den += p;
    }
    (den > 0.0).then(|| num / den)
}

/// Frequency (rad per unit time, ≥ 0) of the strongest spectral component of
/// a real trace after removing its mean.
pub fn dominant_frequency(trace: &[f64], h: f64) -> Option<f64> {
    let n = trace.len();
    if n < 4 {
        return None;
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<C64> = trace.iter().map(|&x| C64::new(x - mean, 0.0)).collect();
    let oversample = 8;
    let m = n * oversample / 2;
    let nyquist = core::f64::consts::PI / h;
    let freqs: Vec<f64> = (1..=m).map(|k| nyquist * k as f64 / m as f64).collect();
    let power: Vec<f64> = fourier(&centered, 0.0, h, &freqs)
        .iter()
        .map(|a| a.norm_sqr())
        .collect();
    let (k, &best) = power
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (k, p)| if *p > *acc.1 { (k, p) } else { acc });
    if best <= 0.0 {
        return None;
    }
    let shift = if k > 0 && k + 1 < power.len() {
        parabolic_offset(power[k - 1], power[k], power[k + 1])
    } else {
        0.0
    };
    Some(freqs[k] + shift * (nyquist / m as f64))
}

/// Vertex offset (in samples, within ±½) of the parabola through three
/// equally spaced values around a local maximum.
pub fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    #[test]
    fn window_integral_of_linear_data_is_exact() {
        // f(t) = t sampled at h = 0.5 on [0, 4].
        let h = 0.5;
        let v: Vec<f64> = (0..9).map(|k| k as f64 * h).collect();
        let got = integrate_window(&v, h, 0.3, 3.1);
        let want = 0.5 * (3.1f64 * 3.1 - 0.3 * 0.3);
        assert!((got - want).abs() < 1e-12);
        assert!((integrate_window(&v, h, 1.1, 1.2) - 0.5 * (1.44 - 1.21)).abs() < 1e-12);
        assert!((integrate_window(&v, h, -5.0, 50.0) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_resolves_a_narrow_lorentzian() {
        let g = 1e-4;
        let f = |x: f64| g / (g * g + x * x);
        let got = adaptive_simpson(&f, 0.0, 1.0, 1e-12);
        let want = (1.0 / g).atan();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn centroid_of_a_shifted_gaussian() {
        let h = 0.01;
        let w0 = 2.5;
        let s: Vec<C64> = (0..2000)
            .map(|k| {
                let t = k as f64 * h;
                C64::from_polar((-(t - 10.0) * (t - 10.0)).exp(), -w0 * t)
            })
            .collect();
        let c = spectral_centroid(&s, h).unwrap();
        assert!((c - w0).abs() < 1e-6, "{c}");
        assert_eq!(spectral_centroid(&vec![C64::new(0.0, 0.0); 8], h), None);
    }

    #[test]
    fn dominant_frequency_of_a_cosine() {
        let h = 0.01;
        let w = 2.0 * PI * 8.0;
        let trace: Vec<f64> = (0..1000).map(|k| 3.0 + (w * k as f64 * h).cos()).collect();
        let got = dominant_frequency(&trace, h).unwrap();
        assert!((got - w).abs() < 2.0 * PI / 10.0 / 8.0, "{got} vs {w}");
    }
}
