//! Zero-phase IIR band-pass filtering and rational-factor resampling.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Cascade of second-order sections, each `[b0, b1, b2, a1, a2]` with `a0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<[f64; 5]>,
}

/// Digital Butterworth band-pass of the given prototype order.
///
/// The low-pass prototype is transformed to a band-pass (so the filter has
/// `2 * order` poles), mapped with the pre-warped bilinear transform, and
/// scaled to unit gain at the geometric centre frequency.
pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Sos> {
    if order == 0 {
        return Err(Error::Config("filter order must be positive".into()));
    }
    let nyquist = fs / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(Error::Config(format!(
            "band [{low_hz}, {high_hz}] Hz must satisfy 0 < low < high < Nyquist ({nyquist} Hz)"
        )));
    }
    let fs2 = 2.0 * fs;
    let wl = fs2 * (PI * low_hz / fs).tan();
    let wh = fs2 * (PI * high_hz / fs).tan();
    let bw = wh - wl;
    let w0 = (wl * wh).sqrt();

    let n = order as i64;
    let mut analog_poles = Vec::with_capacity(2 * order);
    for m in (-n + 1..n).step_by(2) {
        let p = -Complex64::from_polar(1.0, PI * m as f64 / (2.0 * n as f64));
        let half = p * (bw / 2.0);
        let root = (half * half - w0 * w0).sqrt();
        analog_poles.push(half + root);
        analog_poles.push(half - root);
    }
    let fs2c = Complex64::new(fs2, 0.0);
    let poles: Vec<Complex64> = analog_poles.iter().map(|&p| (fs2c + p) / (fs2c - p)).collect();

    let mut sections = Vec::with_capacity(order);
    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
    let mut reals: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
    upper.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    reals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for p in upper {
        sections.push([1.0, 0.0, -1.0, -2.0 * p.re, p.norm_sqr()]);
    }
    for pair in reals.chunks(2) {
        let (p1, p2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push([1.0, 0.0, -1.0, -(p1 + p2), p1 * p2]);
    }
    if sections.len() != order {
        return Err(Error::Config(format!(
            "pole pairing produced {} sections for order {order}",
            sections.len()
        )));
    }

    let mut sos = Sos { sections };
    let center = 2.0 * (w0 / fs2).atan();
    let gain = sos.response(center).norm();
    sos.sections[0][0] /= gain;
    sos.sections[0][1] /= gain;
    sos.sections[0][2] /= gain;
    Ok(sos)
}

impl Sos {
    /// Complex frequency response at normalized angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            let num = s[0] + z1 * s[1] + z2 * s[2];
            let den = 1.0 + z1 * s[3] + z2 * s[4];
            acc * num / den
        })
    }

    /// Magnitude response at `freq_hz` for sampling rate `fs`.
    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        self.response(2.0 * PI * freq_hz / fs).norm()
    }

    /// Steady-state initial conditions for a unit step input.
    fn step_initial_conditions(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [b0, b1, b2, a1, a2] = *s;
                let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
                let z2 = b2 - a2 * dc;
                let z1 = b1 + b2 - (a1 + a2) * dc;
                let zi = [z1 * scale, z2 * scale];
                scale *= dc;
                zi
            })
            .collect()
    }

    /// Causal filtering with per-section initial states.
    fn filter_with_state(&self, x: &mut [f64], mut state: Vec<[f64; 2]>) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let [b0, b1, b2, a1, a2] = *s;
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z[0];
                z[0] = b1 * input - a1 * y + z[1];
                z[1] = b2 * input - a2 * y;
                *v = y;
            }
        }
    }

    /// Forward-backward (zero-phase) filtering with mirror padding.
    ///
    /// The pad is as long as the signal allows: with a 0.1 Hz edge the
    /// start-up transients last seconds, and short pads leak them into the data.
    pub fn filtfilt(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_owned();
        }
        let pad = n - 1;
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(x[i]);
        }
        ext.extend(x.iter().copied());
        for i in 1..=pad {
            ext.push(x[n - 1 - i]);
        }
        let zi = self.step_initial_conditions();
        let scaled = |x0: f64| zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect::<Vec<_>>();

        let x0 = ext[0];
        self.filter_with_state(&mut ext, scaled(x0));
        ext.reverse();
        let y0 = ext[0];
        self.filter_with_state(&mut ext, scaled(y0));
        ext.reverse();
        Array1::from(ext[pad..pad + n].to_vec())
    }

    /// Zero-phase filtering of each row of a `channels × samples` matrix.
    pub fn filtfilt_rows(&self, data: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(data.raw_dim());
        for (src, mut dst) in data.rows().into_iter().zip(out.rows_mut()) {
            dst.assign(&self.filtfilt(src));
        }
        out
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced up/down factors for converting `from_hz` to `to_hz`.
pub fn resample_factors(from_hz: f64, to_hz: f64) -> Result<(usize, usize)> {
    let is_int = |v: f64| v > 0.0 && (v - v.round()).abs() < 1e-9;
    if !is_int(from_hz) || !is_int(to_hz) {
        return Err(Error::Config(format!(
            "resampling needs integer rates, got {from_hz} -> {to_hz} Hz"
        )));
    }
    let (a, b) = (from_hz.round() as u64, to_hz.round() as u64);
    let g = gcd(a, b);
    Ok(((b / g) as usize, (a / g) as usize))
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass used as the anti-aliasing filter.
fn resample_taps(up: usize, down: usize) -> Vec<f64> {
    const BETA: f64 = 5.0;
    let max_rate = up.max(down);
    let cutoff = 1.0 / max_rate as f64;
    let half = 10 * max_rate;
    let len = 2 * half + 1;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 - half as f64;
            let arg = cutoff * t;
            let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
            let r = 2.0 * i as f64 / (len - 1) as f64 - 1.0;
            let window = bessel_i0(BETA * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(BETA);
            sinc * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t *= up as f64 / sum;
    }
    taps
}

/// Polyphase resampling by `up / down` along each row, compensating the filter delay.
pub fn resample_rows(data: &Array2<f64>, up: usize, down: usize) -> Array2<f64> {
    if up == down {
        return data.clone();
    }
    let taps = resample_taps(up, down);
    let half = (taps.len() - 1) / 2;
    let n = data.ncols();
    let n_out = (n * up).div_ceil(down);
    let up_len = n * up;
    let mut out = Array2::zeros((data.nrows(), n_out));
    for (src, mut dst) in data.rows().into_iter().zip(out.rows_mut()) {
        for (i, y) in dst.iter_mut().enumerate() {
            // y[i] = sum_k taps[k] * x_up[i*down + half - k], x_up nonzero only on multiples of `up`.
            let center = i * down + half;
            let k_min = center.saturating_sub(up_len - 1);
            let k_max = center.min(taps.len() - 1);
            let mut acc = 0.0;
            let mut k = k_min + (center - k_min) % up;
            while k <= k_max {
                let j = center - k;
                acc += taps[k] * src[j / up];
                k += up;
            }
            *y = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: f64, n: usize) -> Array1<f64> {
        Array1::from_shape_fn(n, |i| (2.0 * PI * freq * i as f64 / fs).sin())
    }

    fn rms(x: ArrayView1<'_, f64>) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn passband_centre_has_unit_gain() {
        let sos = butter_bandpass(4, 0.1, 100.0, 1000.0).unwrap();
        assert!((sos.magnitude(10.0, 1000.0) - 1.0).abs() < 1e-3);
        assert!(sos.magnitude(150.0, 1000.0) < 0.2);
        assert!(sos.magnitude(0.0, 1000.0) < 1e-9);
    }

    #[test]
    fn response_is_monotone_outside_band() {
        let sos = butter_bandpass(4, 8.0, 13.0, 250.0).unwrap();
        let mut prev = f64::INFINITY;
        for f in [20.0, 30.0, 50.0, 80.0, 120.0] {
            let m = sos.magnitude(f, 250.0);
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn rejects_band_above_nyquist() {
        assert!(butter_bandpass(4, 30.0, 100.0, 50.0).is_err());
        assert!(butter_bandpass(4, 5.0, 4.0, 250.0).is_err());
    }

    #[test]
    fn filtfilt_keeps_in_band_tone_and_removes_out_of_band() {
        let fs = 250.0;
        let x = tone(10.0, fs, 250);
        let alpha = butter_bandpass(4, 8.0, 13.0, fs).unwrap();
        let gamma = butter_bandpass(4, 30.0, 100.0, fs).unwrap();
        let keep = rms(alpha.filtfilt(x.view()).view()) / rms(x.view());
        let kill = rms(gamma.filtfilt(x.view()).view()) / rms(x.view());
        assert!(keep > 0.9, "alpha keeps {keep}");
        assert!(kill < 0.1, "gamma leaks {kill}");
    }

    #[test]
    fn filtfilt_of_zero_is_zero() {
        let sos = butter_bandpass(4, 0.1, 100.0, 1000.0).unwrap();
        let y = sos.filtfilt(Array1::zeros(500).view());
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resample_factors_reduce() {
        assert_eq!(resample_factors(1000.0, 250.0).unwrap(), (1, 4));
        assert_eq!(resample_factors(1200.0, 250.0).unwrap(), (5, 24));
        assert!(resample_factors(999.5, 250.0).is_err());
    }

    #[test]
    fn resampling_preserves_slow_tone() {
        let x = tone(5.0, 1000.0, 4000);
        let data = Array2::from_shape_vec((1, 4000), x.to_vec()).unwrap();
        let y = resample_rows(&data, 1, 4);
        assert_eq!(y.ncols(), 1000);
        let expected = tone(5.0, 250.0, 1000);
        // Ignore the filter's edge transients.
        for i in 100..900 {
            assert!((y[[0, i]] - expected[i]).abs() < 1e-3, "sample {i}");
        }
    }

    #[test]
    fn upsampling_interpolates() {
        let x = tone(3.0, 100.0, 400);
        let data = Array2::from_shape_vec((1, 400), x.to_vec()).unwrap();
        let y = resample_rows(&data, 5, 2);
        assert_eq!(y.ncols(), 1000);
        let expected = tone(3.0, 250.0, 1000);
        for i in 200..800 {
            assert!((y[[0, i]] - expected[i]).abs() < 1e-2, "sample {i}");
        }
    }
}
