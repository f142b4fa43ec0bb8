use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::BandSpec;
use crate::error::{Error, Result};
use crate::trace::Trace;

// Hamming main-lobe transition width is about 3.3 / N of the sample rate.
const HAMMING_WIDTH: f64 = 3.3;
// transition width as a fraction of the lower band edge
const TRANSITION_FRACTION: f64 = 0.4;

fn hamming(n: usize, len: usize) -> f64 {
    0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hamming-windowed sinc low-pass of odd length `taps`, unit gain at DC.
pub fn lowpass_kernel(cutoff_hz: f64, sample_rate_hz: f64, taps: usize) -> Vec<f64> {
    let m = (taps - 1) as f64 / 2.0;
    let fc = 2.0 * cutoff_hz / sample_rate_hz;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| fc * sinc(fc * (n as f64 - m)) * hamming(n, taps))
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= dc);
    h
}

/// Band-pass kernel as the difference of two unit-DC low-passes, so the
/// DC gain is zero by construction.
pub fn bandpass_kernel(band: BandSpec, sample_rate_hz: f64) -> Result<Vec<f64>> {
    band.check_rate(sample_rate_hz)?;
    let half_transition = TRANSITION_FRACTION * band.f_lo_hz / 2.0;
    let lo = band.f_lo_hz - half_transition;
    let hi = band.f_hi_hz + half_transition;
    if hi >= sample_rate_hz / 2.0 {
        return Err(Error::invalid(
            "band",
            format!("upper transition edge {hi} Hz reaches Nyquist"),
        ));
    }
    let mut taps = (HAMMING_WIDTH * sample_rate_hz / (2.0 * half_transition)).ceil() as usize;
    taps |= 1;
    let upper = lowpass_kernel(hi, sample_rate_hz, taps);
    let lower = lowpass_kernel(lo, sample_rate_hz, taps);
    Ok(upper.iter().zip(&lower).map(|(a, b)| a - b).collect())
}

/// Zero-phase band-pass: the FIR kernel is run forward, then backward over
/// the time-reversed result. Ends are padded by odd reflection.
pub fn bandpass_filter(t: &Trace, band: BandSpec) -> Result<Trace> {
    let h = bandpass_kernel(band, t.sample_rate_hz())?;
    let x = t.samples();
    let pad = h.len();
    if x.len() <= pad {
        return Err(Error::invalid(
            "trace",
            format!(
                "{} samples is too short for a {}-tap filter",
                x.len(),
                h.len()
            ),
        ));
    }
    let mean = t.mean();
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (x[0] - mean, x[n - 1] - mean);
    ext.extend((1..=pad).rev().map(|k| 2.0 * first - (x[k] - mean)));
    ext.extend(x.iter().map(|v| v - mean));
    ext.extend((1..=pad).map(|k| 2.0 * last - (x[n - 1 - k] - mean)));

    let mut y = convolve_causal(&ext, &h);
    y.reverse();
    let mut y = convolve_causal(&y, &h);
    y.reverse();
    t.with_samples(y[pad..pad + n].to_vec())
}

/// First `x.len()` outputs of the full linear convolution of `x` with `h`,
/// by FFT overlap-add.
fn convolve_causal(x: &[f64], h: &[f64]) -> Vec<f64> {
    let nfft = (4 * h.len()).max(4096).next_power_of_two();
    let block = nfft - h.len() + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    let mut kernel: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    kernel.resize(nfft, Complex64::new(0.0, 0.0));
    fwd.process(&mut kernel);

    let scale = 1.0 / nfft as f64;
    let mut out = vec![0.0; x.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut start = 0;
    while start < x.len() {
        let end = (start + block).min(x.len());
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(&x[start..end]) {
            b.re = v;
        }
        fwd.process(&mut buf);
        buf.iter_mut().zip(&kernel).for_each(|(b, k)| *b *= k);
        inv.process(&mut buf);
        let stop = (start + nfft).min(x.len());
        for (o, b) in out[start..stop].iter_mut().zip(&buf) {
            *o += b.re * scale;
        }
        start = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 2.0e9;

    fn tone(freq: f64, n: usize) -> Trace {
        let s = (0..n)
            .map(|k| (2.0 * PI * freq * k as f64 / FS).sin())
            .collect();
        Trace::new(s, FS, "tone").unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Frequency response of a kernel by direct DTFT.
    fn response(h: &[f64], freq: f64) -> f64 {
        let w = 2.0 * PI * freq / FS;
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &v) in h.iter().enumerate() {
            re += v * (w * n as f64).cos();
            im -= v * (w * n as f64).sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn kernel_meets_attenuation_and_ripple() {
        let band = BandSpec::default();
        let h = bandpass_kernel(band, FS).unwrap();
        assert_eq!(h.len() % 2, 1);
        // forward-backward squares the magnitude response
        for f in [0.5 * band.f_lo_hz, 2.0 * band.f_hi_hz, 100e3] {
            let db = 20.0 * response(&h, f).powi(2).log10();
            assert!(db < -40.0, "{f} Hz at {db} dB");
        }
        for k in 0..=20 {
            let f = band.f_lo_hz + band.width_hz() * k as f64 / 20.0;
            let db = 20.0 * response(&h, f).powi(2).log10();
            assert!(db.abs() < 1.0, "{f} Hz ripple {db} dB");
        }
    }

    #[test]
    fn constant_is_rejected() {
        let t = Trace::new(vec![100.0; 60_000], FS, "dc").unwrap();
        let y = bandpass_filter(&t, BandSpec::default()).unwrap();
        assert!(rms(y.samples()) < 1e-4 * 100.0);
    }

    #[test]
    fn passband_tone_is_preserved() {
        let n = 200_000;
        let t = tone(2.5e6, n);
        let y = bandpass_filter(&t, BandSpec::default()).unwrap();
        let mid = n / 4..3 * n / 4;
        let ratio = rms(&y.samples()[mid.clone()]) / rms(&t.samples()[mid]);
        assert!((20.0 * ratio.log10()).abs() < 1.0, "gain {ratio}");
    }

    #[test]
    fn low_tone_is_attenuated() {
        let n = 200_000;
        let t = tone(100e3, n);
        let y = bandpass_filter(&t, BandSpec::default()).unwrap();
        let mid = n / 4..3 * n / 4;
        let ratio = rms(&y.samples()[mid.clone()]) / rms(&t.samples()[mid]);
        assert!(20.0 * ratio.log10() < -40.0, "gain {ratio}");
    }

    #[test]
    fn filtering_adds_no_delay() {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = crate::rng::stream_rng(3, 0);
        let x: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let t = Trace::new(x, FS, "w").unwrap();
        let band = BandSpec::default();
        let y1 = bandpass_filter(&t, band).unwrap();
        let y2 = bandpass_filter(&y1, band).unwrap();
        // y1 is band-limited; filtering it again must not shift it
        let (a, b) = (y1.samples(), y2.samples());
        let xcorr = |lag: isize| -> f64 {
            (20_000..80_000)
                .map(|i| a[i] * b[(i as isize + lag) as usize])
                .sum()
        };
        let best = (-20..=20).max_by(|&p, &q| xcorr(p).total_cmp(&xcorr(q))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let x: Vec<f64> = (0..9000).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        let h: Vec<f64> = (0..1201).map(|i| ((i * 13) % 17) as f64 / 17.0).collect();
        let fast = convolve_causal(&x, &h);
        for n in [0, 1, 500, 1200, 1201, 4097, 8999] {
            let direct: f64 = (0..=n.min(h.len() - 1)).map(|k| h[k] * x[n - k]).sum();
            assert!((fast[n] - direct).abs() < 1e-8 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn band_beyond_nyquist_errors() {
        let t = tone(1e3, 100);
        let band = BandSpec::new(1e3, 2e6).unwrap();
        let slow = Trace::new(t.samples().to_vec(), 1e6, "slow").unwrap();
        assert!(bandpass_filter(&slow, band).is_err());
    }

    #[test]
    fn short_trace_errors() {
        let t = tone(2.5e6, 5000);
        assert!(bandpass_filter(&t, BandSpec::default()).is_err());
    }
}
