//! Filter design and application, plus rational resampling.
//!
//! Band-pass filters are Butterworth designs realized as cascaded biquad
//! sections via the bilinear transform; the power-line notch is a single
//! constrained biquad. Filtering is zero-phase (forward-backward) with
//! odd-reflection padding and steady-state initial conditions, so constant
//! inputs pass through exactly and timing between devices is preserved.
//! Resampling is polyphase FIR with a Hamming-windowed sinc kernel whose
//! per-phase taps are normalized to unit sum (exact DC preservation).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::RawTrial;
use crate::error::{Error, Result};

/// One second-order section, denominator normalized to a0 = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sos {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Sos {
    pub const IDENTITY: Sos = Sos {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Radii of the two poles (roots of z^2 + a1 z + a2).
    pub fn pole_radii(&self) -> [f64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let p1 = (Complex64::new(-self.a1, 0.0) + disc) / 2.0;
        let p2 = (Complex64::new(-self.a1, 0.0) - disc) / 2.0;
        [p1.norm(), p2.norm()]
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = Complex64::new(self.b0, 0.0) + z_inv * (self.b1 + z_inv * self.b2);
        let den = Complex64::new(1.0, 0.0) + z_inv * (self.a1 + z_inv * self.a2);
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FilterKind {
    Bandpass {
        low_hz: f64,
        high_hz: f64,
        order: usize,
    },
    Notch {
        f0_hz: f64,
        q: f64,
    },
    Identity,
}

/// An IIR filter as a cascade of second-order sections, with design metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirFilter {
    pub sections: Vec<Sos>,
    pub kind: FilterKind,
    pub fs_hz: f64,
}

impl IirFilter {
    pub fn identity() -> Self {
        IirFilter {
            sections: vec![Sos::IDENTITY],
            kind: FilterKind::Identity,
            fs_hz: 1.0,
        }
    }

    /// Single-pass complex response at `f_hz`.
    pub fn response_at(&self, f_hz: f64) -> Complex64 {
        let omega = 2.0 * PI * f_hz / self.fs_hz;
        let z_inv = Complex64::from_polar(1.0, -omega);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude_at(&self, f_hz: f64) -> f64 {
        self.response_at(f_hz).norm()
    }

    /// Single-pass gain in dB (`-inf` at exact nulls).
    pub fn gain_db_at(&self, f_hz: f64) -> f64 {
        20.0 * self.magnitude_at(f_hz).log10()
    }

    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.pole_radii().iter().all(|&r| r < 1.0))
    }
}

/// Butterworth band-pass of prototype order `order` (2*order poles total).
pub fn design_bandpass(low_hz: f64, high_hz: f64, fs_hz: f64, order: usize) -> Result<IirFilter> {
    if !(fs_hz > 0.0) || !low_hz.is_finite() || !high_hz.is_finite() {
        return Err(Error::FilterDesign(format!(
            "non-finite or non-positive edges: low={low_hz}, high={high_hz}, fs={fs_hz}"
        )));
    }
    if order == 0 {
        return Err(Error::FilterDesign("order must be >= 1".into()));
    }
    if !(0.0 < low_hz && low_hz < high_hz && high_hz < fs_hz / 2.0) {
        return Err(Error::FilterDesign(format!(
            "band edges must satisfy 0 < low < high < fs/2 (got low={low_hz}, high={high_hz}, fs={fs_hz})"
        )));
    }

    // Prewarped analog edges, center and bandwidth.
    let k = 2.0 * fs_hz;
    let wl = k * (PI * low_hz / fs_hz).tan();
    let wh = k * (PI * high_hz / fs_hz).tan();
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;

    // Analog prototype poles (left half-plane, unit radius), transformed to
    // band-pass pairs: s = (p*bw +- sqrt((p*bw)^2 - 4 w0^2)) / 2.
    let mut analog_poles = Vec::with_capacity(2 * order);
    for i in 0..order {
        let theta = PI * (2.0 * i as f64 + order as f64 + 1.0) / (2.0 * order as f64);
        let p = Complex64::new(theta.cos(), theta.sin());
        let half = p * (bw / 2.0);
        let disc = (half * half - Complex64::new(w0 * w0, 0.0)).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }

    // Bilinear transform; keep one representative per conjugate pair.
    let mut z_poles: Vec<Complex64> = analog_poles
        .iter()
        .map(|&s| (Complex64::new(k, 0.0) + s) / (Complex64::new(k, 0.0) - s))
        .filter(|z| z.im >= 0.0)
        .collect();
    if z_poles.len() != order {
        return Err(Error::FilterDesign(format!(
            "unexpected pole pairing ({} upper-half poles for order {order})",
            z_poles.len()
        )));
    }
    z_poles.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());

    // Each section gets the zero pair {+1, -1}: numerator z^2 - 1.
    let mut sections: Vec<Sos> = z_poles
        .iter()
        .map(|z| Sos {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: -2.0 * z.re,
            a2: z.norm_sqr(),
        })
        .collect();

    // Normalize to unit gain at the (digital) center frequency, spreading the
    // correction evenly across sections.
    let f_center = (w0 / k).atan() * fs_hz / PI;
    let mut filter = IirFilter {
        sections: sections.clone(),
        kind: FilterKind::Bandpass {
            low_hz,
            high_hz,
            order,
        },
        fs_hz,
    };
    let mag = filter.magnitude_at(f_center);
    if !(mag.is_finite() && mag > 0.0) {
        return Err(Error::FilterDesign("degenerate center-frequency gain".into()));
    }
    let per_section = (1.0 / mag).powf(1.0 / sections.len() as f64);
    for s in &mut sections {
        s.b0 *= per_section;
        s.b1 *= per_section;
        s.b2 *= per_section;
    }
    filter.sections = sections;

    if !filter.is_stable() {
        return Err(Error::FilterDesign(format!(
            "unstable band-pass design (low={low_hz}, high={high_hz}, fs={fs_hz}, order={order})"
        )));
    }
    Ok(filter)
}

/// Constrained biquad notch at `f0_hz` with quality factor `q`.
pub fn design_notch(f0_hz: f64, q: f64, fs_hz: f64) -> Result<IirFilter> {
    if !(fs_hz > 0.0) || !(q > 0.0) {
        return Err(Error::FilterDesign(format!(
            "fs and q must be positive (got fs={fs_hz}, q={q})"
        )));
    }
    if !(0.0 < f0_hz && f0_hz < fs_hz / 2.0) {
        return Err(Error::FilterDesign(format!(
            "notch frequency must satisfy 0 < f0 < fs/2 (got f0={f0_hz}, fs={fs_hz})"
        )));
    }
    let w0 = 2.0 * PI * f0_hz / fs_hz;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let filter = IirFilter {
        sections: vec![Sos {
            b0: 1.0 / a0,
            b1: -2.0 * w0.cos() / a0,
            b2: 1.0 / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
        }],
        kind: FilterKind::Notch { f0_hz, q },
        fs_hz,
    };
    debug_assert!(filter.is_stable());
    Ok(filter)
}

/// Steady-state (unit step) state for one section in DF2T form.
fn step_steady_state(s: &Sos) -> (f64, f64) {
    let den = 1.0 + s.a1 + s.a2;
    if den.abs() < 1e-300 {
        return (0.0, 0.0);
    }
    let g = (s.b0 + s.b1 + s.b2) / den;
    (g - s.b0, s.b2 - s.a2 * g)
}

/// Run the cascade once over `x` in place, seeding each section with its
/// steady-state response to the buffer's first sample.
fn sosfilt_steady(sections: &[Sos], x: &mut [f64]) {
    for s in sections {
        let (zi1, zi2) = step_steady_state(s);
        let mut z1 = zi1 * x[0];
        let mut z2 = zi2 * x[0];
        for v in x.iter_mut() {
            let xin = *v;
            let y = s.b0 * xin + z1;
            z1 = s.b1 * xin - s.a1 * y + z2;
            z2 = s.b2 * xin - s.a2 * y;
            *v = y;
        }
    }
}

/// Minimum signal length accepted by [`filtfilt`] for this filter.
pub fn filtfilt_min_len(filter: &IirFilter) -> usize {
    3 * (2 * filter.sections.len() + 1) + 1
}

/// Samples for the slowest pole's envelope to decay to 1e-4, padding target.
fn transient_length(filter: &IirFilter) -> usize {
    let r_max = filter
        .sections
        .iter()
        .flat_map(|s| s.pole_radii())
        .fold(0.0f64, f64::max);
    if r_max <= 1e-3 || r_max >= 1.0 {
        return 0;
    }
    ((1e-4f64).ln() / r_max.ln()).ceil() as usize
}

/// Zero-phase forward-backward filtering with odd-reflection edge padding.
///
/// Padding extends to the filter's transient length when the signal allows,
/// so edge ringing dies inside the padding rather than in the kept samples.
pub fn filtfilt(filter: &IirFilter, signal: &[f64]) -> Result<Vec<f64>> {
    let min_pad = 3 * (2 * filter.sections.len() + 1);
    if signal.len() <= min_pad {
        return Err(Error::SignalTooShort(format!(
            "filtfilt needs more than {min_pad} samples, got {}",
            signal.len()
        )));
    }
    let n = signal.len();
    let pad = transient_length(filter).max(min_pad).min(n - 1);
    let mut buf = Vec::with_capacity(n + 2 * pad);
    let first = signal[0];
    let last = signal[n - 1];
    for i in (1..=pad).rev() {
        buf.push(2.0 * first - signal[i]);
    }
    buf.extend_from_slice(signal);
    for i in 1..=pad {
        buf.push(2.0 * last - signal[n - 1 - i]);
    }

    sosfilt_steady(&filter.sections, &mut buf);
    buf.reverse();
    sosfilt_steady(&filter.sections, &mut buf);
    buf.reverse();

    Ok(buf[pad..pad + n].to_vec())
}

/// Rational resampler `up/down` with a polyphase windowed-sinc kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplerSpec {
    pub up: u32,
    pub down: u32,
    /// Anti-alias FIR taps (odd length, centered); `[1.0]` when up == down.
    pub taps: Vec<f64>,
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl ResamplerSpec {
    pub fn rational(up: u32, down: u32) -> Result<Self> {
        if up == 0 || down == 0 {
            return Err(Error::InvalidArgument(format!(
                "resampler ratio must be positive (got {up}/{down})"
            )));
        }
        let g = gcd(up, down);
        let (up, down) = (up / g, down / g);
        if up == 1 && down == 1 {
            return Ok(ResamplerSpec {
                up,
                down,
                taps: vec![1.0],
            });
        }

        // Kernel at the upsampled rate: cutoff 0.9 and stopband edge 1.0 of
        // the limiting Nyquist min(pi/up, pi/down); Hamming main-lobe width
        // sets the tap count for the 0.2 transition fraction.
        let limit = 1.0 / up.max(down) as f64; // limiting Nyquist / (fs_up/2)
        let transition = 0.2 * limit * PI;
        let mut n_taps = (6.6 * PI / transition).ceil() as usize;
        if n_taps % 2 == 0 {
            n_taps += 1;
        }
        let wc = 0.9 * limit * PI;
        let mid = (n_taps - 1) as f64 / 2.0;
        let mut taps: Vec<f64> = (0..n_taps)
            .map(|i| {
                let t = i as f64 - mid;
                let sinc = if t == 0.0 {
                    wc / PI
                } else {
                    (wc * t).sin() / (PI * t)
                };
                let window =
                    0.54 - 0.46 * (2.0 * PI * i as f64 / (n_taps - 1) as f64).cos();
                sinc * window
            })
            .collect();

        // Normalize each polyphase branch to unit sum so constant signals are
        // reproduced exactly at every output phase.
        for phase in 0..up as usize {
            let sum: f64 = taps.iter().skip(phase).step_by(up as usize).sum();
            if sum.abs() < 1e-12 {
                return Err(Error::FilterDesign(
                    "degenerate polyphase branch in resampler kernel".into(),
                ));
            }
            for tap in taps.iter_mut().skip(phase).step_by(up as usize) {
                *tap /= sum;
            }
        }

        Ok(ResamplerSpec { up, down, taps })
    }

    /// Build the spec converting `fs_in` to `fs_out`, rationalizing the ratio.
    pub fn for_rates(fs_in_hz: f64, fs_out_hz: f64) -> Result<Self> {
        if !(fs_in_hz > 0.0 && fs_out_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample rates must be positive (got {fs_in_hz} -> {fs_out_hz})"
            )));
        }
        let ratio = fs_out_hz / fs_in_hz;
        // Smallest denominator <= 4096 reproducing the ratio to 1e-9.
        for den in 1..=4096u32 {
            let num = (ratio * den as f64).round();
            if num >= 1.0 && (num / den as f64 - ratio).abs() < 1e-9 {
                return Self::rational(num as u32, den);
            }
        }
        Err(Error::InvalidArgument(format!(
            "cannot express rate conversion {fs_in_hz} -> {fs_out_hz} as a small rational ratio"
        )))
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up as usize) / self.down as usize
    }

    /// Kernel magnitude response at normalized frequency (1.0 = upsampled
    /// Nyquist). Unit passband corresponds to a per-phase-normalized kernel.
    pub fn kernel_magnitude(&self, normalized: f64) -> f64 {
        let omega = normalized * PI;
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &t) in self.taps.iter().enumerate() {
            acc += Complex64::from_polar(t, -omega * i as f64);
        }
        acc.norm() / self.up as f64
    }
}

/// Resample a signal; output length is `floor(len * up / down)`. Edges are
/// handled by replicating the first/last sample.
pub fn resample(signal: &[f64], spec: &ResamplerSpec) -> Result<Vec<f64>> {
    if signal.len() < spec.down as usize {
        return Err(Error::SignalTooShort(format!(
            "resample needs at least {} samples, got {}",
            spec.down,
            signal.len()
        )));
    }
    if spec.up == spec.down {
        return Ok(signal.to_vec());
    }
    let up = spec.up as i64;
    let down = spec.down as i64;
    let n_in = signal.len() as i64;
    let n_out = spec.output_len(signal.len());
    let delay = (spec.taps.len() as i64 - 1) / 2;

    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out as i64 {
        // y[m] = sum_k h[k] * xu[m*down + delay - k], xu = zero-stuffed input.
        let center = m * down + delay;
        let mut acc = 0.0;
        // Smallest tap index k with (center - k) % up == 0.
        let mut k = center % up;
        while k < spec.taps.len() as i64 {
            let i = (center - k) / up;
            let x = signal[i.clamp(0, n_in - 1) as usize];
            acc += spec.taps[k as usize] * x;
            k += up;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Preprocessing parameters for the trial chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    pub bandpass_low_hz: f64,
    pub bandpass_high_hz: f64,
    pub bandpass_order: usize,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub target_rate_hz: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            bandpass_low_hz: 1.0,
            bandpass_high_hz: 50.0,
            bandpass_order: 4,
            notch_hz: 50.0,
            notch_q: 30.0,
            target_rate_hz: 200.0,
        }
    }
}

/// Band-pass, notch, then resample every channel to the target rate.
pub fn preprocess_trial(trial: &RawTrial, cfg: &DspConfig) -> Result<RawTrial> {
    let fs = trial.sample_rate_hz;
    let bandpass = design_bandpass(
        cfg.bandpass_low_hz,
        cfg.bandpass_high_hz,
        fs,
        cfg.bandpass_order,
    )?;
    let notch = design_notch(cfg.notch_hz, cfg.notch_q, fs)?;
    let resampler = ResamplerSpec::for_rates(fs, cfg.target_rate_hz)?;

    let n_channels = trial.data.nrows();
    let n_out = resampler.output_len(trial.data.ncols());
    let mut out = ndarray::Array2::<f64>::zeros((n_channels, n_out));
    for (ch, row) in trial.data.rows().into_iter().enumerate() {
        let x: Vec<f64> = row.to_vec();
        let x = filtfilt(&bandpass, &x)?;
        let x = filtfilt(&notch, &x)?;
        let x = resample(&x, &resampler)?;
        out.row_mut(ch).assign(&ndarray::ArrayView1::from(&x));
    }
    RawTrial::new(
        trial.subject_id,
        trial.block_id,
        trial.trial_id,
        trial.device,
        trial.label,
        cfg.target_rate_hz,
        out,
    )
}

/// Preprocess a batch of trials (parallel when the `parallel` feature is on).
pub fn preprocess_trials(trials: &[RawTrial], cfg: &DspConfig) -> Result<Vec<RawTrial>> {
    crate::par::try_map(trials, |t| preprocess_trial(t, cfg))
}

/// Always-sequential variant of [`preprocess_trials`], for benchmarking.
pub fn preprocess_trials_seq(trials: &[RawTrial], cfg: &DspConfig) -> Result<Vec<RawTrial>> {
    crate::par::try_map_seq(trials, |t| preprocess_trial(t, cfg))
}
