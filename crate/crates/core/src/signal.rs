//! Sampled dual-polarization complex envelope and the spectral primitives
//! every other stage is built from.
//!
//! Amplitudes are in sqrt(W), so `mean(|ex|^2 + |ey|^2)` is the optical (or
//! electrical-equivalent) power in watts. All spectral operations treat the
//! sample sequence as one period of a periodic signal.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::units::{db_to_amplitude, watts_to_dbm};

/// Frequency interval outside of which a field carries negligible energy.
///
/// Stages keep it up to date so that frequency shifts can be checked for
/// wrap-around without a transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Self {
        Band { lo: lo.min(hi), hi: lo.max(hi) }
    }

    pub fn symmetric(half_width: f64) -> Self {
        Band::new(-half_width, half_width)
    }

    pub fn point(f: f64) -> Self {
        Band { lo: f, hi: f }
    }

    pub fn full(sample_rate: f64) -> Self {
        Band::symmetric(sample_rate / 2.0)
    }

    pub fn shifted(self, df: f64) -> Self {
        Band { lo: self.lo + df, hi: self.hi + df }
    }

    pub fn union(self, other: Band) -> Self {
        Band { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn clamp_to(self, sample_rate: f64) -> Self {
        let n = sample_rate / 2.0;
        Band { lo: self.lo.clamp(-n, n), hi: self.hi.clamp(-n, n) }
    }

    pub fn fits(&self, sample_rate: f64) -> bool {
        let n = sample_rate / 2.0 * (1.0 + 1e-9);
        self.lo >= -n && self.hi <= n
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Complex amplitude gain as a function of frequency (Hz, relative to the
/// center the transfer is applied at).
#[derive(Clone)]
pub struct SpectralTransfer {
    eval: Arc<dyn Fn(f64) -> Complex64 + Send + Sync>,
}

impl SpectralTransfer {
    pub fn new(f: impl Fn(f64) -> Complex64 + Send + Sync + 'static) -> Self {
        SpectralTransfer { eval: Arc::new(f) }
    }

    /// Zero-phase transfer from a real magnitude response.
    pub fn magnitude(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        SpectralTransfer::new(move |x| Complex64::new(f(x), 0.0))
    }

    pub fn unity() -> Self {
        SpectralTransfer::constant(Complex64::new(1.0, 0.0))
    }

    pub fn constant(c: Complex64) -> Self {
        SpectralTransfer::new(move |_| c)
    }

    /// Ideal pass band `[lo, hi]`, zero elsewhere.
    pub fn brick_wall(lo: f64, hi: f64) -> Self {
        SpectralTransfer::magnitude(move |f| if f >= lo && f <= hi { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn at(&self, f: f64) -> Complex64 {
        (self.eval)(f)
    }

    /// Cascade: the product of both responses.
    pub fn then(&self, next: &SpectralTransfer) -> SpectralTransfer {
        let a = self.eval.clone();
        let b = next.eval.clone();
        SpectralTransfer::new(move |f| a(f) * b(f))
    }

    /// The same response evaluated around `center` instead of zero.
    pub fn recentered(&self, center: f64) -> SpectralTransfer {
        let a = self.eval.clone();
        SpectralTransfer::new(move |f| a(f - center))
    }
}

impl fmt::Debug for SpectralTransfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SpectralTransfer(..)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    ex: Vec<Complex64>,
    ey: Vec<Complex64>,
    sample_rate: f64,
    center_offset: f64,
    support: Band,
}

impl SampledField {
    /// Builds a field whose spectral support is assumed to fill the band.
    pub fn new(ex: Vec<Complex64>, ey: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if ex.len() != ey.len() {
            return Err(Error::LengthMismatch(ex.len(), ey.len()));
        }
        if ex.len() < 2 {
            return Err(Error::InvalidField(format!("need at least 2 samples, got {}", ex.len())));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidField(format!("sample rate {sample_rate}")));
        }
        if ex.iter().chain(&ey).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidField("non-finite sample".into()));
        }
        Ok(SampledField { ex, ey, sample_rate, center_offset: 0.0, support: Band::full(sample_rate) })
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Result<Self> {
        let z = vec![Complex64::new(0.0, 0.0); len];
        Ok(SampledField::new(z.clone(), z, sample_rate)?.with_support(Band::point(0.0)))
    }

    pub fn with_support(mut self, support: Band) -> Self {
        self.support = support.clamp_to(self.sample_rate);
        self
    }

    pub fn with_center_offset(mut self, center_offset: f64) -> Self {
        self.center_offset = center_offset;
        self
    }

    pub fn ex(&self) -> &[Complex64] {
        &self.ex
    }

    pub fn ey(&self) -> &[Complex64] {
        &self.ey
    }

    pub fn pol(&self, p: usize) -> &[Complex64] {
        if p == 0 {
            &self.ex
        } else {
            &self.ey
        }
    }

    pub fn len(&self) -> usize {
        self.ex.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ex.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Nominal carrier of the content relative to the channel center.
    pub fn center_offset(&self) -> f64 {
        self.center_offset
    }

    pub fn support(&self) -> Band {
        self.support
    }

    pub fn into_pols(self) -> (Vec<Complex64>, Vec<Complex64>) {
        (self.ex, self.ey)
    }

    /// Same metadata, new samples. Lengths must match the original.
    pub(crate) fn with_samples(&self, ex: Vec<Complex64>, ey: Vec<Complex64>) -> Self {
        debug_assert_eq!(ex.len(), self.ex.len());
        debug_assert_eq!(ey.len(), self.ey.len());
        SampledField { ex, ey, sample_rate: self.sample_rate, center_offset: self.center_offset, support: self.support }
    }

    pub fn map_samples(&self, f: impl Fn(usize, Complex64) -> Complex64) -> Self {
        let ex = self.ex.iter().enumerate().map(|(i, &v)| f(i, v)).collect();
        let ey = self.ey.iter().enumerate().map(|(i, &v)| f(i, v)).collect();
        SampledField { ex, ey, sample_rate: self.sample_rate, center_offset: self.center_offset, support: self.support }
    }

    /// Mean total power in watts.
    pub fn mean_power(&self) -> f64 {
        let s: f64 = self.ex.iter().chain(&self.ey).map(|v| v.norm_sqr()).sum();
        s / self.len() as f64
    }

    pub fn pol_power(&self, p: usize) -> f64 {
        self.pol(p).iter().map(|v| v.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    /// Power in dBm; `-inf` for an all-zero field.
    pub fn power_dbm(&self) -> f64 {
        watts_to_dbm(self.mean_power())
    }

    pub fn scaled(&self, gain: f64) -> Self {
        self.map_samples(|_, v| v * gain)
    }

    /// Uniformly rescales to `target_dbm`.
    pub fn set_power(&self, target_dbm: f64) -> Result<Self> {
        let p = self.mean_power();
        if p <= 0.0 {
            return Err(Error::ZeroPower);
        }
        let gain = db_to_amplitude(target_dbm - watts_to_dbm(p));
        Ok(self.scaled(gain))
    }

    /// Multiplies by `exp(j 2 pi df t)`, moving the spectrum up by `df`.
    pub fn frequency_shift(&self, df: f64) -> Result<Self> {
        let support = self.support.shifted(df);
        if df != 0.0 && !support.fits(self.sample_rate) {
            return Err(Error::Aliasing { lo: support.lo, hi: support.hi, nyquist: self.sample_rate / 2.0 });
        }
        let mut out = self.rotate(df);
        out.support = support;
        out.center_offset = self.center_offset + df;
        Ok(out)
    }

    /// Unchecked frequency rotation; support and center bookkeeping untouched.
    pub(crate) fn rotate(&self, df: f64) -> Self {
        if df == 0.0 {
            return self.clone();
        }
        let step = df / self.sample_rate;
        self.map_samples(|n, v| v * phasor(step, n))
    }

    /// Per-polarization DFT, multiply by `h(f - center)`, inverse DFT.
    pub fn apply_transfer(&self, h: &SpectralTransfer, center: f64) -> Self {
        self.spectral_pass(Some((h, center)), self.sample_rate, false)
            .expect("same-rate spectral pass cannot alias")
    }

    /// Band-limited (DFT-domain) interpolation to `new_rate`.
    ///
    /// Fails when more than -40 dBc of the energy sits above the new Nyquist
    /// frequency; callers must band-limit first.
    pub fn resample(&self, new_rate: f64) -> Result<Self> {
        self.spectral_pass(None, new_rate, true)
    }

    /// Filter with `h` and resample in a single transform pair. Energy the
    /// filter leaves above the new Nyquist frequency is discarded, so `h`
    /// acts as the anti-alias response.
    pub fn filter_resample(&self, h: &SpectralTransfer, center: f64, new_rate: f64) -> Result<Self> {
        self.spectral_pass(Some((h, center)), new_rate, false)
    }

    fn spectral_pass(&self, h: Option<(&SpectralTransfer, f64)>, new_rate: f64, check_alias: bool) -> Result<Self> {
        let n = self.len();
        let ratio = new_rate / self.sample_rate;
        let m_f = n as f64 * ratio;
        let m = m_f.round() as usize;
        if !(new_rate > 0.0) || (m_f - m as f64).abs() > 1e-6 * m_f.max(1.0) || m < 2 {
            return Err(Error::InvalidParameter(format!(
                "cannot resample {n} samples from {} to {new_rate} Hz",
                self.sample_rate
            )));
        }
        let mut xs = self.ex.clone();
        let mut ys = self.ey.clone();
        fft::forward(&mut xs);
        fft::forward(&mut ys);
        if let Some((h, center)) = h {
            for k in 0..n {
                let g = h.at(fft::bin_frequency(k, n, self.sample_rate) - center);
                xs[k] *= g;
                ys[k] *= g;
            }
        }
        if m == n {
            fft::inverse(&mut xs);
            fft::inverse(&mut ys);
            return Ok(self.with_samples(xs, ys));
        }
        if check_alias && m < n {
            let total: f64 = xs.iter().chain(&ys).map(|v| v.norm_sqr()).sum();
            let half = (m / 2) as i64;
            let outside: f64 = (0..n)
                .filter(|&k| fft::signed_bin(k, n).abs() > half)
                .map(|k| xs[k].norm_sqr() + ys[k].norm_sqr())
                .sum();
            if total > 0.0 && outside / total > 1e-4 {
                return Err(Error::ResampleAliasing(10.0 * (outside / total).log10()));
            }
        }
        let scale = m as f64 / n as f64;
        let mut ex = respectrum(&xs, m, scale);
        let mut ey = respectrum(&ys, m, scale);
        fft::inverse(&mut ex);
        fft::inverse(&mut ey);
        Ok(SampledField {
            ex,
            ey,
            sample_rate: new_rate,
            center_offset: self.center_offset,
            support: self.support.clamp_to(new_rate),
        })
    }

}

/// `exp(j 2 pi step n)` with the phase reduced to one cycle before scaling.
#[inline]
pub(crate) fn phasor(step: f64, n: usize) -> Complex64 {
    let cycles = (step * n as f64).fract();
    let (s, c) = (TAU * cycles).sin_cos();
    Complex64::new(c, s)
}

/// Maps a length-`n` spectrum onto `m` bins, keeping the common low band.
fn respectrum(x: &[Complex64], m: usize, scale: f64) -> Vec<Complex64> {
    let n = x.len();
    let mut y = vec![Complex64::new(0.0, 0.0); m];
    let keep = n.min(m);
    let half = (keep / 2) as i64;
    let even = keep % 2 == 0;
    let inner = if even { half - 1 } else { half };
    for s in -inner..=inner {
        y[fft::wrap_bin(s, m)] = x[fft::wrap_bin(s, n)] * scale;
    }
    if even {
        if m < n {
            // fold both halves of the old band edge into the new Nyquist bin
            y[fft::wrap_bin(half, m)] = (x[fft::wrap_bin(half, n)] + x[fft::wrap_bin(-half, n)]) * scale;
        } else {
            // split the old Nyquist bin across the two new edge bins
            let v = x[fft::wrap_bin(half, n)] * (0.5 * scale);
            y[fft::wrap_bin(half, m)] = v;
            y[fft::wrap_bin(-half, m)] = v;
        }
    }
    y
}

/// Sum of fields, each first passed through its own transfer (evaluated
/// relative to zero frequency), using a single inverse transform per
/// polarization.
pub fn filtered_sum(parts: &[(&SampledField, &SpectralTransfer)]) -> Result<SampledField> {
    let (first, _) = parts
        .first()
        .ok_or_else(|| Error::InvalidParameter("filtered_sum needs at least one field".into()))?;
    let n = first.len();
    let fs = first.sample_rate;
    let mut acc = [vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n]];
    let mut support: Option<Band> = None;
    for (field, h) in parts {
        if field.sample_rate != fs {
            return Err(Error::RateMismatch(fs, field.sample_rate));
        }
        if field.len() != n {
            return Err(Error::LengthMismatch(n, field.len()));
        }
        let gains: Vec<Complex64> = (0..n).map(|k| h.at(fft::bin_frequency(k, n, fs))).collect();
        for (p, sum) in acc.iter_mut().enumerate() {
            let mut spec = field.pol(p).to_vec();
            fft::forward(&mut spec);
            for ((a, s), g) in sum.iter_mut().zip(&spec).zip(&gains) {
                *a += s * g;
            }
        }
        support = Some(support.map_or(field.support, |b| b.union(field.support)));
    }
    let [mut ex, mut ey] = acc;
    fft::inverse(&mut ex);
    fft::inverse(&mut ey);
    Ok(SampledField {
        ex,
        ey,
        sample_rate: fs,
        center_offset: first.center_offset,
        support: support.expect("at least one part"),
    })
}

/// Element-wise sum of fields that already sit at their slot offsets.
///
/// The result keeps the first field's `center_offset`.
pub fn superpose(fields: &[&SampledField]) -> Result<SampledField> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidParameter("superpose needs at least one field".into()))?;
    let mut ex = first.ex.clone();
    let mut ey = first.ey.clone();
    let mut support = first.support;
    for f in &fields[1..] {
        if f.sample_rate != first.sample_rate {
            return Err(Error::RateMismatch(first.sample_rate, f.sample_rate));
        }
        if f.len() != first.len() {
            return Err(Error::LengthMismatch(first.len(), f.len()));
        }
        for (a, b) in ex.iter_mut().zip(&f.ex) {
            *a += b;
        }
        for (a, b) in ey.iter_mut().zip(&f.ey) {
            *a += b;
        }
        support = support.union(f.support);
    }
    Ok(SampledField { ex, ey, sample_rate: first.sample_rate, center_offset: first.center_offset, support })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn noise_field(n: usize, fs: f64, seed: u64) -> SampledField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || c(rng.sample(StandardNormal), rng.sample(StandardNormal)) * 1e-3;
        let ex = (0..n).map(|_| draw()).collect();
        let ey = (0..n).map(|_| draw()).collect();
        SampledField::new(ex, ey, fs).unwrap()
    }

    /// Power per DFT bin, normalized so the sum equals the mean power.
    fn periodogram(x: &[Complex64]) -> Vec<f64> {
        let mut s = x.to_vec();
        fft::forward(&mut s);
        let n2 = (x.len() * x.len()) as f64;
        s.iter().map(|v| v.norm_sqr() / n2).collect()
    }

    fn band_power(p: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
        let n = p.len();
        (0..n)
            .filter(|&k| {
                let f = fft::bin_frequency(k, n, fs);
                f >= lo && f < hi
            })
            .map(|k| p[k])
            .sum()
    }

    fn rel_err(a: &SampledField, b: &SampledField) -> f64 {
        let num: f64 = a.ex.iter().zip(&b.ex).chain(a.ey.iter().zip(&b.ey)).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.ex.iter().chain(&b.ey).map(|v| v.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn power_of_one_milliwatt_is_zero_dbm() {
        let ex = vec![c(1e-3f64.sqrt(), 0.0); 16];
        let f = SampledField::new(ex, vec![c(0.0, 0.0); 16], 1.0).unwrap();
        assert!(f.power_dbm().abs() < 1e-12);
        let half = f.scaled(0.5);
        assert!((f.power_dbm() - half.power_dbm() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn zero_field_is_negative_infinity() {
        let f = SampledField::zeros(8, 1.0).unwrap();
        assert_eq!(f.power_dbm(), f64::NEG_INFINITY);
        assert_eq!(f.set_power(0.0), Err(Error::ZeroPower));
    }

    #[test]
    fn field_validation() {
        assert!(SampledField::new(vec![c(0.0, 0.0); 3], vec![c(0.0, 0.0); 2], 1.0).is_err());
        assert!(SampledField::new(vec![c(0.0, 0.0); 1], vec![c(0.0, 0.0); 1], 1.0).is_err());
        assert!(SampledField::new(vec![c(0.0, 0.0); 2], vec![c(0.0, 0.0); 2], 0.0).is_err());
        assert!(SampledField::new(vec![c(f64::NAN, 0.0); 2], vec![c(0.0, 0.0); 2], 1.0).is_err());
    }

    #[test]
    fn set_power_examples() {
        let f = noise_field(64, 1.0, 1).set_power(0.0).unwrap();
        let same = f.set_power(0.0).unwrap();
        assert!(rel_err(&same, &f) < 1e-12);
        let low = f.set_power(-3.0).unwrap();
        let g = db_to_amplitude(-3.0);
        assert!((low.ex[5] - f.ex[5] * g).norm() < 1e-15);
        let modulator = f.set_power(-8.0).unwrap();
        let launched = modulator.set_power(0.0).unwrap();
        let gain_db = 20.0 * (launched.ex[3].norm() / modulator.ex[3].norm()).log10();
        assert!((gain_db - 8.0).abs() < 1e-9);
    }

    #[test]
    fn shift_moves_tone_peak() {
        let fs = 480e9;
        let n = 4800;
        let tone = SampledField::new(vec![c(1.0, 0.0); n], vec![c(0.0, 0.0); n], fs)
            .unwrap()
            .with_support(Band::point(0.0));
        let shifted = tone.frequency_shift(16.5e9).unwrap();
        let p = periodogram(shifted.ex());
        let peak = (0..n).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert!((fft::bin_frequency(peak, n, fs) - 16.5e9).abs() < fs / n as f64);
        assert_eq!(shifted.center_offset(), 16.5e9);
        assert_eq!(tone.frequency_shift(0.0).unwrap(), tone);
    }

    #[test]
    fn shift_round_trip() {
        let f = noise_field(4096, 480e9, 2).with_support(Band::symmetric(20e9));
        let back = f.frequency_shift(10e9).unwrap().frequency_shift(-10e9).unwrap();
        assert!(rel_err(&back, &f) < 1e-12);
    }

    #[test]
    fn shift_out_of_band_is_rejected() {
        let f = noise_field(64, 100e9, 3).with_support(Band::symmetric(20e9));
        assert!(matches!(f.frequency_shift(40e9), Err(Error::Aliasing { .. })));
        assert!(f.frequency_shift(25e9).is_ok());
    }

    #[test]
    fn unity_and_constant_phase_transfer() {
        let f = noise_field(1024, 1e9, 4);
        let id = f.apply_transfer(&SpectralTransfer::unity(), 0.0);
        assert!(rel_err(&id, &f) < 1e-12);
        let phi = 0.7;
        let rot = f.apply_transfer(&SpectralTransfer::constant(Complex64::from_polar(1.0, phi)), 0.0);
        assert!((rot.power_dbm() - f.power_dbm()).abs() < 1e-10);
        let expect = f.ex[10] * Complex64::from_polar(1.0, phi);
        assert!((rot.ex[10] - expect).norm() < 1e-12);
    }

    #[test]
    fn brick_wall_half_band_matches_parseval() {
        let fs = 480e9;
        let f = noise_field(1 << 15, fs, 5);
        let pass = SpectralTransfer::brick_wall(-fs / 4.0, fs / 4.0 - 1.0);
        let out = f.apply_transfer(&pass, 0.0);
        // oracle: integrate the input periodogram over the passband
        let expected: f64 = [f.ex(), f.ey()]
            .iter()
            .map(|x| band_power(&periodogram(x), fs, -fs / 4.0, fs / 4.0 - 1.0))
            .sum();
        assert!((out.mean_power() / expected - 1.0).abs() < 1e-9);
        let drop = f.power_dbm() - out.power_dbm();
        assert!((drop - 3.01).abs() < 0.05, "drop {drop}");
    }

    #[test]
    fn resample_identity_and_round_trip() {
        let f = noise_field(2048, 60e9, 6).apply_transfer(&SpectralTransfer::brick_wall(-25e9, 25e9), 0.0);
        assert!(rel_err(&f.resample(60e9).unwrap(), &f) < 1e-12);
        let up = f.resample(120e9).unwrap();
        assert_eq!(up.len(), 4096);
        let down = up.resample(60e9).unwrap();
        let evm_db = 20.0 * rel_err(&down, &f).log10();
        assert!(evm_db < -60.0, "{evm_db}");
    }

    #[test]
    fn resample_keeps_in_band_psd() {
        let fs = 480e9;
        let f = noise_field(1 << 15, fs, 7).apply_transfer(&SpectralTransfer::brick_wall(-25e9, 25e9), 0.0);
        let r = f.resample(60e9).unwrap();
        for p in 0..2 {
            let a = periodogram(f.pol(p));
            let b = periodogram(r.pol(p));
            let mut lo = -25e9;
            while lo < 25e9 {
                let pa = band_power(&a, fs, lo, lo + 1e9);
                let pb = band_power(&b, 60e9, lo, lo + 1e9);
                assert!((10.0 * (pb / pa).log10()).abs() < 0.05);
                lo += 1e9;
            }
        }
    }

    #[test]
    fn resample_detects_aliasing() {
        let f = noise_field(1024, 480e9, 8);
        assert!(matches!(f.resample(60e9), Err(Error::ResampleAliasing(_))));
        assert!(f.filter_resample(&SpectralTransfer::unity(), 0.0, 60e9).is_ok());
    }

    #[test]
    fn superpose_examples() {
        let a = noise_field(4096, 480e9, 9);
        assert_eq!(superpose(&[&a]).unwrap(), a);
        let twice = superpose(&[&a, &a]).unwrap();
        assert!((twice.power_dbm() - a.power_dbm() - 6.0206).abs() < 1e-3);

        let base = a.apply_transfer(&SpectralTransfer::brick_wall(-20e9, 20e9), 0.0).with_support(Band::symmetric(20e9));
        let lo = base.frequency_shift(-100e9).unwrap();
        let other = noise_field(4096, 480e9, 10)
            .apply_transfer(&SpectralTransfer::brick_wall(-20e9, 20e9), 0.0)
            .with_support(Band::symmetric(20e9));
        let hi = other.frequency_shift(100e9).unwrap();
        let sum = superpose(&[&lo, &hi]).unwrap();
        // disjoint spectra: powers add
        let expected = lo.mean_power() + hi.mean_power();
        assert!((10.0 * (sum.mean_power() / expected).log10()).abs() < 0.1);
    }

    #[test]
    fn superpose_rejects_mismatch() {
        let a = noise_field(64, 1e9, 11);
        let b = noise_field(32, 1e9, 12);
        let r = noise_field(64, 2e9, 13);
        assert!(matches!(superpose(&[&a, &b]), Err(Error::LengthMismatch(..))));
        assert!(matches!(superpose(&[&a, &r]), Err(Error::RateMismatch(..))));
    }

    proptest! {
        #[test]
        fn transfer_is_linear(sa in 0u64..1000, sb in 0u64..1000, ka in -3.0f64..3.0, kb in -3.0f64..3.0) {
            let x = noise_field(256, 1e9, sa);
            let y = noise_field(256, 1e9, sb + 1000);
            let h = SpectralTransfer::new(|f| Complex64::from_polar((-(f / 2e8).powi(2)).exp(), f * 1e-9));
            let lhs = superpose(&[&x.scaled(ka), &y.scaled(kb)]).unwrap().apply_transfer(&h, 0.1e9);
            let rhs = superpose(&[&x.apply_transfer(&h, 0.1e9).scaled(ka), &y.apply_transfer(&h, 0.1e9).scaled(kb)]).unwrap();
            prop_assert!(rel_err(&lhs, &rhs) < 1e-10);
        }

        #[test]
        fn shift_preserves_power(seed in 0u64..1000, df in -50e9f64..50e9) {
            let f = noise_field(512, 480e9, seed).with_support(Band::symmetric(10e9));
            let s = f.frequency_shift(df).unwrap();
            prop_assert!((s.mean_power() / f.mean_power() - 1.0).abs() < 1e-12);
            let back = s.frequency_shift(-df).unwrap();
            prop_assert!(rel_err(&back, &f) < 1e-12);
        }

        #[test]
        fn set_power_hits_target(seed in 0u64..1000, target in -60.0f64..30.0) {
            let f = noise_field(128, 1e9, seed);
            prop_assert!((f.set_power(target).unwrap().power_dbm() - target).abs() < 1e-9);
        }
    }
}
