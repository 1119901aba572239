//! Coherent receiver front end: LO mixing, analog bandwidth, calibrated
//! additive noise, AGC and quantization, plus the noise calibration search
//! and its on-disk cache.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{Band, SampledField, SpectralTransfer};
use crate::transmitter::{gaussian_lowpass, laser_field, LaserSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxConfig {
    pub lo: LaserSpec,
    pub analog_bw_3db: f64,
    /// `None` bypasses the quantizer (AGC still applies).
    pub adc_bits: Option<u32>,
    pub adc_sps: usize,
    pub agc_clip_factor: f64,
    /// W/Hz per quadrature.
    pub noise_psd: f64,
}

/// Full scale over the per-quadrature RMS of the total input.
pub const DEFAULT_CLIP_FACTOR: f64 = 2.0;

impl RxConfig {
    /// Two-laser ONU: intradyne, 22.5 GHz, 2 samples per symbol.
    pub fn intradyne(lo: LaserSpec) -> Self {
        RxConfig {
            lo,
            analog_bw_3db: 22.5e9,
            adc_bits: Some(6),
            adc_sps: 2,
            agc_clip_factor: DEFAULT_CLIP_FACTOR,
            noise_psd: 0.0,
        }
    }

    /// Single-laser ONU: the wanted signal sits on a subcarrier, so the
    /// front end is twice as wide and the ADC samples at 4 per symbol.
    pub fn subcarrier(lo: LaserSpec) -> Self {
        RxConfig { analog_bw_3db: 45e9, adc_sps: 4, ..RxConfig::intradyne(lo) }
    }

    pub fn validate(&self) -> Result<()> {
        self.lo.validate()?;
        if self.adc_bits == Some(0) || self.adc_sps < 1 {
            return Err(Error::InvalidParameter("ADC needs at least 1 bit and 1 sample per symbol".into()));
        }
        if !(self.agc_clip_factor > 0.0) || !(self.analog_bw_3db > 0.0) || !(self.noise_psd >= 0.0) {
            return Err(Error::InvalidParameter(format!("receiver {self:?}")));
        }
        Ok(())
    }

    pub fn adc_rate(&self, symbol_rate: f64) -> f64 {
        self.adc_sps as f64 * symbol_rate
    }
}

/// Dual-polarization hybrid against a unit-amplitude LO.
pub fn coherent_mix(sig: &SampledField, cfg: &RxConfig) -> Result<SampledField> {
    let lo = laser_field(&cfg.lo, sig.len(), sig.sample_rate())?;
    mix_with(sig, &lo)
}

/// As [`coherent_mix`] with a pre-generated LO field (phase taken from `ex`).
pub fn mix_with(sig: &SampledField, lo: &SampledField) -> Result<SampledField> {
    if lo.len() != sig.len() {
        return Err(Error::LengthMismatch(sig.len(), lo.len()));
    }
    if lo.sample_rate() != sig.sample_rate() {
        return Err(Error::RateMismatch(sig.sample_rate(), lo.sample_rate()));
    }
    let conj_unit: Vec<Complex64> = lo
        .ex()
        .iter()
        .map(|v| {
            let a = v.norm();
            if a > 0.0 {
                v.conj() / a
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let shift = -lo.center_offset();
    Ok(sig
        .map_samples(|n, v| v * conj_unit[n])
        .with_support(sig.support().shifted(shift).clamp_to(sig.sample_rate()))
        .with_center_offset(sig.center_offset() + shift))
}

/// Analog Gaussian response followed by sampling at the ADC rate; the
/// resampler's band edge is the anti-alias filter.
pub fn analog_frontend(field: &SampledField, cfg: &RxConfig, symbol_rate: f64) -> Result<SampledField> {
    let bw = cfg.analog_bw_3db;
    let h = SpectralTransfer::magnitude(move |f| gaussian_lowpass(f, bw));
    let rate = cfg.adc_rate(symbol_rate);
    let out = field.filter_resample(&h, 0.0, rate)?;
    let support = field.support().clamp_to(rate);
    Ok(out.with_support(support))
}

/// White circular Gaussian noise, `noise_psd` W/Hz in each quadrature of
/// each polarization, over the field's full sampled band.
pub fn add_rx_noise(field: &SampledField, noise_psd: f64, seed: u64) -> Result<SampledField> {
    if !(noise_psd >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise psd {noise_psd}")));
    }
    if noise_psd == 0.0 {
        return Ok(field.clone());
    }
    let sigma = (noise_psd * field.sample_rate()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |v: &Complex64| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        v + Complex64::new(re, im) * sigma
    };
    let ex = field.ex().iter().map(&mut draw).collect();
    let ey = field.ey().iter().map(&mut draw).collect();
    Ok(SampledField::new(ex, ey, field.sample_rate())?
        .with_support(Band::full(field.sample_rate()))
        .with_center_offset(field.center_offset()))
}

/// Mid-rise uniform quantizer with `2^bits` levels spanning
/// `[-full_scale, full_scale]`; inputs beyond full scale clip to the
/// outermost level. Odd-symmetric by construction.
pub fn quantize(x: f64, bits: u32, full_scale: f64) -> f64 {
    let levels = 2f64.powi(bits as i32);
    let step = 2.0 * full_scale / levels;
    let top = levels / 2.0 - 1.0;
    let k = (x.abs() / step).floor().min(top);
    x.signum() * step * (k + 0.5)
}

/// Resamples to the ADC rate when needed, then per polarization scales the
/// input so full scale is `agc_clip_factor` times the per-quadrature RMS
/// of everything present (signal, leak, noise) and quantizes I and Q.
/// Output is normalized to unit full scale.
pub fn agc_adc(field: &SampledField, cfg: &RxConfig, symbol_rate: f64) -> Result<SampledField> {
    cfg.validate()?;
    let rate = cfg.adc_rate(symbol_rate);
    let field = if field.sample_rate() == rate { field.clone() } else { field.resample(rate)? };
    let mut pols = [Vec::new(), Vec::new()];
    for (p, out) in pols.iter_mut().enumerate() {
        let power = field.pol_power(p);
        if !(power > 0.0) {
            return Err(Error::ZeroPower);
        }
        let full_scale = cfg.agc_clip_factor * (power / 2.0).sqrt();
        let g = 1.0 / full_scale;
        *out = match cfg.adc_bits {
            Some(bits) => field
                .pol(p)
                .iter()
                .map(|v| Complex64::new(quantize(v.re * g, bits, 1.0), quantize(v.im * g, bits, 1.0)))
                .collect(),
            None => field.pol(p).iter().map(|v| v * g).collect(),
        };
    }
    let [ex, ey] = pols;
    Ok(SampledField::new(ex, ey, rate)?
        .with_support(field.support())
        .with_center_offset(field.center_offset()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCalibration {
    pub noise_psd: f64,
    pub achieved_sensitivity: f64,
    pub achieved_ber: f64,
}

impl NoiseCalibration {
    /// Symbol SNR implied by the calibration for a dual-polarization
    /// signal: per-polarization power over the complex noise density.
    pub fn es_n0_db(&self, symbol_rate: f64) -> f64 {
        let per_pol = crate::units::dbm_to_watts(self.achieved_sensitivity) / 2.0;
        crate::units::linear_to_db(per_pol / (2.0 * self.noise_psd * symbol_rate))
    }
}

pub const TARGET_BER: f64 = 0.02;
pub const BER_TOLERANCE: f64 = 0.002;

/// Noise density that gives `es_n0_db` for a dual-polarization signal of
/// `power_dbm` at `symbol_rate`. Inverse of [`NoiseCalibration::es_n0_db`].
pub fn noise_psd_for(power_dbm: f64, es_n0_db: f64, symbol_rate: f64) -> f64 {
    let per_pol = crate::units::dbm_to_watts(power_dbm) / 2.0;
    per_pol / (2.0 * symbol_rate * crate::units::db_to_linear(es_n0_db))
}

/// Bisection in log(noise_psd) for BER = 2% at `sensitivity_dbm`.
///
/// `ber_at(psd)` runs the back-to-back chain. `bracket` is the initial
/// (low, high) psd pair; BER must be below target at `low` and above it at
/// `high`. The search stops once the BER is within tolerance and the
/// bracket is narrower than `0.005` dB, keeping the evaluated point closest
/// to target.
pub fn calibrate_noise(
    mut ber_at: impl FnMut(f64) -> Result<f64>,
    bracket: (f64, f64),
    sensitivity_dbm: f64,
) -> Result<NoiseCalibration> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!("calibration bracket {bracket:?}")));
    }
    let ber_lo = ber_at(lo)?;
    let ber_hi = ber_at(hi)?;
    if !(ber_lo <= TARGET_BER && ber_hi >= TARGET_BER) {
        return Err(Error::NotBracketed { lo, hi, ber_lo, ber_hi });
    }
    let mut best = if (ber_lo - TARGET_BER).abs() < (ber_hi - TARGET_BER).abs() { (lo, ber_lo) } else { (hi, ber_hi) };
    for _ in 0..60 {
        let within = (best.1 - TARGET_BER).abs() <= BER_TOLERANCE;
        if within && 10.0 * (hi / lo).log10() < 0.005 {
            break;
        }
        let mid = (lo * hi).sqrt();
        let ber = ber_at(mid)?;
        if (ber - TARGET_BER).abs() < (best.1 - TARGET_BER).abs() {
            best = (mid, ber);
        }
        if ber < TARGET_BER {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - TARGET_BER).abs() > BER_TOLERANCE {
        return Err(Error::CalibrationMiss { noise_psd: best.0, ber: best.1 });
    }
    Ok(NoiseCalibration { noise_psd: best.0, achieved_sensitivity: sensitivity_dbm, achieved_ber: best.1 })
}

/// Calibration results keyed by a digest of the receiver chain description.
///
/// Text format, one record per line, whitespace separated:
/// `key noise_psd sensitivity_dbm ber`; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationCache {
    records: BTreeMap<String, NoiseCalibration>,
}

/// Stable 128-bit hex digest of a chain description.
pub fn calibration_key(description: &str) -> String {
    let digest = Sha256::digest(description.as_bytes());
    digest[..16].iter().fold(String::with_capacity(32), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl CalibrationCache {
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let cols: Vec<&str> = content.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(Error::CalibrationRecord { line, message: format!("expected 4 fields, found {}", cols.len()) });
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::CalibrationRecord { line, message: format!("`{s}` is not a number") })
            };
            records.insert(
                cols[0].to_string(),
                NoiseCalibration { noise_psd: num(cols[1])?, achieved_sensitivity: num(cols[2])?, achieved_ber: num(cols[3])? },
            );
        }
        Ok(CalibrationCache { records })
    }

    /// Missing file reads as an empty cache.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => CalibrationCache::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(CalibrationCache::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# key noise_psd_w_per_hz sensitivity_dbm ber\n");
        for (k, c) in &self.records {
            // {:e} round-trips f64 exactly
            let _ = writeln!(s, "{k} {:e} {:e} {:e}", c.noise_psd, c.achieved_sensitivity, c.achieved_ber);
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<NoiseCalibration> {
        self.records.get(key).copied()
    }

    pub fn insert(&mut self, key: String, cal: NoiseCalibration) {
        self.records.insert(key, cal);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft;
    use proptest::prelude::*;
    use std::f64::consts::{PI, TAU};

    const FS: f64 = 480e9;

    fn cw(n: usize, detuning: f64, linewidth: f64, seed: u64) -> SampledField {
        laser_field(&LaserSpec::new(0.0, linewidth, detuning, seed), n, FS).unwrap()
    }

    fn quiet_lo(detuning: f64) -> RxConfig {
        RxConfig::intradyne(LaserSpec::new(16.0, 0.0, detuning, 5))
    }

    #[test]
    fn noiseless_mix_has_constant_rotation() {
        let sig = cw(4096, 3e9, 0.0, 1);
        let out = coherent_mix(&sig, &quiet_lo(3e9)).unwrap();
        let p0 = out.ex()[0].arg();
        for v in out.ex() {
            let d = (v.arg() - p0 + PI).rem_euclid(TAU) - PI;
            assert!(d.abs() < 1e-9);
        }
        assert!((out.center_offset()).abs() < 1e-6);
    }

    #[test]
    fn lo_detuning_error_moves_spectrum_down() {
        let n = 4800;
        let sig = cw(n, 0.0, 0.0, 1);
        let out = coherent_mix(&sig, &quiet_lo(1e9)).unwrap();
        let mut s = out.ex().to_vec();
        fft::forward(&mut s);
        let k = (0..n).max_by(|&a, &b| s[a].norm().total_cmp(&s[b].norm())).unwrap();
        assert!((fft::bin_frequency(k, n, FS) + 1e9).abs() < 1.0);
    }

    #[test]
    fn phase_noise_variances_add() {
        let n = 400_000;
        let sig = cw(n, 0.0, 1e6, 11);
        let cfg = RxConfig::intradyne(LaserSpec::new(16.0, 1e6, 0.0, 12));
        let out = coherent_mix(&sig, &cfg).unwrap();
        let incs: Vec<f64> = out.ex().windows(2).map(|w| (w[1] * w[0].conj()).arg()).collect();
        let var = incs.iter().map(|d| d * d).sum::<f64>() / incs.len() as f64;
        let expected = TAU * 2e6 / FS;
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn rx_noise_examples() {
        let n = 1 << 16;
        let fs = 60e9;
        let zero = SampledField::zeros(n, fs).unwrap();
        let sig = cw(n, 0.0, 0.0, 3);
        assert_eq!(add_rx_noise(&sig, 0.0, 1).unwrap(), sig);

        let psd = 1e-18;
        let noise = add_rx_noise(&zero, psd, 9).unwrap();
        // periodogram over a 20 GHz sub-band, I quadrature of x
        let mut s: Vec<Complex64> = noise.ex().iter().map(|v| Complex64::new(v.re, 0.0)).collect();
        fft::forward(&mut s);
        let b = 20e9;
        let in_band: f64 = (0..n)
            .filter(|&k| fft::bin_frequency(k, n, fs).abs() < b / 2.0)
            .map(|k| s[k].norm_sqr())
            .sum::<f64>()
            / (n as f64 * n as f64);
        assert!((in_band / (psd * b) - 1.0).abs() < 0.02, "{}", in_band / (psd * b));

        let double = add_rx_noise(&zero, 2.0 * psd, 9).unwrap();
        let ratio_db = 10.0 * (double.mean_power() / noise.mean_power()).log10();
        assert!((ratio_db - 10.0 * 2f64.log10()).abs() < 1e-9);
        assert!(add_rx_noise(&zero, -1.0, 0).is_err());
    }

    #[test]
    fn full_scale_sine_sqnr() {
        let n = 1 << 16;
        let cycles = 1031.0;
        let mut sig = 0.0;
        let mut err = 0.0;
        for k in 0..n {
            // just under full scale so the peak lands in the top level
            let x = (1.0 - 1e-12) * (TAU * cycles * k as f64 / n as f64).sin();
            let q = quantize(x, 6, 1.0);
            sig += x * x;
            err += (q - x) * (q - x);
        }
        let sqnr = 10.0 * (sig / err).log10();
        let formula = 6.02 * 6.0 + 1.76;
        assert!((sqnr - formula).abs() < 0.5, "{sqnr}");
    }

    #[test]
    fn quantizer_clips_and_has_levels() {
        assert_eq!(quantize(5.0, 3, 1.0), 0.875);
        assert_eq!(quantize(-5.0, 3, 1.0), -0.875);
        assert_eq!(quantize(0.01, 3, 1.0), 0.125);
        assert_eq!(quantize(0.25, 3, 1.0), 0.375);
        let mut levels: Vec<f64> = (0..2000).map(|i| quantize(-1.2 + 0.0012 * i as f64, 4, 1.0)).collect();
        levels.dedup();
        assert_eq!(levels.len(), 16);
    }

    #[test]
    fn bypass_is_scaled_resample() {
        let x = cw(4800, 2e9, 0.0, 1);
        let sig = SampledField::new(x.ex().to_vec(), x.ex().to_vec(), FS).unwrap().with_support(Band::symmetric(3e9));
        let mut cfg = quiet_lo(0.0);
        cfg.adc_bits = None;
        let out = agc_adc(&sig, &cfg, 30e9).unwrap();
        let direct = sig.resample(60e9).unwrap();
        let g = 1.0 / (cfg.agc_clip_factor * (direct.pol_power(0) / 2.0).sqrt());
        for (a, b) in out.ex().iter().zip(direct.ex()) {
            assert!((a - b * g).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_power_is_an_error() {
        let z = SampledField::zeros(600, 60e9).unwrap();
        assert_eq!(agc_adc(&z, &quiet_lo(0.0), 30e9), Err(Error::ZeroPower));
    }

    fn noise_field(n: usize, fs: f64, seed: u64, scale: f64) -> SampledField {
        let z = SampledField::zeros(n, fs).unwrap();
        add_rx_noise(&z, 1.0, seed).unwrap().scaled(scale)
    }

    #[test]
    fn strong_leak_costs_quantization_snr() {
        // wanted signal in the lower half band, leak 8 dB stronger in the upper
        let n = 1 << 15;
        let fs = 120e9;
        let wanted = noise_field(n, fs, 1, 1.0)
            .filter_resample(&SpectralTransfer::brick_wall(-33e9, 0.0), 0.0, fs)
            .unwrap();
        let leak = noise_field(n, fs, 2, 1.0)
            .filter_resample(&SpectralTransfer::brick_wall(0.0, 33e9), 0.0, fs)
            .unwrap();
        let leak = leak.scaled((wanted.mean_power() / leak.mean_power() * 10f64.powf(0.8)).sqrt());
        let cfg = RxConfig::subcarrier(LaserSpec::new(16.0, 0.0, 0.0, 0));

        let in_band_sqnr = |total: &SampledField| -> f64 {
            let q = agc_adc(total, &cfg, 30e9).unwrap();
            let mut bypass = cfg;
            bypass.adc_bits = None;
            let ideal = agc_adc(total, &bypass, 30e9).unwrap();
            let err = SampledField::new(
                q.ex().iter().zip(ideal.ex()).map(|(a, b)| a - b).collect(),
                q.ey().iter().zip(ideal.ey()).map(|(a, b)| a - b).collect(),
                fs,
            )
            .unwrap();
            let band = SpectralTransfer::brick_wall(-33e9, 0.0);
            let g = ideal.mean_power() / total.mean_power();
            let err_in = err.apply_transfer(&band, 0.0).mean_power();
            10.0 * (wanted.mean_power() * g / err_in).log10()
        };
        let alone = in_band_sqnr(&wanted);
        let with_leak = in_band_sqnr(&crate::signal::superpose(&[&wanted, &leak]).unwrap());
        assert!(alone - with_leak > 0.1, "{alone} {with_leak}");
    }

    #[test]
    fn calibration_search_converges_on_a_model_curve() {
        // smooth synthetic waterfall: BER = 0.02 at psd = 3.7e-19
        let model = |psd: f64| Ok(0.02 * (psd / 3.7e-19).powf(4.0).min(25.0));
        let cal = calibrate_noise(model, (1e-19, 1e-18), -38.0).unwrap();
        assert!((cal.achieved_ber - 0.02).abs() <= BER_TOLERANCE);
        assert!((cal.noise_psd / 3.7e-19 - 1.0).abs() < 0.01);
        let again = calibrate_noise(model, (1e-19, 1e-18), -38.0).unwrap();
        assert_eq!(cal, again);

        match calibrate_noise(model, (1e-18, 2e-18), -38.0) {
            Err(Error::NotBracketed { ber_lo, .. }) => assert!(ber_lo > 0.02),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn es_n0_round_trip() {
        let psd = noise_psd_for(-38.0, 6.25, 30e9);
        let cal = NoiseCalibration { noise_psd: psd, achieved_sensitivity: -38.0, achieved_ber: 0.02 };
        assert!((cal.es_n0_db(30e9) - 6.25).abs() < 1e-12);
    }

    #[test]
    fn cache_round_trips_exactly() {
        let mut cache = CalibrationCache::default();
        let key = calibration_key("baseband 30e9 6 bits");
        assert_eq!(key.len(), 32);
        assert_eq!(key, calibration_key("baseband 30e9 6 bits"));
        assert_ne!(key, calibration_key("baseband 30e9 7 bits"));
        cache.insert(key.clone(), NoiseCalibration { noise_psd: 1.0 / 3.0 * 1e-18, achieved_sensitivity: -38.0, achieved_ber: 0.0201 });
        let back = CalibrationCache::parse(&cache.to_text()).unwrap();
        assert_eq!(back, cache);
        assert!(matches!(CalibrationCache::parse("abc 1 2\n"), Err(Error::CalibrationRecord { line: 1, .. })));
        assert!(matches!(CalibrationCache::parse("# c\nabc 1 2 x\n"), Err(Error::CalibrationRecord { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn quantizer_is_odd(x in -3.0f64..3.0, bits in 1u32..12) {
            prop_assert_eq!(quantize(-x, bits, 1.0), -quantize(x, bits, 1.0));
        }

        #[test]
        fn agc_is_scale_invariant(scale_db in -60.0f64..40.0) {
            let sig = noise_field(512, 60e9, 4, 1e-3);
            let cfg = quiet_lo(0.0);
            let a = agc_adc(&sig, &cfg, 30e9).unwrap();
            // power-of-two scaling keeps every product exact
            let k = 2f64.powi((scale_db / 6.02).round() as i32);
            let b = agc_adc(&sig.scaled(k), &cfg, 30e9).unwrap();
            prop_assert_eq!(a.ex(), b.ex());
            prop_assert_eq!(a.ey(), b.ey());
        }
    }
}
