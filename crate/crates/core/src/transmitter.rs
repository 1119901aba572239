//! Dual-polarization QPSK transmitter: bits, Gray mapping, root-raised-cosine
//! shaping, analog bandwidth, laser with phase noise, IQ modulation and the
//! booster amplifier.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fft;
use crate::frame::FrameData;
use crate::signal::{phasor, Band, SampledField};
use crate::units::{db_to_linear, optical_frequency, PLANCK};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserSpec {
    pub power_dbm: f64,
    pub linewidth: f64,
    /// Offset from the channel nominal center, Hz.
    pub detuning: f64,
    pub seed: u64,
}

impl LaserSpec {
    pub fn new(power_dbm: f64, linewidth: f64, detuning: f64, seed: u64) -> Self {
        LaserSpec { power_dbm, linewidth, detuning, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.linewidth >= 0.0) || !self.power_dbm.is_finite() || !self.detuning.is_finite() {
            return Err(Error::InvalidParameter(format!("laser {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Modulation {
    Baseband,
    /// Digital subcarrier at `f_if` from the laser, one sideband only.
    SingleSideband { f_if: f64 },
}

impl Modulation {
    pub fn if_offset(&self) -> f64 {
        match *self {
            Modulation::Baseband => 0.0,
            Modulation::SingleSideband { f_if } => f_if,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxConfig {
    pub symbol_rate: f64,
    pub rolloff: f64,
    pub samples_per_symbol: usize,
    pub mode: Modulation,
    /// Gaussian -3 dB point; `f64::INFINITY` for an ideal front end.
    pub analog_bw_3db: f64,
    pub modulator_output_dbm: f64,
    pub booster_nf_db: f64,
    pub launch_dbm: f64,
}

impl TxConfig {
    /// Two-laser transceiver: baseband QPSK, 21 GHz analog bandwidth.
    pub fn baseband() -> Self {
        TxConfig {
            symbol_rate: 30e9,
            rolloff: 0.1,
            samples_per_symbol: 16,
            mode: Modulation::Baseband,
            analog_bw_3db: 21e9,
            modulator_output_dbm: -8.0,
            booster_nf_db: 7.0,
            launch_dbm: 0.0,
        }
    }

    /// Single-laser transceiver: subcarrier at `f_if`, doubled bandwidth.
    pub fn single_sideband(f_if: f64) -> Self {
        TxConfig {
            mode: Modulation::SingleSideband { f_if },
            analog_bw_3db: 42e9,
            modulator_output_dbm: -9.0,
            ..TxConfig::baseband()
        }
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.samples_per_symbol as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rolloff > 0.0 && self.rolloff < 1.0) {
            return Err(Error::InvalidParameter(format!("roll-off {}", self.rolloff)));
        }
        if !(self.analog_bw_3db > 0.0) || !(self.symbol_rate > 0.0) || self.samples_per_symbol < 2 {
            return Err(Error::InvalidParameter("transmitter rates and bandwidth must be positive".into()));
        }
        Ok(())
    }
}

pub fn gen_bits(seed: u64, n: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<bool>()).collect()
}

/// Gray-mapped unit-energy QPSK: the first bit of each pair selects the sign
/// of Q, the second the sign of I.
pub fn qpsk_map(bits: &[bool]) -> Result<Vec<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(Error::OddBitCount(bits.len()));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|b| {
            let i = if b[1] { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 };
            let q = if b[0] { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 };
            Complex64::new(i, q)
        })
        .collect())
}

/// Hard decision inverse of [`qpsk_map`].
#[inline]
pub fn qpsk_demap(s: Complex64) -> [bool; 2] {
    [s.im < 0.0, s.re < 0.0]
}

/// Root-raised-cosine magnitude response with unit pass-band gain.
pub fn rrc_response(f: f64, symbol_rate: f64, rolloff: f64) -> f64 {
    let f = f.abs();
    let f1 = (1.0 - rolloff) * symbol_rate / 2.0;
    let f2 = (1.0 + rolloff) * symbol_rate / 2.0;
    if f <= f1 {
        1.0
    } else if f > f2 {
        0.0
    } else {
        (0.5 * (1.0 + (PI / (rolloff * symbol_rate) * (f - f1)).cos())).sqrt()
    }
}

/// Gaussian low-pass magnitude, -3 dB at `bw_3db`.
pub fn gaussian_lowpass(f: f64, bw_3db: f64) -> f64 {
    if bw_3db.is_infinite() {
        return 1.0;
    }
    (-0.5 * LN_2 * (f / bw_3db).powi(2)).exp()
}

/// Electrical drive: RRC pulses (moved to the digital subcarrier in SSB
/// mode) through the Gaussian analog response, at the simulation rate.
pub fn shape_and_bandlimit(symbols: [&[Complex64]; 2], cfg: &TxConfig) -> Result<SampledField> {
    cfg.validate()?;
    let n_sym = symbols[0].len();
    if symbols[1].len() != n_sym || n_sym < 2 {
        return Err(Error::LengthMismatch(n_sym, symbols[1].len()));
    }
    let sps = cfg.samples_per_symbol;
    let fs = cfg.sample_rate();
    let n = n_sym * sps;
    let f_if = cfg.mode.if_offset();
    let step = f_if / cfg.symbol_rate;

    let response: Vec<f64> = (0..n)
        .map(|k| {
            let f = fft::bin_frequency(k, n, fs);
            rrc_response(f - f_if, cfg.symbol_rate, cfg.rolloff) * gaussian_lowpass(f, cfg.analog_bw_3db)
        })
        .collect();

    let shape = |syms: &[Complex64]| {
        // zero-stuffed upsampling tiles the symbol-rate spectrum
        let mut s: Vec<Complex64> = syms.iter().enumerate().map(|(k, &v)| v * phasor(step, k)).collect();
        fft::forward(&mut s);
        let mut u: Vec<Complex64> = (0..n).map(|k| s[k % n_sym] * response[k]).collect();
        fft::inverse(&mut u);
        u
    };
    let ex = shape(symbols[0]);
    let ey = shape(symbols[1]);
    let half = (1.0 + cfg.rolloff) * cfg.symbol_rate / 2.0;
    Ok(SampledField::new(ex, ey, fs)?
        .with_support(Band::new(f_if - half, f_if + half))
        .with_center_offset(f_if))
}

/// Single-polarization CW laser (in `ex`) with Wiener phase noise.
pub fn laser_field(spec: &LaserSpec, n_samples: usize, sample_rate: f64) -> Result<SampledField> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let amplitude = crate::units::dbm_to_watts(spec.power_dbm).sqrt();
    let sigma = (TAU * spec.linewidth / sample_rate).sqrt();
    let step = spec.detuning / sample_rate;
    let mut phase = rng.random::<f64>() * TAU;
    let ex = (0..n_samples)
        .map(|n| {
            if n > 0 && sigma > 0.0 {
                phase += sigma * rng.sample::<f64, _>(StandardNormal);
            }
            Complex64::from_polar(amplitude, phase) * phasor(step, n)
        })
        .collect();
    let ey = vec![Complex64::new(0.0, 0.0); n_samples];
    Ok(SampledField::new(ex, ey, sample_rate)?
        .with_support(Band::point(spec.detuning))
        .with_center_offset(spec.detuning))
}

/// Imprints the dual-polarization drive onto the laser's phase and
/// frequency, then sets the modulator output power.
pub fn iq_modulate(cw: &SampledField, drive: &SampledField, cfg: &TxConfig) -> Result<SampledField> {
    if cw.sample_rate() != drive.sample_rate() {
        return Err(Error::RateMismatch(cw.sample_rate(), drive.sample_rate()));
    }
    if cw.len() != drive.len() {
        return Err(Error::LengthMismatch(cw.len(), drive.len()));
    }
    let carrier: Vec<Complex64> = cw
        .ex()
        .iter()
        .map(|v| {
            let a = v.norm();
            if a > 0.0 {
                v / a
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let ex = drive.ex().iter().zip(&carrier).map(|(d, c)| d * c).collect();
    let ey = drive.ey().iter().zip(&carrier).map(|(d, c)| d * c).collect();
    let out = SampledField::new(ex, ey, drive.sample_rate())?
        .with_support(drive.support().shifted(cw.center_offset()))
        .with_center_offset(cw.center_offset() + drive.center_offset());
    if out.mean_power() == 0.0 {
        return Ok(out);
    }
    out.set_power(cfg.modulator_output_dbm)
}

/// One-sided ASE spectral density per polarization, W/Hz.
pub fn ase_psd(gain_lin: f64, nf_db: f64, wavelength: f64) -> f64 {
    let nu = optical_frequency(wavelength);
    0.5 * PLANCK * nu * (gain_lin * db_to_linear(nf_db) - 1.0).max(0.0)
}

/// Booster: gain up to the launch power plus circular Gaussian ASE over
/// the full simulation band.
pub fn boost(field: &SampledField, cfg: &TxConfig, wavelength: f64, seed: u64) -> Result<SampledField> {
    let input_dbm = field.power_dbm();
    if !(input_dbm < cfg.launch_dbm) {
        return Err(Error::NoGain { input_dbm, target_dbm: cfg.launch_dbm });
    }
    let gain_db = cfg.launch_dbm - input_dbm;
    let gain = db_to_linear(gain_db);
    let psd = ase_psd(gain, cfg.booster_nf_db, wavelength);
    let sigma = (psd * field.sample_rate() / 2.0).sqrt();
    let amp = gain.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = |v: &Complex64| {
        let n = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        v * amp + n * sigma
    };
    let ex: Vec<Complex64> = field.ex().iter().map(&mut noisy).collect();
    let ey: Vec<Complex64> = field.ey().iter().map(&mut noisy).collect();
    let support = if psd > 0.0 { Band::full(field.sample_rate()) } else { field.support() };
    Ok(SampledField::new(ex, ey, field.sample_rate())?
        .with_support(support)
        .with_center_offset(field.center_offset()))
}

/// Full transmitter: shaped frame, laser, modulator and booster.
pub fn transmit(frame: &FrameData, cfg: &TxConfig, laser: &LaserSpec, wavelength: f64, ase_seed: u64) -> Result<SampledField> {
    let drive = shape_and_bandlimit([frame.symbols(0), frame.symbols(1)], cfg)?;
    let cw = laser_field(laser, drive.len(), drive.sample_rate())?;
    let modulated = iq_modulate(&cw, &drive, cfg)?;
    boost(&modulated, cfg, wavelength, ase_seed)
}
