//! Receiver DSP: orthonormalization, CD compensation, matched filter with
//! IF demodulation, preamble sync, data-aided 2x2 butterfly equalizer,
//! decimation, pilot-aided carrier phase recovery and BER counting.
//!
//! Debug dumps: when [`DspConfig::debug_dir`] is set, each stage writes
//! `NN_<stage>.bin`, a flat little-endian `f64` array laid out per sample as
//! `x.re, x.im, y.re, y.im`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::frame::{FrameData, FrameLayout};
use crate::plant::dispersion_transfer;
use crate::signal::{SampledField, SpectralTransfer};
use crate::transmitter::{qpsk_demap, rrc_response};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Sync metric below which no preamble is assumed present. Pure noise
/// scores about 0.3, a clean preamble about 1.4.
const SYNC_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct DspConfig {
    pub symbol_rate: f64,
    pub rolloff: f64,
    /// Subcarrier of the wanted signal at the ADC, 0 for baseband.
    pub f_if: f64,
    /// Accumulated dispersion to undo, ps/nm.
    pub cd_total: f64,
    /// Accumulated slope to undo, ps/nm^2.
    pub cd_slope: f64,
    pub wavelength: f64,
    /// Electrical frequency of the optical channel center (minus the LO
    /// detuning); the dispersion inverse is evaluated around it.
    pub cd_center: f64,
    pub eq_taps: usize,
    pub eq_training_len: usize,
    /// Residual training error, dB relative to the reference, above which
    /// the equalizer is reported unconverged.
    pub eq_threshold_db: f64,
    /// Symbols in the centered window for the training phase estimate.
    pub phase_window: usize,
    /// Frame sync search range, symbols either side.
    pub sync_range: usize,
    pub min_bits: usize,
    pub debug_dir: Option<PathBuf>,
}

impl DspConfig {
    pub fn new(symbol_rate: f64, f_if: f64, cd_total: f64, cd_slope: f64, wavelength: f64) -> Self {
        DspConfig {
            symbol_rate,
            rolloff: 0.1,
            f_if,
            cd_total,
            cd_slope,
            wavelength,
            cd_center: 0.0,
            eq_taps: 15,
            eq_training_len: 10_000,
            eq_threshold_db: 0.0,
            phase_window: 32,
            sync_range: 64,
            min_bits: 500_000,
            debug_dir: None,
        }
    }

    pub fn validate(&self, layout: &FrameLayout) -> Result<()> {
        if self.eq_taps % 2 == 0 {
            return Err(Error::InvalidParameter(format!("equalizer taps must be odd, got {}", self.eq_taps)));
        }
        if self.eq_training_len == 0 || self.eq_training_len > layout.preamble_len() {
            return Err(Error::InvalidParameter(format!(
                "training length {} outside the {}-symbol preamble",
                self.eq_training_len,
                layout.preamble_len()
            )));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) || !(self.symbol_rate > 0.0) || self.phase_window == 0 {
            return Err(Error::InvalidParameter(format!("dsp {self:?}")));
        }
        Ok(())
    }
}

/// Per polarization Gram-Schmidt on (I, Q): Q loses its projection on I,
/// then both are scaled to equal power, keeping the polarization power.
pub fn orthonormalize(x: &SampledField) -> Result<SampledField> {
    let mut pols: [Vec<Complex64>; 2] = Default::default();
    for (p, out) in pols.iter_mut().enumerate() {
        let s = x.pol(p);
        let ii: f64 = s.iter().map(|v| v.re * v.re).sum();
        let qq: f64 = s.iter().map(|v| v.im * v.im).sum();
        let iq: f64 = s.iter().map(|v| v.re * v.im).sum();
        if !(ii > 0.0) {
            return Err(Error::Degenerate(format!("in-phase component of polarization {p} is zero")));
        }
        let k = iq / ii;
        let qq_orth = qq - k * iq;
        if !(qq_orth > 1e-12 * ii) {
            return Err(Error::Degenerate(format!("quadrature component of polarization {p} is zero")));
        }
        let half = (ii + qq) / 2.0;
        let gi = (half / ii).sqrt();
        let gq = (half / qq_orth).sqrt();
        *out = s.iter().map(|v| Complex64::new(v.re * gi, (v.im - k * v.re) * gq)).collect();
    }
    let [ex, ey] = pols;
    Ok(SampledField::new(ex, ey, x.sample_rate())?
        .with_support(x.support())
        .with_center_offset(x.center_offset()))
}

fn cd_inverse(cfg: &DspConfig) -> SpectralTransfer {
    dispersion_transfer(-cfg.cd_total, -cfg.cd_slope, cfg.wavelength)
}

/// All-pass inverse of the link dispersion.
pub fn cd_compensate(x: &SampledField, cfg: &DspConfig) -> SampledField {
    if cfg.cd_total == 0.0 && cfg.cd_slope == 0.0 {
        return x.clone();
    }
    x.apply_transfer(&cd_inverse(cfg), cfg.cd_center)
}

fn rrc(cfg: &DspConfig) -> SpectralTransfer {
    let (rs, beta) = (cfg.symbol_rate, cfg.rolloff);
    SpectralTransfer::magnitude(move |f| rrc_response(f, rs, beta))
}

/// IF demodulation, RRC matched filter, output at 2 samples per symbol.
pub fn matched_filter(x: &SampledField, cfg: &DspConfig) -> Result<SampledField> {
    let demod = x.rotate(-cfg.f_if).with_center_offset(x.center_offset() - cfg.f_if);
    demod.filter_resample(&rrc(cfg), 0.0, 2.0 * cfg.symbol_rate)
}

/// [`cd_compensate`] followed by [`matched_filter`] in one transform pair.
pub fn compensate_and_match(x: &SampledField, cfg: &DspConfig) -> Result<SampledField> {
    let demod = x.rotate(-cfg.f_if).with_center_offset(x.center_offset() - cfg.f_if);
    let matched = rrc(cfg);
    let h = if cfg.cd_total == 0.0 && cfg.cd_slope == 0.0 {
        matched
    } else {
        // after demodulation the channel center sits at cd_center - f_if
        cd_inverse(cfg).recentered(cfg.cd_center - cfg.f_if).then(&matched)
    };
    demod.filter_resample(&h, 0.0, 2.0 * cfg.symbol_rate)
}

/// Phase-insensitive match of `y[2 (k + lag) + phase]` against `reference`:
/// magnitudes of 64-symbol partial correlations, summed.
fn chunked_correlation(y: &[Complex64], reference: &[Complex64], offset: isize) -> f64 {
    const CHUNK: usize = 64;
    let n = y.len() as isize;
    reference
        .chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let base = (c * CHUNK) as isize;
            chunk
                .iter()
                .enumerate()
                .map(|(i, d)| y[(offset + 2 * (base + i as isize)).rem_euclid(n) as usize] * d.conj())
                .sum::<Complex64>()
                .norm()
        })
        .sum()
}

/// Normalized by the magnitude of the references and of the samples used,
/// so a clean match scores close to 1.
fn sync_metric(y: &SampledField, frame: &FrameData, len: usize, offset: isize) -> f64 {
    let n = y.len() as isize;
    let mut num = 0.0;
    let mut energy = 0.0;
    for p in 0..2 {
        let s = y.pol(p);
        for q in 0..2 {
            num += chunked_correlation(s, &frame.preamble(q)[..len], offset);
        }
        energy += (0..len).map(|k| s[(offset + 2 * k as isize).rem_euclid(n) as usize].norm_sqr()).sum::<f64>();
    }
    let reference: f64 = (0..2).map(|q| frame.preamble(q)[..len].iter().map(|d| d.norm_sqr()).sum::<f64>()).sum();
    // each received pol carries roughly one reference
    num / (energy * reference / 2.0).sqrt()
}

/// Locates the preamble within +-`sync_range` symbols and rotates the 2 sps
/// sequence so its first symbol lands on sample 0.
pub fn frame_sync(y: &SampledField, frame: &FrameData, cfg: &DspConfig) -> Result<SampledField> {
    let len = frame.layout().preamble_len().min(2048);
    let range = cfg.sync_range as isize;
    let mut best = (f64::MIN, 0isize);
    for offset in -2 * range..=2 * range {
        let m = sync_metric(y, frame, len, offset);
        if m > best.0 {
            best = (m, offset);
        }
    }
    if best.0 < SYNC_THRESHOLD {
        return Err(Error::AlignmentLost(best.0));
    }
    Ok(circular_advance(y, best.1))
}

/// `out[n] = y[n + offset]`, circularly.
fn circular_advance(y: &SampledField, offset: isize) -> SampledField {
    let n = y.len() as isize;
    let take = |s: &[Complex64]| (0..n).map(|i| s[(i + offset).rem_euclid(n) as usize]).collect::<Vec<_>>();
    y.with_samples(take(y.ex()), take(y.ey()))
}

/// T/2-spaced 2x2 butterfly: `taps[p][q]` maps input pol `q` to output `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerState {
    pub taps: [[Vec<Complex64>; 2]; 2],
    pub converged: bool,
    pub residual_db: f64,
}

impl EqualizerState {
    pub fn identity(n_taps: usize) -> Self {
        let mut unit = vec![ZERO; n_taps];
        unit[n_taps / 2] = Complex64::new(1.0, 0.0);
        let zero = vec![ZERO; n_taps];
        EqualizerState {
            taps: [[unit.clone(), zero.clone()], [zero, unit]],
            converged: true,
            residual_db: f64::NEG_INFINITY,
        }
    }

    pub fn n_taps(&self) -> usize {
        self.taps[0][0].len()
    }

    fn output(&self, x: [&[Complex64]; 2], n: usize) -> [Complex64; 2] {
        let taps = self.n_taps();
        let c = (taps / 2) as isize;
        let len = x[0].len() as isize;
        let mut out = [ZERO; 2];
        for (p, o) in out.iter_mut().enumerate() {
            for q in 0..2 {
                let w = &self.taps[p][q];
                for (t, wt) in w.iter().enumerate() {
                    let idx = (n as isize + c - t as isize).rem_euclid(len) as usize;
                    *o += wt * x[q][idx];
                }
            }
        }
        out
    }
}

/// Regressor for output symbol `k`: the `taps` samples of each input pol
/// ending at `2k + c`, most recent first.
fn regressor(x: [&[Complex64]; 2], k: usize, taps: usize, u: &mut [Complex64]) {
    let c = (taps / 2) as isize;
    let len = x[0].len() as isize;
    for q in 0..2 {
        for t in 0..taps {
            let idx = (2 * k as isize + c - t as isize).rem_euclid(len) as usize;
            u[q * taps + t] = x[q][idx];
        }
    }
}

struct LsFit {
    weights: [Vec<Complex64>; 2],
}

/// Least squares `w^T u_k ~ target_p[k]` over `k in 0..len`, one shared
/// Gram matrix for both outputs.
fn ls_fit(x: [&[Complex64]; 2], targets: [&[Complex64]; 2], len: usize, taps: usize) -> Result<LsFit> {
    let dim = 2 * taps;
    let mut gram = DMatrix::<Complex64>::zeros(dim, dim);
    let mut rhs = [DVector::<Complex64>::zeros(dim), DVector::<Complex64>::zeros(dim)];
    let mut u = vec![ZERO; dim];
    for k in 0..len {
        regressor(x, k, taps, &mut u);
        for i in 0..dim {
            let ci = u[i].conj();
            for j in i..dim {
                gram[(i, j)] += ci * u[j];
            }
            for (p, r) in rhs.iter_mut().enumerate() {
                r[i] += ci * targets[p][k];
            }
        }
    }
    let trace: f64 = (0..dim).map(|i| gram[(i, i)].re).sum();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::SingularEqualizer);
    }
    // the band above the roll-off edge is empty at 2 sps; the ridge keeps
    // the null space of the Gram matrix out of the taps
    let ridge = 1e-4 * trace / dim as f64;
    for i in 0..dim {
        gram[(i, i)] += ridge;
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)].conj();
        }
    }
    let chol = gram.cholesky().ok_or(Error::SingularEqualizer)?;
    let solve = |r: &DVector<Complex64>| chol.solve(r).iter().copied().collect::<Vec<_>>();
    Ok(LsFit { weights: [solve(&rhs[0]), solve(&rhs[1])] })
}

fn state_from(fit: &LsFit, taps: usize) -> EqualizerState {
    let split = |w: &[Complex64]| [w[..taps].to_vec(), w[taps..].to_vec()];
    EqualizerState { taps: [split(&fit.weights[0]), split(&fit.weights[1])], converged: false, residual_db: f64::NAN }
}

/// Common phase of the equalizer output against the references, from a
/// centered moving sum over both polarizations.
fn track_phase(z: &[[Complex64; 2]], refs: [&[Complex64]; 2], window: usize) -> Vec<Complex64> {
    let len = z.len();
    let inst: Vec<Complex64> = (0..len).map(|k| z[k][0] * refs[0][k].conj() + z[k][1] * refs[1][k].conj()).collect();
    let mut prefix = vec![ZERO; len + 1];
    for k in 0..len {
        prefix[k + 1] = prefix[k] + inst[k];
    }
    let half = window / 2;
    (0..len)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(len);
            let s = prefix[hi] - prefix[lo];
            if s.norm() > 0.0 {
                s / s.norm()
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
        .collect()
}

/// Data-aided least-squares training on the first `eq_training_len`
/// preamble symbols of a synchronized 2 sps sequence.
///
/// Laser phase noise drifts across the preamble, so the fit alternates with
/// a common-phase estimate: the targets become `d[k] exp(j theta[k])` with
/// `theta` tracked from the previous equalizer's output.
pub fn mimo_train(x: &SampledField, frame: &FrameData, cfg: &DspConfig) -> Result<EqualizerState> {
    cfg.validate(frame.layout())?;
    let taps = cfg.eq_taps;
    let len = cfg.eq_training_len;
    if 2 * len > x.len() {
        return Err(Error::LengthMismatch(x.len(), 2 * len));
    }
    let input = [x.ex(), x.ey()];
    let refs = [&frame.preamble(0)[..len], &frame.preamble(1)[..len]];

    let first = len.min(1024.max(4 * taps));
    let mut state = state_from(&ls_fit(input, refs, first, taps)?, taps);
    let mut targets = [refs[0].to_vec(), refs[1].to_vec()];
    for _ in 0..3 {
        let z: Vec<[Complex64; 2]> = (0..len).map(|k| state.output(input, 2 * k)).collect();
        let rot = track_phase(&z, refs, cfg.phase_window);
        for p in 0..2 {
            targets[p] = refs[p].iter().zip(&rot).map(|(d, r)| d * r).collect();
        }
        state = state_from(&ls_fit(input, [&targets[0], &targets[1]], len, taps)?, taps);
    }

    let mut err = 0.0;
    let mut reference = 0.0;
    for k in 0..len {
        let z = state.output(input, 2 * k);
        for p in 0..2 {
            err += (z[p] - targets[p][k]).norm_sqr();
            reference += targets[p][k].norm_sqr();
        }
    }
    state.residual_db = 10.0 * (err / reference).log10();
    state.converged = state.residual_db < cfg.eq_threshold_db;
    Ok(state)
}

/// Frozen-tap butterfly over the whole burst, output still at 2 sps.
pub fn mimo_apply(x: &SampledField, state: &EqualizerState) -> Result<SampledField> {
    if !state.converged {
        return Err(Error::NotConverged { residual_db: state.residual_db, threshold_db: 0.0 });
    }
    let input = [x.ex(), x.ey()];
    let (ex, ey): (Vec<_>, Vec<_>) = (0..x.len()).map(|n| state.output(input, n)).map(|[a, b]| (a, b)).unzip();
    Ok(x.with_samples(ex, ey))
}

/// Picks the on-symbol phase within +-2 samples by preamble correlation and
/// returns the data-section symbols (pilots and payload) per polarization.
pub fn downsample_decide(y: &SampledField, frame: &FrameData) -> Result<[Vec<Complex64>; 2]> {
    let layout = frame.layout();
    let len = layout.preamble_len().min(2048);
    let mut best = (f64::MIN, 0isize);
    for offset in -2..=2 {
        let m = sync_metric(y, frame, len, offset);
        if m > best.0 {
            best = (m, offset);
        }
    }
    if best.0 < SYNC_THRESHOLD {
        return Err(Error::AlignmentLost(best.0));
    }
    let n = y.len() as isize;
    let start = layout.preamble_len();
    let pick = |s: &[Complex64]| -> Vec<Complex64> {
        (0..layout.data_len())
            .map(|i| s[(best.1 + 2 * (start + i) as isize).rem_euclid(n) as usize])
            .collect()
    };
    Ok([pick(y.ex()), pick(y.ey())])
}

/// Pilot-aided carrier phase recovery. The phase at each pilot is
/// estimated jointly over both polarizations, unwrapped along the burst and
/// interpolated linearly in between; it is held flat outside the first and
/// last pilot.
pub fn cpr_pilot(symbols: &[Vec<Complex64>; 2], frame: &FrameData) -> [Vec<Complex64>; 2] {
    let layout = frame.layout();
    let refs = [frame.data_symbols(0), frame.data_symbols(1)];
    let positions: Vec<usize> = layout.pilot_positions().collect();
    let mut phases = Vec::with_capacity(positions.len());
    let mut prev: Option<f64> = None;
    for &i in &positions {
        let c = symbols[0][i] * refs[0][i].conj() + symbols[1][i] * refs[1][i].conj();
        let mut phi = c.arg();
        if let Some(p) = prev {
            phi = p + (phi - p + PI).rem_euclid(TAU) - PI;
        }
        phases.push(phi);
        prev = Some(phi);
    }
    let len = symbols[0].len();
    let mut theta = vec![0.0; len];
    let mut j = 0;
    for (i, th) in theta.iter_mut().enumerate() {
        while j + 1 < positions.len() && positions[j + 1] <= i {
            j += 1;
        }
        *th = if i <= positions[0] {
            phases[0]
        } else if j + 1 >= positions.len() {
            phases[j]
        } else {
            let (a, b) = (positions[j], positions[j + 1]);
            let t = (i - a) as f64 / (b - a) as f64;
            phases[j] + t * (phases[j + 1] - phases[j])
        };
    }
    let derotate = |s: &[Complex64]| s.iter().zip(&theta).map(|(v, th)| v * Complex64::from_polar(1.0, -th)).collect();
    [derotate(&symbols[0]), derotate(&symbols[1])]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerCount {
    pub errors: usize,
    pub bits: usize,
}

impl BerCount {
    pub fn ber(&self) -> f64 {
        self.errors as f64 / self.bits as f64
    }
}

/// Hard-decision errors on the payload of both polarizations after
/// removing any quarter-turn rotation the pilots reveal.
pub fn ber_count(symbols: &[Vec<Complex64>; 2], frame: &FrameData, ref_bits: [&[bool]; 2], min_bits: usize) -> Result<BerCount> {
    let layout = frame.layout();
    let bits = layout.counted_bits();
    if bits < min_bits {
        return Err(Error::TooFewBits { available: bits, required: min_bits });
    }
    let mut errors = 0;
    for p in 0..2 {
        let refs = frame.data_symbols(p);
        let pilot_sum: Complex64 = layout.pilot_positions().map(|i| symbols[p][i] * refs[i].conj()).sum();
        let quarter = ((pilot_sum.arg() / FRAC_PI_2).round() as i64).rem_euclid(4);
        let undo = Complex64::from_polar(1.0, -(quarter as f64) * FRAC_PI_2);
        for (n, i) in layout.payload_positions().enumerate() {
            let d = qpsk_demap(symbols[p][i] * undo);
            errors += (d[0] != ref_bits[p][2 * n]) as usize + (d[1] != ref_bits[p][2 * n + 1]) as usize;
        }
    }
    Ok(BerCount { errors, bits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub count: BerCount,
    pub eq_residual_db: f64,
}

impl ChainOutput {
    pub fn ber(&self) -> f64 {
        self.count.ber()
    }
}

fn dump(dir: &Path, index: usize, stage: &str, pols: [&[Complex64]; 2]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(pols[0].len() * 32);
    for (a, b) in pols[0].iter().zip(pols[1]) {
        for v in [a.re, a.im, b.re, b.im] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(dir.join(format!("{index:02}_{stage}.bin")))?;
    f.write_all(&bytes)?;
    Ok(())
}

/// ADC samples to BER.
pub fn run_chain(adc: &SampledField, frame: &FrameData, cfg: &DspConfig) -> Result<ChainOutput> {
    cfg.validate(frame.layout())?;
    let debug = |i: usize, stage: &str, f: [&[Complex64]; 2]| match &cfg.debug_dir {
        Some(dir) => dump(dir, i, stage, f),
        None => Ok(()),
    };
    let ortho = orthonormalize(adc)?;
    debug(0, "orthonormalized", [ortho.ex(), ortho.ey()])?;
    let matched = compensate_and_match(&ortho, cfg)?;
    debug(1, "matched", [matched.ex(), matched.ey()])?;
    let synced = frame_sync(&matched, frame, cfg)?;
    let eq = mimo_train(&synced, frame, cfg)?;
    let equalized = mimo_apply(&synced, &eq)?;
    debug(2, "equalized", [equalized.ex(), equalized.ey()])?;
    let symbols = downsample_decide(&equalized, frame)?;
    debug(3, "symbols", [&symbols[0], &symbols[1]])?;
    let recovered = cpr_pilot(&symbols, frame);
    debug(4, "recovered", [&recovered[0], &recovered[1]])?;
    let count = ber_count(&recovered, frame, [frame.payload_bits(0), frame.payload_bits(1)], cfg.min_bits)?;
    Ok(ChainOutput { count, eq_residual_db: eq.residual_db })
}
