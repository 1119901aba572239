//! Experiment harness: the three coexistence architectures, receiver
//! calibration, PON budget search at the BER threshold and penalty sweeps
//! over laser frequency accuracy.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use crate::dsp::{run_chain, DspConfig};
use crate::error::{Error, Result};
use crate::frame::{splitmix64, FrameData, FrameLayout};
use crate::plant::{
    couple, dispersion_transfer, filter_transfer, voa, CouplerSpec, FiberSpec, FilterProfile, MeasuredProfile,
};
use crate::receiver::{
    add_rx_noise, agc_adc, analog_frontend, calibrate_noise, calibration_key, mix_with, noise_psd_for,
    CalibrationCache, NoiseCalibration, RxConfig, DEFAULT_CLIP_FACTOR, TARGET_BER,
};
use crate::signal::{filtered_sum, SampledField, SpectralTransfer};
use crate::transmitter::{boost, iq_modulate, laser_field, shape_and_bandlimit, transmit, LaserSpec, TxConfig};
use crate::units::{db_to_amplitude, GHZ};

pub const SYMBOL_RATE: f64 = 30e9;
pub const SAMPLES_PER_SYMBOL: usize = 16;
pub const CHANNEL_SPACING: f64 = 100e9;
pub const SUBCARRIER: f64 = 16.5e9;
pub const WAVELENGTH: f64 = 1560.06e-9;
pub const LO_POWER_DBM: f64 = 16.0;
pub const DEFAULT_GRID_GHZ: [f64; 8] = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 15.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    DualChannel,
    SingleChannelTwoLaser,
    SingleChannelOneLaser,
}

impl Architecture {
    pub const ALL: [Architecture; 3] =
        [Architecture::DualChannel, Architecture::SingleChannelTwoLaser, Architecture::SingleChannelOneLaser];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::DualChannel => "dual-channel",
            Architecture::SingleChannelTwoLaser => "single-two-laser",
            Architecture::SingleChannelOneLaser => "single-one-laser",
        }
    }

    pub fn has_circulator(self) -> bool {
        self != Architecture::DualChannel
    }

    pub fn receiver(self) -> ReceiverKind {
        match self {
            Architecture::SingleChannelOneLaser => ReceiverKind::Subcarrier,
            _ => ReceiverKind::Intradyne,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownArchitecture(s.to_string()))
    }
}

/// Downstream transceiver flavor; calibrations are kept per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReceiverKind {
    /// Wanted signal at baseband, LO on the downstream laser.
    Intradyne,
    /// Wanted signal on the lower digital subcarrier.
    Subcarrier,
}

impl ReceiverKind {
    fn index(self) -> usize {
        self as usize
    }

    pub fn tx_config(self, f_if: f64) -> TxConfig {
        match self {
            ReceiverKind::Intradyne => TxConfig::baseband(),
            ReceiverKind::Subcarrier => TxConfig::single_sideband(f_if),
        }
    }

    pub fn rx_config(self, lo: LaserSpec) -> RxConfig {
        match self {
            ReceiverKind::Intradyne => RxConfig::intradyne(lo),
            ReceiverKind::Subcarrier => RxConfig::subcarrier(lo),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterChoice {
    /// Gaussian, 60 GHz at -3 dB.
    Gaussian60,
    /// Super-Gaussian, 80 GHz, low order.
    Smooth80,
    /// Super-Gaussian, 80 GHz, high order.
    Sharp80,
    /// Constant 3.5 dB; the unfiltered reference.
    Flat,
    Measured { label: String, profile: Arc<MeasuredProfile> },
}

impl FilterChoice {
    pub const STANDARD: [FilterChoice; 3] = [FilterChoice::Gaussian60, FilterChoice::Smooth80, FilterChoice::Sharp80];

    pub fn name(&self) -> String {
        match self {
            FilterChoice::Gaussian60 => "gaussian60".into(),
            FilterChoice::Smooth80 => "smooth80".into(),
            FilterChoice::Sharp80 => "sharp80".into(),
            FilterChoice::Flat => "flat".into(),
            FilterChoice::Measured { label, .. } => format!("measured:{label}"),
        }
    }

    /// `gaussian60`, `smooth80`, `sharp80`, `flat` or `measured:<path>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian60" => Ok(FilterChoice::Gaussian60),
            "smooth80" => Ok(FilterChoice::Smooth80),
            "sharp80" => Ok(FilterChoice::Sharp80),
            "flat" => Ok(FilterChoice::Flat),
            _ => match s.strip_prefix("measured:") {
                Some(path) if !path.is_empty() => Ok(FilterChoice::Measured {
                    label: path.to_string(),
                    profile: Arc::new(MeasuredProfile::load(path)?),
                }),
                _ => Err(Error::UnknownFilter(s.to_string())),
            },
        }
    }

    pub fn profile(&self, orders: FilterOrders) -> FilterProfile {
        match self {
            FilterChoice::Gaussian60 => FilterProfile::gaussian(60e9),
            FilterChoice::Smooth80 => FilterProfile::super_gaussian(80e9, orders.smooth),
            FilterChoice::Sharp80 => FilterProfile::super_gaussian(80e9, orders.sharp),
            FilterChoice::Flat => FilterProfile::flat(),
            FilterChoice::Measured { profile, .. } => FilterProfile::measured((**profile).clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOrders {
    pub smooth: f64,
    pub sharp: f64,
}

impl Default for FilterOrders {
    fn default() -> Self {
        FilterOrders { smooth: 2.0, sharp: 4.0 }
    }
}

/// Every random stream in a study derives from the set id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSet {
    pub id: u64,
}

impl SeedSet {
    pub fn new(id: u64) -> Self {
        SeedSet { id }
    }

    pub fn stream(&self, name: &str) -> u64 {
        let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        splitmix64(self.id ^ splitmix64(h))
    }
}

/// Laser and subcarrier placement relative to the channel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyPlan {
    pub ds_laser_offset: f64,
    pub us_laser_offset: f64,
    pub ds_if: f64,
    pub us_if: f64,
}

impl FrequencyPlan {
    /// Worst-case placement for a given accuracy. The shared laser of the
    /// one-laser case moves down so the downstream subcarrier heads for the
    /// filter edge.
    pub fn new(arch: Architecture, f_acc: f64) -> Self {
        match arch {
            Architecture::DualChannel => FrequencyPlan { ds_laser_offset: f_acc, us_laser_offset: f_acc, ds_if: 0.0, us_if: 0.0 },
            Architecture::SingleChannelTwoLaser => FrequencyPlan {
                ds_laser_offset: -(SUBCARRIER + f_acc),
                us_laser_offset: SUBCARRIER + f_acc,
                ds_if: 0.0,
                us_if: 0.0,
            },
            Architecture::SingleChannelOneLaser => {
                FrequencyPlan { ds_laser_offset: -f_acc, us_laser_offset: -f_acc, ds_if: -SUBCARRIER, us_if: SUBCARRIER }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub architecture: Architecture,
    pub filter: FilterChoice,
    pub profile: FilterProfile,
    pub f_acc: f64,
    pub seeds: SeedSet,
    pub trunk: FiberSpec,
    pub pon: FiberSpec,
    pub coupler: CouplerSpec,
    pub leak_enabled: bool,
    pub plan: FrequencyPlan,
}

pub fn build_scenario(arch: Architecture, filter: FilterChoice, f_acc: f64, seeds: SeedSet, orders: FilterOrders) -> Result<Scenario> {
    if !(f_acc >= 0.0) || !f_acc.is_finite() {
        return Err(Error::InvalidParameter(format!("frequency accuracy {f_acc} Hz")));
    }
    let profile = filter.profile(orders);
    Ok(Scenario {
        architecture: arch,
        filter,
        profile,
        f_acc,
        seeds,
        trunk: FiberSpec::trunk(),
        pon: FiberSpec::pon(),
        coupler: if arch.has_circulator() { CouplerSpec::circulator() } else { CouplerSpec::diplexer() },
        leak_enabled: arch.has_circulator(),
        plan: FrequencyPlan::new(arch, f_acc),
    })
}

impl Scenario {
    /// Circulator kept (with its loss) but fed a dark transmitter.
    pub fn without_leak(mut self) -> Self {
        self.leak_enabled = false;
        self
    }

    /// Filter, fiber and coupler losses counted into the budget.
    pub fn fixed_loss_db(&self) -> f64 {
        2.0 * self.profile.nominal_loss_db() + self.trunk.loss_db() + self.pon.loss_db() + self.coupler.insertion_loss_db
    }

    pub fn total_dispersion(&self) -> (f64, f64) {
        (
            self.trunk.accumulated_dispersion(WAVELENGTH) + self.pon.accumulated_dispersion(WAVELENGTH),
            self.trunk.accumulated_slope() + self.pon.accumulated_slope(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub symbols: usize,
    pub preamble_len: usize,
    pub pilot_period: usize,
    pub eq_taps: usize,
    /// Training symbols; `None` uses the whole preamble.
    pub eq_training_len: Option<usize>,
    pub agc_clip_factor: f64,
    pub adc_bits: Option<u32>,
    pub orders: FilterOrders,
    pub seeds: SeedSet,
    pub linewidth: f64,
    pub sensitivity_dbm: f64,
    /// Budget search interval, dB.
    pub bracket: (f64, f64),
    pub stop_width_db: f64,
    pub min_bits: usize,
    /// DSP stage dumps, written only by [`Study::verify_calibration`].
    pub debug_dir: Option<std::path::PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            symbols: 147_456,
            preamble_len: 10_000,
            pilot_period: 32,
            eq_taps: 15,
            eq_training_len: None,
            agc_clip_factor: DEFAULT_CLIP_FACTOR,
            adc_bits: Some(6),
            orders: FilterOrders::default(),
            seeds: SeedSet::new(1),
            linewidth: 1e6,
            sensitivity_dbm: -38.0,
            bracket: (20.0, 45.0),
            stop_width_db: 0.05,
            min_bits: 500_000,
            debug_dir: None,
        }
    }
}

impl StudyConfig {
    pub fn layout(&self) -> Result<FrameLayout> {
        FrameLayout::new(self.symbols, self.preamble_len, self.pilot_period)
    }

    /// Parameter checks that do not need any simulation.
    pub fn validate(&self) -> Result<()> {
        let layout = self.layout()?;
        DspConfig { eq_taps: self.eq_taps, eq_training_len: self.training_len(), min_bits: self.min_bits, ..DspConfig::new(SYMBOL_RATE, 0.0, 0.0, 0.0, WAVELENGTH) }
            .validate(&layout)?;
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.agc_clip_factor > 0.0) {
            return bad("AGC clip factor must be positive");
        }
        if self.adc_bits == Some(0) {
            return bad("ADC needs at least one bit");
        }
        if !(self.orders.smooth > 0.0 && self.orders.sharp > 0.0) {
            return bad("filter orders must be positive");
        }
        if !(self.bracket.0 < self.bracket.1) || !(self.stop_width_db > 0.0) {
            return bad("budget bracket must be increasing with a positive stopping width");
        }
        if !(self.linewidth >= 0.0) || !self.sensitivity_dbm.is_finite() {
            return bad("linewidth and sensitivity must be finite, linewidth non-negative");
        }
        if self.min_bits > layout.counted_bits() {
            return Err(Error::TooFewBits { available: layout.counted_bits(), required: self.min_bits });
        }
        Ok(())
    }

    fn training_len(&self) -> usize {
        self.eq_training_len.unwrap_or(self.preamble_len)
    }

    /// Everything the noise calibration depends on.
    pub fn calibration_description(&self, kind: ReceiverKind) -> String {
        format!(
            "{kind:?} symbols={} preamble={} period={} taps={} training={} clip={} bits={:?} seeds={} linewidth={} sensitivity={}",
            self.symbols,
            self.preamble_len,
            self.pilot_period,
            self.eq_taps,
            self.training_len(),
            self.agc_clip_factor,
            self.adc_bits,
            self.seeds.id,
            self.linewidth,
            self.sensitivity_dbm
        )
    }
}

/// Outcome of a budget search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetPoint {
    pub budget_db: f64,
    pub ber_at_threshold: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyPoint {
    pub f_acc: f64,
    /// NaN when the threshold is not reached anywhere in the bracket.
    pub budget_at_threshold: f64,
    /// `+inf` when the budget is NaN.
    pub penalty: f64,
    pub ber_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyCurve {
    pub architecture: Architecture,
    pub filter: String,
    pub reference_budget: f64,
    pub points: Vec<PenaltyPoint>,
}

impl PenaltyCurve {
    /// First f_acc at which the penalty reaches `level`, linearly
    /// interpolated between grid points; `None` if it never does.
    pub fn crossing(&self, level: f64) -> Option<f64> {
        let first = self.points.first()?;
        if first.penalty >= level {
            return Some(first.f_acc);
        }
        self.points.windows(2).find_map(|w| {
            let (a, b) = (&w[0], &w[1]);
            if b.penalty >= level {
                if !b.penalty.is_finite() {
                    return Some(b.f_acc);
                }
                Some(a.f_acc + (level - a.penalty) / (b.penalty - a.penalty) * (b.f_acc - a.f_acc))
            } else {
                None
            }
        })
    }

    pub fn max_penalty(&self) -> f64 {
        self.points.iter().map(|p| p.penalty).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A scenario with everything up to the receiver input precomputed.
///
/// The downstream field is carried to the ADC rate at zero attenuation;
/// the leak is carried separately. Attenuation, coupling, noise and the
/// ADC are applied per trial.
pub struct PreparedScenario<'a> {
    pub scenario: Scenario,
    frame: &'a FrameData,
    ds: SampledField,
    leak: Option<SampledField>,
    rx: RxConfig,
    dsp: DspConfig,
    noise_psd: f64,
    noise_seed: u64,
    fixed_loss_db: f64,
}

impl PreparedScenario<'_> {
    pub fn fixed_loss_db(&self) -> f64 {
        self.fixed_loss_db
    }

    /// Power at the receiver input for a given budget, dBm.
    pub fn received_power_dbm(&self, budget_db: f64) -> f64 {
        self.ds.power_dbm() - (budget_db - self.fixed_loss_db) - self.scenario.coupler.insertion_loss_db
    }

    /// BER after the VOA set to `voa_db`. DSP failures (lost sync,
    /// unconverged equalizer) count as BER 0.5.
    pub fn run_once(&self, voa_db: f64) -> Result<f64> {
        let attenuated = voa(&self.ds, voa_db)?;
        let coupled = couple(&attenuated, self.leak.as_ref(), &self.scenario.coupler)?;
        let noisy = add_rx_noise(&coupled, self.noise_psd, self.noise_seed)?;
        let adc = agc_adc(&noisy, &self.rx, SYMBOL_RATE)?;
        match run_chain(&adc, self.frame, &self.dsp) {
            Ok(out) => Ok(out.ber()),
            Err(Error::AlignmentLost(_) | Error::NotConverged { .. } | Error::SingularEqualizer) => Ok(0.5),
            Err(e) => Err(e),
        }
    }

    pub fn ber_at_budget(&self, budget_db: f64) -> Result<f64> {
        self.run_once(budget_db - self.fixed_loss_db)
    }
}

/// Owns the frame, calibrations and reference budgets shared by all
/// scenarios of a run. Safe to share across worker threads.
pub struct Study {
    config: StudyConfig,
    frame: FrameData,
    neighbor_frames: [FrameData; 2],
    upstream_frame: FrameData,
    calibrations: Arc<[OnceLock<std::result::Result<NoiseCalibration, Error>>; 2]>,
    references: Arc<Mutex<HashMap<Architecture, Arc<OnceLock<std::result::Result<BudgetPoint, Error>>>>>>,
    cache: Arc<Mutex<CalibrationCache>>,
    drives: Arc<Mutex<HashMap<(usize, u64), Arc<SampledField>>>>,
}

impl Study {
    pub fn new(config: StudyConfig) -> Result<Self> {
        Study::with_cache(config, CalibrationCache::default())
    }

    pub fn with_cache(config: StudyConfig, cache: CalibrationCache) -> Result<Self> {
        config.validate()?;
        let layout = config.layout()?;
        let s = config.seeds;
        let frame = FrameData::generate(layout, s.stream("data"), s.stream("training"));
        let neighbor_frames = [
            FrameData::generate(layout, s.stream("data-lower"), s.stream("training-lower")),
            FrameData::generate(layout, s.stream("data-upper"), s.stream("training-upper")),
        ];
        let upstream_frame = FrameData::generate(layout, s.stream("data-upstream"), s.stream("training-upstream"));
        Ok(Study {
            config,
            frame,
            neighbor_frames,
            upstream_frame,
            calibrations: Arc::new([OnceLock::new(), OnceLock::new()]),
            references: Arc::new(Mutex::new(HashMap::new())),
            cache: Arc::new(Mutex::new(cache)),
            drives: Arc::default(),
        })
    }

    /// Same frame, calibrations and references, different filter orders.
    /// References use the flat filter, so they carry over unchanged.
    pub fn with_orders(&self, orders: FilterOrders) -> Study {
        Study {
            config: StudyConfig { orders, ..self.config.clone() },
            frame: self.frame.clone(),
            neighbor_frames: self.neighbor_frames.clone(),
            upstream_frame: self.upstream_frame.clone(),
            calibrations: self.calibrations.clone(),
            references: self.references.clone(),
            cache: self.cache.clone(),
            drives: self.drives.clone(),
        }
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn frame(&self) -> &FrameData {
        &self.frame
    }

    pub fn calibration_cache(&self) -> CalibrationCache {
        self.cache.lock().expect("cache lock").clone()
    }

    pub fn scenario(&self, arch: Architecture, filter: FilterChoice, f_acc: f64) -> Result<Scenario> {
        build_scenario(arch, filter, f_acc, self.config.seeds, self.config.orders)
    }

    fn dsp_config(&self, f_if: f64, cd: (f64, f64), cd_center: f64) -> DspConfig {
        DspConfig {
            cd_center,
            eq_taps: self.config.eq_taps,
            eq_training_len: self.config.training_len(),
            min_bits: self.config.min_bits,
            ..DspConfig::new(SYMBOL_RATE, f_if, cd.0, cd.1, WAVELENGTH)
        }
    }

    fn laser(&self, detuning: f64, stream: &str) -> LaserSpec {
        LaserSpec::new(LO_POWER_DBM, self.config.linewidth, detuning, self.config.seeds.stream(stream))
    }

    /// Back-to-back chain at the ADC without noise, for one receiver kind.
    fn back_to_back(&self, kind: ReceiverKind) -> Result<(SampledField, RxConfig, DspConfig)> {
        let f_if = if kind == ReceiverKind::Subcarrier { -SUBCARRIER } else { 0.0 };
        let tx = kind.tx_config(f_if);
        let field = transmit(&self.frame, &tx, &self.laser(0.0, "cal-tx"), WAVELENGTH, self.config.seeds.stream("cal-ase"))?
            .set_power(self.config.sensitivity_dbm)?;
        let rx = self.rx_config(kind, self.laser(0.0, "cal-lo"));
        let lo = laser_field(&rx.lo, field.len(), field.sample_rate())?;
        let adc_in = analog_frontend(&mix_with(&field, &lo)?, &rx, SYMBOL_RATE)?;
        Ok((adc_in, rx, self.dsp_config(f_if, (0.0, 0.0), 0.0)))
    }

    fn rx_config(&self, kind: ReceiverKind, lo: LaserSpec) -> RxConfig {
        RxConfig { agc_clip_factor: self.config.agc_clip_factor, adc_bits: self.config.adc_bits, ..kind.rx_config(lo) }
    }

    /// BER of the back-to-back chain at the sensitivity power for a given
    /// receiver noise density.
    pub fn back_to_back_ber(&self, kind: ReceiverKind, noise_psds: &[f64]) -> Result<Vec<f64>> {
        let (adc_in, rx, dsp) = self.back_to_back(kind)?;
        let seed = self.config.seeds.stream("rx-noise");
        noise_psds
            .iter()
            .map(|&psd| {
                let adc = agc_adc(&add_rx_noise(&adc_in, psd, seed)?, &rx, SYMBOL_RATE)?;
                Ok(run_chain(&adc, &self.frame, &dsp)?.ber())
            })
            .collect()
    }

    /// Noise density placing the back-to-back chain at 2% BER at the
    /// sensitivity power; computed once per receiver kind, or taken from
    /// the calibration cache.
    pub fn calibration(&self, kind: ReceiverKind) -> Result<NoiseCalibration> {
        self.calibrations[kind.index()]
            .get_or_init(|| {
                let key = calibration_key(&self.config.calibration_description(kind));
                if let Some(c) = self.cache.lock().expect("cache lock").get(&key) {
                    return Ok(c);
                }
                let (adc_in, rx, dsp) = self.back_to_back(kind)?;
                let seed = self.config.seeds.stream("rx-noise");
                let ber_at = |psd: f64| -> Result<f64> {
                    let adc = agc_adc(&add_rx_noise(&adc_in, psd, seed)?, &rx, SYMBOL_RATE)?;
                    Ok(run_chain(&adc, &self.frame, &dsp)?.ber())
                };
                // theory needs 6.25 dB; implementation losses only push the
                // required SNR up, i.e. the density down
                let theory = noise_psd_for(self.config.sensitivity_dbm, 6.25, SYMBOL_RATE);
                let cal = calibrate_noise(ber_at, (theory * db_to_amplitude(-10.0), theory * db_to_amplitude(1.0)), self.config.sensitivity_dbm)?;
                self.cache.lock().expect("cache lock").insert(key, cal);
                Ok(cal)
            })
            .clone()
    }

    fn frame_by_id(&self, id: usize) -> &FrameData {
        match id {
            0 => &self.frame,
            1 | 2 => &self.neighbor_frames[id - 1],
            _ => &self.upstream_frame,
        }
    }

    /// Transmitter output; the shaped drive does not depend on the laser and
    /// is kept across scenarios.
    /// Calibration plus a fresh back-to-back run at the calibrated noise
    /// level, with DSP dumps if configured. Returns the run's BER.
    pub fn verify_calibration(&self, kind: ReceiverKind) -> Result<(NoiseCalibration, f64)> {
        let cal = self.calibration(kind)?;
        let (adc_in, rx, dsp) = self.back_to_back(kind)?;
        let dsp = DspConfig { debug_dir: self.config.debug_dir.clone(), ..dsp };
        let adc = agc_adc(&add_rx_noise(&adc_in, cal.noise_psd, self.config.seeds.stream("rx-noise"))?, &rx, SYMBOL_RATE)?;
        Ok((cal, run_chain(&adc, &self.frame, &dsp)?.ber()))
    }

    fn transmitter(&self, frame_id: usize, kind: ReceiverKind, f_if: f64, laser: LaserSpec, ase: &str) -> Result<SampledField> {
        let cfg = kind.tx_config(f_if);
        let key = (frame_id, f_if.to_bits());
        let cached = self.drives.lock().expect("drive lock").get(&key).cloned();
        let drive = match cached {
            Some(d) => d,
            None => {
                let frame = self.frame_by_id(frame_id);
                let d = Arc::new(shape_and_bandlimit([frame.symbols(0), frame.symbols(1)], &cfg)?);
                self.drives.lock().expect("drive lock").insert(key, d.clone());
                d
            }
        };
        let cw = laser_field(&laser, drive.len(), drive.sample_rate())?;
        boost(&iq_modulate(&cw, &drive, &cfg)?, &cfg, WAVELENGTH, self.config.seeds.stream(ase))
    }

    /// Runs the scenario up to the receiver input and through the analog
    /// front end.
    pub fn prepare(&self, sc: &Scenario) -> Result<PreparedScenario<'_>> {
        let kind = sc.architecture.receiver();
        let cal = self.calibration(kind)?;
        let plan = sc.plan;

        let ds_laser = self.laser(plan.ds_laser_offset, "ds-laser");
        let center = self.transmitter(0, kind, plan.ds_if, ds_laser, "ds-ase")?;
        let lower = self.transmitter(
            1,
            kind,
            plan.ds_if,
            self.laser(plan.ds_laser_offset - CHANNEL_SPACING, "ds-laser-lower"),
            "ds-ase-lower",
        )?;
        let upper = self.transmitter(
            2,
            kind,
            plan.ds_if,
            self.laser(plan.ds_laser_offset + CHANNEL_SPACING, "ds-laser-upper"),
            "ds-ase-upper",
        )?;

        // MUX port per channel, then trunk, DEMUX and PON fiber in one pass
        let (cd, slope) = sc.total_dispersion();
        let demux = filter_transfer(&sc.profile);
        let path = SpectralTransfer::constant(db_to_amplitude(-(sc.trunk.loss_db() + sc.pon.loss_db())).into())
            .then(&dispersion_transfer(cd, slope, WAVELENGTH))
            .then(&demux);
        let port = |offset: f64| filter_transfer(&sc.profile.recentered(sc.profile.center + offset)).then(&path);
        let (h_mid, h_lo, h_hi) = (port(0.0), port(-CHANNEL_SPACING), port(CHANNEL_SPACING));
        let at_onu = filtered_sum(&[(&center, &h_mid), (&lower, &h_lo), (&upper, &h_hi)])?;

        // ONU: one-laser shares its upstream laser with the LO
        let lo_spec = match sc.architecture {
            Architecture::SingleChannelOneLaser => self.laser(plan.us_laser_offset, "us-laser"),
            _ => self.laser(plan.ds_laser_offset, "lo-laser"),
        };
        let rx = RxConfig { noise_psd: cal.noise_psd, ..self.rx_config(kind, lo_spec) };
        let lo = laser_field(&lo_spec, at_onu.len(), at_onu.sample_rate())?;
        let ds = analog_frontend(&mix_with(&at_onu, &lo)?, &rx, SYMBOL_RATE)?;

        let leak = if sc.architecture.has_circulator() {
            if sc.leak_enabled {
                let us_laser = self.laser(plan.us_laser_offset, "us-laser");
                let us_kind = if plan.us_if != 0.0 { ReceiverKind::Subcarrier } else { ReceiverKind::Intradyne };
                let us = self.transmitter(3, us_kind, plan.us_if, us_laser, "us-ase")?;
                Some(analog_frontend(&mix_with(&us, &lo)?, &rx, SYMBOL_RATE)?)
            } else {
                Some(SampledField::zeros(ds.len(), ds.sample_rate())?)
            }
        } else {
            None
        };

        let dsp = self.dsp_config(plan.ds_laser_offset + plan.ds_if - lo_spec.detuning, (cd, slope), -lo_spec.detuning);
        Ok(PreparedScenario {
            scenario: sc.clone(),
            frame: &self.frame,
            ds,
            leak,
            rx,
            dsp,
            noise_psd: cal.noise_psd,
            noise_seed: self.config.seeds.stream("rx-noise"),
            fixed_loss_db: sc.fixed_loss_db(),
        })
    }

    pub fn run_once(&self, sc: &Scenario, voa_db: f64) -> Result<f64> {
        self.prepare(sc)?.run_once(voa_db)
    }

    /// Budget (VOA setting plus fixed losses) at which the BER crosses 2%.
    ///
    /// Bisection over the budget bracket down to the stopping width, then
    /// linear interpolation of log BER inside the final bracket. One more
    /// run at the result gives the residual BER.
    pub fn find_budget(&self, sc: &Scenario) -> Result<BudgetPoint> {
        let prepared = self.prepare(sc)?;
        budget_search(|b| prepared.ber_at_budget(b), self.config.bracket, self.config.stop_width_db, self.config.min_bits)
    }

    /// Budget with flat filters, no leak and a perfectly locked laser.
    pub fn reference_budget(&self, arch: Architecture) -> Result<BudgetPoint> {
        let cell = self.references.lock().expect("reference lock").entry(arch).or_default().clone();
        cell.get_or_init(|| {
            let sc = self.scenario(arch, FilterChoice::Flat, 0.0)?.without_leak();
            self.find_budget(&sc)
        })
        .clone()
    }

    pub fn penalty_point(&self, arch: Architecture, filter: &FilterChoice, f_acc: f64) -> Result<PenaltyPoint> {
        let reference = self.reference_budget(arch)?.budget_db;
        let sc = self.scenario(arch, filter.clone(), f_acc)?;
        self.penalty_for(&sc, reference)
    }

    pub fn penalty_for(&self, sc: &Scenario, reference: f64) -> Result<PenaltyPoint> {
        match self.find_budget(sc) {
            Ok(b) => Ok(PenaltyPoint {
                f_acc: sc.f_acc,
                budget_at_threshold: b.budget_db,
                penalty: reference - b.budget_db,
                ber_residual: b.ber_at_threshold,
            }),
            Err(Error::NotBracketed { .. }) => {
                Ok(PenaltyPoint { f_acc: sc.f_acc, budget_at_threshold: f64::NAN, penalty: f64::INFINITY, ber_residual: f64::NAN })
            }
            Err(e) => Err(e),
        }
    }

    /// One point per grid value (Hz, ascending).
    pub fn penalty_sweep(&self, arch: Architecture, filter: &FilterChoice, grid: &[f64]) -> Result<PenaltyCurve> {
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("frequency accuracy grid must be strictly ascending".into()));
        }
        let reference = self.reference_budget(arch)?.budget_db;
        let points = grid.iter().map(|&f| self.penalty_point(arch, filter, f)).collect::<Result<Vec<_>>>()?;
        Ok(PenaltyCurve { architecture: arch, filter: filter.name(), reference_budget: reference, points })
    }
}

/// Lowest BER resolvable with `bits` counted bits, used as a floor for
/// log interpolation.
fn ber_floor(bits: usize) -> f64 {
    0.5 / bits.max(1) as f64
}

/// Bisection for BER = 2% over `bracket` (budget, dB), BER non-decreasing
/// in budget.
pub fn budget_search(
    mut ber_at: impl FnMut(f64) -> Result<f64>,
    bracket: (f64, f64),
    width: f64,
    bits: usize,
) -> Result<BudgetPoint> {
    let (mut lo, mut hi) = bracket;
    let mut ber_lo = ber_at(lo)?;
    let mut ber_hi = ber_at(hi)?;
    let mut evaluations = 2;
    if !(ber_lo <= TARGET_BER && ber_hi > TARGET_BER) {
        return Err(Error::NotBracketed { lo, hi, ber_lo, ber_hi });
    }
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        let ber = ber_at(mid)?;
        evaluations += 1;
        if ber <= TARGET_BER {
            lo = mid;
            ber_lo = ber;
        } else {
            hi = mid;
            ber_hi = ber;
        }
    }
    let floor = ber_floor(bits);
    let (y_lo, y_hi) = (ber_lo.max(floor).ln(), ber_hi.max(floor).ln());
    let target = TARGET_BER.ln();
    let budget = if y_hi > y_lo { lo + (target - y_lo) / (y_hi - y_lo) * (hi - lo) } else { 0.5 * (lo + hi) };
    let ber_at_threshold = ber_at(budget)?;
    Ok(BudgetPoint { budget_db: budget, ber_at_threshold, evaluations: evaluations + 1 })
}

pub fn ghz(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v * GHZ).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert!(matches!("triple".parse::<Architecture>(), Err(Error::UnknownArchitecture(_))));
    }

    #[test]
    fn filter_names() {
        for f in [FilterChoice::Gaussian60, FilterChoice::Smooth80, FilterChoice::Sharp80, FilterChoice::Flat] {
            assert_eq!(FilterChoice::parse(&f.name()).unwrap(), f);
        }
        assert!(matches!(FilterChoice::parse("boxcar"), Err(Error::UnknownFilter(_))));
        assert!(matches!(FilterChoice::parse("measured:"), Err(Error::UnknownFilter(_))));
        let sharp = FilterChoice::Sharp80.profile(FilterOrders { smooth: 2.0, sharp: 4.5 });
        assert_eq!(sharp.order(), 4.5);
    }

    #[test]
    fn frequency_plans() {
        let d = FrequencyPlan::new(Architecture::DualChannel, 0.0);
        assert_eq!((d.ds_laser_offset, d.ds_if), (0.0, 0.0));
        let t = FrequencyPlan::new(Architecture::SingleChannelTwoLaser, 3e9);
        assert!((t.ds_laser_offset + 19.5e9).abs() < 1.0);
        assert!((t.us_laser_offset - 19.5e9).abs() < 1.0);
        let o = FrequencyPlan::new(Architecture::SingleChannelOneLaser, 0.0);
        assert_eq!((o.ds_laser_offset + o.ds_if, o.us_laser_offset + o.us_if), (-16.5e9, 16.5e9));
        let o = FrequencyPlan::new(Architecture::SingleChannelOneLaser, 5e9);
        assert_eq!(o.ds_laser_offset + o.ds_if, -21.5e9);
    }

    #[test]
    fn scenario_losses() {
        let s = SeedSet::new(1);
        let dual = build_scenario(Architecture::DualChannel, FilterChoice::Gaussian60, 0.0, s, FilterOrders::default()).unwrap();
        assert!(!dual.leak_enabled);
        let circ = build_scenario(Architecture::SingleChannelTwoLaser, FilterChoice::Flat, 0.0, s, FilterOrders::default()).unwrap();
        assert!(circ.leak_enabled && !circ.clone().without_leak().leak_enabled);
        // 2 x 3.5 dB filters, 6 dB trunk, 1 dB coupler
        assert!((circ.fixed_loss_db() - 14.0).abs() < 1e-9);
        assert!(build_scenario(Architecture::DualChannel, FilterChoice::Flat, -1.0, s, FilterOrders::default()).is_err());
    }

    #[test]
    fn seed_streams_differ_and_repeat() {
        let s = SeedSet::new(7);
        assert_eq!(s.stream("data"), SeedSet::new(7).stream("data"));
        assert_ne!(s.stream("data"), s.stream("training"));
        assert_ne!(s.stream("data"), SeedSet::new(8).stream("data"));
    }

    #[test]
    fn budget_search_on_synthetic_waterfall() {
        // BER rising one decade per dB, crossing 2% at 37.3 dB
        let ber = |b: f64| Ok((0.02 * 10f64.powf(b - 37.3)).min(0.5));
        let p = budget_search(ber, (20.0, 45.0), 0.05, 500_000).unwrap();
        assert!((p.budget_db - 37.3).abs() < 0.01, "{p:?}");
        assert!((p.ber_at_threshold - 0.02).abs() < 0.002);
        assert!(p.evaluations <= 2 + 10 + 1);
        let flat = |_: f64| Ok(0.3);
        assert!(matches!(budget_search(flat, (20.0, 45.0), 0.05, 1000), Err(Error::NotBracketed { .. })));
    }

    #[test]
    fn crossing_interpolates() {
        let pt = |f: f64, p: f64| PenaltyPoint { f_acc: f, budget_at_threshold: 0.0, penalty: p, ber_residual: 0.02 };
        let c = PenaltyCurve {
            architecture: Architecture::DualChannel,
            filter: "x".into(),
            reference_budget: 38.0,
            points: vec![pt(0.0, 0.0), pt(2.0, 0.5), pt(4.0, 1.5), pt(6.0, f64::INFINITY)],
        };
        assert!((c.crossing(1.0).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(c.crossing(2.0), Some(6.0));
        assert_eq!(c.crossing(-1.0), Some(0.0));
        let c2 = PenaltyCurve { points: vec![pt(0.0, 0.0), pt(2.0, 0.5)], ..c };
        assert_eq!(c2.crossing(1.0), None);
    }
}
