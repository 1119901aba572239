//! Optical plant between the transmitter booster and the receiver input:
//! MUX/DEMUX filter ports, the WDM trunk, fiber spans, diplexer or
//! circulator, and the attenuator standing in for the ODN budget.

use std::f64::consts::{LN_2, PI};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::{filtered_sum, SampledField, SpectralTransfer};
use crate::units::{db_to_amplitude, GHZ, SPEED_OF_LIGHT};

/// Magnitude table (frequency offset, dB) with linear interpolation.
///
/// Text format: one `frequency_offset_ghz magnitude_db` pair per line,
/// separated by whitespace or a comma; `#` starts a comment. Offsets must
/// be strictly increasing. The magnitudes are absolute, insertion loss
/// included. Outside the table the end values are held.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredProfile {
    offsets_hz: Vec<f64>,
    magnitude_db: Vec<f64>,
}

impl MeasuredProfile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut offsets_hz = Vec::new();
        let mut magnitude_db = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let cols: Vec<&str> = content.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            if cols.len() != 2 {
                return Err(Error::Profile { line, message: format!("expected 2 columns, found {}", cols.len()) });
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Profile { line, message: format!("`{s}` is not a number") })
            };
            let f = parse(cols[0])? * GHZ;
            let m = parse(cols[1])?;
            if offsets_hz.last().is_some_and(|&prev| f <= prev) {
                return Err(Error::Profile { line, message: "frequency offsets must increase".into() });
            }
            offsets_hz.push(f);
            magnitude_db.push(m);
        }
        if offsets_hz.len() < 2 {
            return Err(Error::Profile { line: text.lines().count(), message: "need at least two points".into() });
        }
        Ok(MeasuredProfile { offsets_hz, magnitude_db })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        MeasuredProfile::parse(&std::fs::read_to_string(path)?)
    }

    pub fn magnitude_db_at(&self, offset: f64) -> f64 {
        let xs = &self.offsets_hz;
        let ys = &self.magnitude_db;
        if offset <= xs[0] {
            return ys[0];
        }
        if offset >= xs[xs.len() - 1] {
            return ys[ys.len() - 1];
        }
        let i = xs.partition_point(|&x| x <= offset) - 1;
        let t = (offset - xs[i]) / (xs[i + 1] - xs[i]);
        ys[i] + t * (ys[i + 1] - ys[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterShape {
    Gaussian,
    SuperGaussian { order: f64 },
    /// Frequency-independent loss; the unfiltered reference.
    Flat,
    Measured(Arc<MeasuredProfile>),
}

/// One MUX/DEMUX port.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterProfile {
    pub shape: FilterShape,
    pub bw_3db: f64,
    pub insertion_loss_db: f64,
    /// Port center relative to the channel nominal frequency.
    pub center: f64,
}

impl FilterProfile {
    pub fn gaussian(bw_3db: f64) -> Self {
        FilterProfile { shape: FilterShape::Gaussian, bw_3db, insertion_loss_db: 3.5, center: 0.0 }
    }

    pub fn super_gaussian(bw_3db: f64, order: f64) -> Self {
        FilterProfile { shape: FilterShape::SuperGaussian { order }, ..FilterProfile::gaussian(bw_3db) }
    }

    pub fn flat() -> Self {
        FilterProfile { shape: FilterShape::Flat, ..FilterProfile::gaussian(f64::INFINITY) }
    }

    pub fn measured(profile: MeasuredProfile) -> Self {
        FilterProfile { shape: FilterShape::Measured(Arc::new(profile)), ..FilterProfile::flat() }
    }

    pub fn recentered(&self, center: f64) -> Self {
        FilterProfile { center, ..self.clone() }
    }

    pub fn order(&self) -> f64 {
        match self.shape {
            FilterShape::SuperGaussian { order } => order,
            _ => 1.0,
        }
    }

    /// Nominal in-band loss used for budget bookkeeping.
    pub fn nominal_loss_db(&self) -> f64 {
        match &self.shape {
            FilterShape::Measured(m) => -m.magnitude_db_at(0.0),
            _ => self.insertion_loss_db,
        }
    }
}

/// Zero-phase port response:
/// `|H(f)|^2 = 10^(-IL/10) * exp(-ln2 * (2 (f - center) / bw)^(2 order))`.
pub fn filter_transfer(p: &FilterProfile) -> SpectralTransfer {
    let center = p.center;
    let il = db_to_amplitude(-p.insertion_loss_db);
    match &p.shape {
        FilterShape::Flat => SpectralTransfer::constant(Complex64::new(il, 0.0)),
        FilterShape::Measured(m) => {
            let m = m.clone();
            SpectralTransfer::magnitude(move |f| db_to_amplitude(m.magnitude_db_at(f - center)))
        }
        shape => {
            let order = if let FilterShape::SuperGaussian { order } = shape { *order } else { 1.0 };
            let half = p.bw_3db / 2.0;
            SpectralTransfer::magnitude(move |f| {
                let x = ((f - center) / half).abs();
                il * (-0.5 * LN_2 * x.powf(2.0 * order)).exp()
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberSpec {
    pub length_km: f64,
    pub alpha_db_per_km: f64,
    /// Dispersion at `reference_wavelength`, ps/(nm km).
    pub dispersion: f64,
    pub reference_wavelength: f64,
    /// ps/(nm^2 km)
    pub slope: f64,
    pub lossless: bool,
}

impl FiberSpec {
    /// 30 km bidirectional SSMF trunk.
    pub fn trunk() -> Self {
        FiberSpec {
            length_km: 30.0,
            alpha_db_per_km: 0.2,
            dispersion: 16.3,
            reference_wavelength: 1550e-9,
            slope: 0.056,
            lossless: false,
        }
    }

    /// 20 km lossless PON drop; its loss lives in the attenuator.
    pub fn pon() -> Self {
        FiberSpec { length_km: 20.0, lossless: true, ..FiberSpec::trunk() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km >= 0.0) {
            return Err(Error::InvalidParameter(format!("fiber length {} km", self.length_km)));
        }
        Ok(())
    }

    /// ps/(nm km) at `wavelength`, from the linear slope model.
    pub fn dispersion_at(&self, wavelength: f64) -> f64 {
        self.dispersion + self.slope * (wavelength - self.reference_wavelength) * 1e9
    }

    /// Accumulated dispersion in ps/nm.
    pub fn accumulated_dispersion(&self, wavelength: f64) -> f64 {
        self.dispersion_at(wavelength) * self.length_km
    }

    pub fn accumulated_slope(&self) -> f64 {
        self.slope * self.length_km
    }

    pub fn loss_db(&self) -> f64 {
        if self.lossless {
            0.0
        } else {
            self.alpha_db_per_km * self.length_km
        }
    }
}

/// `(beta2 L, beta3 L)` in s^2 and s^3 for accumulated dispersion (ps/nm)
/// and slope (ps/nm^2) at `wavelength`.
pub fn dispersion_coefficients(dispersion_ps_nm: f64, slope_ps_nm2: f64, wavelength: f64) -> (f64, f64) {
    // ps/nm -> s/m, ps/nm^2 -> s/m^2
    let d = dispersion_ps_nm * 1e-3;
    let s = slope_ps_nm2 * 1e6;
    let k = wavelength * wavelength / (2.0 * PI * SPEED_OF_LIGHT);
    let beta2 = -d * k;
    let beta3 = k * k * (s + 2.0 * d / wavelength);
    (beta2, beta3)
}

/// All-pass `exp(-j (beta2 L/2 w^2 + beta3 L/6 w^3))`; negate both inputs
/// for the inverse.
pub fn dispersion_transfer(dispersion_ps_nm: f64, slope_ps_nm2: f64, wavelength: f64) -> SpectralTransfer {
    let (b2, b3) = dispersion_coefficients(dispersion_ps_nm, slope_ps_nm2, wavelength);
    SpectralTransfer::new(move |f| {
        let w = 2.0 * PI * f;
        let phi = -(b2 / 2.0 * w * w + b3 / 6.0 * w * w * w);
        Complex64::from_polar(1.0, phi)
    })
}

impl FiberSpec {
    pub fn transfer(&self, wavelength: f64) -> SpectralTransfer {
        dispersion_transfer(self.accumulated_dispersion(wavelength), self.accumulated_slope(), wavelength)
    }
}

/// Linear SSMF span: dispersion all-pass plus attenuation unless lossless.
/// Frequencies are taken relative to the channel center at `wavelength`.
pub fn ssmf_propagate(field: &SampledField, spec: &FiberSpec, wavelength: f64) -> Result<SampledField> {
    spec.validate()?;
    let out = field.apply_transfer(&spec.transfer(wavelength), 0.0);
    Ok(out.scaled(db_to_amplitude(-spec.loss_db())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplerKind {
    Diplexer,
    Circulator { isolation_db: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplerSpec {
    pub kind: CouplerKind,
    pub insertion_loss_db: f64,
}

impl CouplerSpec {
    pub fn diplexer() -> Self {
        CouplerSpec { kind: CouplerKind::Diplexer, insertion_loss_db: 1.0 }
    }

    pub fn circulator() -> Self {
        CouplerSpec { kind: CouplerKind::Circulator { isolation_db: 30.0 }, insertion_loss_db: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.insertion_loss_db >= 0.0) {
            return Err(Error::InvalidParameter(format!("coupler insertion loss {}", self.insertion_loss_db)));
        }
        if let CouplerKind::Circulator { isolation_db } = self.kind {
            if !(isolation_db > 0.0) {
                return Err(Error::InvalidParameter(format!("circulator isolation {isolation_db}")));
            }
        }
        Ok(())
    }
}

/// Receive-side coupler. A diplexer passes `through` with its insertion
/// loss and adds no filtering; a circulator also adds the co-located
/// transmitter's `leak`, attenuated by the port isolation.
pub fn couple(through: &SampledField, leak: Option<&SampledField>, spec: &CouplerSpec) -> Result<SampledField> {
    spec.validate()?;
    let passed = through.scaled(db_to_amplitude(-spec.insertion_loss_db));
    match spec.kind {
        CouplerKind::Diplexer => Ok(passed),
        CouplerKind::Circulator { isolation_db } => {
            let leak = leak.ok_or(Error::MissingLeak)?;
            let leaked = leak.scaled(db_to_amplitude(-isolation_db));
            crate::signal::superpose(&[&passed, &leaked])
        }
    }
}

/// Variable optical attenuator.
pub fn voa(field: &SampledField, attenuation_db: f64) -> Result<SampledField> {
    if !(attenuation_db >= 0.0) {
        return Err(Error::InvalidParameter(format!("attenuation {attenuation_db} dB")));
    }
    Ok(field.scaled(db_to_amplitude(-attenuation_db)))
}

/// MUX: each channel through its own port (the profile recentered at
/// `-grid`, `0`, `+grid`), then combined onto the trunk.
pub fn wdm_assemble(
    center: &SampledField,
    neighbors: [&SampledField; 2],
    grid: f64,
    profile: &FilterProfile,
) -> Result<SampledField> {
    let h_lo = filter_transfer(&profile.recentered(profile.center - grid));
    let h_mid = filter_transfer(profile);
    let h_hi = filter_transfer(&profile.recentered(profile.center + grid));
    filtered_sum(&[(center, &h_mid), (neighbors[0], &h_lo), (neighbors[1], &h_hi)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Band;
    use crate::transmitter::{gen_bits, qpsk_map, shape_and_bandlimit, TxConfig};
    use proptest::prelude::*;

    const LAMBDA: f64 = 1560.06e-9;

    fn h_db(p: &FilterProfile, f: f64) -> f64 {
        20.0 * filter_transfer(p).at(f).norm().log10()
    }

    fn qpsk_field(seed: u64, n_sym: usize, offset: f64) -> SampledField {
        let s0 = qpsk_map(&gen_bits(seed, 2 * n_sym)).unwrap();
        let s1 = qpsk_map(&gen_bits(seed + 1, 2 * n_sym)).unwrap();
        let cfg = TxConfig { analog_bw_3db: f64::INFINITY, ..TxConfig::baseband() };
        let f = shape_and_bandlimit([&s0, &s1], &cfg).unwrap().set_power(0.0).unwrap();
        f.frequency_shift(offset).unwrap()
    }

    fn evm_db(a: &SampledField, b: &SampledField) -> f64 {
        let num: f64 = a.ex().iter().zip(b.ex()).chain(a.ey().iter().zip(b.ey())).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.ex().iter().chain(b.ey()).map(|v| v.norm_sqr()).sum();
        10.0 * (num / den).log10()
    }

    #[test]
    fn filter_corner_points() {
        let g = FilterProfile::gaussian(60e9);
        assert!((h_db(&g, 0.0) + 3.5).abs() < 1e-12);
        assert!((h_db(&g, 30e9) + 6.5).abs() < 0.05);
        assert!((h_db(&g, -30e9) + 6.5).abs() < 0.05);
        for order in [1.5, 2.0, 2.5, 3.5, 4.0, 4.5] {
            let sg = FilterProfile::super_gaussian(80e9, order);
            assert!((h_db(&sg, 40e9) + 6.5).abs() < 0.05);
            assert!((h_db(&sg, -40e9) + 6.5).abs() < 0.05);
        }
        let flat = FilterProfile::flat();
        assert!((h_db(&flat, 123e9) + 3.5).abs() < 1e-12);
        let shifted = g.recentered(100e9);
        assert!((h_db(&shifted, 100e9) + 3.5).abs() < 1e-12);
    }

    #[test]
    fn measured_profile_interpolates() {
        let text = "# offset_ghz, dB\n-50 -40\n-25, -6.5\n0 -3.5\n25 -6.5\n50 -40\n";
        let m = MeasuredProfile::parse(text).unwrap();
        assert!((m.magnitude_db_at(12.5e9) + 5.0).abs() < 1e-12);
        assert_eq!(m.magnitude_db_at(-80e9), -40.0);
        let p = FilterProfile::measured(m);
        assert!((h_db(&p, 0.0) + 3.5).abs() < 1e-12);
        assert!((p.nominal_loss_db() - 3.5).abs() < 1e-12);
        assert!((h_db(&p.recentered(10e9), 35e9) + 6.5).abs() < 1e-9);

        assert!(matches!(MeasuredProfile::parse("0 1\n0 2\n"), Err(Error::Profile { line: 2, .. })));
        assert!(matches!(MeasuredProfile::parse("0 1\n1 x\n"), Err(Error::Profile { line: 2, .. })));
        assert!(matches!(MeasuredProfile::parse("0 1 2\n"), Err(Error::Profile { line: 1, .. })));
        assert!(MeasuredProfile::parse("0 1\n").is_err());
    }

    #[test]
    fn dispersion_at_channel_wavelength() {
        // independent arithmetic: 16.3 + 0.056 * (1560.06 - 1550)
        let expected = 16.3 + 0.056 * 10.06;
        assert!((FiberSpec::trunk().dispersion_at(LAMBDA) - expected).abs() < 1e-9);
        assert!((FiberSpec::trunk().dispersion_at(LAMBDA) - 16.863).abs() < 1e-3);
        let (b2, _) = dispersion_coefficients(16.863, 0.0, LAMBDA);
        // ~ -21.5 ps^2/km for SSMF at 1560 nm
        assert!((b2 * 1e24 + 21.8).abs() < 0.5, "{}", b2 * 1e24);
    }

    #[test]
    fn trunk_loss_and_inverse_dispersion() {
        let f = qpsk_field(1, 2048, 0.0);
        let out = ssmf_propagate(&f, &FiberSpec::trunk(), LAMBDA).unwrap();
        assert!((f.power_dbm() - out.power_dbm() - 6.0).abs() < 0.01);

        let lossless = FiberSpec { lossless: true, ..FiberSpec::trunk() };
        let p = ssmf_propagate(&f, &lossless, LAMBDA).unwrap();
        assert!((p.mean_power() / f.mean_power() - 1.0).abs() < 1e-12);
        let inv = dispersion_transfer(-lossless.accumulated_dispersion(LAMBDA), -lossless.accumulated_slope(), LAMBDA);
        let back = p.apply_transfer(&inv, 0.0);
        assert!(evm_db(&back, &f) < -50.0);
        // dispersion actually distorts
        assert!(evm_db(&p, &f) > -10.0);
    }

    #[test]
    fn coupler_examples() {
        let f = qpsk_field(2, 256, 0.0).set_power(-20.0).unwrap();
        let dx = couple(&f, None, &CouplerSpec::diplexer()).unwrap();
        assert!((dx.power_dbm() + 21.0).abs() < 1e-9);

        let leak = qpsk_field(3, 256, 0.0);
        let zero = SampledField::zeros(f.len(), f.sample_rate()).unwrap();
        let quiet = couple(&zero, Some(&leak), &CouplerSpec::circulator()).unwrap();
        assert!((quiet.power_dbm() + 30.0).abs() < 1e-9);

        let no_leak = couple(&f, Some(&zero), &CouplerSpec::circulator()).unwrap();
        assert_eq!(no_leak.ex(), dx.ex());
        assert_eq!(couple(&f, None, &CouplerSpec::circulator()), Err(Error::MissingLeak));
    }

    #[test]
    fn attenuator_examples() {
        let f = qpsk_field(4, 256, 0.0);
        assert_eq!(voa(&f, 0.0).unwrap(), f);
        assert!((voa(&f, 38.0).unwrap().power_dbm() + 38.0).abs() < 1e-9);
        let two = voa(&voa(&f, 7.5).unwrap(), 12.25).unwrap();
        let one = voa(&f, 19.75).unwrap();
        assert!((two.power_dbm() - one.power_dbm()).abs() < 1e-10);
        assert!(voa(&f, -1.0).is_err());
    }

    #[test]
    fn mux_without_neighbors_is_single_port_filtering() {
        let g = FilterProfile::gaussian(60e9);
        let c = qpsk_field(5, 1024, 0.0);
        let z = SampledField::zeros(c.len(), c.sample_rate()).unwrap();
        let mux = wdm_assemble(&c, [&z, &z], 100e9, &g).unwrap();
        let direct = c.apply_transfer(&filter_transfer(&g), 0.0);
        assert!(evm_db(&mux, &direct) < -200.0);

        let lo = qpsk_field(6, 1024, -100e9);
        let hi = qpsk_field(7, 1024, 100e9);
        let full = wdm_assemble(&c, [&lo, &hi], 100e9, &g).unwrap();
        assert!(full.mean_power() >= mux.mean_power());
        assert_eq!(full.support(), Band::new(-100e9 - 16.5e9, 100e9 + 16.5e9));
    }

    #[test]
    fn gaussian_neighbor_leakage_into_center_slot() {
        // neighbor signal passed by the center port, relative to the center signal
        let g = FilterProfile::gaussian(60e9);
        let h = filter_transfer(&g);
        let n_sym = 2048;
        for offset in [-100e9, 100e9] {
            let nb = qpsk_field(8, n_sym, offset).apply_transfer(&h, 0.0);
            let c = qpsk_field(9, n_sym, 0.0).apply_transfer(&h, 0.0);
            let measured_dbc = 10.0 * (nb.mean_power() / c.mean_power()).log10();

            let mut num = 0.0;
            let mut den = 0.0;
            let step = 1e6;
            let mut f = -50e9;
            while f <= 50e9 {
                let s = crate::transmitter::rrc_response(f, 30e9, 0.1).powi(2);
                num += s * h.at(f + offset).norm_sqr();
                den += s * h.at(f).norm_sqr();
                f += step;
            }
            let oracle_dbc = 10.0 * (num / den).log10();
            assert!(oracle_dbc < -20.0, "{oracle_dbc}");
            assert!(measured_dbc < -20.0, "{measured_dbc}");
            assert!((measured_dbc - oracle_dbc).abs() < 0.3, "{measured_dbc} vs {oracle_dbc}");
        }
    }

    #[test]
    fn demux_isolates_adjacent_channels() {
        let trunk = FiberSpec::trunk();
        for profile in [
            FilterProfile::gaussian(60e9),
            FilterProfile::super_gaussian(80e9, 2.0),
            FilterProfile::super_gaussian(80e9, 4.0),
        ] {
            let c = qpsk_field(10, 1024, 0.0);
            let lo = qpsk_field(11, 1024, -100e9);
            let hi = qpsk_field(12, 1024, 100e9);
            let z = SampledField::zeros(c.len(), c.sample_rate()).unwrap();
            let demux = filter_transfer(&profile);
            let through = |a: &SampledField, b: &SampledField, d: &SampledField| {
                let m = wdm_assemble(a, [b, d], 100e9, &profile).unwrap();
                ssmf_propagate(&m, &trunk, LAMBDA).unwrap().apply_transfer(&demux, 0.0)
            };
            let wanted = through(&c, &z, &z).mean_power();
            for residual in [through(&z, &lo, &z).mean_power(), through(&z, &z, &hi).mean_power()] {
                assert!(10.0 * (wanted / residual).log10() >= 25.0);
            }
        }
    }

    proptest! {
        #[test]
        fn filter_is_even_and_monotone(order in 1.0f64..5.0, bw in 40e9f64..100e9, a in 0.0f64..150e9, b in 0.0f64..150e9) {
            let p = FilterProfile::super_gaussian(bw, order).recentered(7e9);
            let h = filter_transfer(&p);
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(h.at(7e9 + far).norm() <= h.at(7e9 + near).norm() + 1e-15);
            prop_assert!((h.at(7e9 + a).norm() - h.at(7e9 - a).norm()).abs() < 1e-15);
            prop_assert!(h.at(7e9 + a).norm() <= 1.0);
        }
    }
}
