//! Burst framing: a known preamble followed by payload blocks, each led by
//! one pilot symbol, and a short run of closing pilots.
//!
//! ```text
//! | preamble | P d d .. d | P d d .. d | ... | P .. P |
//!             \_period_/
//! ```
//!
//! Indices handed out by the layout for pilots and payload are relative to
//! the end of the preamble ("data section").

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::transmitter::{gen_bits, qpsk_map};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    total_symbols: usize,
    preamble_len: usize,
    pilot_period: usize,
    blocks: usize,
}

impl FrameLayout {
    pub fn new(total_symbols: usize, preamble_len: usize, pilot_period: usize) -> Result<Self> {
        if pilot_period == 0 {
            return Err(Error::InvalidParameter("pilot period must be at least 1".into()));
        }
        if preamble_len == 0 || preamble_len >= total_symbols {
            return Err(Error::InvalidParameter(format!(
                "preamble of {preamble_len} symbols does not fit a {total_symbols}-symbol frame"
            )));
        }
        let data = total_symbols - preamble_len;
        // at least one closing pilot after the last block
        let blocks = (data - 1) / (pilot_period + 1);
        if blocks == 0 {
            return Err(Error::InvalidParameter("frame has no room for payload".into()));
        }
        Ok(FrameLayout { total_symbols, preamble_len, pilot_period, blocks })
    }

    pub fn total_symbols(&self) -> usize {
        self.total_symbols
    }

    pub fn preamble_len(&self) -> usize {
        self.preamble_len
    }

    pub fn pilot_period(&self) -> usize {
        self.pilot_period
    }

    pub fn data_len(&self) -> usize {
        self.total_symbols - self.preamble_len
    }

    /// Payload symbols per polarization.
    pub fn payload_symbols(&self) -> usize {
        self.blocks * self.pilot_period
    }

    pub fn pilot_count(&self) -> usize {
        self.data_len() - self.payload_symbols()
    }

    /// Payload bits over both polarizations.
    pub fn counted_bits(&self) -> usize {
        self.payload_symbols() * 4
    }

    #[inline]
    pub fn is_pilot(&self, data_index: usize) -> bool {
        let stride = self.pilot_period + 1;
        data_index >= self.blocks * stride || data_index % stride == 0
    }

    pub fn pilot_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.data_len()).filter(|&i| self.is_pilot(i))
    }

    pub fn payload_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.data_len()).filter(|&i| !self.is_pilot(i))
    }
}

/// Transmitted symbols and the payload bits they carry, per polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    layout: FrameLayout,
    symbols: [Vec<Complex64>; 2],
    payload_bits: [Vec<bool>; 2],
}

impl FrameData {
    /// Preamble and pilots come from `training_seed` (known to the
    /// receiver), payload from `data_seed`.
    pub fn generate(layout: FrameLayout, data_seed: u64, training_seed: u64) -> Self {
        let mut symbols: [Vec<Complex64>; 2] = Default::default();
        let mut payload_bits: [Vec<bool>; 2] = Default::default();
        for p in 0..2 {
            let training_bits = gen_bits(mix_seed(training_seed, p as u64), 2 * (layout.preamble_len + layout.pilot_count()));
            let training = qpsk_map(&training_bits).expect("even bit count");
            let bits = gen_bits(mix_seed(data_seed, p as u64), 2 * layout.payload_symbols());
            let payload = qpsk_map(&bits).expect("even bit count");

            let mut syms = Vec::with_capacity(layout.total_symbols);
            syms.extend_from_slice(&training[..layout.preamble_len]);
            let mut pilots = training[layout.preamble_len..].iter();
            let mut data = payload.iter();
            for i in 0..layout.data_len() {
                let next = if layout.is_pilot(i) { pilots.next() } else { data.next() };
                syms.push(*next.expect("layout accounting"));
            }
            symbols[p] = syms;
            payload_bits[p] = bits;
        }
        FrameData { layout, symbols, payload_bits }
    }

    pub fn layout(&self) -> &FrameLayout {
        &self.layout
    }

    pub fn symbols(&self, pol: usize) -> &[Complex64] {
        &self.symbols[pol]
    }

    pub fn preamble(&self, pol: usize) -> &[Complex64] {
        &self.symbols[pol][..self.layout.preamble_len]
    }

    pub fn data_symbols(&self, pol: usize) -> &[Complex64] {
        &self.symbols[pol][self.layout.preamble_len..]
    }

    pub fn payload_bits(&self, pol: usize) -> &[bool] {
        &self.payload_bits[pol]
    }
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_counts_at_least_500k_bits() {
        let l = FrameLayout::new(147_456, 10_000, 32).unwrap();
        assert!(l.counted_bits() >= 500_000);
        assert_eq!(l.payload_symbols() + l.pilot_count(), l.data_len());
        let longer = FrameLayout::new(147_456, 15_000, 32).unwrap();
        assert!(longer.counted_bits() >= 500_000);
    }

    #[test]
    fn every_payload_block_is_bracketed_by_pilots() {
        let l = FrameLayout::new(1000, 100, 32).unwrap();
        let pilots: Vec<usize> = l.pilot_positions().collect();
        assert_eq!(pilots[0], 0);
        assert!(l.is_pilot(l.data_len() - 1));
        for w in pilots.windows(2) {
            assert!(w[1] - w[0] <= 33);
        }
        assert_eq!(l.payload_positions().count(), l.payload_symbols());
    }

    #[test]
    fn invalid_layouts() {
        assert!(FrameLayout::new(100, 0, 32).is_err());
        assert!(FrameLayout::new(100, 100, 32).is_err());
        assert!(FrameLayout::new(100, 90, 32).is_err());
        assert!(FrameLayout::new(100, 10, 0).is_err());
    }

    #[test]
    fn generated_frame_matches_layout() {
        let l = FrameLayout::new(2000, 200, 32).unwrap();
        let f = FrameData::generate(l, 1, 2);
        let g = FrameData::generate(l, 3, 2);
        assert_eq!(f.symbols(0).len(), 2000);
        assert_eq!(f.payload_bits(1).len(), 2 * l.payload_symbols());
        // training content depends only on the training seed
        assert_eq!(f.preamble(0), g.preamble(0));
        let pil = |d: &FrameData| l.pilot_positions().map(|i| d.data_symbols(1)[i]).collect::<Vec<_>>();
        assert_eq!(pil(&f), pil(&g));
        assert_ne!(f.payload_bits(0), g.payload_bits(0));
        assert_ne!(f.preamble(0), f.preamble(1));
    }
}
