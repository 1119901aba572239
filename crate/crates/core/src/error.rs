use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field has zero power")]
    ZeroPower,

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(f64, f64),

    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),

    #[error("shifted spectrum [{lo:.3e}, {hi:.3e}] Hz leaves the representable band of ±{nyquist:.3e} Hz")]
    Aliasing { lo: f64, hi: f64, nyquist: f64 },

    #[error("{0:.1} dBc of energy lies above the target Nyquist frequency")]
    ResampleAliasing(f64),

    #[error("odd number of bits ({0}) cannot be mapped to QPSK")]
    OddBitCount(usize),

    #[error("amplifier input {input_dbm:.2} dBm is not below the launch target {target_dbm:.2} dBm")]
    NoGain { input_dbm: f64, target_dbm: f64 },

    #[error("circulator coupling requires the co-located transmitter's leak field")]
    MissingLeak,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular normal equations in equalizer training")]
    SingularEqualizer,

    #[error("equalizer did not converge (residual {residual_db:.2} dB, threshold {threshold_db:.2} dB)")]
    NotConverged { residual_db: f64, threshold_db: f64 },

    #[error("frame alignment failed: correlation {0:.3} below threshold")]
    AlignmentLost(f64),

    #[error("only {available} countable bits, at least {required} required")]
    TooFewBits { available: usize, required: usize },

    #[error("threshold not bracketed: BER {ber_lo:.4e} at {lo:.2} and {ber_hi:.4e} at {hi:.2}")]
    NotBracketed { lo: f64, hi: f64, ber_lo: f64, ber_hi: f64 },

    #[error("calibration ended at BER {ber:.4} (noise density {noise_psd:.4e} W/Hz), outside the target window")]
    CalibrationMiss { noise_psd: f64, ber: f64 },

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("unknown filter `{0}`")]
    UnknownFilter(String),

    #[error("malformed profile at line {line}: {message}")]
    Profile { line: usize, message: String },

    #[error("malformed calibration record at line {line}: {message}")]
    CalibrationRecord { line: usize, message: String },

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
