//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    // Signal / STFT planning
    #[error("track length {n} outside supported range [{min}, {max}] samples")]
    LengthOutOfRange { n: usize, min: usize, max: usize },
    #[error("waveform length {n} does not match plan length {expected}")]
    PlanMismatch { n: usize, expected: usize },
    #[error("negative magnitude entry {value} at ({row}, {col})")]
    NegativeMagnitude { value: f64, row: usize, col: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("unsupported sample rate {0} Hz (tracks are 16000 Hz mono)")]
    SampleRate(u32),
    #[error("malformed TF record: {0}")]
    TfRecord(String),

    // Models
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("fixed-length generator expects {expected} samples, got {got}")]
    FixedLengthViolation { expected: usize, got: usize },
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    // Losses
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("probability {0} outside [0, 1]")]
    ProbabilityDomain(f64),
    #[error("feature layer weights length {got} does not match discriminator depth {expected}")]
    FeatureWeightLen { got: usize, expected: usize },
    #[error("zero-valued `{0}` term on calibration batch")]
    ZeroCalibrationTerm(String),
    #[error("noisy phase required for the ISTFT bridge but not provided")]
    MissingPhase,
    #[error("invalid loss config: {0}")]
    InvalidLossConfig(String),

    // Data pipeline
    #[error("clean track is silent")]
    SilentClean,
    #[error("selected noise segment is silent")]
    SilentNoise,
    #[error("noise track too short: {noise} < {clean} samples")]
    NoiseTooShort { noise: usize, clean: usize },
    #[error("manifest: {0}")]
    Manifest(String),

    // Metrics
    #[error("input too short for {metric}: {n} samples")]
    TooShort { metric: &'static str, n: usize },
    #[error("no active frames left after energy-based silence removal")]
    AllSilent,
    #[error("empty reference transcript")]
    EmptyReference,
    #[error("PESQ scorer not configured")]
    MissingPesq,
    #[error("ASR endpoint unreachable: {0}")]
    AsrUnreachable(String),
    #[error("external scorer failed: {0}")]
    Scorer(String),

    // Harness
    #[error("config: {0}")]
    Config(String),
    #[error("illegal framework/loss combination: {0}")]
    IllegalCombination(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("run record: {0}")]
    RunRecord(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// CLI exit code category: 2 config, 3 data, 4 external service, 1 other.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) | IllegalCombination(_) | InvalidSpec(_) | InvalidLossConfig(_)
            | Toml(_) => 2,
            SilentClean | SilentNoise | NoiseTooShort { .. } | Manifest(_) | Io(_) | Wav(_)
            | SampleRate(_) | LengthOutOfRange { .. } | TfRecord(_) | Checkpoint(_)
            | RunRecord(_) | Json(_) => 3,
            AsrUnreachable(_) | Scorer(_) | MissingPesq => 4,
            _ => 1,
        }
    }
}
