//! 16-bit PCM mono WAV input/output at the fixed 16 kHz rate.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

use super::{Waveform, SAMPLE_RATE};

fn spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path)?;
    let s = reader.spec();
    if s.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate(s.sample_rate));
    }
    if s.channels != 1 || s.bits_per_sample != 16 || s.sample_format != SampleFormat::Int {
        return Err(Error::Wav(hound::Error::Unsupported));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    Waveform::new(samples?.into_iter().map(|v| v as f64 / 32768.0).collect())
}

fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let mut writer = WavWriter::create(path, spec())?;
    for &s in w.samples() {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}

/// Serialize a track to in-memory WAV bytes (the ASR request body format).
pub fn wav_bytes(w: &Waveform) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = WavWriter::new(&mut cursor, spec())?;
        for &s in w.samples() {
            writer.write_sample(quantize(s))?;
        }
        writer.finalize()?;
    }
    Ok(cursor.into_inner())
}
