//! Flat binary cache record for TF embeddings: a fixed header describing the
//! plan, then magnitude and phase as little-endian f64 in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

use super::{StftPlan, TfRepresentation, WindowKind};

const MAGIC: &[u8; 4] = b"CVTF";
const VERSION: u32 = 1;

fn window_code(kind: WindowKind) -> u8 {
    match kind {
        WindowKind::Hamming => 0,
        WindowKind::Hann => 1,
        WindowKind::Rect => 2,
    }
}

fn window_from_code(code: u8) -> Result<WindowKind> {
    match code {
        0 => Ok(WindowKind::Hamming),
        1 => Ok(WindowKind::Hann),
        2 => Ok(WindowKind::Rect),
        c => Err(Error::TfRecord(format!("unknown window code {c}"))),
    }
}

pub fn write_tf_record(path: &Path, tf: &TfRepresentation) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let p = &tf.plan;
    for v in [p.fft_size, p.window_length, p.hop, p.n_frames, p.n_bins, p.original_length] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&[window_code(p.window_kind)])?;
    for &v in tf.magnitude.iter().chain(tf.phase.iter()) {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tf_record(path: &Path) -> Result<TfRepresentation> {
    let mut inp = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::TfRecord("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    inp.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::TfRecord(format!("unsupported version {version}")));
    }
    let mut u64buf = [0u8; 8];
    let mut fields = [0u64; 6];
    for f in &mut fields {
        inp.read_exact(&mut u64buf)?;
        *f = u64::from_le_bytes(u64buf);
    }
    let mut code = [0u8; 1];
    inp.read_exact(&mut code)?;
    let plan = StftPlan {
        fft_size: fields[0] as usize,
        window_length: fields[1] as usize,
        hop: fields[2] as usize,
        window_kind: window_from_code(code[0])?,
        n_frames: fields[3] as usize,
        n_bins: fields[4] as usize,
        original_length: fields[5] as usize,
    };
    let cells = plan.n_bins * plan.n_frames;
    let mut read_array = |inp: &mut dyn Read| -> Result<Array2<f64>> {
        let mut data = vec![0.0f64; cells];
        for v in &mut data {
            inp.read_exact(&mut u64buf)?;
            *v = f64::from_le_bytes(u64buf);
        }
        Array2::from_shape_vec((plan.n_bins, plan.n_frames), data)
            .map_err(|e| Error::TfRecord(e.to_string()))
    };
    let magnitude = read_array(&mut inp)?;
    let phase = read_array(&mut inp)?;
    TfRepresentation::new(magnitude, phase, plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{plan_stft, stft, StftConfig, Waveform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tf_record_roundtrips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 12_345;
        let w = Waveform::new((0..n).map(|_| rng.gen_range(-0.9..0.9)).collect()).unwrap();
        let plan = plan_stft(n, &StftConfig::default()).unwrap();
        let tf = stft(&w, &plan).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tf");
        write_tf_record(&path, &tf).unwrap();
        let back = read_tf_record(&path).unwrap();
        assert_eq!(back.plan, tf.plan);
        assert_eq!(back.magnitude, tf.magnitude);
        assert_eq!(back.phase, tf.phase);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tf");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_tf_record(&path), Err(Error::TfRecord(_))));
    }
}
