//! Binary trace files.
//!
//! Little-endian, a 64-byte header followed by `n_samples` IEEE-754 `f32`
//! samples:
//!
//! | offset | size | field                           |
//! |-------:|-----:|---------------------------------|
//! |      0 |    8 | magic `SPOPOTRC`                |
//! |      8 |    4 | format version (`u32`, = 1)     |
//! |     12 |    4 | variance window (`u32`)         |
//! |     16 |    8 | sample rate, Sa/s (`f64`)       |
//! |     24 |    8 | sample count (`u64`)            |
//! |     32 |    8 | RNG seed (`u64`)                |
//! |     40 |    8 | scan span, rad (`f64`)          |
//! |     48 |    8 | scan distortion alpha (`f64`)   |
//! |     56 |    8 | phase offset theta0, rad (`f64`)|
//! |     64 |  4 n | samples (`f32`)                 |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::homodyne::{AcquisitionSpec, HomodyneTrace};

pub const MAGIC: &[u8; 8] = b"SPOPOTRC";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

pub fn encode_header(trace: &HomodyneTrace) -> Result<[u8; HEADER_LEN]> {
    let spec = &trace.spec;
    if trace.samples.len() != spec.n_samples {
        return Err(Error::LengthMismatch {
            expected: spec.n_samples,
            found: trace.samples.len(),
        });
    }
    let window = u32::try_from(spec.window)
        .map_err(|_| crate::error::precondition("window does not fit the header field"))?;
    let mut h = [0u8; HEADER_LEN];
    h[0..8].copy_from_slice(MAGIC);
    h[8..12].copy_from_slice(&VERSION.to_le_bytes());
    h[12..16].copy_from_slice(&window.to_le_bytes());
    h[16..24].copy_from_slice(&spec.sample_rate.to_le_bytes());
    h[24..32].copy_from_slice(&(spec.n_samples as u64).to_le_bytes());
    h[32..40].copy_from_slice(&spec.rng_seed.to_le_bytes());
    h[40..48].copy_from_slice(&spec.scan_span.to_le_bytes());
    h[48..56].copy_from_slice(&trace.alpha.to_le_bytes());
    h[56..64].copy_from_slice(&trace.theta0.to_le_bytes());
    Ok(h)
}

pub fn write_trace<W: Write>(trace: &HomodyneTrace, mut w: W) -> Result<()> {
    w.write_all(&encode_header(trace)?)?;
    let mut buf = Vec::with_capacity(1 << 16);
    for chunk in trace.samples.chunks(1 << 14) {
        buf.clear();
        for s in chunk {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

fn le_f64(b: &[u8]) -> f64 {
    f64::from_le_bytes(b.try_into().expect("8 bytes"))
}

/// Read as many bytes as are available up to `buf.len()`.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(k) => got += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(got)
}

pub fn read_trace<R: Read>(mut r: R) -> Result<HomodyneTrace> {
    let mut h = [0u8; HEADER_LEN];
    let got = read_full(&mut r, &mut h)?;
    if got < HEADER_LEN {
        return Err(format_err(got as u64, format!("header truncated after {got} bytes")));
    }
    if &h[0..8] != MAGIC {
        return Err(format_err(0, "bad magic, not a trace file"));
    }
    let version = le_u32(&h[8..12]);
    if version != VERSION {
        return Err(format_err(8, format!("unsupported format version {version}")));
    }
    let window = le_u32(&h[12..16]) as usize;
    let sample_rate = le_f64(&h[16..24]);
    let n_samples = le_u64(&h[24..32]);
    let rng_seed = le_u64(&h[32..40]);
    let scan_span = le_f64(&h[40..48]);
    let alpha = le_f64(&h[48..56]);
    let theta0 = le_f64(&h[56..64]);

    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(format_err(16, format!("invalid sample rate {sample_rate}")));
    }
    let n_samples = usize::try_from(n_samples)
        .map_err(|_| format_err(24, format!("sample count {n_samples} too large")))?;
    if window < 2 || window > n_samples {
        return Err(format_err(12, format!("window {window} invalid for {n_samples} samples")));
    }
    if !(scan_span > 0.0 && scan_span.is_finite()) {
        return Err(format_err(40, format!("invalid scan span {scan_span}")));
    }
    if !alpha.is_finite() {
        return Err(format_err(48, "non-finite alpha"));
    }
    if !theta0.is_finite() {
        return Err(format_err(56, "non-finite theta0"));
    }

    let mut samples = Vec::with_capacity(n_samples.min(1 << 28));
    let mut buf = vec![0u8; 1 << 16];
    let mut remaining = n_samples;
    while remaining > 0 {
        let want = (remaining * 4).min(buf.len());
        let got = read_full(&mut r, &mut buf[..want])?;
        if got < want {
            let offset = HEADER_LEN + samples.len() * 4 + got;
            return Err(format_err(
                offset as u64,
                format!("sample data truncated: expected {n_samples} samples"),
            ));
        }
        for b in buf[..want].chunks_exact(4) {
            let v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            if !v.is_finite() {
                let offset = HEADER_LEN + samples.len() * 4;
                return Err(format_err(offset as u64, "non-finite sample"));
            }
            samples.push(v);
        }
        remaining -= want / 4;
    }
    let mut extra = [0u8; 1];
    if read_full(&mut r, &mut extra)? > 0 {
        let offset = HEADER_LEN + n_samples * 4;
        return Err(format_err(offset as u64, "trailing bytes after sample data"));
    }

    Ok(HomodyneTrace {
        spec: AcquisitionSpec {
            sample_rate,
            n_samples,
            scan_span,
            window,
            rng_seed,
        },
        theta0,
        alpha,
        samples,
        shot_calibration: None,
    })
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_trace(trace: &HomodyneTrace, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_trace(trace, w))
}

pub fn load_trace(path: &Path) -> Result<HomodyneTrace> {
    read_trace(BufReader::new(File::open(path)?))
}

/// CSV export with columns `time_s,sample`.
pub fn write_trace_csv<W: Write>(trace: &HomodyneTrace, mut w: W) -> Result<()> {
    writeln!(w, "time_s,sample")?;
    let dt = 1.0 / trace.spec.sample_rate;
    for (i, s) in trace.samples.iter().enumerate() {
        writeln!(w, "{:e},{}", i as f64 * dt, s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace() -> HomodyneTrace {
        HomodyneTrace {
            spec: AcquisitionSpec {
                sample_rate: 20e6,
                n_samples: 10,
                scan_span: std::f64::consts::TAU,
                window: 4,
                rng_seed: 99,
            },
            theta0: 0.25,
            alpha: 1.25e-2,
            samples: (0..10).map(|i| i as f32 * 0.5 - 2.0).collect(),
            shot_calibration: None,
        }
    }

    fn bytes(t: &HomodyneTrace) -> Vec<u8> {
        let mut v = Vec::new();
        write_trace(t, &mut v).unwrap();
        v
    }

    #[test]
    fn header_layout() {
        let b = bytes(&trace());
        assert_eq!(b.len(), HEADER_LEN + 40);
        assert_eq!(&b[..8], b"SPOPOTRC");
        assert_eq!(le_u32(&b[8..12]), 1);
        assert_eq!(le_u32(&b[12..16]), 4);
        assert_eq!(le_f64(&b[16..24]), 20e6);
        assert_eq!(le_u64(&b[24..32]), 10);
        assert_eq!(le_u64(&b[32..40]), 99);
        assert_eq!(le_f64(&b[48..56]), 1.25e-2);
        assert_eq!(f32::from_le_bytes(b[64..68].try_into().unwrap()), -2.0);
    }

    #[test]
    fn round_trip_is_exact() {
        let t = trace();
        let back = read_trace(&bytes(&t)[..]).unwrap();
        assert_eq!(back, t);
        assert_eq!(bytes(&back), bytes(&t));
    }

    fn offset_of(err: Error) -> u64 {
        match err {
            Error::Format { offset, .. } => offset,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn errors_carry_offsets() {
        let good = bytes(&trace());

        let mut b = good.clone();
        b[3] = b'X';
        assert_eq!(offset_of(read_trace(&b[..]).unwrap_err()), 0);

        let mut b = good.clone();
        b[8] = 7;
        assert_eq!(offset_of(read_trace(&b[..]).unwrap_err()), 8);

        assert_eq!(offset_of(read_trace(&good[..30]).unwrap_err()), 30);
        assert_eq!(offset_of(read_trace(&good[..70]).unwrap_err()), 70);

        let mut b = good.clone();
        b.push(0);
        assert_eq!(offset_of(read_trace(&b[..]).unwrap_err()), 104);

        let mut b = good.clone();
        b[68..72].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(offset_of(read_trace(&b[..]).unwrap_err()), 68);

        let mut b = good;
        b[16..24].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert_eq!(offset_of(read_trace(&b[..]).unwrap_err()), 16);
    }

    #[test]
    fn file_round_trip_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.trc");
        let t = trace();
        save_trace(&t, &path).unwrap();
        assert_eq!(load_trace(&path).unwrap(), t);

        let mut csv = Vec::new();
        write_trace_csv(&t, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time_s,sample");
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[1], "0e0,-2");
        assert!(lines[2].starts_with("5e-8,"));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_trace(Path::new("/nonexistent/x.trc")), Err(Error::Io(_))));
    }
}
