//! File formats: signal CSV, 16-bit PGM/PNG image export, and little-endian
//! binary containers for dictionaries, network models, and baselines.
//!
//! Floats in CSV files use Rust's shortest round-trip formatting, so a
//! write/read cycle is bit-exact. Binary containers carry a four-byte magic
//! and are fully revalidated on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cnn::{Network, NetworkSpec, Tensor};
use crate::error::{Error, Result};
use crate::health::{BaselineModel, HealthSeries};
use crate::rp::UnitImage;
use crate::sim::ThreePhaseSignal;
use crate::sparse::Dictionary;

pub const DICTIONARY_MAGIC: u32 = u32::from_le_bytes(*b"RPDC");
pub const MODEL_MAGIC: u32 = u32::from_le_bytes(*b"RPNN");
pub const MODEL_VERSION: u32 = 1;
pub const BASELINE_MAGIC: u32 = u32::from_le_bytes(*b"RPBL");

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

// ---- little-endian binary helpers -----------------------------------------

struct BinWriter<'a> {
    w: BufWriter<File>,
    path: &'a Path,
}

impl<'a> BinWriter<'a> {
    fn create(path: &'a Path) -> Result<Self> {
        Ok(BinWriter {
            w: BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?),
            path,
        })
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.w.write_all(&v.to_le_bytes()).map_err(|e| io_err(self.path, e))
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.w.write_all(&v.to_le_bytes()).map_err(|e| io_err(self.path, e))
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.w.write_all(&v.to_le_bytes()).map_err(|e| io_err(self.path, e))
    }

    fn f64_slice(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| io_err(self.path, e))
    }
}

struct BinReader<'a> {
    r: BufReader<File>,
    path: &'a Path,
}

impl<'a> BinReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        Ok(BinReader {
            r: BufReader::new(File::open(path).map_err(|e| io_err(path, e))?),
            path,
        })
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.r
            .read_exact(&mut b)
            .map_err(|_| format_err(self.path, "truncated file (expected u32)"))?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.r
            .read_exact(&mut b)
            .map_err(|_| format_err(self.path, "truncated file (expected u64)"))?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.r
            .read_exact(&mut b)
            .map_err(|_| format_err(self.path, "truncated file (expected f64)"))?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.r.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(format_err(self.path, "trailing bytes after payload")),
            Err(e) => Err(io_err(self.path, e)),
        }
    }
}

// ---- signal CSV ------------------------------------------------------------

/// Write `t,ia,ib,ic` rows, one per sample. The sample rate travels in the
/// run manifest, not in the CSV.
pub fn write_signal_csv(path: &Path, sig: &ThreePhaseSignal) -> Result<()> {
    sig.validate()?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "t,ia,ib,ic")?;
        for i in 0..sig.len() {
            writeln!(
                w,
                "{},{},{},{}",
                i as f64 / sig.sample_rate,
                sig.ia[i],
                sig.ib[i],
                sig.ic[i]
            )?;
        }
        w.flush()
    };
    emit().map_err(|e| io_err(path, e))
}

pub fn read_signal_csv(path: &Path, sample_rate: f64) -> Result<ThreePhaseSignal> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_string(&mut text)
        .map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("t,ia,ib,ic") => {}
        Some(other) => return Err(format_err(path, format!("bad header: {other:?}"))),
        None => return Err(format_err(path, "empty file")),
    }
    let mut ia = Vec::new();
    let mut ib = Vec::new();
    let mut ic = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = |name: &str| -> Result<f64> {
            parts
                .next()
                .ok_or_else(|| format_err(path, format!("line {}: missing {name}", lineno + 2)))?
                .parse::<f64>()
                .map_err(|e| format_err(path, format!("line {}: {name}: {e}", lineno + 2)))
        };
        let _t = field("t")?;
        ia.push(field("ia")?);
        ib.push(field("ib")?);
        ic.push(field("ic")?);
    }
    let sig = ThreePhaseSignal {
        sample_rate,
        ia,
        ib,
        ic,
    };
    sig.validate()?;
    Ok(sig)
}

// ---- image export ----------------------------------------------------------

/// Quantize a unit-range pixel to 16 bits.
pub fn quantize16(v: f64) -> u16 {
    (v * 65535.0).round().clamp(0.0, 65535.0) as u16
}

/// Binary PGM (P5, maxval 65535, big-endian sample bytes per the netpbm
/// convention), pixel = round(65535 * value).
pub fn write_pgm(path: &Path, img: &UnitImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut emit = || -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n65535\n", img.side(), img.side())?;
        for v in img.values() {
            w.write_all(&quantize16(*v).to_be_bytes())?;
        }
        w.flush()
    };
    emit().map_err(|e| io_err(path, e))
}

pub fn read_pgm(path: &Path) -> Result<UnitImage> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    // Header tokens separated by whitespace; `#` starts a comment line.
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        let mut out = String::new();
        while pos < bytes.len() {
            let c = bytes[pos];
            if c == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                if !out.is_empty() {
                    break;
                }
                pos += 1;
            } else {
                out.push(c as char);
                pos += 1;
            }
        }
        if out.is_empty() {
            return Err(format_err(path, "truncated PGM header"));
        }
        Ok(out)
    };
    if token(&bytes)? != "P5" {
        return Err(format_err(path, "not a binary PGM (missing P5)"));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|e| format_err(path, format!("bad width: {e}")))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|e| format_err(path, format!("bad height: {e}")))?;
    let maxval: u32 = token(&bytes)?
        .parse()
        .map_err(|e| format_err(path, format!("bad maxval: {e}")))?;
    if width != height {
        return Err(format_err(path, format!("expected a square image, got {width}x{height}")));
    }
    if maxval != 65535 {
        return Err(format_err(path, format!("expected maxval 65535, got {maxval}")));
    }
    pos += 1; // single whitespace byte after maxval
    let need = width * height * 2;
    if bytes.len() < pos + need {
        return Err(format_err(path, "truncated PGM payload"));
    }
    let values = bytes[pos..pos + need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    UnitImage::new(width, values)
}

/// 16-bit grayscale PNG with the same quantization as the PGM export.
pub fn write_png(path: &Path, img: &UnitImage) -> Result<()> {
    let side = img.side() as u32;
    let pixels: Vec<u16> = img.values().iter().map(|v| quantize16(*v)).collect();
    let buffer: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_vec(side, side, pixels)
            .expect("pixel count matches dimensions");
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| format_err(path, format!("png encode: {e}")))
}

// ---- dictionary ------------------------------------------------------------

/// Header (magic, K, d, patch_side as LE u32) then K*d LE f64, one row per
/// atom. A patch_side of 0 marks an unstructured dictionary.
pub fn write_dictionary(path: &Path, dict: &Dictionary) -> Result<()> {
    let mut w = BinWriter::create(path)?;
    w.u32(DICTIONARY_MAGIC)?;
    w.u32(dict.atom_count() as u32)?;
    w.u32(dict.atom_dim() as u32)?;
    w.u32(dict.patch_side().unwrap_or(0) as u32)?;
    for k in 0..dict.atom_count() {
        w.f64_slice(dict.atom(k))?;
    }
    w.finish()
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary> {
    let mut r = BinReader::open(path)?;
    if r.u32()? != DICTIONARY_MAGIC {
        return Err(format_err(path, "bad magic (not a dictionary file)"));
    }
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    let patch_side = r.u32()? as usize;
    if k == 0 || d == 0 {
        return Err(format_err(path, "dictionary must have K >= 1 and d >= 1"));
    }
    if patch_side != 0 && patch_side * patch_side != d {
        return Err(format_err(
            path,
            format!("patch side {patch_side} squared does not match atom dim {d}"),
        ));
    }
    let atoms = r.f64_vec(k * d)?;
    r.expect_eof()?;
    for atom in atoms.chunks(d) {
        let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(format_err(path, format!("atom norm {norm} is not 1")));
        }
    }
    Ok(Dictionary::from_flat(
        d,
        (patch_side != 0).then_some(patch_side),
        atoms,
    ))
}

// ---- network model ---------------------------------------------------------

/// Header (magic, version, spec fields as LE u32, init seed u64), then each
/// parameter tensor as a shape list and LE f64 values.
pub fn write_network(path: &Path, net: &Network) -> Result<()> {
    let spec = net.spec();
    let mut w = BinWriter::create(path)?;
    w.u32(MODEL_MAGIC)?;
    w.u32(MODEL_VERSION)?;
    for v in [
        spec.input_side,
        spec.conv1.kernel,
        spec.conv1.channels,
        spec.conv1.stride,
        spec.conv1.pool,
        spec.conv2.kernel,
        spec.conv2.channels,
        spec.conv2.stride,
        spec.conv2.pool,
        spec.fc1_width,
        spec.class_count,
    ] {
        w.u32(v as u32)?;
    }
    w.u64(net.init_seed())?;
    for t in net.parameters() {
        w.u32(t.shape().len() as u32)?;
        for &d in t.shape() {
            w.u32(d as u32)?;
        }
        w.f64_slice(t.values())?;
    }
    w.finish()
}

pub fn read_network(path: &Path) -> Result<Network> {
    let mut r = BinReader::open(path)?;
    if r.u32()? != MODEL_MAGIC {
        return Err(format_err(path, "bad magic (not a model file)"));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(format_err(path, format!("unsupported model version {version}")));
    }
    let mut field = || -> Result<usize> { Ok(r.u32()? as usize) };
    let spec = NetworkSpec {
        input_side: field()?,
        conv1: crate::cnn::ConvSpec {
            kernel: field()?,
            channels: field()?,
            stride: field()?,
            pool: field()?,
        },
        conv2: crate::cnn::ConvSpec {
            kernel: field()?,
            channels: field()?,
            stride: field()?,
            pool: field()?,
        },
        fc1_width: field()?,
        class_count: field()?,
    };
    let init_seed = r.u64()?;
    let mut tensors = Vec::with_capacity(8);
    for _ in 0..8 {
        let ndim = r.u32()? as usize;
        if ndim == 0 || ndim > 4 {
            return Err(format_err(path, format!("implausible tensor rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let values = r.f64_vec(count)?;
        tensors.push(
            Tensor::new(shape, values).map_err(|e| format_err(path, e.to_string()))?,
        );
    }
    r.expect_eof()?;
    Network::from_parts(spec, tensors, init_seed).map_err(|e| format_err(path, e.to_string()))
}

// ---- baseline --------------------------------------------------------------

/// Header (magic, d, epsilon, n) then the mean and covariance as LE f64; the
/// factorization is recomputed (and thereby revalidated) on load.
pub fn write_baseline(path: &Path, model: &BaselineModel) -> Result<()> {
    let mut w = BinWriter::create(path)?;
    w.u32(BASELINE_MAGIC)?;
    w.u32(model.dim() as u32)?;
    w.f64(model.ridge_epsilon())?;
    w.u32(model.fit_count() as u32)?;
    w.f64_slice(model.mean())?;
    w.f64_slice(model.covariance())?;
    w.finish()
}

pub fn read_baseline(path: &Path) -> Result<BaselineModel> {
    let mut r = BinReader::open(path)?;
    if r.u32()? != BASELINE_MAGIC {
        return Err(format_err(path, "bad magic (not a baseline file)"));
    }
    let d = r.u32()? as usize;
    let eps = r.f64()?;
    let n = r.u32()? as usize;
    if d == 0 {
        return Err(format_err(path, "baseline dimension must be >= 1"));
    }
    let mean = r.f64_vec(d)?;
    let covariance = r.f64_vec(d * d)?;
    r.expect_eof()?;
    BaselineModel::from_parts(mean, covariance, eps, n)
        .map_err(|e| format_err(path, e.to_string()))
}

// ---- health series CSV -----------------------------------------------------

/// Rows `window_index,md_score,above_threshold` (0/1).
pub fn write_health_csv(path: &Path, series: &HealthSeries) -> Result<()> {
    let threshold = series.threshold.unwrap_or(f64::INFINITY);
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "window_index,md_score,above_threshold")?;
        for (i, s) in series.scores.iter().enumerate() {
            writeln!(w, "{},{},{}", i, s, u8::from(*s > threshold))?;
        }
        w.flush()
    };
    emit().map_err(|e| io_err(path, e))
}

pub fn read_health_csv(path: &Path) -> Result<Vec<(usize, f64, bool)>> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_string(&mut text)
        .map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("window_index,md_score,above_threshold") => {}
        other => return Err(format_err(path, format!("bad header: {other:?}"))),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(format_err(path, format!("line {}: expected 3 fields", lineno + 2)));
        }
        let idx: usize = parts[0]
            .parse()
            .map_err(|e| format_err(path, format!("line {}: {e}", lineno + 2)))?;
        let score: f64 = parts[1]
            .parse()
            .map_err(|e| format_err(path, format!("line {}: {e}", lineno + 2)))?;
        let above = match parts[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(format_err(
                    path,
                    format!("line {}: bad flag {other:?}", lineno + 2),
                ))
            }
        };
        rows.push((idx, score, above));
    }
    Ok(rows)
}

// ---- feature table CSV -------------------------------------------------------

/// Header naming the six features plus window index and label.
pub fn write_feature_csv(path: &Path, rows: &[(usize, String, [f64; 6])]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut emit = || -> std::io::Result<()> {
        writeln!(
            w,
            "window_index,label,{}",
            crate::baselines::FEATURE_NAMES.join(",")
        )?;
        for (idx, label, f) in rows {
            write!(w, "{idx},{label}")?;
            for v in f {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    emit().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{init_network, NetworkSpec};
    use crate::health::fit_baseline;
    use crate::sim::{simulate_currents, FaultSpec, MotorConfig, NoiseSpec};
    use crate::sparse::learn_dictionary;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn signal_csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sig.csv");
        let cfg = MotorConfig::default();
        let noise = NoiseSpec {
            snr_db: 25.0,
            spike_rate: 30.0,
            spike_amplitude: 2.0,
        };
        let sig = simulate_currents(&cfg, &FaultSpec::healthy(), &noise, 0.005, 3).unwrap();
        write_signal_csv(&path, &sig).unwrap();
        let back = read_signal_csv(&path, cfg.sample_rate).unwrap();
        assert_eq!(sig, back);
    }

    #[test]
    fn pgm_round_trip_is_pixel_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let side = 17;
        let img = UnitImage::new(
            side,
            (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.side(), side);
        for (a, b) in img.values().iter().zip(back.values()) {
            assert_eq!(quantize16(*a), quantize16(*b));
            assert_eq!(*b, quantize16(*a) as f64 / 65535.0);
        }
        // Writing the re-read image reproduces the file byte for byte.
        let path2 = dir.path().join("img2.pgm");
        write_pgm(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn png_export_matches_pgm_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let pgm = dir.path().join("img.pgm");
        let png = dir.path().join("img.png");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let side = 9;
        let img = UnitImage::new(
            side,
            (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        write_pgm(&pgm, &img).unwrap();
        write_png(&png, &img).unwrap();
        let decoded = image::open(&png).unwrap().into_luma16();
        let from_pgm = read_pgm(&pgm).unwrap();
        for y in 0..side {
            for x in 0..side {
                let p = decoded.get_pixel(x as u32, y as u32).0[0];
                assert_eq!(p, quantize16(from_pgm.get(y, x)));
            }
        }
    }

    #[test]
    fn dictionary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let patches: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..16).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let (dict, _) = learn_dictionary(&patches, 5, 0.05, 4, 40, 9).unwrap();
        write_dictionary(&path, &dict).unwrap();
        let back = read_dictionary(&path).unwrap();
        assert_eq!(dict, back);
        assert_eq!(back.patch_side(), Some(4));
    }

    #[test]
    fn network_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let net = init_network(&NetworkSpec::tiny(), 77).unwrap();
        write_network(&path, &net).unwrap();
        let back = read_network(&path).unwrap();
        assert_eq!(net, back);

        // Corrupt the magic.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_network(&path), Err(Error::Format { .. })));

        // Truncate.
        let good = {
            write_network(&path, &net).unwrap();
            std::fs::read(&path).unwrap()
        };
        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(read_network(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn baseline_round_trip_refactorizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("baseline.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let model = fit_baseline(&samples, 1e-3).unwrap();
        write_baseline(&path, &model).unwrap();
        let back = read_baseline(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn health_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let series = HealthSeries {
            scores: vec![0.5, 2.25, 0.125],
            threshold: Some(1.0),
        };
        write_health_csv(&path, &series).unwrap();
        let rows = read_health_csv(&path).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], (0, 0.5, false));
        assert_eq!(rows[1], (1, 2.25, true));
        assert_eq!(rows[2], (2, 0.125, false));
    }
}
