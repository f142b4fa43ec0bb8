use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DigitizationSpec, Trace};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"QTRC";
const VERSION: u16 = 1;
const DTYPE_F64_LE: u8 = 1;
// magic + version + dtype + bits + rate + length + label_len
const FIXED_HEADER: usize = 4 + 2 + 1 + 1 + 8 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Binary,
}

impl TraceFormat {
    /// `.csv` maps to CSV, anything else to the binary container.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TraceFormat::Csv,
            _ => TraceFormat::Binary,
        }
    }
}

impl std::str::FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TraceFormat::Csv),
            "binary" | "bin" => Ok(TraceFormat::Binary),
            other => Err(Error::invalid("format", format!("unknown trace format {other:?}"))),
        }
    }
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>, format: TraceFormat) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        TraceFormat::Binary => write_binary(trace, &mut w),
        TraceFormat::Csv => write_csv(trace, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: impl AsRef<Path>, format: TraceFormat) -> Result<Trace> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        TraceFormat::Binary => {
            let mut bytes = Vec::new();
            BufReader::new(file)
                .read_to_end(&mut bytes)
                .map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes)
        }
        TraceFormat::Csv => read_csv(BufReader::new(file), path),
    }
}

fn write_binary(t: &Trace, w: &mut impl Write) -> std::io::Result<()> {
    let label = t.label.as_bytes();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F64_LE])?;
    w.write_all(&[t.digitization.map_or(0, |d| d.bits() as u8)])?;
    w.write_all(&t.sample_rate_hz.to_le_bytes())?;
    w.write_all(&(t.samples.len() as u64).to_le_bytes())?;
    w.write_all(&(label.len() as u32).to_le_bytes())?;
    w.write_all(label)?;
    for x in &t.samples {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn decode_binary(bytes: &[u8]) -> Result<Trace> {
    if bytes.len() < 4 {
        return Err(Error::MalformedHeader(format!(
            "{} bytes is shorter than the magic",
            bytes.len()
        )));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::UnknownMagic {
            found,
            expected: MAGIC,
        });
    }
    if bytes.len() < FIXED_HEADER {
        return Err(Error::MalformedHeader(format!(
            "header needs {FIXED_HEADER} bytes, file has {}",
            bytes.len()
        )));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = bytes[6];
    if dtype != DTYPE_F64_LE {
        return Err(Error::MalformedHeader(format!("unknown dtype tag {dtype}")));
    }
    let bits = bytes[7];
    let rate = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let declared = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let label_len = u32::from_le_bytes(bytes[24..28].try_into().unwrap()) as usize;

    let payload_start = FIXED_HEADER + label_len;
    if bytes.len() < payload_start {
        return Err(Error::MalformedHeader("label runs past end of file".into()));
    }
    let label = std::str::from_utf8(&bytes[FIXED_HEADER..payload_start])
        .map_err(|_| Error::MalformedHeader("label is not UTF-8".into()))?;

    let payload = &bytes[payload_start..];
    if payload.len() % 8 != 0 || (payload.len() / 8) as u64 != declared {
        return Err(Error::LengthMismatch {
            declared,
            actual: (payload.len() / 8) as u64,
        });
    }
    let samples = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let trace = Trace::new(samples, rate, label)?;
    match bits {
        0 => Ok(trace),
        b => trace.with_digitization(DigitizationSpec::new(b as u32)?),
    }
}

fn write_csv(t: &Trace, w: &mut impl Write) -> std::io::Result<()> {
    write!(w, "sample_rate_hz={:e},length={}", t.sample_rate_hz, t.samples.len())?;
    if let Some(d) = t.digitization {
        write!(w, ",digitized_bits={}", d.bits())?;
    }
    // label last so commas in it survive
    writeln!(w, ",label={}", t.label)?;
    for x in &t.samples {
        // shortest representation that parses back to the same f64
        writeln!(w, "{x:?}")?;
    }
    Ok(())
}

fn read_csv(r: impl BufRead, path: &Path) -> Result<Trace> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::MalformedHeader("empty file".into())),
    };

    let mut rate = None;
    let mut length = None;
    let mut bits = None;
    let mut label = String::new();
    let mut rest = header.trim_end_matches('\r');
    while !rest.is_empty() {
        let (key, tail) = rest
            .split_once('=')
            .ok_or_else(|| Error::MalformedHeader(format!("expected key=value in {rest:?}")))?;
        let key = key.trim();
        if key == "label" {
            label = tail.to_string();
            break;
        }
        let (value, next) = tail.split_once(',').unwrap_or((tail, ""));
        let value = value.trim();
        let bad = |what: &str| Error::MalformedHeader(format!("{what} {value:?}"));
        match key {
            "sample_rate_hz" => rate = Some(value.parse::<f64>().map_err(|_| bad("sample rate"))?),
            "length" => length = Some(value.parse::<u64>().map_err(|_| bad("length"))?),
            "digitized_bits" => bits = Some(value.parse::<u32>().map_err(|_| bad("bit depth"))?),
            _ => {}
        }
        rest = next;
    }
    let rate = rate.ok_or_else(|| Error::MalformedHeader("missing sample_rate_hz".into()))?;

    let mut samples = Vec::with_capacity(length.unwrap_or(0) as usize);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let field = line.split(',').next().unwrap_or(line);
        let x = field.parse::<f64>().map_err(|_| {
            Error::MalformedHeader(format!("row {}: cannot parse {field:?}", i + 2))
        })?;
        samples.push(x);
    }
    if let Some(declared) = length {
        if declared != samples.len() as u64 {
            return Err(Error::LengthMismatch {
                declared,
                actual: samples.len() as u64,
            });
        }
    }
    let trace = Trace::new(samples, rate, label)?;
    match bits {
        None => Ok(trace),
        Some(b) => trace.with_digitization(DigitizationSpec::new(b)?),
    }
}
