//! Minimal NPY v1.0 reader/writer for `|u1`, `<f4` and `<i8` C-order arrays.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    U8(Vec<u8>),
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl NpyData {
    pub fn descr(&self) -> &'static str {
        match self {
            NpyData::U8(_) => "|u1",
            NpyData::F32(_) => "<f4",
            NpyData::I64(_) => "<i8",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NpyData::U8(v) => v.len(),
            NpyData::F32(v) => v.len(),
            NpyData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!("shape {shape:?} needs {n} elements, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn descr(&self) -> &'static str {
        self.data.descr()
    }
}

fn item_size(descr: &str) -> Result<usize> {
    match descr {
        "|u1" | "<u1" | "u1" => Ok(1),
        "<f4" => Ok(4),
        "<i8" => Ok(8),
        other => Err(Error::UnsupportedDtype(other.to_string())),
    }
}

/// Value of `'key': <value>` in the header dict, up to the next top-level comma.
fn header_value<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}'");
    let start = header
        .find(&pat)
        .ok_or_else(|| Error::Format(format!("header lacks '{key}'")))?
        + pat.len();
    let rest = header[start..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| Error::Format(format!("malformed '{key}' entry")))?
        .trim_start();
    if rest.starts_with('(') {
        let end = rest.find(')').ok_or_else(|| Error::Format("unterminated shape".into()))?;
        return Ok(&rest[..=end]);
    }
    let end = rest.find([',', '}']).unwrap_or(rest.len());
    Ok(rest[..end].trim())
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let inner = s
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Format(format!("bad shape {s}")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.trim_end_matches('L').parse::<usize>().map_err(|_| Error::Format(format!("bad shape {s}"))))
        .collect()
}

pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing NPY magic".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (hlen, hstart) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12),
        _ => return Err(Error::Format(format!("unsupported NPY version {major}.{minor}"))),
    };
    let body = hstart + hlen;
    if bytes.len() < body {
        return Err(Error::Format("truncated NPY header".into()));
    }
    let header = std::str::from_utf8(&bytes[hstart..body]).map_err(|_| Error::Format("header is not text".into()))?;
    let descr = header_value(header, "descr")?.trim_matches(|c| c == '\'' || c == '"');
    let size = item_size(descr)?;
    match header_value(header, "fortran_order")? {
        "False" => {}
        "True" => return Err(Error::UnsupportedLayout("fortran_order arrays are not supported".into())),
        other => return Err(Error::Format(format!("bad fortran_order {other}"))),
    }
    let shape = parse_shape(header_value(header, "shape")?)?;
    let count: usize = shape.iter().product();
    let payload = &bytes[body..];
    let want = count * size;
    if payload.len() != want {
        return Err(Error::Format(format!("payload holds {} bytes, expected {want}", payload.len())));
    }
    let data = match size {
        1 => NpyData::U8(payload.to_vec()),
        4 => NpyData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        _ => NpyData::I64(payload.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
    };
    Ok(NpyArray { shape, data })
}

pub fn read_npy(path: &Path) -> Result<NpyArray> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    parse_npy(&fs::read(path)?)
}

fn encode(arr: &NpyArray) -> Vec<u8> {
    let shape = match arr.shape.len() {
        1 => format!("({},)", arr.shape[0]),
        _ => format!("({})", arr.shape.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!("{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}", arr.descr());
    // magic + version + length + header + newline, padded to 64 bytes
    let pad = (64 - (10 + header.len() + 1) % 64) % 64;
    header.push_str(&" ".repeat(pad));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + arr.data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &arr.data {
        NpyData::U8(v) => out.extend_from_slice(v),
        NpyData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

/// Write atomically (temporary file + rename).
pub fn write_npy(path: &Path, arr: &NpyArray) -> Result<()> {
    let tmp = path.with_extension("npy.tmp");
    fs::write(&tmp, encode(arr))?;
    fs::rename(&tmp, path)?;
    Ok(())
}
