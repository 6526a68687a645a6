//! Minimal reader for NumPy `.npy` arrays inside `.npz` archives.
//!
//! Supports little-endian `f8`, `f4`, `i8`, `i4`, `u1` and `b1` dtypes in
//! either C or Fortran order; values are returned as `f64` in C order.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

impl NpyArray {
    pub fn get(&self, index: &[usize]) -> f64 {
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            flat = flat * d + i;
        }
        self.data[flat]
    }
}

fn header_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pat = format!("'{key}':");
    let start = header.find(&pat)? + pat.len();
    Some(header[start..].trim_start())
}

pub fn parse_npy(bytes: &[u8], name: &str) -> Result<NpyArray> {
    let bad = |msg: &str| Error::parse(name.to_string(), msg.to_string());
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(bad("missing .npy magic"));
    }
    let major = bytes[6];
    let (hlen, hstart) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(bad("truncated header"));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(bad(&format!("unsupported .npy version {v}"))),
    };
    let header = std::str::from_utf8(bytes.get(hstart..hstart + hlen).ok_or_else(|| bad("truncated header"))?)
        .map_err(|_| bad("header is not text"))?;

    let descr = header_field(header, "descr").ok_or_else(|| bad("no descr"))?;
    let descr = descr
        .trim_start_matches('\'')
        .split('\'')
        .next()
        .ok_or_else(|| bad("bad descr"))?;
    let fortran = header_field(header, "fortran_order")
        .map(|v| v.starts_with("True"))
        .ok_or_else(|| bad("no fortran_order"))?;
    let shape_txt = header_field(header, "shape").ok_or_else(|| bad("no shape"))?;
    let shape_txt = shape_txt
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| bad("bad shape"))?;
    let shape: Vec<usize> = shape_txt
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape entry")))
        .collect::<Result<_>>()?;
    let count: usize = shape.iter().product();

    let body = &bytes[hstart + hlen..];
    let (width, conv): (usize, fn(&[u8]) -> f64) = match descr {
        "<f8" => (8, |b| f64::from_le_bytes(b.try_into().unwrap())),
        "<f4" => (4, |b| f32::from_le_bytes(b.try_into().unwrap()) as f64),
        "<i8" => (8, |b| i64::from_le_bytes(b.try_into().unwrap()) as f64),
        "<i4" => (4, |b| i32::from_le_bytes(b.try_into().unwrap()) as f64),
        "|u1" | "|b1" => (1, |b| b[0] as f64),
        other => return Err(bad(&format!("unsupported dtype `{other}`"))),
    };
    if body.len() < count * width {
        return Err(bad("truncated data"));
    }
    let raw: Vec<f64> = body[..count * width].chunks_exact(width).map(conv).collect();
    let data = if fortran && shape.len() > 1 {
        // column-major → row-major
        let mut out = vec![0.0; count];
        let mut strides_f = vec![1usize; shape.len()];
        for k in 1..shape.len() {
            strides_f[k] = strides_f[k - 1] * shape[k - 1];
        }
        let mut idx = vec![0usize; shape.len()];
        for slot in out.iter_mut() {
            let f: usize = idx.iter().zip(&strides_f).map(|(i, s)| i * s).sum();
            *slot = raw[f];
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    } else {
        raw
    };
    Ok(NpyArray { shape, data })
}

/// Reads every array of an `.npz` archive, keyed by name without `.npy`.
pub fn read_npz(path: &Path) -> Result<HashMap<String, NpyArray>> {
    let file = File::open(path)?;
    let mut archive = zip::ZipArchive::new(file)?;
    let mut out = HashMap::new();
    for i in 0..archive.len() {
        let mut entry = archive.by_index(i)?;
        let name = entry.name().trim_end_matches(".npy").to_string();
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut bytes)?;
        let arr = parse_npy(&bytes, &format!("{}[{name}]", path.display()))?;
        out.insert(name, arr);
    }
    Ok(out)
}
