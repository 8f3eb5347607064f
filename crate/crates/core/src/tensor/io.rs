//! Tensor serialization: a `TNSR v1` header line followed by raw
//! little-endian 32-bit floats, and checkpoint directories holding one file
//! per named tensor plus a tab-separated manifest.

use super::{Elem, Tensor};
use crate::{Error, Result};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub fn write_tensor<E: Elem>(path: &Path, t: &Tensor<E>) -> Result<()> {
    write_raw(path, t.shape(), t.data())
}

pub fn write_raw<E: Elem>(path: &Path, shape: &[usize], data: &[E]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    let mut header = format!("TNSR v1 {}", shape.len());
    for d in shape {
        header.push_str(&format!(" {d}"));
    }
    header.push('\n');
    f.write_all(header.as_bytes())?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_tensor<E: Elem>(path: &Path) -> Result<Tensor<E>> {
    let (shape, data) = read_raw::<E>(path)?;
    Tensor::from_vec(&shape, data)
}

pub fn read_raw<E: Elem>(path: &Path) -> Result<(Vec<usize>, Vec<E>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or(Error::Parse { offset: bytes.len(), msg: "missing header newline".into() })?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Parse { offset: 0, msg: "header is not utf-8".into() })?;
    let mut tok = header.split_ascii_whitespace();
    match (tok.next(), tok.next()) {
        (Some("TNSR"), Some("v1")) => {}
        _ => {
            return Err(Error::Parse { offset: 0, msg: format!("bad magic {header:?}") });
        }
    }
    let ndim: usize = tok
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(Error::Parse { offset: 8, msg: "bad ndim".into() })?;
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let d: usize = tok
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Parse { offset: 8, msg: format!("missing dim {i}") })?;
        shape.push(d);
    }
    let numel: usize = shape.iter().product();
    let payload = &bytes[nl + 1..];
    if payload.len() != numel * 4 {
        return Err(Error::Parse {
            offset: nl + 1,
            msg: format!("expected {} data bytes for {shape:?}, found {}", numel * 4, payload.len()),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| E::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok((shape, data))
}

/// Save named tensors as `<name>.tnsr` files plus a `manifest.tsv` of
/// `name<TAB>file` lines, in the given order.
pub fn save_checkpoint<E: Elem>(dir: &Path, entries: &[(String, Vec<usize>, Vec<E>)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (name, shape, data) in entries {
        let file = format!("{name}.tnsr");
        write_raw(&dir.join(&file), shape, data)?;
        manifest.push_str(&format!("{name}\t{file}\n"));
    }
    fs::write(dir.join("manifest.tsv"), manifest)?;
    Ok(())
}

pub fn load_checkpoint<E: Elem>(dir: &Path) -> Result<Vec<(String, Vec<usize>, Vec<E>)>> {
    let manifest = fs::read_to_string(dir.join("manifest.tsv"))?;
    let mut out = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (name, file) = line.split_once('\t').ok_or(Error::Parse {
            offset: lineno,
            msg: format!("manifest line {lineno} has no tab: {line:?}"),
        })?;
        let (shape, data) = read_raw::<E>(&dir.join(file))?;
        out.push((name.to_string(), shape, data));
    }
    Ok(out)
}
