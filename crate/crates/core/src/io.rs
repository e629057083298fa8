//! File formats: binary PGM (`P5`, 8-bit) for previews and the raw `F32T`
//! float tensor format for lossless-enough storage of images, kernels and
//! parameter blobs.
//!
//! `F32T` layout: the ASCII magic `F32T\n`, one header line
//! `ndim d0 d1 ...\n`, then `prod(d)` little-endian `f32` values in
//! row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Image, Tensor};

const F32T_MAGIC: &[u8] = b"F32T\n";

pub fn encode_f32t(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(F32T_MAGIC.len() + 32 + 4 * t.numel());
    out.extend_from_slice(F32T_MAGIC);
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    out.extend_from_slice(format!("{} {}\n", t.shape().len(), dims.join(" ")).as_bytes());
    for &v in t.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_f32t(bytes: &[u8]) -> Result<Tensor> {
    let bad = |reason: String| Error::Format {
        format: "F32T",
        reason,
    };
    let rest = bytes
        .strip_prefix(F32T_MAGIC)
        .ok_or_else(|| bad("missing magic".into()))?;
    let eol = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("unterminated header line".into()))?;
    let header = std::str::from_utf8(&rest[..eol]).map_err(|e| bad(e.to_string()))?;
    let mut fields = header.split_ascii_whitespace().map(|s| {
        s.parse::<usize>()
            .map_err(|e| bad(format!("header field {s:?}: {e}")))
    });
    let ndim = fields.next().ok_or_else(|| bad("empty header".into()))??;
    let shape = fields.collect::<Result<Vec<_>>>()?;
    if shape.len() != ndim {
        return Err(bad(format!(
            "header declares {ndim} dims but lists {}",
            shape.len()
        )));
    }
    let payload = &rest[eol + 1..];
    let numel: usize = shape.iter().product();
    if payload.len() != 4 * numel {
        return Err(bad(format!(
            "expected {} payload bytes, found {}",
            4 * numel,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape, data)
}

pub fn write_f32t(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_f32t(t)).map_err(|e| Error::io(path, e))
}

pub fn read_f32t(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_f32t(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// 8-bit binary PGM; values are mapped by `round(255 * clamp(v, 0, 1))`.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .as_slice()
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
    );
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let bad = |reason: &str| Error::Format {
        format: "PGM",
        reason: reason.to_string(),
    };
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("only binary P5 graymaps are supported"));
    }
    let mut number = || -> Result<usize> {
        token()?
            .parse()
            .map_err(|_| bad("non-numeric header field"))
    };
    let width = number()?;
    let height = number()?;
    let maxval = number()?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if raster.len() < width * height {
        return Err(bad("raster shorter than width*height"));
    }
    let data = raster[..width * height]
        .iter()
        .map(|&b| b as f64 / maxval as f64)
        .collect();
    Image::new(height, width, data)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pgm(image))
        .map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Reads an image, dispatching on the extension (`.pgm` or `.f32t`).
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("pgm") => read_pgm(path),
        Some("f32t") => Image::from_tensor(read_f32t(path)?),
        _ => Err(Error::Format {
            format: "image",
            reason: format!("{}: expected a .pgm or .f32t file", path.display()),
        }),
    }
}

pub(crate) fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}
