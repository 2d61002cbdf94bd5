//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::fs;
use std::path::Path;

use cifs_core::Image;

use crate::error::{Error, Result};

/// Decodes a P5/P6 file held in memory. Errors name the byte offset.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let magic = bytes.get(..2).ok_or("offset 0: file too short for a PNM header")?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(format!("offset 0: expected magic P5 or P6, found {:?}", String::from_utf8_lossy(magic))),
    };
    pos += 2;
    let (width, _) = header_int(bytes, &mut pos, "width")?;
    let (height, _) = header_int(bytes, &mut pos, "height")?;
    let (maxval, maxval_at) = header_int(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(format!(
            "offset {maxval_at}: maxval {maxval} is not supported, only 8-bit (255) samples"
        ));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format!("offset {pos}: expected one whitespace byte after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(format!("offset {maxval_at}: image has zero width or height"));
    }
    let n = channels * width * height;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(format!(
            "offset {}: raster truncated, expected {n} bytes, found {}",
            pos + raster.len(),
            raster.len()
        ));
    }
    let mut planar = vec![0u8; n];
    let px = width * height;
    for (i, chunk) in raster[..n].chunks_exact(channels).enumerate() {
        for (c, &v) in chunk.iter().enumerate() {
            planar[c * px + i] = v;
        }
    }
    Image::from_u8_planar(channels, height, width, &planar).map_err(|e| e.to_string())
}

/// Next decimal header field and the offset where it starts.
fn header_int(bytes: &[u8], pos: &mut usize, what: &str) -> std::result::Result<(usize, usize), String> {
    // whitespace and comments
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(format!("offset {start}: expected {what}"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .map(|v| (v, start))
        .ok_or_else(|| format!("offset {start}: {what} out of range"))
}

/// P5 for one channel, P6 for three.
pub fn encode_pnm(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::usage(format!("cannot store {c}-channel images as PNM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    let planar = image.to_u8_planar();
    let px = image.width() * image.height();
    out.reserve(planar.len());
    for i in 0..px {
        for c in 0..image.channels() {
            out.push(planar[c * px + i]);
        }
    }
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|m| Error::parse(path, m))
}

pub fn save_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(image)?).map_err(|e| Error::io(path, e))
}

/// Every `.ppm`/`.pgm` directly inside `dir`, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}
