//! Baseline sequential JPEG (JFIF) encoder. Its output length is the
//! compressed-size measure used by the early-stopping criterion.
//!
//! Fixed Annex K Huffman tables, IJG quality scaling, BT.601 colour
//! conversion, optional 4:2:0 chroma subsampling and restart markers.

mod bitstream;
mod dct;
mod tables;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

pub use bitstream::Bitstream;
pub use dct::{fdct_8x8, Dct8};
pub use tables::{
    quality_scale, quality_scale_tables, HuffmanCodes, HuffmanSpec, QuantTables, AC_CHROMA,
    AC_LUMA, BASE_CHROMA, BASE_LUMA, DC_CHROMA, DC_LUMA, ZIGZAG,
};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsampling {
    /// Chroma at full resolution.
    S444,
    /// Chroma halved in both directions.
    S420,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JpegConfig {
    pub quality: u8,
    pub subsampling: Subsampling,
    /// MCUs between restart markers; 0 disables them.
    pub restart_interval: u16,
}

impl Default for JpegConfig {
    fn default() -> Self {
        JpegConfig {
            quality: 95,
            subsampling: Subsampling::S420,
            restart_interval: 0,
        }
    }
}

impl JpegConfig {
    pub fn with_quality(quality: u8) -> Self {
        JpegConfig {
            quality,
            ..Self::default()
        }
    }
}

/// A component plane padded to whole blocks.
struct Plane {
    data: Vec<f64>,
    width: usize,
}

impl Plane {
    /// Copies `src` (`w × h`) into a `pw × ph` plane, replicating the last
    /// row and column.
    fn padded(src: &[f64], w: usize, h: usize, pw: usize, ph: usize) -> Plane {
        let mut data = vec![0.0; pw * ph];
        for y in 0..ph {
            let sy = y.min(h - 1);
            for x in 0..pw {
                data[y * pw + x] = src[sy * w + x.min(w - 1)];
            }
        }
        Plane { data, width: pw }
    }

    /// 2×2 box average.
    fn halved(&self) -> Plane {
        let (w, h) = (self.width / 2, self.data.len() / self.width / 2);
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.width + 2 * x;
                data[y * w + x] = 0.25
                    * (self.data[i] + self.data[i + 1] + self.data[i + self.width] + self.data[i + self.width + 1]);
            }
        }
        Plane { data, width: w }
    }

    fn block(&self, bx: usize, by: usize) -> [f64; 64] {
        let mut b = [0.0; 64];
        for y in 0..8 {
            let row = (by * 8 + y) * self.width + bx * 8;
            for x in 0..8 {
                b[y * 8 + x] = self.data[row + x] - 128.0;
            }
        }
        b
    }
}

struct Component {
    id: u8,
    h: usize,
    v: usize,
    table: usize,
    plane: Plane,
}

/// Number of bits needed for |v| (the JPEG magnitude category).
#[inline]
fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

struct EntropyCoder {
    dc: [HuffmanCodes; 2],
    ac: [HuffmanCodes; 2],
}

impl EntropyCoder {
    fn new() -> Self {
        EntropyCoder {
            dc: [HuffmanCodes::from_spec(&DC_LUMA), HuffmanCodes::from_spec(&DC_CHROMA)],
            ac: [HuffmanCodes::from_spec(&AC_LUMA), HuffmanCodes::from_spec(&AC_CHROMA)],
        }
    }

    #[inline]
    fn put_symbol(out: &mut Bitstream, codes: &HuffmanCodes, sym: u8) {
        out.put_bits(codes.code[sym as usize] as u32, codes.size[sym as usize] as u32);
    }

    #[inline]
    fn put_value(out: &mut Bitstream, v: i32, cat: u32) {
        let bits = if v < 0 { v - 1 } else { v };
        out.put_bits(bits as u32, cat);
    }

    /// `zz` holds quantized coefficients in zigzag order.
    fn encode_block(&self, out: &mut Bitstream, zz: &[i32; 64], pred: &mut i32, table: usize) {
        let diff = zz[0] - *pred;
        *pred = zz[0];
        let cat = category(diff);
        Self::put_symbol(out, &self.dc[table], cat as u8);
        Self::put_value(out, diff, cat);

        let ac = &self.ac[table];
        let mut run = 0u32;
        for &c in &zz[1..] {
            if c == 0 {
                run += 1;
                continue;
            }
            while run > 15 {
                Self::put_symbol(out, ac, 0xF0);
                run -= 16;
            }
            let cat = category(c);
            Self::put_symbol(out, ac, ((run << 4) | cat) as u8);
            Self::put_value(out, c, cat);
            run = 0;
        }
        if run > 0 {
            Self::put_symbol(out, ac, 0x00);
        }
    }
}

fn write_headers(out: &mut Bitstream, img_w: u16, img_h: u16, comps: &[Component], tables: &QuantTables, config: &JpegConfig) {
    out.put_bytes(&[0xFF, 0xD8]);
    // APP0 / JFIF 1.01, no density units, no thumbnail
    out.put_bytes(&[0xFF, 0xE0, 0x00, 0x10, b'J', b'F', b'I', b'F', 0x00, 0x01, 0x01, 0x00]);
    out.put_u16(1);
    out.put_u16(1);
    out.put_bytes(&[0x00, 0x00]);

    let ntables = if comps.len() > 1 { 2 } else { 1 };
    out.put_bytes(&[0xFF, 0xDB]);
    out.put_u16(2 + 65 * ntables as u16);
    for (id, t) in [&tables.luma, &tables.chroma].into_iter().take(ntables).enumerate() {
        out.put_bytes(&[id as u8]);
        for &k in &ZIGZAG {
            out.put_bytes(&[t[k] as u8]);
        }
    }

    out.put_bytes(&[0xFF, 0xC0]);
    out.put_u16(8 + 3 * comps.len() as u16);
    out.put_bytes(&[8]);
    out.put_u16(img_h);
    out.put_u16(img_w);
    out.put_bytes(&[comps.len() as u8]);
    for c in comps {
        out.put_bytes(&[c.id, ((c.h as u8) << 4) | c.v as u8, c.table as u8]);
    }

    let specs: &[(u8, &HuffmanSpec)] = if comps.len() > 1 {
        &[(0x00, &DC_LUMA), (0x10, &AC_LUMA), (0x01, &DC_CHROMA), (0x11, &AC_CHROMA)]
    } else {
        &[(0x00, &DC_LUMA), (0x10, &AC_LUMA)]
    };
    out.put_bytes(&[0xFF, 0xC4]);
    let len: usize = 2 + specs.iter().map(|(_, s)| 17 + s.values.len()).sum::<usize>();
    out.put_u16(len as u16);
    for (class_id, s) in specs {
        out.put_bytes(&[*class_id]);
        out.put_bytes(&s.bits);
        out.put_bytes(s.values);
    }

    if config.restart_interval > 0 {
        out.put_bytes(&[0xFF, 0xDD, 0x00, 0x04]);
        out.put_u16(config.restart_interval);
    }

    out.put_bytes(&[0xFF, 0xDA]);
    out.put_u16(6 + 2 * comps.len() as u16);
    out.put_bytes(&[comps.len() as u8]);
    for c in comps {
        out.put_bytes(&[c.id, ((c.table as u8) << 4) | c.table as u8]);
    }
    out.put_bytes(&[0x00, 0x3F, 0x00]);
}

/// Encodes a 1- or 3-channel image in `[0, 1]` as a baseline JFIF stream.
///
/// Samples are first mapped to 8 bits with [`crate::image::quantize_u8`].
pub fn encode(image: &Image, config: &JpegConfig) -> Result<Vec<u8>> {
    let tables = quality_scale_tables(config.quality)?;
    let (w, h) = (image.width(), image.height());
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::input(format!("{w}x{h} exceeds the JPEG size limit of 65535")));
    }
    let samples = image.to_u8_planar();
    let n = w * h;
    let color = match image.channels() {
        1 => false,
        3 => true,
        c => {
            return Err(Error::input(format!(
                "JPEG encoding supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let sub = color && config.subsampling == Subsampling::S420;
    let mcu = if sub { 16 } else { 8 };
    let (mcux, mcuy) = (w.div_ceil(mcu), h.div_ceil(mcu));
    let (pw, ph) = (mcux * mcu, mcuy * mcu);

    let mut comps = Vec::with_capacity(3);
    if color {
        let (r, g, b) = (&samples[..n], &samples[n..2 * n], &samples[2 * n..]);
        let mut y = vec![0.0; n];
        let mut cb = vec![0.0; n];
        let mut cr = vec![0.0; n];
        for i in 0..n {
            let (r, g, b) = (r[i] as f64, g[i] as f64, b[i] as f64);
            y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
            cb[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
            cr[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
        }
        let f = if sub { 2 } else { 1 };
        comps.push(Component {
            id: 1,
            h: f,
            v: f,
            table: 0,
            plane: Plane::padded(&y, w, h, pw, ph),
        });
        for (id, c) in [(2, cb), (3, cr)] {
            let full = Plane::padded(&c, w, h, pw, ph);
            comps.push(Component {
                id,
                h: 1,
                v: 1,
                table: 1,
                plane: if sub { full.halved() } else { full },
            });
        }
    } else {
        let y: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
        comps.push(Component {
            id: 1,
            h: 1,
            v: 1,
            table: 0,
            plane: Plane::padded(&y, w, h, pw, ph),
        });
    }

    // entropy data is typically well under one byte per sample at high quality
    let mut out = Bitstream::with_capacity(1024 + n * image.channels());
    write_headers(&mut out, w as u16, h as u16, &comps, &tables, config);

    let dct = Dct8::new();
    let coder = EntropyCoder::new();
    let recip: [[f64; 64]; 2] = [
        core::array::from_fn(|k| 1.0 / tables.luma[k] as f64),
        core::array::from_fn(|k| 1.0 / tables.chroma[k] as f64),
    ];
    let mut preds = [0i32; 3];
    let restart = config.restart_interval as usize;
    let total_mcus = mcux * mcuy;
    let mut zz = [0i32; 64];
    for m in 0..total_mcus {
        if restart > 0 && m > 0 && m % restart == 0 {
            out.align();
            out.put_bytes(&[0xFF, 0xD0 + ((m / restart - 1) % 8) as u8]);
            preds = [0; 3];
        }
        let (mx, my) = (m % mcux, m / mcux);
        for (ci, c) in comps.iter().enumerate() {
            for by in 0..c.v {
                for bx in 0..c.h {
                    let coef = dct.forward(&c.plane.block(mx * c.h + bx, my * c.v + by));
                    for (k, z) in zz.iter_mut().enumerate() {
                        let nat = ZIGZAG[k];
                        *z = Float::round(coef[nat] * recip[c.table][nat]) as i32;
                    }
                    coder.encode_block(&mut out, &zz, &mut preds[ci], c.table);
                }
            }
        }
    }
    out.align();
    out.put_bytes(&[0xFF, 0xD9]);
    Ok(out.finish())
}

/// Compressed image file size: the byte length of [`encode`]'s output.
pub fn cifs(image: &Image, config: &JpegConfig) -> Result<usize> {
    encode(image, config).map(|b| b.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthetic_image, Pattern};

    #[test]
    fn markers_and_determinism() {
        let img = synthetic_image(Pattern::Discs, 3, 40, 24, 1);
        for sub in [Subsampling::S420, Subsampling::S444] {
            let cfg = JpegConfig {
                subsampling: sub,
                ..JpegConfig::default()
            };
            let a = encode(&img, &cfg).unwrap();
            assert_eq!(&a[..2], &[0xFF, 0xD8]);
            assert_eq!(&a[a.len() - 2..], &[0xFF, 0xD9]);
            assert_eq!(a, encode(&img, &cfg).unwrap());
            assert_eq!(cifs(&img, &cfg).unwrap(), a.len());
        }
    }

    #[test]
    fn rejects_two_channels_and_bad_quality() {
        let img = Image::filled(2, 8, 8, 0.5);
        assert!(matches!(encode(&img, &JpegConfig::default()), Err(Error::Input(_))));
        let img = Image::filled(3, 8, 8, 0.5);
        assert!(matches!(encode(&img, &JpegConfig::with_quality(0)), Err(Error::Config(_))));
    }

    #[test]
    fn category_values() {
        assert_eq!(category(0), 0);
        assert_eq!(category(1), 1);
        assert_eq!(category(-1), 1);
        assert_eq!(category(-2), 2);
        assert_eq!(category(255), 8);
        assert_eq!(category(-1024), 11);
    }

    #[test]
    fn entropy_data_has_no_unstuffed_ff() {
        let img = synthetic_image(Pattern::FilteredNoise, 3, 32, 32, 4);
        let bytes = encode(&img, &JpegConfig::with_quality(100)).unwrap();
        // skip to the scan: find SOS, then walk its length
        let sos = bytes.windows(2).position(|w| w == [0xFF, 0xDA]).unwrap();
        let len = u16::from_be_bytes([bytes[sos + 2], bytes[sos + 3]]) as usize;
        let scan = &bytes[sos + 2 + len..bytes.len() - 2];
        for (i, w) in scan.windows(2).enumerate() {
            if w[0] == 0xFF {
                assert_eq!(w[1], 0x00, "unstuffed 0xFF at scan offset {i}");
            }
        }
    }

    #[test]
    fn restart_markers_are_emitted_in_sequence() {
        let img = synthetic_image(Pattern::Gradient, 1, 8, 8 * 20, 2);
        let cfg = JpegConfig {
            restart_interval: 2,
            ..JpegConfig::default()
        };
        let bytes = encode(&img, &cfg).unwrap();
        let markers: Vec<u8> = bytes
            .windows(2)
            .filter(|w| w[0] == 0xFF && (0xD0..=0xD7).contains(&w[1]))
            .map(|w| w[1])
            .collect();
        // 20 MCUs, interval 2 -> 9 restarts cycling D0..D7
        assert_eq!(markers, [0xD0, 0xD1, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD0]);
    }
}
