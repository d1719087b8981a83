//! Binary PPM (P6) images and PGM (P5) label maps, maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Result, SegError};
use crate::label::{LabelMap, VOID};
use crate::tensor::{Shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmKind {
    /// `P5`, one byte per pixel.
    Gray,
    /// `P6`, three interleaved bytes per pixel.
    Rgb,
}

impl PnmKind {
    fn channels(self) -> usize {
        match self {
            PnmKind::Gray => 1,
            PnmKind::Rgb => 3,
        }
    }

    fn magic(self) -> &'static str {
        match self {
            PnmKind::Gray => "P5",
            PnmKind::Rgb => "P6",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

fn parse_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(SegError::Parse { offset, message: message.into() })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return parse_err(start, format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match text.parse::<usize>() {
            Ok(v) => Ok(v),
            Err(_) => parse_err(start, format!("{what} `{text}` is too large")),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let kind = match bytes.get(..2) {
        Some(b"P5") => PnmKind::Gray,
        Some(b"P6") => PnmKind::Rgb,
        _ => return parse_err(0, "expected magic P5 or P6"),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return parse_err(2, "expected whitespace after magic");
    }
    let width_at = cur.pos;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    if width == 0 || height == 0 {
        return parse_err(width_at, format!("image dimensions {width}x{height} must be positive"));
    }
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return parse_err(maxval_at, format!("maxval must be 255, got {maxval}"));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return parse_err(cur.pos, "expected a single whitespace byte before the raster"),
    }
    let need = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(kind.channels()))
        .ok_or_else(|| SegError::Parse { offset: width_at, message: "image dimensions overflow".into() })?;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return parse_err(bytes.len(), format!("raster truncated: need {need} bytes, found {}", raster.len()));
    }
    if raster.len() > need {
        return parse_err(cur.pos + need, "trailing bytes after raster");
    }
    Ok(Pnm { kind, width, height, data: raster.to_vec() })
}

pub fn encode(p: &Pnm) -> Vec<u8> {
    let mut out = format!("{}\n{} {}\n255\n", p.kind.magic(), p.width, p.height).into_bytes();
    out.extend_from_slice(&p.data);
    out
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `(1,3,h,w)` tensor with values in `[0,1]` as P6.
pub fn encode_image(image: &Tensor4<f64>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(SegError::Shape(format!("PPM needs a (1,3,h,w) image, got {s}")));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            data.push(quantize(image.plane(0, c)[i]));
        }
    }
    Ok(encode(&Pnm { kind: PnmKind::Rgb, width: s.w, height: s.h, data }))
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor4<f64>> {
    let p = decode(bytes)?;
    if p.kind != PnmKind::Rgb {
        return parse_err(0, "expected a P6 image");
    }
    let plane = p.width * p.height;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in p.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor4::from_vec(Shape::new(1, 3, p.height, p.width), data)
}

pub fn encode_label(label: &LabelMap) -> Vec<u8> {
    encode(&Pnm { kind: PnmKind::Gray, width: label.width(), height: label.height(), data: label.data().to_vec() })
}

pub fn decode_label(bytes: &[u8]) -> Result<LabelMap> {
    let p = decode(bytes)?;
    if p.kind != PnmKind::Gray {
        return parse_err(0, "expected a P5 label map");
    }
    LabelMap::new(p.height, p.width, p.data)
}

pub fn load_image(path: &Path) -> Result<Tensor4<f64>> {
    decode_image(&fs::read(path)?).map_err(|e| in_file(path, e))
}

pub fn save_image(path: &Path, image: &Tensor4<f64>) -> Result<()> {
    Ok(fs::write(path, encode_image(image)?)?)
}

pub fn load_label(path: &Path) -> Result<LabelMap> {
    decode_label(&fs::read(path)?).map_err(|e| in_file(path, e))
}

pub fn save_label(path: &Path, label: &LabelMap) -> Result<()> {
    Ok(fs::write(path, encode_label(label))?)
}

fn in_file(path: &Path, e: SegError) -> SegError {
    match e {
        SegError::Parse { offset, message } => SegError::Parse { offset, message: format!("{}: {message}", path.display()) },
        other => other,
    }
}

/// Colour of class `c`: the bits of `c` spread over the high bits of the
/// three channels (bit 0 → red, bit 1 → green, bit 2 → blue, then the next
/// lower bit of each). Void is white.
pub fn palette(class: u8) -> [u8; 3] {
    if class == VOID {
        return [255, 255, 255];
    }
    let mut rgb = [0u8; 3];
    let mut c = class;
    let mut shift = 7;
    while c > 0 {
        for ch in rgb.iter_mut() {
            *ch |= (c & 1) << shift;
            c >>= 1;
        }
        shift -= 1;
    }
    rgb
}

/// Half-and-half blend of the image and the palette colour of each label.
pub fn overlay(image: &Tensor4<f64>, label: &LabelMap) -> Result<Tensor4<f64>> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 || s.h != label.height() || s.w != label.width() {
        return Err(SegError::Shape(format!(
            "overlay of {s} image with {}x{} labels",
            label.height(),
            label.width()
        )));
    }
    let mut out = image.clone();
    for (i, &l) in label.data().iter().enumerate() {
        let rgb = palette(l);
        for (c, &v) in rgb.iter().enumerate() {
            let px = &mut out.plane_mut(0, c)[i];
            *px = 0.5 * *px + 0.5 * (v as f64 / 255.0);
        }
    }
    Ok(out)
}

/// Writes `{prefix}.pgm` (labels) and `{prefix}_overlay.ppm`.
pub fn save_prediction(prefix: &Path, image: &Tensor4<f64>, label: &LabelMap) -> Result<()> {
    let base = prefix.as_os_str().to_string_lossy().into_owned();
    save_label(Path::new(&format!("{base}.pgm")), label)?;
    save_image(Path::new(&format!("{base}_overlay.ppm")), &overlay(image, label)?)
}
