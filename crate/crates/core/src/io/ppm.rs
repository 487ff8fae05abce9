//! Binary 8-bit portable pixmaps (`P6`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Tensor};

fn parse_err(position: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, format!("{what} out of range")))
    }
}

/// Decodes a `P6` file into `[H, W, 3]` values in `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(parse_err(0, "missing P6 magic"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(h.pos, "zero image size"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(h.pos, format!("maxval {maxval} is not 8-bit")));
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(parse_err(h.pos, "expected whitespace before pixel data"));
    }
    let start = h.pos + 1;
    let need = width * height * 3;
    let have = bytes.len() - start;
    if have < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: expected {need} bytes, found {have}"),
        ));
    }
    let scale = maxval as f64;
    let data = bytes[start..start + need]
        .iter()
        .map(|&b| b as f64 / scale)
        .collect();
    Tensor::from_vec(&[height, width, 3], data)
}

/// Encodes `[H, W, 3]` values, clamped to `[0, 1]` and rounded to 8 bits.
pub fn encode(image: &ImageTensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::shape("ppm encode", s, &[0, 0, 3]));
    }
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    decode(&std::fs::read(path)?)
}

pub fn save_image(path: impl AsRef<Path>, image: &ImageTensor) -> Result<()> {
    std::fs::write(path, encode(image)?)?;
    Ok(())
}

/// Largest centred window with the aspect ratio of `height x width`.
pub fn center_crop_to_aspect(
    image: &ImageTensor,
    height: usize,
    width: usize,
) -> Result<ImageTensor> {
    let s = image.shape();
    let (h, w) = (s[0], s[1]);
    if height == 0 || width == 0 {
        return Err(Error::invalid("target size must be positive"));
    }
    let (ch, cw) = if h * width > w * height {
        (w * height / width, w)
    } else {
        (h, h * width / height)
    };
    let (ch, cw) = (ch.max(1), cw.max(1));
    let (y0, x0) = ((h - ch) / 2, (w - cw) / 2);
    let mut data = Vec::with_capacity(ch * cw * 3);
    for y in y0..y0 + ch {
        let row = (y * w + x0) * 3;
        data.extend_from_slice(&image.data()[row..row + cw * 3]);
    }
    Tensor::from_vec(&[ch, cw, 3], data)
}

/// Bilinear resampling with pixel centres aligned.
pub fn resize_bilinear(image: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::shape("resize", s, &[0, 0, 3]));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("target size must be positive"));
    }
    let (h, w) = (s[0], s[1]);
    let src = image.data();
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let p = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, p - lo as f64)
    };
    let mut data = vec![0.0; height * width * 3];
    for y in 0..height {
        let (y0, y1, fy) = coord(y, height, h);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, width, w);
            for c in 0..3 {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * 3 + c];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                data[(y * width + x) * 3 + c] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::from_vec(&[height, width, 3], data)
}

/// Centre-crops to the target aspect ratio, then resizes when the size differs.
pub fn fit_image(image: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if image.shape()[..2] == [height, width] {
        return Ok(image.clone());
    }
    let cropped = center_crop_to_aspect(image, height, width)?;
    if cropped.shape()[..2] == [height, width] {
        return Ok(cropped);
    }
    resize_bilinear(&cropped, height, width)
}

/// Every `*.ppm` file of a directory, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every image of a directory, fitted to `height x width`.
pub fn load_dir(dir: impl AsRef<Path>, height: usize, width: usize) -> Result<Vec<ImageTensor>> {
    list_images(dir)?
        .iter()
        .map(|p| fit_image(&load_image(p)?, height, width))
        .collect()
}
