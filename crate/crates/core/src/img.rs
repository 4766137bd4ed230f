//! Float image buffers plus PNG (8-bit previews) and PFM (32-bit, the
//! authoritative format for tests) I/O.

use crate::scalar::Real;
use crate::tensor::Tensor;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png encode error: {0}")]
    Png(String),
    #[error("bad PFM file: {0}")]
    BadPfm(String),
}

/// Channel-major float image: data[(c*h + y)*w + x].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Image {
            h,
            w,
            c,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn filled(c: usize, h: usize, w: usize, value: f32) -> Self {
        Image {
            h,
            w,
            c,
            data: vec![value; c * h * w],
        }
    }

    #[inline]
    pub fn at(&self, ch: usize, y: usize, x: usize) -> f32 {
        self.data[(ch * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, ch: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(ch * self.h + y) * self.w + x]
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[self.c, self.h, self.w],
            self.data.iter().map(|&v| T::of_f32(v)).collect(),
        )
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        assert_eq!(t.rank(), 3, "image tensor must be [C,H,W]");
        Image {
            c: t.shape()[0],
            h: t.shape()[1],
            w: t.shape()[2],
            data: t.to_f32_vec(),
        }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let mut acc = 0.0f64;
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += (a - b).abs() as f64;
        }
        acc / self.data.len() as f64
    }
}

/// 8-bit PNG preview; values clamped to [0,1]. Single-channel images are
/// written as grayscale.
pub fn save_png(img: &Image, path: &Path) -> Result<(), ImageError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (img.w as u32, img.h as u32);
    match img.c {
        1 => {
            let buf: Vec<u8> = (0..img.h * img.w).map(|i| to_u8(img.data[i])).collect();
            image::GrayImage::from_raw(w, h, buf)
                .ok_or_else(|| ImageError::Png("buffer size".into()))?
                .save(path)
                .map_err(|e| ImageError::Png(e.to_string()))
        }
        3 => {
            let mut buf = Vec::with_capacity(img.h * img.w * 3);
            for y in 0..img.h {
                for x in 0..img.w {
                    for c in 0..3 {
                        buf.push(to_u8(img.at(c, y, x)));
                    }
                }
            }
            image::RgbImage::from_raw(w, h, buf)
                .ok_or_else(|| ImageError::Png("buffer size".into()))?
                .save(path)
                .map_err(|e| ImageError::Png(e.to_string()))
        }
        c => Err(ImageError::Png(format!("unsupported channel count {c}"))),
    }
}

/// Stack images horizontally into one strip (same height/channels required).
pub fn hstack(images: &[&Image]) -> Image {
    assert!(!images.is_empty());
    let h = images[0].h;
    let c = images[0].c;
    let total_w: usize = images.iter().map(|i| i.w).sum();
    let mut out = Image::new(c, h, total_w);
    let mut x0 = 0usize;
    for img in images {
        assert_eq!(img.h, h);
        assert_eq!(img.c, c);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..img.w {
                    *out.at_mut(ch, y, x0 + x) = img.at(ch, y, x);
                }
            }
        }
        x0 += img.w;
    }
    out
}

/// PFM: "PF" (3-channel) or "Pf" (1-channel), negative scale = little-endian,
/// rows stored bottom-to-top.
pub fn save_pfm(img: &Image, path: &Path) -> Result<(), ImageError> {
    if img.c != 1 && img.c != 3 {
        return Err(ImageError::BadPfm(format!("channel count {} not supported", img.c)));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let tag = if img.c == 3 { "PF" } else { "Pf" };
    write!(w, "{tag}\n{} {}\n-1.0\n", img.w, img.h)?;
    for y in (0..img.h).rev() {
        for x in 0..img.w {
            for ch in 0..img.c {
                w.write_all(&img.at(ch, y, x).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<Image, ImageError> {
    let mut rd = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    rd.read_line(&mut line)?;
    let c = match line.trim() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(ImageError::BadPfm(format!("bad tag {other:?}"))),
    };
    line.clear();
    rd.read_line(&mut line)?;
    let mut dims = line.split_whitespace();
    let w: usize = dims
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::BadPfm("missing width".into()))?;
    let h: usize = dims
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::BadPfm("missing height".into()))?;
    line.clear();
    rd.read_line(&mut line)?;
    let scale: f32 = line
        .trim()
        .parse()
        .map_err(|_| ImageError::BadPfm("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(ImageError::BadPfm("big-endian PFM not supported".into()));
    }
    let mut buf = vec![0u8; w * h * c * 4];
    rd.read_exact(&mut buf)
        .map_err(|_| ImageError::BadPfm("truncated pixel data".into()))?;
    let mut img = Image::new(c, h, w);
    let mut i = 0usize;
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                let v = f32::from_le_bytes([buf[i], buf[i + 1], buf[i + 2], buf[i + 3]]);
                *img.at_mut(ch, y, x) = v;
                i += 4;
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_bit_exact() {
        let mut img = Image::new(3, 4, 5);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.371).sin() * 3.0;
        }
        let mut p = std::env::temp_dir();
        p.push(format!("gsbody-pfm-{}.pfm", std::process::id()));
        save_pfm(&img, &p).unwrap();
        let back = load_pfm(&p).unwrap();
        assert_eq!(img, back);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn pfm_gray_round_trip() {
        let mut img = Image::new(1, 3, 2);
        img.data = vec![0.0, 1.0, -2.5, 3.25, 1e-7, 9.0];
        let mut p = std::env::temp_dir();
        p.push(format!("gsbody-pfm-gray-{}.pfm", std::process::id()));
        save_pfm(&img, &p).unwrap();
        assert_eq!(load_pfm(&p).unwrap(), img);
        std::fs::remove_file(&p).ok();
    }
}
