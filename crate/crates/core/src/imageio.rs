//! 8-bit grayscale images and their file I/O (binary PGM and PNG).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::Error;
use crate::Result;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Contract("image dimensions must be >= 1".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::Contract(format!(
                "pixel buffer is {} bytes, expected {}",
                pixels.len(),
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self::new(height, width, vec![value; height * width]).unwrap()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        self.pixels[r * self.width + c] = v;
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Loads a grayscale image by extension (`.pgm`, `.png`). Color inputs are
/// rejected.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("pgm") => read_pgm(path),
        Some("png") => read_png(path),
        other => Err(Error::ImageFormat(format!(
            "unsupported image extension {other:?} for {}",
            path.display()
        ))),
    }
}

/// Reads a binary ("P5") PGM with maxval <= 255.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    fn skip_ws(bytes: &[u8], pos: &mut usize) {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn read_uint(bytes: &[u8], pos: &mut usize) -> Result<usize> {
        skip_ws(bytes, pos);
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::ImageFormat("expected integer in PGM header".into()));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ImageFormat("bad integer in PGM header".into()))
    }

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        if bytes.len() >= 2 && (&bytes[0..2] == b"P6" || &bytes[0..2] == b"P3") {
            return Err(Error::ImageFormat(
                "color PNM input; only grayscale is supported".into(),
            ));
        }
        return Err(Error::ImageFormat("not a binary PGM (missing P5)".into()));
    }
    let mut pos = 2usize;
    let width = read_uint(bytes, &mut pos)?;
    let height = read_uint(bytes, &mut pos)?;
    let maxval = read_uint(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::ImageFormat(format!(
            "maxval {maxval} unsupported; need 8-bit data"
        )));
    }
    // Single whitespace byte separates header from raster.
    pos += 1;
    let need = width
        .checked_mul(height)
        .ok_or_else(|| Error::ImageFormat("image dimensions overflow".into()))?;
    if bytes.len() < pos + need {
        return Err(Error::ImageFormat("PGM truncated".into()));
    }
    GrayImage::new(height, width, bytes[pos..pos + need].to_vec())
}

/// Writes a binary ("P5") PGM with maxval 255.
pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", img.width(), img.height())?;
    f.write_all(img.pixels())?;
    Ok(())
}

fn read_png(path: &Path) -> Result<GrayImage> {
    let dynimg = image::open(path)
        .map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))?;
    match dynimg {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            GrayImage::new(h, w, buf.into_raw())
        }
        other => Err(Error::ImageFormat(format!(
            "color or non-8-bit input ({:?}); only 8-bit grayscale is supported",
            other.color()
        ))),
    }
}

/// Writes the image as an 8-bit grayscale PNG.
pub fn write_png_gray(img: &GrayImage, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.pixels().to_vec(),
    )
    .expect("buffer size matches dimensions");
    buf.save(path)
        .map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))
}

/// Distinct colors for label inspection output; cycles past 16 classes.
const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
    [0, 128, 128],
    [230, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

/// Writes a label image as a color-mapped PNG for inspection.
pub fn write_png_labels(labels: &[u8], height: usize, width: usize, path: &Path) -> Result<()> {
    let mut rgb = Vec::with_capacity(height * width * 3);
    for &l in labels {
        rgb.extend_from_slice(&PALETTE[l as usize % PALETTE.len()]);
    }
    let buf = image::RgbImage::from_raw(width as u32, height as u32, rgb)
        .expect("buffer size matches dimensions");
    buf.save(path)
        .map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))
}
