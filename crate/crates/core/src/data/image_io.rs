//! Image files: binary PPM (P6) is the native format, PNG is supported via
//! the `image` crate. Pixels map to [0, 1] by /255 on load; saving inverts
//! with round-half-up.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::codec::Image;
use crate::error::{Error, Result};
use crate::tensor::Real;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::MalformedImage {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Load an 8-bit RGB image. Format is chosen by extension: `.ppm` or `.png`.
pub fn load_image<T: Real>(path: &Path) -> Result<Image<T>> {
    match extension(path) {
        Some("ppm") => load_ppm(path),
        Some("png") => load_png(path),
        _ => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
        }),
    }
}

/// Load, center-crop to square, and box-downscale to `size`x`size`.
pub fn load_image_resized<T: Real>(path: &Path, size: usize) -> Result<Image<T>> {
    let img = load_image::<T>(path)?;
    Ok(center_crop_resize(&img, size))
}

/// Save an 8-bit RGB image; format chosen by extension.
pub fn save_image<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    match extension(path) {
        Some("ppm") => save_ppm(img, path),
        Some("png") => save_png(img, path),
        _ => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
        }),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn from_rgb8<T: Real>(bytes: &[u8], h: usize, w: usize) -> Image<T> {
    // Interleaved RGB bytes → planar [3, H, W] in [0, 1].
    let mut data = vec![T::zero(); 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = T::from_f64(bytes[3 * i + c] as f64 / 255.0);
        }
    }
    Image::new(3, h, w, data).expect("sized to shape")
}

fn to_rgb8<T: Real>(img: &Image<T>) -> Vec<u8> {
    let hw = img.height() * img.width();
    let mut bytes = vec![0u8; 3 * hw];
    for i in 0..hw {
        for c in 0..3 {
            let v = img.data()[c * hw + i].as_f64().clamp(0.0, 1.0);
            bytes[3 * i + c] = (v * 255.0).round() as u8;
        }
    }
    bytes
}

// ── PPM (P6) ────────────────────────────────────────────────────────────

pub fn load_ppm<T: Real>(path: &Path) -> Result<Image<T>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and '#' comment lines.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P6" {
        return Err(malformed(path, "not a binary PPM (P6)"));
    }
    let w: usize = token(&bytes)?
        .parse()
        .map_err(|_| malformed(path, "bad width"))?;
    let h: usize = token(&bytes)?
        .parse()
        .map_err(|_| malformed(path, "bad height"))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|_| malformed(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(malformed(path, format!("maxval {maxval}, expected 255")));
    }
    pos += 1; // single whitespace byte after maxval
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(malformed(
            path,
            format!("payload truncated: need {need} bytes"),
        ));
    }
    Ok(from_rgb8(&bytes[pos..pos + need], h, w))
}

pub fn save_ppm<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write!(f, "P6\n{} {}\n255\n", img.width(), img.height()).map_err(|e| io_err(path, e))?;
    f.write_all(&to_rgb8(img)).map_err(|e| io_err(path, e))
}

// ── PNG ─────────────────────────────────────────────────────────────────

pub fn load_png<T: Real>(path: &Path) -> Result<Image<T>> {
    let decoded = image::open(path).map_err(|e| malformed(path, e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(from_rgb8(rgb.as_raw(), h, w))
}

pub fn save_png<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(img.width() as u32, img.height() as u32, to_rgb8(img))
            .expect("buffer sized to dimensions");
    buf.save(path).map_err(|e| malformed(path, e.to_string()))
}

// ── Geometry ────────────────────────────────────────────────────────────

/// Center-crop to a square, then box-average down to `size`x`size`.
pub fn center_crop_resize<T: Real>(img: &Image<T>, size: usize) -> Image<T> {
    let side = img.height().min(img.width());
    let y0 = (img.height() - side) / 2;
    let x0 = (img.width() - side) / 2;
    let hw = img.height() * img.width();

    let mut out = vec![T::zero(); 3 * size * size];
    for c in 0..img.channels().min(3) {
        let plane = &img.data()[c * hw..(c + 1) * hw];
        for ty in 0..size {
            let sy0 = y0 + ty * side / size;
            let sy1 = (y0 + ((ty + 1) * side).div_ceil(size)).min(y0 + side);
            for tx in 0..size {
                let sx0 = x0 + tx * side / size;
                let sx1 = (x0 + ((tx + 1) * side).div_ceil(size)).min(x0 + side);
                let mut acc = 0.0f64;
                let mut n = 0usize;
                for sy in sy0..sy1 {
                    for sx in sx0..sx1 {
                        acc += plane[sy * img.width() + sx].as_f64();
                        n += 1;
                    }
                }
                out[c * size * size + ty * size + tx] = T::from_f64(acc / n.max(1) as f64);
            }
        }
    }
    Image::new(3, size, size, out).expect("sized to shape")
}
