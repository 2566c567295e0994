//! PNG and raw-float image files.

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ColorImage, DepthImage, Image, Mask};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct Decoded {
    width: u32,
    height: u32,
    channels: usize,
    sixteen_bit: bool,
    data: Vec<u8>,
}

fn decode_png(path: &Path) -> Result<Decoded> {
    let bytes = read_bytes(path)?;
    let decode_err = |e: png::DecodingError| Error::Decode { path: path.to_owned(), message: e.to_string() };
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode {
        path: path.to_owned(),
        message: "image too large".into(),
    })?;
    let mut data = vec![0u8; size];
    let info = reader.next_frame(&mut data).map_err(decode_err)?;
    data.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Decode { path: path.to_owned(), message: "unexpanded palette image".into() })
        }
    };
    Ok(Decoded {
        width: info.width,
        height: info.height,
        channels,
        sixteen_bit: info.bit_depth == png::BitDepth::Sixteen,
        data,
    })
}

fn encode_png(width: u32, height: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

/// Sample `i` of channel `c`, as 8-bit (16-bit samples keep the high byte).
fn sample8(d: &Decoded, i: usize, c: usize) -> u8 {
    let idx = i * d.channels + c;
    if d.sixteen_bit {
        d.data[idx * 2]
    } else {
        d.data[idx]
    }
}

/// Reads a single-channel PNG mask; nonzero pixels are foreground.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let d = decode_png(path)?;
    let n = (d.width * d.height) as usize;
    let data = (0..n).map(|i| (0..d.channels.min(3)).any(|c| sample8(&d, i, c) != 0)).collect();
    Image::from_vec(d.width, d.height, data)
}

pub fn encode_mask_png(mask: &Mask) -> Vec<u8> {
    let data: Vec<u8> = mask.pixels().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_png(mask.width(), mask.height(), png::ColorType::Grayscale, png::BitDepth::Eight, &data)
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    write_atomic(path, &encode_mask_png(mask))
}

pub fn read_rgb_png(path: &Path) -> Result<ColorImage> {
    let d = decode_png(path)?;
    let n = (d.width * d.height) as usize;
    let data = (0..n)
        .map(|i| {
            if d.channels >= 3 {
                [sample8(&d, i, 0), sample8(&d, i, 1), sample8(&d, i, 2)]
            } else {
                let g = sample8(&d, i, 0);
                [g, g, g]
            }
        })
        .collect();
    Image::from_vec(d.width, d.height, data)
}

pub fn write_rgb_png(path: &Path, img: &ColorImage) -> Result<()> {
    let data: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    write_atomic(path, &encode_png(img.width(), img.height(), png::ColorType::Rgb, png::BitDepth::Eight, &data))
}

/// Raw little-endian `f32` meters, row-major, no header.
pub fn read_depth_f32(path: &Path, width: u32, height: u32) -> Result<DepthImage> {
    let bytes = read_bytes(path)?;
    let expected = width as usize * height as usize * 4;
    if bytes.len() != expected {
        return Err(Error::Decode {
            path: path.to_owned(),
            message: format!("expected {expected} bytes for {width}x{height} f32 depth, found {}", bytes.len()),
        });
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Image::from_vec(width, height, data)
}

pub fn write_depth_f32(path: &Path, depth: &DepthImage) -> Result<()> {
    let bytes: Vec<u8> = depth.pixels().iter().flat_map(|z| z.to_le_bytes()).collect();
    write_atomic(path, &bytes)
}

/// 16-bit grayscale PNG in millimeters; zero is invalid.
pub fn read_depth_png16(path: &Path) -> Result<DepthImage> {
    let d = decode_png(path)?;
    if d.channels != 1 || !d.sixteen_bit {
        return Err(Error::Decode { path: path.to_owned(), message: "depth PNG must be 16-bit grayscale".into() });
    }
    let data = d
        .data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 1000.0)
        .collect();
    Image::from_vec(d.width, d.height, data)
}

pub fn write_depth_png16(path: &Path, depth: &DepthImage) -> Result<()> {
    let data: Vec<u8> = depth
        .pixels()
        .iter()
        .flat_map(|&z| {
            let mm = if crate::geometry::depth_is_valid(z) { (z * 1000.0).round().clamp(0.0, 65535.0) as u16 } else { 0 };
            mm.to_be_bytes()
        })
        .collect();
    write_atomic(path, &encode_png(depth.width(), depth.height(), png::ColorType::Grayscale, png::BitDepth::Sixteen, &data))
}
