//! PGM (binary P5) and PNG grayscale readers and writers.
//!
//! Samples are mapped to `[0, 1]` by dividing by the maximum sample value.
//! The format is chosen from the file extension.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

enum Format {
    Pgm,
    Png,
}

fn format_of(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pgm") => Ok(Format::Pgm),
        Some("png") => Ok(Format::Png),
        _ => Err(fmt_err(path, "unsupported extension (expected .pgm or .png)")),
    }
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Pgm => {
            let mut bytes = Vec::new();
            File::open(path)?.read_to_end(&mut bytes)?;
            decode_pgm(&bytes).map_err(|m| fmt_err(path, m))
        }
        Format::Png => read_png(path),
    }
}

/// Writes `img` clamped to `[0, 1]` and quantised to the given depth.
pub fn write_image(path: impl AsRef<Path>, img: &GrayImage, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let max = depth.max();
    let samples: Vec<u16> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * max).round() as u16)
        .collect();
    match format_of(path)? {
        Format::Pgm => {
            let mut out = BufWriter::new(File::create(path)?);
            out.write_all(&encode_pgm(img.height(), img.width(), &samples, depth))?;
            out.flush()?;
            Ok(())
        }
        Format::Png => write_png(path, img.height(), img.width(), &samples, depth),
    }
}

fn encode_pgm(h: usize, w: usize, samples: &[u16], depth: BitDepth) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n{}\n", depth.max() as u32).into_bytes();
    match depth {
        BitDepth::Eight => out.extend(samples.iter().map(|&s| s as u8)),
        BitDepth::Sixteen => {
            for &s in samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        }
    }
    out
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0usize;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let maxval = num(token()?)?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad header {w}x{h} max {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = w * h;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    if bytes.len() < pos + need {
        return Err(format!("raster truncated: need {need} bytes"));
    }
    let raster = &bytes[pos..pos + need];
    let max = maxval as f64;
    let data: Vec<f64> = if wide {
        raster
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / max)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64 / max).collect()
    };
    GrayImage::new(h, w, data).map_err(|e| e.to_string())
}

fn read_png(path: &Path) -> Result<GrayImage> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| fmt_err(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| fmt_err(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let wide = info.bit_depth == png::BitDepth::Sixteen;
    let channels = info.color_type.samples();
    let bytes = &buf[..info.buffer_size()];
    let sample = |i: usize| -> f64 {
        if wide {
            u16::from_be_bytes([bytes[2 * i], bytes[2 * i + 1]]) as f64 / 65535.0
        } else {
            bytes[i] as f64 / 255.0
        }
    };
    let data: Vec<f64> = (0..w * h)
        .map(|p| {
            let base = p * channels;
            match info.color_type {
                png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => sample(base),
                _ => 0.299 * sample(base) + 0.587 * sample(base + 1) + 0.114 * sample(base + 2),
            }
        })
        .collect();
    GrayImage::new(h, w, data)
}

fn write_png(path: &Path, h: usize, w: usize, samples: &[u16], depth: BitDepth) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => {
            enc.set_depth(png::BitDepth::Eight);
            samples.iter().map(|&s| s as u8).collect()
        }
        BitDepth::Sixteen => {
            enc.set_depth(png::BitDepth::Sixteen);
            samples.iter().flat_map(|s| s.to_be_bytes()).collect()
        }
    };
    let mut writer = enc.write_header().map_err(|e| fmt_err(path, e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| fmt_err(path, e.to_string()))?;
    writer.finish().map_err(|e| fmt_err(path, e.to_string()))?;
    Ok(())
}
