use std::io::Cursor;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// Binary PPM (P6); single-channel images are written as gray triplets.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    if img.channels == 3 {
        out.extend_from_slice(&img.pixels);
    } else {
        out.extend(img.pixels.iter().flat_map(|&p| [p, p, p]));
    }
    out
}

/// Binary PGM (P5); three-channel images must be converted to gray first.
pub fn encode_pgm(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 1 {
        return Err(Error::shape("PGM output needs a single-channel image"));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    Ok(out)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(if img.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| Error::parse("png encode", e);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&img.pixels).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Splits the next whitespace-delimited header token, skipping `#` comments.
fn pnm_token<'a>(data: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &data[start..*pos])
}

fn decode_pnm(data: &[u8], source: &str) -> Result<Image> {
    let bad = |msg: &str| Error::parse(source, msg);
    let mut pos = 0;
    let channels = match pnm_token(data, &mut pos) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("expected P5 or P6 header")),
    };
    let mut num = |what: &str| -> Result<usize> {
        pnm_token(data, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(&format!("missing or invalid {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(bad(&format!("only maxval 255 is supported, got {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h * channels;
    if data.len() < pos + need {
        return Err(bad(&format!(
            "raster truncated: {} of {need} bytes",
            data.len().saturating_sub(pos)
        )));
    }
    Image::new(w, h, channels, data[pos..pos + need].to_vec()).map_err(|e| bad(&e.to_string()))
}

fn decode_png(data: &[u8], source: &str) -> Result<Image> {
    let png_err = |e: png::DecodingError| Error::parse(source, e);
    let mut dec = png::Decoder::new(Cursor::new(data));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::parse(source, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, pixels) = match info.color_type {
        png::ColorType::Grayscale => (1, buf),
        png::ColorType::GrayscaleAlpha => (1, buf.chunks_exact(2).map(|p| p[0]).collect()),
        png::ColorType::Rgb => (3, buf),
        png::ColorType::Rgba => (3, buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()),
        other => return Err(Error::parse(source, format!("unsupported PNG color type {other:?}"))),
    };
    Image::new(w, h, channels, pixels).map_err(|e| Error::parse(source, e))
}

/// Decodes PNG, PPM (P6) or PGM (P5) by magic bytes.
pub fn decode_image(data: &[u8], source: &str) -> Result<Image> {
    if data.starts_with(b"\x89PNG") {
        decode_png(data, source)
    } else if data.starts_with(b"P5") || data.starts_with(b"P6") {
        decode_pnm(data, source)
    } else {
        Err(Error::parse(source, "unrecognised image format"))
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&data, &path.display().to_string())
}

/// Format follows the extension: `.png`, `.pgm` or `.ppm`.
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let bytes = match ext.as_str() {
        "png" => encode_png(img)?,
        "pgm" => encode_pgm(img)?,
        "ppm" => encode_ppm(img),
        _ => return Err(Error::param(format!("unknown image extension for {}", path.display()))),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(channels: usize) -> Image {
        Image::new(5, 3, channels, (0..15 * channels).map(|i| (i * 17) as u8).collect()).unwrap()
    }

    #[test]
    fn pnm_round_trip() {
        let rgb = sample(3);
        assert_eq!(decode_image(&encode_ppm(&rgb), "t").unwrap(), rgb);
        let gray = sample(1);
        assert_eq!(decode_image(&encode_pgm(&gray).unwrap(), "t").unwrap(), gray);
        assert!(encode_pgm(&rgb).is_err());
    }

    #[test]
    fn png_round_trip() {
        for c in [1, 3] {
            let img = sample(c);
            assert_eq!(decode_image(&encode_png(&img).unwrap(), "t").unwrap(), img);
        }
    }

    #[test]
    fn pnm_comments_and_errors() {
        let mut data = b"P5\n# a comment\n2 1\n255\n".to_vec();
        data.extend_from_slice(&[7, 9]);
        assert_eq!(decode_image(&data, "t").unwrap().pixels, vec![7, 9]);
        assert!(decode_image(b"P5\n2 1\n255\n\x01", "t").is_err());
        assert!(decode_image(b"P5\n2 1\n65535\n\x01\x02\x03\x04", "t").is_err());
        assert!(decode_image(b"GIF89a", "t").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            write_image(&sample(3), &p).unwrap();
            assert_eq!(read_image(&p).unwrap(), sample(3));
        }
        assert!(write_image(&sample(3), &dir.path().join("a.bmp")).is_err());
    }
}
