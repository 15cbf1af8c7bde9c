//! Class-per-directory image folders with PNG and binary PPM (P6) decoding.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::kernels::interp::{interpolate_forward, InterpMode};
use crate::tensor::Tensor;

/// Decoded image as `[3, H, W]` in `[0, 1]`, with its height and width.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub data: Vec<f32>,
    pub height: usize,
    pub width: usize,
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {msg}", path.display()))
}

/// Interleaved 8-bit samples with `channels` per pixel to planar RGB.
fn planar_rgb(pixels: &[u8], channels: usize, height: usize, width: usize, scale: f32) -> Vec<f32> {
    let n = height * width;
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let px = &pixels[i * channels..][..channels];
        for c in 0..3 {
            // Gray (and gray+alpha) replicate the luminance sample.
            let v = if channels < 3 { px[0] } else { px[c] };
            out[c * n + i] = v as f32 / scale;
        }
    }
    out
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| data_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| data_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| data_err(path, e))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(data_err(path, "unexpanded palette")),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let rows: Vec<u8> = buf
        .chunks(info.line_size)
        .take(h)
        .flat_map(|r| r[..w * channels].iter().copied())
        .collect();
    Ok(Decoded {
        data: planar_rgb(&rows, channels, h, w, 255.0),
        height: h,
        width: w,
    })
}

fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
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
            return Err(data_err(path, "truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(data_err(path, "not a binary PPM (P6)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?
            .parse::<usize>()
            .map_err(|_| data_err(path, format!("bad PPM {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(data_err(
            path,
            format!("unsupported PPM geometry {w}x{h} maxval {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let body = &bytes[(pos + 1).min(bytes.len())..];
    let wide = maxval > 255;
    let need = w * h * 3 * if wide { 2 } else { 1 };
    if body.len() < need {
        return Err(data_err(
            path,
            format!("PPM raster holds {} bytes, expected {need}", body.len()),
        ));
    }
    let samples: Vec<f32> = if wide {
        body[..need]
            .chunks(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32)
            .collect()
    } else {
        body[..need].iter().map(|&b| b as f32).collect()
    };
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = samples[i * 3 + c] / maxval as f32;
        }
    }
    Ok(Decoded {
        data,
        height: h,
        width: w,
    })
}

/// Decodes PNG or P6 PPM, chosen by content.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Decoded> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes, path)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes, path)
    } else {
        Err(data_err(path, "unrecognized image format (expected PNG or P6 PPM)"))
    }
}

/// Binary PPM with maxval 255 from planar `[3, H, W]` values in `[0, 1]`.
pub fn encode_ppm(data: &[f32], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    let n = height * width;
    for i in 0..n {
        for c in 0..3 {
            out.push((data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Corner-aligned bilinear resize of a planar RGB image to `size × size`.
pub fn resize_bilinear(img: &Decoded, size: usize) -> Result<Vec<f32>> {
    if img.height == size && img.width == size {
        return Ok(img.data.clone());
    }
    let t = Tensor::new([1, 3, img.height, img.width], img.data.clone())?;
    Ok(interpolate_forward(&t, (size, size), InterpMode::Bilinear)?.into_data())
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "ppm")
    )
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Loads `root/<class>/<image>.{png,ppm}`; classes are numbered in lexicographic order.
pub fn load_folder(root: &Path, size: usize) -> Result<Dataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least two class directories, found {}",
            root.display(),
            class_dirs.len()
        )));
    }
    let mut samples = Vec::new();
    let mut classes = Vec::with_capacity(class_dirs.len());
    for (label, dir) in class_dirs.iter().enumerate() {
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        if files.is_empty() {
            return Err(Error::Data(format!(
                "{}: class directory has no PNG or PPM images",
                dir.display()
            )));
        }
        for f in files {
            let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
            let img = decode_image(&bytes, &f)?;
            samples.push(Sample {
                image: resize_bilinear(&img, size)?,
                label,
            });
        }
        classes.push(
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    Ok(Dataset {
        samples,
        classes,
        image_size: size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32, rgb: &[u8]) {
        let file = fs::File::create(path).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w, h);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(rgb).unwrap();
    }

    #[test]
    fn ppm_red_pixel_normalizes() {
        let bytes = b"P6\n# one pixel\n1 1\n255\n\xff\x00\x00";
        let img = decode_image(bytes, Path::new("red.ppm")).unwrap();
        assert_eq!(img.data, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn ppm_round_trip_and_sixteen_bit() {
        let data: Vec<f32> = (0..12).map(|i| i as f32 / 255.0).collect();
        let img = decode_image(&encode_ppm(&data, 2, 2), Path::new("x.ppm")).unwrap();
        assert_eq!((img.height, img.width), (2, 2));
        assert!(img.data.iter().zip(&data).all(|(a, b)| (a - b).abs() < 1e-6));
        let wide = b"P6 1 1 65535\n\xff\xff\x00\x00\x80\x00";
        let img = decode_image(wide, Path::new("w.ppm")).unwrap();
        assert_eq!(img.data[0], 1.0);
        assert!((img.data[2] - 32768.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn truncated_ppm_is_a_data_error() {
        let err = decode_image(b"P6\n2 2\n255\n\x00\x00", Path::new("short.ppm")).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("short.ppm")));
    }

    #[test]
    fn folder_enumeration_and_resizing() {
        let dir = tempfile::tempdir().unwrap();
        for (ci, class) in ["beach", "airport"].iter().enumerate() {
            let d = dir.path().join(class);
            fs::create_dir(&d).unwrap();
            for i in 0..3 {
                let size = 4 + i;
                if i % 2 == 0 {
                    let px: Vec<u8> = (0..size * size * 3).map(|k| ((k * 7 + ci) % 256) as u8).collect();
                    write_png(&d.join(format!("{i}.png")), size as u32, size as u32, &px);
                } else {
                    let data = vec![0.5f32; 3 * size * size];
                    fs::write(d.join(format!("{i}.ppm")), encode_ppm(&data, size, size)).unwrap();
                }
            }
            fs::write(d.join("notes.txt"), "ignored").unwrap();
        }
        let ds = load_folder(dir.path(), 8).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.classes, vec!["airport", "beach"]);
        assert_eq!(ds.labels(), vec![0, 0, 0, 1, 1, 1]);
        assert!(ds.samples.iter().all(|s| s.image.len() == 3 * 64));
    }

    #[test]
    fn empty_class_and_bad_file_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        fs::create_dir(dir.path().join("b")).unwrap();
        fs::write(dir.path().join("a/x.ppm"), encode_ppm(&[0.0; 3], 1, 1)).unwrap();
        assert!(matches!(load_folder(dir.path(), 4), Err(Error::Data(_))));
        fs::write(dir.path().join("b/y.png"), b"not really a png").unwrap();
        let err = load_folder(dir.path(), 4).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("y.png")), "{err}");
    }
}
