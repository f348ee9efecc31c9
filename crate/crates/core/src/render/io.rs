use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use super::{Frame, Mask};
use crate::error::{Error, Result};

pub fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, frame.width as u32, frame.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Invalid(format!("png header: {e}")))?;
        writer
            .write_image_data(&frame.to_rgb8())
            .map_err(|e| Error::Invalid(format!("png data: {e}")))?;
    }
    Ok(buf)
}

pub fn write_png(path: &Path, frame: &Frame) -> Result<()> {
    let bytes = encode_png(frame)?;
    std::fs::write(path, bytes).map_err(Error::io(path))
}

pub fn read_png(path: &Path) -> Result<Frame> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| bad(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!(
            "expected 8-bit RGB, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok(Frame::from_rgb8(
        info.height as usize,
        info.width as usize,
        &buf,
    ))
}

/// Binary PGM (P5), 255 for set pixels.
pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let body: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write!(w, "P5\n{} {}\n255\n", mask.width, mask.height)
        .and_then(|_| w.write_all(&body))
        .and_then(|_| w.flush())
        .map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{background_mask, rasterize_discs};

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = rasterize_discs(&[([0.3, 0.6], 0.1, 2)], 24);
        let p = dir.path().join("f.png");
        write_png(&p, &f).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!(back.to_rgb8(), f.to_rgb8());
        let m = background_mask(&f, &Frame::background(24), 0.05).unwrap();
        let q = dir.path().join("m.pgm");
        write_pgm(&q, &m).unwrap();
        let bytes = std::fs::read(&q).unwrap();
        assert!(bytes.starts_with(b"P5\n24 24\n255\n"));
        assert_eq!(bytes.len(), 13 + 24 * 24);
    }
}
