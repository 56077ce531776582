//! Raster images: an 8-bit grayscale/RGB buffer, PNG encode/decode, and
//! grid composition of image sequences.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer length {got} does not match {width}x{height}x{channels}")]
    BadBufferLength {
        got: usize,
        width: u32,
        height: u32,
        channels: u8,
    },
    #[error("channels must be 1 or 3, got {0}")]
    BadChannelCount(u8),
    #[error("grid rows are ragged: {0}")]
    RaggedRow(String),
    #[error("png error: {0}")]
    Png(String),
}

/// Row-major 8-bit image, grayscale (1 channel) or RGB (3 channels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::BadChannelCount(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(ImageError::BadBufferLength {
                got: pixels.len(),
                width,
                height,
                channels,
            });
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Solid-fill image.
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, ImageError> {
        let len = width as usize * height as usize * channels as usize;
        Image::new(width, height, channels, vec![value; len])
    }

    pub fn get(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let offset = (y as usize * self.width as usize + x as usize) * c;
        &self.pixels[offset..offset + c]
    }

    pub fn put(&mut self, x: u32, y: u32, value: &[u8]) {
        let c = self.channels as usize;
        let offset = (y as usize * self.width as usize + x as usize) * c;
        self.pixels[offset..offset + c].copy_from_slice(value);
    }

    /// Encode as PNG: 8-bit, grayscale or RGB, no interlacing.
    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
            encoder.set_color(match self.channels {
                1 => png::ColorType::Grayscale,
                _ => png::ColorType::Rgb,
            });
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder
                .write_header()
                .map_err(|e| ImageError::Png(e.to_string()))?;
            writer
                .write_image_data(&self.pixels)
                .map_err(|e| ImageError::Png(e.to_string()))?;
        }
        Ok(out)
    }

    /// Decode a PNG produced by [`Image::to_png`] or a compatible encoder.
    /// Grayscale and RGB 8-bit only.
    pub fn from_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder
            .read_info()
            .map_err(|e| ImageError::Png(e.to_string()))?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| ImageError::Png(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::Png(format!(
                "unsupported bit depth {:?}",
                info.bit_depth
            )));
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            other => return Err(ImageError::Png(format!("unsupported color type {other:?}"))),
        };
        buf.truncate(info.buffer_size());
        Image::new(info.width, info.height, channels, buf)
    }
}

/// Stack image rows into one canvas: rows top-to-bottom, images
/// left-to-right, `gap_px`-wide white separators between cells (none at
/// the borders). All images must share dimensions and channel count.
pub fn compose_grid(rows: &[Vec<Image>], gap_px: u32) -> Result<Image, ImageError> {
    if rows.is_empty() || rows.iter().any(|r| r.is_empty()) {
        return Err(ImageError::RaggedRow("empty row".to_string()));
    }
    let first = &rows[0][0];
    let (w, h, channels) = (first.width, first.height, first.channels);
    let cols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(ImageError::RaggedRow(format!(
                "row {i} has {} images, expected {cols}",
                row.len()
            )));
        }
        for (j, img) in row.iter().enumerate() {
            if img.width != w || img.height != h || img.channels != channels {
                return Err(ImageError::RaggedRow(format!(
                    "image ({i},{j}) is {}x{}x{}, expected {w}x{h}x{channels}",
                    img.width, img.height, img.channels
                )));
            }
        }
    }

    let out_w = cols as u32 * w + (cols as u32 - 1) * gap_px;
    let out_h = rows.len() as u32 * h + (rows.len() as u32 - 1) * gap_px;
    let mut canvas = Image::filled(out_w, out_h, channels, 255)?;
    for (i, row) in rows.iter().enumerate() {
        let y0 = i as u32 * (h + gap_px);
        for (j, img) in row.iter().enumerate() {
            let x0 = j as u32 * (w + gap_px);
            for y in 0..h {
                for x in 0..w {
                    canvas.put(x0 + x, y0 + y, img.get(x, y));
                }
            }
        }
    }
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: u32, h: u32, seed: u8) -> Image {
        let pixels = (0..w * h)
            .map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed))
            .collect();
        Image::new(w, h, 1, pixels).unwrap()
    }

    #[test]
    fn grid_dimensions_two_by_five() {
        let rows: Vec<Vec<Image>> = (0..2)
            .map(|r| (0..5).map(|c| checker(64, 64, (r * 5 + c) as u8)).collect())
            .collect();
        let grid = compose_grid(&rows, 4).unwrap();
        assert_eq!((grid.width, grid.height), (336, 132));
    }

    #[test]
    fn single_image_zero_gap_is_identity() {
        let img = checker(16, 9, 7);
        let grid = compose_grid(&[vec![img.clone()]], 0).unwrap();
        assert_eq!(grid, img);
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows = vec![vec![checker(8, 8, 0)], vec![checker(8, 9, 1)]];
        assert!(matches!(
            compose_grid(&rows, 2),
            Err(ImageError::RaggedRow(_))
        ));
    }

    #[test]
    fn source_pixels_preserved_at_offsets() {
        let rows: Vec<Vec<Image>> = (0..2)
            .map(|r| (0..3).map(|c| checker(8, 8, (r * 3 + c) as u8 * 11)).collect())
            .collect();
        let gap = 3;
        let grid = compose_grid(&rows, gap).unwrap();
        // Spot-check a scattering of source pixels against their offsets.
        for (i, row) in rows.iter().enumerate() {
            for (j, img) in row.iter().enumerate() {
                for &(x, y) in &[(0, 0), (7, 0), (3, 5), (7, 7)] {
                    let gx = j as u32 * (8 + gap) + x;
                    let gy = i as u32 * (8 + gap) + y;
                    assert_eq!(grid.get(gx, gy), img.get(x, y));
                }
            }
        }
        // Separator is white.
        assert_eq!(grid.get(8, 0), &[255]);
    }

    #[test]
    fn png_round_trip() {
        let img = checker(20, 13, 3);
        let png = img.to_png().unwrap();
        let decoded = Image::from_png(&png).unwrap();
        assert_eq!(decoded, img);
    }

    #[test]
    fn bad_buffer_rejected() {
        assert!(matches!(
            Image::new(4, 4, 1, vec![0; 15]),
            Err(ImageError::BadBufferLength { .. })
        ));
        assert!(matches!(
            Image::new(4, 4, 2, vec![0; 32]),
            Err(ImageError::BadChannelCount(2))
        ));
    }
}
