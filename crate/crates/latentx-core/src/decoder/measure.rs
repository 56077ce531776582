//! Pixel-mass measurements over decoded images. These read raw pixels and
//! share no code with any renderer, so tests can use them as independent
//! ground-truth probes of factor semantics.

use crate::image::Image;

fn luminance(px: &[u8]) -> f64 {
    match px.len() {
        1 => px[0] as f64,
        _ => (px[0] as f64 + px[1] as f64 + px[2] as f64) / 3.0,
    }
}

/// Number of non-black pixels.
pub fn mass(image: &Image) -> usize {
    let mut count = 0;
    for y in 0..image.height {
        for x in 0..image.width {
            if luminance(image.get(x, y)) > 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// Intensity-weighted centroid (x, y) in pixel coordinates.
pub fn centroid(image: &Image) -> (f64, f64) {
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for y in 0..image.height {
        for x in 0..image.width {
            let w = luminance(image.get(x, y));
            sx += w * (x as f64 + 0.5);
            sy += w * (y as f64 + 0.5);
            total += w;
        }
    }
    if total == 0.0 {
        (image.width as f64 / 2.0, image.height as f64 / 2.0)
    } else {
        (sx / total, sy / total)
    }
}

/// Mean intensity over non-black pixels (0 when the image is empty).
pub fn mean_intensity(image: &Image) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for y in 0..image.height {
        for x in 0..image.width {
            let w = luminance(image.get(x, y));
            if w > 0.0 {
                sum += w;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Orientation of the principal axis of the intensity distribution, in
/// degrees within [0, 180).
pub fn principal_angle_degrees(image: &Image) -> f64 {
    let (cx, cy) = centroid(image);
    let (mut mxx, mut myy, mut mxy, mut total) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..image.height {
        for x in 0..image.width {
            let w = luminance(image.get(x, y));
            if w > 0.0 {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                mxx += w * dx * dx;
                myy += w * dy * dy;
                mxy += w * dx * dy;
                total += w;
            }
        }
    }
    if total == 0.0 {
        return 0.0;
    }
    let angle = 0.5 * (2.0 * mxy).atan2(mxx - myy);
    let degrees = angle.to_degrees();
    (degrees + 180.0) % 180.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn bar(width: u32, height: u32, x0: u32, x1: u32, y0: u32, y1: u32) -> Image {
        let mut img = Image::filled(width, height, 1, 0).unwrap();
        for y in y0..y1 {
            for x in x0..x1 {
                img.put(x, y, &[200]);
            }
        }
        img
    }

    #[test]
    fn centroid_of_offset_block() {
        let img = bar(10, 10, 6, 8, 2, 4);
        let (cx, cy) = centroid(&img);
        assert!((cx - 7.0).abs() < 1e-9);
        assert!((cy - 3.0).abs() < 1e-9);
    }

    #[test]
    fn mass_counts_lit_pixels() {
        let img = bar(10, 10, 0, 4, 0, 3);
        assert_eq!(mass(&img), 12);
    }

    #[test]
    fn principal_angle_of_horizontal_bar_is_zero() {
        let img = bar(32, 32, 4, 28, 14, 18);
        let angle = principal_angle_degrees(&img);
        assert!(angle < 1.0 || angle > 179.0, "angle {angle}");
    }

    #[test]
    fn principal_angle_of_vertical_bar_is_ninety() {
        let img = bar(32, 32, 14, 18, 4, 28);
        let angle = principal_angle_degrees(&img);
        assert!((angle - 90.0).abs() < 1.0, "angle {angle}");
    }
}
