use image::{Rgb, RgbImage, Rgba, RgbaImage};

use super::Homography;

/// Axis-aligned pixel rectangle in destination coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
}

impl Region {
    pub fn new(x: i64, y: i64, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn of_image(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }
}

/// Bilinear sample at a pixel-center coordinate; `None` outside the image.
fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> Option<[u8; 3]> {
    const EDGE: f64 = 1e-9;
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(x >= -EDGE && y >= -EDGE && x <= w - 1.0 + EDGE && y <= h - 1.0 + EDGE) {
        return None;
    }
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Some(out)
}

/// Warps `src` by `h` (source → destination pixels) into `region` of the
/// destination plane, by inverse mapping with bilinear sampling.
///
/// Destination pixels whose pre-image falls outside `src` are fully
/// transparent.
pub fn warp_image(src: &RgbImage, h: &Homography, region: Region) -> RgbaImage {
    let inv = h.inverse();
    let mut out = RgbaImage::new(region.width, region.height);
    if src.width() == 0 || src.height() == 0 {
        return out;
    }
    for (i, j, px) in out.enumerate_pixels_mut() {
        let dst = [(region.x + i as i64) as f64, (region.y + j as i64) as f64];
        *px = match inv.apply(dst).and_then(|s| sample_bilinear(src, s[0], s[1])) {
            Some([r, g, b]) => Rgba([r, g, b, 255]),
            None => Rgba([0, 0, 0, 0]),
        };
    }
    out
}

/// Alpha-blends a warped patch onto `dst` at `region`.
pub fn composite_over(dst: &mut RgbImage, patch: &RgbaImage, region: Region) -> usize {
    let mut painted = 0;
    for (i, j, px) in patch.enumerate_pixels() {
        let a = px.0[3];
        if a == 0 {
            continue;
        }
        let x = region.x + i as i64;
        let y = region.y + j as i64;
        if x < 0 || y < 0 || x >= dst.width() as i64 || y >= dst.height() as i64 {
            continue;
        }
        let target = dst.get_pixel_mut(x as u32, y as u32);
        let alpha = a as f64 / 255.0;
        let blended = std::array::from_fn(|c| (px.0[c] as f64 * alpha + target.0[c] as f64 * (1.0 - alpha)).round() as u8);
        *target = Rgb(blended);
        painted += 1;
    }
    painted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::estimate_homography;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 11 % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn identity_warp_copies() {
        let img = gradient(40, 30);
        let out = warp_image(&img, &Homography::identity(), Region::of_image(40, 30));
        for (x, y, p) in img.enumerate_pixels() {
            let q = out.get_pixel(x, y).0;
            assert_eq!([q[0], q[1], q[2], q[3]], [p[0], p[1], p[2], 255]);
        }
    }

    #[test]
    fn translation_shifts_right() {
        let img = gradient(40, 30);
        let out = warp_image(&img, &Homography::translation(10.0, 0.0), Region::of_image(40, 30));
        for y in 0..30 {
            for x in 0..40u32 {
                let q = out.get_pixel(x, y).0;
                if x < 10 {
                    assert_eq!(q[3], 0, "pixel ({x},{y}) should be transparent");
                } else {
                    let p = img.get_pixel(x - 10, y).0;
                    assert_eq!([q[0], q[1], q[2]], p);
                }
            }
        }
    }

    #[test]
    fn quad_corners_land_on_target() {
        // Logo corners (pixel centers of a 50x30 image) to a skewed quad.
        let logo = RgbImage::from_pixel(50, 30, Rgb([200, 30, 30]));
        let src = [[0.0, 0.0], [49.0, 0.0], [49.0, 29.0], [0.0, 29.0]];
        let dst = [[110.3, 52.1], [171.8, 60.4], [165.2, 118.9], [104.6, 101.7]];
        let h = estimate_homography(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let m = h.apply(*s).unwrap();
            assert!((m[0] - d[0]).hypot(m[1] - d[1]) < 0.5);
        }
        let out = warp_image(&logo, &h, Region::of_image(200, 150));
        // Rounded target corners, nudged inward, are covered by the logo.
        let centroid = dst.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / 4.0, a[1] + p[1] / 4.0]);
        for d in &dst {
            let x = d[0] + (centroid[0] - d[0]) * 0.05;
            let y = d[1] + (centroid[1] - d[1]) * 0.05;
            let q = out.get_pixel(x.round() as u32, y.round() as u32).0;
            assert_eq!(q, [200, 30, 30, 255]);
        }
        // Well outside the quad stays transparent.
        assert_eq!(out.get_pixel(10, 10).0[3], 0);
    }

    #[test]
    fn composite_counts_opaque() {
        let mut dst = RgbImage::from_pixel(4, 4, Rgb([0, 0, 0]));
        let mut patch = RgbaImage::new(2, 2);
        patch.put_pixel(0, 0, Rgba([255, 255, 255, 255]));
        let n = composite_over(&mut dst, &patch, Region::new(3, 3, 2, 2));
        assert_eq!(n, 1);
        assert_eq!(dst.get_pixel(3, 3).0, [255, 255, 255]);
    }
}
