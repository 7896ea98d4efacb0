//! Small software-raster helpers: disks, clipped lines and 3D segments.

use image::{Rgb, RgbImage};
use nalgebra::Vector3;

use crate::geom::{CameraIntrinsics, Pose, Rgb as Color, EPSILON_DEPTH};

/// Fills a disk centered at a pixel-center coordinate. Returns the number of
/// pixels written. When `mask` is given, it records which pixels were ever
/// painted and the return value counts only newly painted ones.
pub fn fill_disk(
    img: &mut RgbImage,
    cx: f64,
    cy: f64,
    radius: u32,
    color: Color,
    mut mask: Option<&mut [bool]>,
) -> usize {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let px = cx.round() as i64;
    let py = cy.round() as i64;
    let r = radius as i64;
    if px + r < 0 || py + r < 0 || px - r >= w || py - r >= h {
        return 0;
    }
    let r2 = r * r;
    let mut painted = 0;
    let buf: &mut [u8] = img;
    for y in (py - r).max(0)..=(py + r).min(h - 1) {
        let dy = y - py;
        for x in (px - r).max(0)..=(px + r).min(w - 1) {
            let dx = x - px;
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let idx = (y * w + x) as usize;
            buf[idx * 3..idx * 3 + 3].copy_from_slice(&color);
            match mask.as_deref_mut() {
                Some(m) => {
                    if !m[idx] {
                        m[idx] = true;
                        painted += 1;
                    }
                }
                None => painted += 1,
            }
        }
    }
    painted
}

/// Liang–Barsky clip of a 2D segment against `[xmin, xmax] × [ymin, ymax]`.
fn clip_segment(a: [f64; 2], b: [f64; 2], xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Option<([f64; 2], [f64; 2])> {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-dx, a[0] - xmin),
        (dx, xmax - a[0]),
        (-dy, a[1] - ymin),
        (dy, ymax - a[1]),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((
        [a[0] + t0 * dx, a[1] + t0 * dy],
        [a[0] + t1 * dx, a[1] + t1 * dy],
    ))
}

/// Draws a line between two pixel-center coordinates, `thickness` pixels wide.
pub fn draw_line(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], color: Color, thickness: u32) {
    if !(a.iter().chain(b.iter()).all(|c| c.is_finite())) {
        return;
    }
    let pad = thickness as f64 + 1.0;
    let Some((a, b)) = clip_segment(
        a,
        b,
        -pad,
        img.width() as f64 - 1.0 + pad,
        -pad,
        img.height() as f64 - 1.0 + pad,
    ) else {
        return;
    };
    let steps = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil().max(1.0) as usize;
    let half = thickness / 2;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a[0] + (b[0] - a[0]) * t;
        let y = a[1] + (b[1] - a[1]) * t;
        if half == 0 {
            let (xi, yi) = (x.round() as i64, y.round() as i64);
            if xi >= 0 && yi >= 0 && xi < img.width() as i64 && yi < img.height() as i64 {
                img.put_pixel(xi as u32, yi as u32, Rgb(color));
            }
        } else {
            fill_disk(img, x, y, half, color, None);
        }
    }
}

/// Draws a world-space segment as seen from `camera`, clipping it against the
/// near plane first.
pub fn draw_segment_3d(
    img: &mut RgbImage,
    intrinsics: &CameraIntrinsics,
    camera: &Pose,
    a_world: &Vector3<f64>,
    b_world: &Vector3<f64>,
    color: Color,
    thickness: u32,
) {
    let near = EPSILON_DEPTH * 1e3;
    let mut a = camera.inverse_transform_point(a_world);
    let mut b = camera.inverse_transform_point(b_world);
    if a.z <= near && b.z <= near {
        return;
    }
    if a.z <= near {
        let t = (near - a.z) / (b.z - a.z);
        a += (b - a) * t;
    } else if b.z <= near {
        let t = (near - b.z) / (a.z - b.z);
        b += (a - b) * t;
    }
    if let (Some(pa), Some(pb)) = (intrinsics.project(&a), intrinsics.project(&b)) {
        draw_line(img, pa, pb, color, thickness);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_pixel_count() {
        let mut img = RgbImage::new(20, 20);
        // radius 2: 13 lattice points inside x²+y² <= 4
        assert_eq!(fill_disk(&mut img, 10.0, 10.0, 2, [255, 0, 0], None), 13);
        assert_eq!(img.get_pixel(10, 8).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(12, 12).0, [0, 0, 0]);
    }

    #[test]
    fn disk_mask_counts_once() {
        let mut img = RgbImage::new(10, 10);
        let mut mask = vec![false; 100];
        assert_eq!(fill_disk(&mut img, 5.0, 5.0, 1, [1, 1, 1], Some(&mut mask)), 5);
        assert_eq!(fill_disk(&mut img, 5.0, 5.0, 1, [2, 2, 2], Some(&mut mask)), 0);
    }

    #[test]
    fn disk_clipped_at_border() {
        let mut img = RgbImage::new(10, 10);
        assert_eq!(fill_disk(&mut img, 0.0, 0.0, 1, [1, 1, 1], None), 3);
        assert_eq!(fill_disk(&mut img, -5.0, 0.0, 1, [1, 1, 1], None), 0);
    }

    #[test]
    fn horizontal_line() {
        let mut img = RgbImage::new(10, 5);
        draw_line(&mut img, [-3.0, 2.0], [20.0, 2.0], [9, 9, 9], 1);
        for x in 0..10 {
            assert_eq!(img.get_pixel(x, 2).0, [9, 9, 9]);
            assert_eq!(img.get_pixel(x, 1).0, [0, 0, 0]);
        }
    }

    #[test]
    fn segment_behind_camera_skipped() {
        let mut img = RgbImage::new(10, 10);
        let k = CameraIntrinsics::new(5.0, 5.0, 5.0, 5.0, 10, 10).unwrap();
        draw_segment_3d(
            &mut img,
            &k,
            &Pose::identity(),
            &Vector3::new(0.0, 0.0, -1.0),
            &Vector3::new(1.0, 0.0, -2.0),
            [255, 255, 255],
            1,
        );
        assert!(img.pixels().all(|p| p.0 == [0, 0, 0]));
    }
}
