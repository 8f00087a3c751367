//! Minimal drawing on RGB rasters.

use image::{Rgb, RgbImage};

/// Fills a convex polygon given in pixel coordinates.
pub fn fill_convex(img: &mut RgbImage, poly: &[[f64; 2]], rgb: [u8; 3]) {
    if poly.len() < 3 {
        return;
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    let ymin = poly.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as i64;
    let ymax = poly.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).ceil().min(h as f64 - 1.0) as i64;
    for y in ymin..=ymax {
        let yc = y as f64 + 0.5;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            if (a[1] <= yc && b[1] > yc) || (b[1] <= yc && a[1] > yc) {
                let t = (yc - a[1]) / (b[1] - a[1]);
                let x = a[0] + t * (b[0] - a[0]);
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        if lo > hi {
            continue;
        }
        let x0 = (lo - 0.5).ceil().max(0.0) as i64;
        let x1 = (hi - 0.5).floor().min(w as f64 - 1.0) as i64;
        for x in x0..=x1 {
            img.put_pixel(x as u32, y as u32, Rgb(rgb));
        }
    }
}

/// Draws a segment with the DDA algorithm, clipping to the raster.
pub fn draw_line(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], rgb: [u8; 3]) {
    let steps = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil().min(4096.0) as usize;
    let steps = steps.max(1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let x = a[0] + t * (b[0] - a[0]);
        let y = a[1] + t * (b[1] - a[1]);
        if x >= 0.0 && y >= 0.0 && x < img.width() as f64 && y < img.height() as f64 {
            img.put_pixel(x as u32, y as u32, Rgb(rgb));
        }
    }
}

/// Convex hull (Andrew's monotone chain), counterclockwise in a y-up frame.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}
