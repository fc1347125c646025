//! Independent reference computations used to check the library.
//!
//! Nothing here calls into the code paths it is used to verify.

#![allow(dead_code)]

/// Per-cell counts by testing every record against every cell's bounds.
pub fn brute_force_counts(
    points: &[(f64, f64)],
    rows: usize,
    cols: usize,
    cell: f64,
) -> (Vec<Vec<u64>>, u64) {
    let mut counts = vec![vec![0u64; cols]; rows];
    let mut outside = 0;
    for &(x, y) in points {
        let mut placed = false;
        for (r, line) in counts.iter_mut().enumerate() {
            for (c, n) in line.iter_mut().enumerate() {
                // Half-open membership in cell units.
                let (u, v) = (x / cell, y / cell);
                let in_x = u >= c as f64 && u < (c + 1) as f64;
                let in_y = v >= r as f64 && v < (r + 1) as f64;
                if in_x && in_y && !placed {
                    *n += 1;
                    placed = true;
                }
            }
        }
        if !placed {
            outside += 1;
        }
    }
    (counts, outside)
}

/// Equirectangular projection written out from the definition.
pub fn project(lat: f64, lon: f64, origin_lat: f64, origin_lon: f64) -> (f64, f64) {
    let x = (lon - origin_lon) * 111_320.0 * (origin_lat * std::f64::consts::PI / 180.0).cos();
    let y = (lat - origin_lat) * 111_320.0;
    (x, y)
}

/// sRGB to CIELAB using the CIE epsilon/kappa formulation of the piecewise function.
pub fn lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| {
        if c > 0.04045 {
            ((c + 0.055) / 1.055).powf(2.4)
        } else {
            c / 12.92
        }
    });
    let x = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2];
    let y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2];
    let z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2];
    let eps = 216.0 / 24389.0;
    let kappa = 24389.0 / 27.0;
    let f = |t: f64| {
        if t > eps {
            t.powf(1.0 / 3.0)
        } else {
            (kappa * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn delta_e(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Median of a sample by full sort.
pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
