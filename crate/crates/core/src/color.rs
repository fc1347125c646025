//! sRGB / CIELAB conversion (D65) and the red-blue temperature colormap.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

/// D65 reference white.
pub const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

const DELTA: f64 = 6.0 / 29.0;

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Rgb {
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Rgb { r, g, b }
    }

    pub fn channels(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn to_hex(self) -> String {
        let q = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
        format!("#{:02x}{:02x}{:02x}", q(self.r), q(self.g), q(self.b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl Lab {
    pub fn lerp(self, other: Lab, t: f64) -> Lab {
        Lab {
            l: (1.0 - t) * self.l + t * other.l,
            a: (1.0 - t) * self.a + t * other.a,
            b: (1.0 - t) * self.b + t * other.b,
        }
    }

    /// CIE76 color difference.
    pub fn delta_e(self, other: Lab) -> f64 {
        ((self.l - other.l).powi(2) + (self.a - other.a).powi(2) + (self.b - other.b).powi(2)).sqrt()
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            // cofactor of m[j][i]
            let (r0, r1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            *cell = sign * minor / det;
        }
    }
    inv
}

fn mul(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn encode(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t.powi(3)
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

pub fn srgb_to_lab(rgb: Rgb) -> Lab {
    let linear = rgb.channels().map(decode);
    let xyz = mul(&RGB_TO_XYZ, linear);
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Result of a Lab to sRGB conversion; `clamped` marks out-of-gamut input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Converted {
    pub rgb: Rgb,
    pub clamped: bool,
}

pub fn lab_to_srgb_checked(lab: Lab) -> Converted {
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let xyz = [
        WHITE_D65[0] * lab_f_inv(fx),
        WHITE_D65[1] * lab_f_inv(fy),
        WHITE_D65[2] * lab_f_inv(fz),
    ];
    let encoded = mul(&XYZ_TO_RGB, xyz).map(encode);
    // Tolerate rounding noise at the gamut boundary.
    const SLACK: f64 = 1e-9;
    let clamped = encoded.iter().any(|c| *c < -SLACK || *c > 1.0 + SLACK);
    let [r, g, b] = encoded.map(|c| c.clamp(0.0, 1.0));
    Converted {
        rgb: Rgb { r, g, b },
        clamped,
    }
}

pub fn lab_to_srgb(lab: Lab) -> Rgb {
    lab_to_srgb_checked(lab).rgb
}

/// Diverging blue (cold) to red (hot) scale interpolated in Lab.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempColormap {
    pub low: Rgb,
    pub high: Rgb,
}

impl TempColormap {
    pub const BLUE: Rgb = Rgb::new(0.020, 0.443, 0.690);
    pub const RED: Rgb = Rgb::new(0.792, 0.000, 0.125);

    /// Color at position `t` in [0, 1] (clamped).
    pub fn at(&self, t: f64) -> Rgb {
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        // Endpoints are returned as configured, not via a lossy round trip.
        if t == 0.0 {
            return self.low;
        }
        if t == 1.0 {
            return self.high;
        }
        lab_to_srgb(srgb_to_lab(self.low).lerp(srgb_to_lab(self.high), t))
    }

    pub fn color(&self, value: f64, range: [f64; 2]) -> Rgb {
        let [lo, hi] = range;
        self.at((value - lo) / (hi - lo))
    }
}

impl Default for TempColormap {
    fn default() -> Self {
        TempColormap {
            low: Self::BLUE,
            high: Self::RED,
        }
    }
}

/// Default temperature color for `value` within `range` (requires lo < hi).
pub fn temp_color(value: f64, range: [f64; 2]) -> Rgb {
    TempColormap::default().color(value, range)
}
