//! Line-plot rasterizer for time series.
//!
//! Output sizes are fixed per plot family. Channels are drawn as polylines in
//! a fixed palette on raw (non-normalized) values, with a legend when there is
//! more than one channel. Rendering uses no fonts or system state, so identical
//! inputs give identical PNG bytes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotFamily {
    Ecg,
    Ctu,
    Tee,
    Rcw,
    Emg,
    Har,
}

impl PlotFamily {
    pub const ALL: [PlotFamily; 6] = [
        PlotFamily::Ecg,
        PlotFamily::Ctu,
        PlotFamily::Tee,
        PlotFamily::Rcw,
        PlotFamily::Emg,
        PlotFamily::Har,
    ];

    /// Output size in pixels, `(width, height)`.
    pub fn dimensions(self) -> (u32, u32) {
        match self {
            PlotFamily::Ecg => (980, 230),
            PlotFamily::Ctu => (562, 230),
            PlotFamily::Tee | PlotFamily::Rcw | PlotFamily::Emg => (789, 239),
            PlotFamily::Har => (389, 233),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlotFamily::Ecg => "ecg",
            PlotFamily::Ctu => "ctu",
            PlotFamily::Tee => "tee",
            PlotFamily::Rcw => "rcw",
            PlotFamily::Emg => "emg",
            PlotFamily::Har => "har",
        }
    }
}

impl fmt::Display for PlotFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlotError {
    #[error("unsupported plot family {0:?}")]
    UnknownFamily(String),
    #[error("png encoding failed: {0}")]
    Encode(String),
}

impl FromStr for PlotFamily {
    type Err = PlotError;
    fn from_str(s: &str) -> Result<Self, PlotError> {
        PlotFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PlotError::UnknownFamily(s.to_string()))
    }
}

pub type Rgb = [u8; 3];

/// Channel colors, cycled when there are more channels than entries.
pub const PALETTE: [Rgb; 8] = [
    [0x1f, 0x77, 0xb4],
    [0xff, 0x7f, 0x0e],
    [0x2c, 0xa0, 0x2c],
    [0xd6, 0x27, 0x28],
    [0x94, 0x67, 0xbd],
    [0x8c, 0x56, 0x4b],
    [0xe3, 0x77, 0xc2],
    [0x7f, 0x7f, 0x7f],
];
pub const LINE_WIDTH: u32 = 2;
const BACKGROUND: Rgb = [0xff, 0xff, 0xff];
const AXIS: Rgb = [0x00, 0x00, 0x00];
const PAD: u32 = 6;
/// Added above and below a flat series so it has a drawable range.
pub const FLAT_RANGE_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LegendEntry {
    pub label: String,
    pub color: Rgb,
}

/// A rendered RGB image before encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub legend: Vec<LegendEntry>,
}

impl Raster {
    fn new(width: u32, height: u32) -> Self {
        let mut pixels = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            pixels.extend_from_slice(&BACKGROUND);
        }
        Raster {
            width,
            height,
            pixels,
            legend: Vec::new(),
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = ((y * self.width + x) * 3) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = ((y as u32 * self.width + x as u32) * 3) as usize;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, c: Rgb) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.put(x, y, c);
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.fill_rect(x, y, LINE_WIDTH as i64, LINE_WIDTH as i64, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn text(&mut self, x: i64, y: i64, s: &str, c: Rgb) {
        for (i, ch) in s.chars().enumerate() {
            let rows = glyph(ch);
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0x10 >> col) != 0 {
                        self.put(x + i as i64 * 6 + col, y + r as i64, c);
                    }
                }
            }
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, PlotError> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder
                .write_header()
                .map_err(|e| PlotError::Encode(e.to_string()))?;
            writer
                .write_image_data(&self.pixels)
                .map_err(|e| PlotError::Encode(e.to_string()))?;
        }
        Ok(out)
    }
}

/// Y range with a 5% margin, or a fixed margin around a flat series.
fn y_range(series: &TimeSeries) -> (f64, f64) {
    let (lo, hi) = series.value_range();
    if hi - lo < 1e-12 {
        (lo - FLAT_RANGE_MARGIN, hi + FLAT_RANGE_MARGIN)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

pub fn rasterize(series: &TimeSeries, family: PlotFamily) -> Raster {
    let (width, height) = family.dimensions();
    let mut img = Raster::new(width, height);

    let left = PAD as i64 + 2;
    let right = width as i64 - PAD as i64 - LINE_WIDTH as i64;
    let top = PAD as i64;
    let bottom = height as i64 - PAD as i64 - 2;

    // Axes: left and bottom spines.
    img.fill_rect(left - 2, top, 1, bottom - top + 2, AXIS);
    img.fill_rect(left - 2, bottom + 1, right - left + 4, 1, AXIS);

    let (y_lo, y_hi) = y_range(series);
    let n = series.len();
    let to_px = |t: usize, v: f64| -> (i64, i64) {
        let fx = t as f64 / (n - 1) as f64;
        let fy = (v - y_lo) / (y_hi - y_lo);
        let x = left as f64 + fx * (right - left) as f64;
        let y = bottom as f64 - fy * (bottom - top) as f64;
        (x.round() as i64, y.round() as i64)
    };

    for d in 0..series.dims() {
        let color = PALETTE[d % PALETTE.len()];
        let xs = series.channel(d);
        for t in 1..n {
            img.line(to_px(t - 1, xs[t - 1]), to_px(t, xs[t]), color);
        }
        img.legend.push(LegendEntry {
            label: series.channel_names()[d].clone(),
            color,
        });
    }

    if series.dims() > 1 {
        draw_legend(&mut img, right);
    }
    img
}

fn draw_legend(img: &mut Raster, right: i64) {
    let label_chars = img
        .legend
        .iter()
        .map(|e| e.label.chars().count())
        .max()
        .unwrap_or(0) as i64;
    let box_w = 4 + 12 + 4 + label_chars * 6 + 2;
    let box_h = 2 + img.legend.len() as i64 * 10 + 1;
    let x0 = right - box_w - 2;
    let y0 = PAD as i64 + 2;
    img.fill_rect(x0, y0, box_w, box_h, BACKGROUND);
    img.fill_rect(x0, y0, box_w, 1, AXIS);
    img.fill_rect(x0, y0 + box_h - 1, box_w, 1, AXIS);
    img.fill_rect(x0, y0, 1, box_h, AXIS);
    img.fill_rect(x0 + box_w - 1, y0, 1, box_h, AXIS);
    let entries = img.legend.clone();
    for (i, entry) in entries.iter().enumerate() {
        let y = y0 + 3 + i as i64 * 10;
        img.fill_rect(x0 + 4, y + 2, 12, 3, entry.color);
        img.text(x0 + 20, y, &entry.label, AXIS);
    }
}

/// Renders `series` as a PNG at the family's resolution.
pub fn render_plot(series: &TimeSeries, family: PlotFamily) -> Result<Vec<u8>, PlotError> {
    rasterize(series, family).encode_png()
}

/// Like [`render_plot`] but takes the family by name.
pub fn render_plot_named(series: &TimeSeries, family: &str) -> Result<Vec<u8>, PlotError> {
    render_plot(series, family.parse()?)
}

/// 5×7 glyphs; lowercase is drawn as uppercase, unknown characters as a box.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        ' ' => [0, 0, 0, 0, 0, 0, 0],
        '0' => [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
        '1' => [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
        '2' => [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
        '3' => [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
        '4' => [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
        '5' => [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
        '6' => [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
        '7' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
        '9' => [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
        'A' => [0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11],
        'B' => [0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e],
        'C' => [0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e],
        'D' => [0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c],
        'E' => [0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f],
        'F' => [0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10],
        'G' => [0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f],
        'H' => [0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11],
        'I' => [0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f],
        'M' => [0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e],
        'P' => [0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10],
        'Q' => [0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d],
        'R' => [0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11],
        'S' => [0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e],
        'T' => [0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0a],
        'X' => [0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0a, 0x04, 0x04, 0x04],
        'Z' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f],
        '_' => [0, 0, 0, 0, 0, 0, 0x1f],
        '-' => [0, 0, 0, 0x1f, 0, 0, 0],
        '.' => [0, 0, 0, 0, 0, 0x0c, 0x0c],
        _ => [0x1f, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1f],
    }
}
