//! Procedural grayscale sprite renderer: a filled axis-aligned square on a
//! uniform background.

use serde::{Deserialize, Serialize};

use super::{FactorConfig, FactorError, FactorSpace, Result};

/// Which visual property a factor controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualRole {
    Size,
    PosX,
    PosY,
    Fill,
    Background,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    /// Square side length (pixels) at the smallest and largest size values.
    pub min_side: usize,
    pub max_side: usize,
    /// Square intensity at the lowest and highest fill values.
    pub fill_range: (f64, f64),
    /// Background intensity at the lowest and highest shade values.
    pub background_range: (f64, f64),
    /// `roles[i]` is the visual role of factor `i`.
    pub roles: Vec<VisualRole>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            min_side: 2,
            max_side: 9,
            fill_range: (FILL_LOW, FILL_HIGH),
            background_range: (0.0, BACKGROUND_HIGH),
            roles: vec![VisualRole::Size, VisualRole::PosX, VisualRole::PosY, VisualRole::Fill, VisualRole::Background],
        }
    }
}

const FILL_LOW: f64 = 0.4;
const FILL_HIGH: f64 = 1.0;
const BACKGROUND_HIGH: f64 = 0.25;

impl RenderConfig {
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self, space: &FactorSpace) -> Result<()> {
        if self.roles.len() != space.len() {
            return Err(FactorError::RenderMismatch(format!(
                "{} roles for {} factors",
                self.roles.len(),
                space.len()
            )));
        }
        for (i, r) in self.roles.iter().enumerate() {
            if self.roles[..i].contains(r) {
                return Err(FactorError::RenderMismatch(format!("role {r:?} bound twice")));
            }
        }
        if self.min_side == 0 || self.min_side > self.max_side || self.max_side > self.height.min(self.width) {
            return Err(FactorError::RenderMismatch(format!(
                "side range {}..={} does not fit a {}x{} image",
                self.min_side, self.max_side, self.height, self.width
            )));
        }
        let (fl, fh) = self.fill_range;
        let (bl, bh) = self.background_range;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(fl) && unit(fh) && unit(bl) && unit(bh) && fl < fh && bl < bh && bh < fl) {
            return Err(FactorError::RenderMismatch(format!(
                "intensities must satisfy 0 <= background {bl}..{bh} < fill {fl}..{fh} <= 1"
            )));
        }
        Ok(())
    }

    fn role_value(&self, space: &FactorSpace, config: &FactorConfig, role: VisualRole) -> Option<(usize, usize)> {
        self.roles.iter().position(|&r| r == role).map(|i| (config.0[i], space.cardinality(i)))
    }
}

/// A grayscale image, row-major, values in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Observation {
    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        pgm(self.width, self.height, self.pixels.iter().copied())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| quantize(p)).collect()
    }
}

fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn pgm(width: usize, height: usize, pixels: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.map(quantize));
    out
}

/// Concatenates equally sized images left to right into one PGM.
pub fn pgm_strip(images: &[Observation]) -> Vec<u8> {
    let Some(first) = images.first() else {
        return pgm(0, 0, std::iter::empty());
    };
    let (h, w) = (first.height, first.width);
    assert!(images.iter().all(|im| im.height == h && im.width == w), "strip images must share a size");
    let pixels = (0..h).flat_map(|y| images.iter().flat_map(move |im| im.pixels[y * w..(y + 1) * w].iter().copied()));
    pgm(w * images.len(), h, pixels)
}

fn level(value: usize, cardinality: usize, low: f64, high: f64) -> f64 {
    low + (high - low) * value as f64 / (cardinality - 1) as f64
}

pub fn render(space: &FactorSpace, config: &FactorConfig, cfg: &RenderConfig) -> Result<Observation> {
    cfg.validate(space)?;
    space.check(config)?;

    let side = match cfg.role_value(space, config, VisualRole::Size) {
        Some((v, card)) => cfg.min_side + v * (cfg.max_side - cfg.min_side) / (card - 1),
        None => cfg.max_side,
    };
    // Integer placement keeps distinct positions distinct whenever the free
    // range is at least cardinality - 1 pixels.
    let place = |role, extent: usize| match cfg.role_value(space, config, role) {
        Some((v, card)) => v * (extent - side) / (card - 1),
        None => (extent - side) / 2,
    };
    let x0 = place(VisualRole::PosX, cfg.width);
    let y0 = place(VisualRole::PosY, cfg.height);
    let fill = cfg
        .role_value(space, config, VisualRole::Fill)
        .map_or(cfg.fill_range.1, |(v, c)| level(v, c, cfg.fill_range.0, cfg.fill_range.1));
    let background = cfg
        .role_value(space, config, VisualRole::Background)
        .map_or(cfg.background_range.0, |(v, c)| level(v, c, cfg.background_range.0, cfg.background_range.1));

    let mut pixels = vec![background; cfg.pixel_count()];
    for y in y0..y0 + side {
        pixels[y * cfg.width + x0..y * cfg.width + x0 + side].fill(fill);
    }
    Ok(Observation { height: cfg.height, width: cfg.width, pixels })
}
