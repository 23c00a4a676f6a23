//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The plain functions below carry the logic and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use density_core::evalkit::{cohen_kappa, collapse_superclass, roc_and_auc};
use density_core::seeding::stream;
use density_core::synthgen::{render_view_with_strands, PhantomConfig};
use density_core::types::{DensityClass, ViewKind};
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Phantom {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    target_fraction: f64,
    realized_fraction: f64,
}

#[wasm_bindgen]
impl Phantom {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major RGBA bytes, ready for `ImageData`.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn target_fraction(&self) -> f64 {
        self.target_fraction
    }

    #[wasm_bindgen(getter)]
    pub fn realized_fraction(&self) -> f64 {
        self.realized_fraction
    }
}

pub fn phantom(class: usize, view: usize, seed: u64, strand_level: f64) -> Result<Phantom, String> {
    let class = DensityClass::from_index(class).map_err(|e| e.to_string())?;
    let view = *ViewKind::ALL
        .get(view)
        .ok_or_else(|| format!("view index {view} outside 0..4"))?;
    if !(0.0..=1.0).contains(&strand_level) {
        return Err(format!("strand level {strand_level} outside [0, 1]"));
    }
    let config = PhantomConfig::default();
    let mut rng = stream(seed, &[class.index() as u64, view.index() as u64]);
    let r = render_view_with_strands(class, view, &config, strand_level, &mut rng);
    let mut rgba = Vec::with_capacity(r.image.pixels.len() * 4);
    for &p in &r.image.pixels {
        let g = (p >> 8) as u8;
        rgba.extend_from_slice(&[g, g, g, 255]);
    }
    Ok(Phantom {
        width: r.image.width,
        height: r.image.height,
        rgba,
        target_fraction: r.target_fraction,
        realized_fraction: r.realized_fraction,
    })
}

/// Renders one synthetic view with the default phantom settings.
#[wasm_bindgen(js_name = renderPhantom)]
pub fn render_phantom(
    class: usize,
    view: usize,
    seed: u32,
    strand_level: f64,
) -> Result<Phantom, JsError> {
    phantom(class, view, u64::from(seed), strand_level).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    fpr: Vec<f64>,
    tpr: Vec<f64>,
    auc: f64,
}

#[wasm_bindgen]
impl Roc {
    #[wasm_bindgen(getter)]
    pub fn fpr(&self) -> Vec<f64> {
        self.fpr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn tpr(&self) -> Vec<f64> {
        self.tpr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn auc(&self) -> f64 {
        self.auc
    }
}

/// Parses `score,label` lines; label is 1 for positive, 0 for negative.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_scored(text: &str) -> Result<(Vec<f64>, Vec<bool>), String> {
    let mut scores = Vec::new();
    let mut truths = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || format!("line {}: expected `score,label`, got `{line}`", n + 1);
        let (s, l) = line.split_once(',').ok_or_else(bad)?;
        let score: f64 = s.trim().parse().map_err(|_| bad())?;
        if !score.is_finite() {
            return Err(bad());
        }
        let truth = match l.trim() {
            "1" => true,
            "0" => false,
            _ => return Err(bad()),
        };
        scores.push(score);
        truths.push(truth);
    }
    Ok((scores, truths))
}

pub fn roc_from_text(text: &str) -> Result<Roc, String> {
    let (scores, truths) = parse_scored(text)?;
    let curve = roc_and_auc(&scores, &truths).map_err(|e| e.to_string())?;
    Ok(Roc {
        fpr: curve.points.iter().map(|p| p.fpr).collect(),
        tpr: curve.points.iter().map(|p| p.tpr).collect(),
        auc: curve.auc,
    })
}

#[wasm_bindgen(js_name = rocCurve)]
pub fn roc_curve(text: &str) -> Result<Roc, JsError> {
    roc_from_text(text).map_err(|e| JsError::new(&e))
}

/// Parses density labels separated by commas or whitespace.
pub fn parse_labels(text: &str) -> Result<Vec<usize>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<usize>() {
            Ok(v) if v < DensityClass::COUNT => Ok(v),
            _ => Err(format!("`{t}` is not a density class 0-3")),
        })
        .collect()
}

/// Cohen's kappa between two label lists, optionally after collapsing to
/// the dense / not-dense superclass.
pub fn kappa_from_text(a: &str, b: &str, superclass: bool) -> Result<f64, String> {
    let (mut a, mut b) = (parse_labels(a)?, parse_labels(b)?);
    let mut classes = DensityClass::COUNT;
    if superclass {
        a = collapse_superclass(&a).map_err(|e| e.to_string())?;
        b = collapse_superclass(&b).map_err(|e| e.to_string())?;
        classes = 2;
    }
    cohen_kappa(&a, &b, classes).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn kappa(a: &str, b: &str, superclass: bool) -> Result<f64, JsError> {
    kappa_from_text(a, b, superclass).map_err(|e| JsError::new(&e))
}
