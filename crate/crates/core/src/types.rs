use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{what} {value} out of range")]
pub struct LabelRangeError {
    pub what: &'static str,
    pub value: usize,
}

/// The four breast-density categories, ordered from fatty to dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum DensityClass {
    AlmostEntirelyFatty,
    ScatteredFibroglandular,
    HeterogeneouslyDense,
    ExtremelyDense,
}

impl DensityClass {
    pub const ALL: [DensityClass; 4] = [
        DensityClass::AlmostEntirelyFatty,
        DensityClass::ScatteredFibroglandular,
        DensityClass::HeterogeneouslyDense,
        DensityClass::ExtremelyDense,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self, LabelRangeError> {
        Self::ALL.get(i).copied().ok_or(LabelRangeError {
            what: "density class",
            value: i,
        })
    }

    /// Canonical report phrase for the class.
    pub fn phrase(self) -> &'static str {
        match self {
            DensityClass::AlmostEntirelyFatty => "almost entirely fatty",
            DensityClass::ScatteredFibroglandular => "scattered areas of fibroglandular density",
            DensityClass::HeterogeneouslyDense => "heterogeneously dense",
            DensityClass::ExtremelyDense => "extremely dense",
        }
    }

    /// Dense superclass: heterogeneously or extremely dense.
    pub fn is_dense(self) -> bool {
        self.index() >= 2
    }
}

impl From<DensityClass> for u8 {
    fn from(c: DensityClass) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for DensityClass {
    type Error = LabelRangeError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::from_index(v as usize)
    }
}

impl fmt::Display for DensityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Overall screening assessment: 0 incomplete, 1 negative, 2 benign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BiRads(u8);

impl BiRads {
    pub const COUNT: usize = 3;

    pub fn new(v: u8) -> Result<Self, LabelRangeError> {
        if (v as usize) < Self::COUNT {
            Ok(BiRads(v))
        } else {
            Err(LabelRangeError {
                what: "BI-RADS category",
                value: v as usize,
            })
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<BiRads> for u8 {
    fn from(b: BiRads) -> u8 {
        b.0
    }
}

impl TryFrom<u8> for BiRads {
    type Error = LabelRangeError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

/// The four standard screening views, in the fixed network input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewKind {
    #[serde(rename = "L-CC")]
    LeftCc,
    #[serde(rename = "R-CC")]
    RightCc,
    #[serde(rename = "L-MLO")]
    LeftMlo,
    #[serde(rename = "R-MLO")]
    RightMlo,
}

impl ViewKind {
    pub const ALL: [ViewKind; 4] = [
        ViewKind::LeftCc,
        ViewKind::RightCc,
        ViewKind::LeftMlo,
        ViewKind::RightMlo,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            ViewKind::LeftCc => "L-CC",
            ViewKind::RightCc => "R-CC",
            ViewKind::LeftMlo => "L-MLO",
            ViewKind::RightMlo => "R-MLO",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.label() == s)
    }

    pub fn is_right(self) -> bool {
        matches!(self, ViewKind::RightCc | ViewKind::RightMlo)
    }

    pub fn is_mlo(self) -> bool {
        matches!(self, ViewKind::LeftMlo | ViewKind::RightMlo)
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Single-channel 16-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewImage {
    pub view: ViewKind,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u16>,
}

impl ViewImage {
    pub fn new(view: ViewKind, height: usize, width: usize, pixels: Vec<u16>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel buffer size");
        Self {
            view,
            height,
            width,
            pixels,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_serializes_as_index() {
        assert_eq!(
            serde_json::to_string(&DensityClass::ExtremelyDense).unwrap(),
            "3"
        );
        let c: DensityClass = serde_json::from_str("1").unwrap();
        assert_eq!(c, DensityClass::ScatteredFibroglandular);
        assert!(serde_json::from_str::<DensityClass>("4").is_err());
    }

    #[test]
    fn view_labels_round_trip() {
        for v in ViewKind::ALL {
            assert_eq!(ViewKind::from_label(v.label()), Some(v));
            assert_eq!(
                serde_json::to_string(&v).unwrap(),
                format!("\"{}\"", v.label())
            );
        }
    }

    #[test]
    fn birads_range() {
        assert!(BiRads::new(2).is_ok());
        assert!(BiRads::new(3).is_err());
    }
}
