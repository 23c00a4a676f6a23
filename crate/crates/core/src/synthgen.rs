//! Deterministic synthetic four-view screening exams.
//!
//! Each view is a half-ellipse of breast tissue against a dark background.
//! A class-dependent fraction of the tissue is covered with bright
//! fibroglandular blobs; the remainder renders as darker fat. Intensities
//! fall off toward the skin line with tissue thickness, every view gets its
//! own exposure gain, and MLO views carry a bright pectoral wedge.

use chrono::{Days, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{self, stream};
use crate::types::{BiRads, DensityClass, ViewImage, ViewKind};

/// Label counts of the reference screening population, indexed
/// `[birads][density]`.
pub const REFERENCE_COUNTS: [[u32; 4]; 3] = [
    [1702, 9607, 12656, 1839],
    [9803, 40060, 37167, 5157],
    [8434, 35998, 34029, 4727],
];

/// Fraction of reference reports without a density statement (519 of
/// 201,698).
pub const REFERENCE_MISSING_FRACTION: f64 = 519.0 / 201_698.0;

pub fn reference_marginals() -> [f64; 4] {
    let total: u32 = REFERENCE_COUNTS.iter().flatten().sum();
    std::array::from_fn(|d| {
        REFERENCE_COUNTS.iter().map(|row| row[d]).sum::<u32>() as f64 / total as f64
    })
}

pub fn reference_birads_given_density() -> [[f64; 3]; 4] {
    std::array::from_fn(|d| {
        let col: u32 = REFERENCE_COUNTS.iter().map(|row| row[d]).sum();
        std::array::from_fn(|b| REFERENCE_COUNTS[b][d] as f64 / col as f64)
    })
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid phantom configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntensityModel {
    pub background: f64,
    pub fat: f64,
    pub gland: f64,
    pub pectoral: f64,
    /// Relative brightness at the skin line; 1.0 disables thickness falloff.
    pub edge_thickness: f64,
    /// Per-view exposure gain is drawn from `[1 - j, 1 + j]`.
    pub exposure_jitter: f64,
    /// Per-blob brightness is drawn from `[1 - j, 1 + j]`.
    pub blob_jitter: f64,
    /// Upper bound of the fraction of fatty tissue crossed by thin strands
    /// at glandular brightness; the amount is uniform below it.
    pub strand_fraction: f64,
}

impl Default for IntensityModel {
    fn default() -> Self {
        Self {
            background: 300.0,
            fat: 14_000.0,
            gland: 34_000.0,
            pectoral: 38_000.0,
            edge_thickness: 0.45,
            exposure_jitter: 0.15,
            blob_jitter: 0.15,
            strand_fraction: 0.5,
        }
    }
}

impl IntensityModel {
    /// Flat, noise-free-friendly model: no falloff, no gain or blob jitter.
    pub fn flat() -> Self {
        Self {
            edge_thickness: 1.0,
            exposure_jitter: 0.0,
            blob_jitter: 0.0,
            strand_fraction: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    /// Per-class `[low, high]` fibroglandular area fraction.
    pub tissue_fraction: [[f64; 2]; 4],
    pub noise_sigma: f64,
    pub class_marginals: [f64; 4],
    pub birads_given_density: [[f64; 3]; 4],
    pub missing_density_fraction: f64,
    pub seed: u64,
    pub intensity: IntensityModel,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 96,
            tissue_fraction: [[0.02, 0.10], [0.10, 0.40], [0.40, 0.75], [0.75, 0.95]],
            noise_sigma: 2000.0,
            class_marginals: reference_marginals(),
            birads_given_density: reference_birads_given_density(),
            missing_density_fraction: REFERENCE_MISSING_FRACTION,
            seed: 0,
            intensity: IntensityModel::default(),
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.height < 8 || self.width < 8 {
            return bad(format!("image {}x{} is too small", self.height, self.width));
        }
        if (self.class_marginals.iter().sum::<f64>() - 1.0).abs() > 1e-9
            || self.class_marginals.iter().any(|&p| p < 0.0)
        {
            return bad("class marginals must be non-negative and sum to 1".into());
        }
        for (d, row) in self.birads_given_density.iter().enumerate() {
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                return bad(format!("BI-RADS conditional row {d} must sum to 1"));
            }
        }
        let mut previous_high = 0.0;
        for (d, &[lo, hi]) in self.tissue_fraction.iter().enumerate() {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
                return bad(format!(
                    "tissue interval {d} [{lo}, {hi}] is not a proper subset of [0,1]"
                ));
            }
            if d > 0 && lo < previous_high {
                return bad(format!("tissue interval {d} overlaps its predecessor"));
            }
            previous_high = hi;
        }
        if !(0.0..=1.0).contains(&self.missing_density_fraction) {
            return bad("missing-density fraction outside [0,1]".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative".into());
        }
        let im = &self.intensity;
        if !(0.0..1.0).contains(&im.exposure_jitter)
            || !(0.0..1.0).contains(&im.blob_jitter)
            || !(0.0..=1.0).contains(&im.edge_thickness)
        {
            return bad("intensity jitter must lie in [0,1) and edge thickness in [0,1]".into());
        }
        Ok(())
    }
}

/// A rendered view plus the ground truth that produced it.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: ViewImage,
    /// Fraction drawn from the class interval.
    pub target_fraction: f64,
    /// Fraction of tissue pixels actually covered by glandular blobs.
    pub realized_fraction: f64,
    /// Breast tissue pixels (excluding the pectoral wedge).
    pub tissue_mask: Vec<bool>,
    pub gland_mask: Vec<bool>,
}

pub fn render_view(
    class: DensityClass,
    view: ViewKind,
    config: &PhantomConfig,
    rng: &mut ChaCha8Rng,
) -> ViewImage {
    render_view_detailed(class, view, config, rng).image
}

/// Renders one view with a strand level drawn for this view alone.
pub fn render_view_detailed(
    class: DensityClass,
    view: ViewKind,
    config: &PhantomConfig,
    rng: &mut ChaCha8Rng,
) -> RenderedView {
    let level = draw_strand_level(&config.intensity, rng);
    render_view_with_strands(class, view, config, level, rng)
}

fn draw_strand_level<R: Rng + ?Sized>(im: &IntensityModel, rng: &mut R) -> f64 {
    if im.strand_fraction > 0.0 {
        rng.random_range(0.0..im.strand_fraction)
    } else {
        0.0
    }
}

/// Renders one view; `strand_level` is the fraction of fatty tissue
/// crossed by strands.
pub fn render_view_with_strands(
    class: DensityClass,
    view: ViewKind,
    config: &PhantomConfig,
    strand_level: f64,
    rng: &mut ChaCha8Rng,
) -> RenderedView {
    let (h, w) = (config.height, config.width);
    let hf = h as f64;
    let wf = w as f64;
    let im = &config.intensity;

    // Geometry in chest-wall coordinates: u grows away from the chest wall.
    let center_v = hf * rng.random_range(0.46..0.54);
    let semi_u = wf * rng.random_range(0.70..0.90);
    let semi_v = hf * rng.random_range(0.38..0.46);
    let wedge = view.is_mlo().then(|| {
        (
            wf * rng.random_range(0.25..0.40),
            hf * rng.random_range(0.30..0.50),
        )
    });

    let mut radius = vec![f64::INFINITY; h * w];
    let mut tissue = vec![false; h * w];
    let mut pectoral = vec![false; h * w];
    for v in 0..h {
        for u in 0..w {
            let (uc, vc) = (u as f64 + 0.5, v as f64 + 0.5);
            let r2 = (uc / semi_u).powi(2) + ((vc - center_v) / semi_v).powi(2);
            let i = v * w + u;
            if matches!(wedge, Some((wu, wv)) if uc / wu + vc / wv < 1.0) {
                pectoral[i] = true;
            } else if r2 <= 1.0 {
                radius[i] = r2.sqrt();
                tissue[i] = true;
            }
        }
    }
    let tissue_idx: Vec<usize> = (0..h * w).filter(|&i| tissue[i]).collect();

    let [lo, hi] = config.tissue_fraction[class.index()];
    let target = rng.random_range(lo..hi);
    let mut gland = vec![false; h * w];
    let mut brightness = vec![1.0; h * w];
    let needed = (target * tissue_idx.len() as f64).round() as usize;
    let mut covered = 0usize;
    let scale = hf / 128.0;
    while covered < needed {
        let c = tissue_idx[rng.random_range(0..tissue_idx.len())];
        let (cv, cu) = ((c / w) as f64 + 0.5, (c % w) as f64 + 0.5);
        let ra = scale * rng.random_range(2.0..6.5);
        let rb = scale * rng.random_range(2.0..6.5);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let factor = 1.0 + im.blob_jitter * rng.random_range(-1.0..=1.0);
        let (s, co) = theta.sin_cos();
        let reach = ra.max(rb).ceil() as isize;
        let (v0, u0) = (cv.floor() as isize, cu.floor() as isize);
        for v in (v0 - reach).max(0)..=(v0 + reach).min(h as isize - 1) {
            for u in (u0 - reach).max(0)..=(u0 + reach).min(w as isize - 1) {
                let i = v as usize * w + u as usize;
                if !tissue[i] {
                    continue;
                }
                let (dv, du) = (v as f64 + 0.5 - cv, u as f64 + 0.5 - cu);
                let a = du * co + dv * s;
                let b = -du * s + dv * co;
                if (a / ra).powi(2) + (b / rb).powi(2) <= 1.0 {
                    if !gland[i] {
                        gland[i] = true;
                        covered += 1;
                    }
                    brightness[i] = factor;
                }
            }
        }
    }

    let fat_pixels = tissue_idx.len() - covered.min(tissue_idx.len());
    let strand_target = (strand_level * fat_pixels as f64).round() as usize;
    let mut strand = vec![false; h * w];
    let mut strand_count = 0usize;
    let mut attempts = 0usize;
    while strand_count < strand_target && attempts < 20 * strand_target + 100 {
        attempts += 1;
        let c = tissue_idx[rng.random_range(0..tissue_idx.len())];
        let (mut v, mut u) = ((c / w) as f64 + 0.5, (c % w) as f64 + 0.5);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (dv, du) = theta.sin_cos();
        let length = scale * rng.random_range(8.0..30.0);
        let factor = 1.0 + im.blob_jitter * rng.random_range(-1.0..=1.0);
        for _ in 0..length.ceil() as usize {
            if v < 0.0 || u < 0.0 || v >= hf || u >= wf {
                break;
            }
            let i = v as usize * w + u as usize;
            if !tissue[i] {
                break;
            }
            if !gland[i] && !strand[i] {
                strand[i] = true;
                brightness[i] = factor;
                strand_count += 1;
                if strand_count >= strand_target {
                    break;
                }
            }
            v += dv;
            u += du;
        }
    }

    let gain = 1.0 + im.exposure_jitter * rng.random_range(-1.0..=1.0);
    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut pixels = vec![0u16; h * w];
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let base = if pectoral[i] {
                gain * im.pectoral
            } else if tissue[i] {
                let r = radius[i];
                let thickness =
                    im.edge_thickness + (1.0 - im.edge_thickness) * (1.0 - r * r).sqrt();
                let level = if gland[i] || strand[i] {
                    im.gland * brightness[i]
                } else {
                    im.fat
                };
                gain * thickness * level
            } else {
                im.background
            };
            let value = if config.noise_sigma > 0.0 {
                base + noise.sample(rng)
            } else {
                base
            };
            let col = if view.is_right() { w - 1 - u } else { u };
            pixels[v * w + col] = value.round().clamp(0.0, 65535.0) as u16;
        }
    }
    let mirror = |mask: Vec<bool>| -> Vec<bool> {
        if !view.is_right() {
            return mask;
        }
        let mut out = vec![false; h * w];
        for v in 0..h {
            for u in 0..w {
                out[v * w + (w - 1 - u)] = mask[v * w + u];
            }
        }
        out
    };
    RenderedView {
        image: ViewImage::new(view, h, w, pixels),
        target_fraction: target,
        realized_fraction: covered as f64 / tissue_idx.len().max(1) as f64,
        tissue_mask: mirror(tissue),
        gland_mask: mirror(gland),
    }
}

const OPENERS: [&str; 3] = [
    "Bilateral screening mammogram with standard craniocaudal and mediolateral oblique views.",
    "Screening digital mammography of both breasts, four standard views obtained.",
    "Routine bilateral screening mammogram.",
];
const COMPARISONS: [&str; 3] = [
    "Comparison is made to prior examinations.",
    "No prior studies are available for comparison.",
    "",
];
const DENSITY_TEMPLATES: [&str; 3] = [
    "The breast tissue is {}.",
    "The breasts are {}.",
    "Breast composition: {}.",
];
const NO_DENSITY: [&str; 2] = [
    "Breast composition was not recorded.",
    "Technique and positioning are adequate.",
];
const FINDINGS: [&str; 3] = [
    "There are no suspicious masses, calcifications, or areas of architectural distortion.",
    "No dominant mass or suspicious microcalcifications are seen.",
    "Scattered benign-appearing calcifications are stable.",
];

fn impression(birads: BiRads) -> &'static str {
    match birads.index() {
        0 => "IMPRESSION: BI-RADS 0 - incomplete, additional imaging evaluation is needed.",
        1 => "IMPRESSION: BI-RADS 1 - negative.",
        _ => "IMPRESSION: BI-RADS 2 - benign findings.",
    }
}

/// Templated report prose with at most one canonical density phrase and an
/// optional BI-RADS impression line.
pub fn compose_report<R: Rng + ?Sized>(
    density: Option<DensityClass>,
    birads: Option<BiRads>,
    rng: &mut R,
) -> String {
    let mut parts: Vec<String> = Vec::new();
    parts.push(OPENERS[rng.random_range(0..OPENERS.len())].to_string());
    let cmp = COMPARISONS[rng.random_range(0..COMPARISONS.len())];
    if !cmp.is_empty() {
        parts.push(cmp.to_string());
    }
    match density {
        Some(c) => {
            let t = DENSITY_TEMPLATES[rng.random_range(0..DENSITY_TEMPLATES.len())];
            parts.push(t.replace("{}", c.phrase()));
        }
        None => parts.push(NO_DENSITY[rng.random_range(0..NO_DENSITY.len())].to_string()),
    }
    parts.push(FINDINGS[rng.random_range(0..FINDINGS.len())].to_string());
    if let Some(b) = birads {
        parts.push(impression(b).to_string());
    }
    parts.join(" ")
}

/// Labels, identifiers and report for one exam, before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamPlan {
    /// Global exam ordinal, used to derive the exam's RNG streams.
    pub ordinal: u64,
    pub exam_id: String,
    pub patient_id: String,
    pub date: NaiveDate,
    pub density: DensityClass,
    pub birads: BiRads,
    pub missing_density: bool,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExam {
    pub exam_id: String,
    pub patient_id: String,
    pub date: NaiveDate,
    /// In `ViewKind::ALL` order.
    pub views: [ViewImage; 4],
    pub report: String,
    pub density: DensityClass,
    pub birads: BiRads,
    pub missing_density: bool,
}

impl SyntheticExam {
    pub fn view(&self, kind: ViewKind) -> &ViewImage {
        &self.views[kind.index()]
    }
}

/// Draws patients, exam dates, labels and reports without rendering pixels.
pub fn plan_corpus(
    n_patients: usize,
    exams_per_patient: std::ops::RangeInclusive<usize>,
    config: &PhantomConfig,
) -> Result<Vec<ExamPlan>, SynthError> {
    if n_patients == 0 {
        return Err(SynthError::InvalidConfig(
            "at least one patient is required".into(),
        ));
    }
    plan(n_patients, usize::MAX, exams_per_patient, config)
}

/// Plans exactly `n_exams` exams; the last patient's history is cut short
/// when needed.
pub fn plan_corpus_exams(
    n_exams: usize,
    exams_per_patient: std::ops::RangeInclusive<usize>,
    config: &PhantomConfig,
) -> Result<Vec<ExamPlan>, SynthError> {
    if n_exams == 0 {
        return Err(SynthError::InvalidConfig(
            "at least one exam is required".into(),
        ));
    }
    plan(usize::MAX, n_exams, exams_per_patient, config)
}

fn plan(
    max_patients: usize,
    max_exams: usize,
    exams_per_patient: std::ops::RangeInclusive<usize>,
    config: &PhantomConfig,
) -> Result<Vec<ExamPlan>, SynthError> {
    config.validate()?;
    if *exams_per_patient.start() == 0 || exams_per_patient.is_empty() {
        return Err(SynthError::InvalidConfig(
            "exams per patient must be a range within 1..".into(),
        ));
    }
    let density_dist = WeightedIndex::new(config.class_marginals)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let birads_dists: Vec<WeightedIndex<f64>> = config
        .birads_given_density
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| SynthError::InvalidConfig(e.to_string())))
        .collect::<Result<_, _>>()?;
    let epoch = NaiveDate::from_ymd_opt(2009, 1, 1).unwrap();
    let mut plans = Vec::new();
    let mut ordinal = 0u64;
    for p in 0..max_patients {
        if plans.len() >= max_exams {
            break;
        }
        let mut prng = stream(config.seed, &[seeding::PATIENT, p as u64]);
        let count = prng
            .random_range(exams_per_patient.clone())
            .min(max_exams - plans.len());
        let mut date = epoch + Days::new(prng.random_range(0..3650));
        for k in 0..count {
            if k > 0 {
                date = date + Days::new(prng.random_range(300..800));
            }
            let mut erng = stream(config.seed, &[seeding::EXAM, ordinal]);
            let density = DensityClass::ALL[density_dist.sample(&mut erng)];
            let birads = BiRads::new(birads_dists[density.index()].sample(&mut erng) as u8)
                .expect("three BI-RADS categories");
            let missing_density = erng.random_bool(config.missing_density_fraction);
            let report = compose_report(
                (!missing_density).then_some(density),
                Some(birads),
                &mut erng,
            );
            plans.push(ExamPlan {
                ordinal,
                exam_id: format!("E{ordinal:07}"),
                patient_id: format!("P{p:06}"),
                date,
                density,
                birads,
                missing_density,
                report,
            });
            ordinal += 1;
        }
    }
    Ok(plans)
}

/// Renders the four views of a planned exam. Each view draws from its own
/// stream keyed by `(seed, ordinal, view)`.
pub fn render_exam(plan: &ExamPlan, config: &PhantomConfig) -> SyntheticExam {
    // Strand density is a property of the patient's breasts, shared by all
    // four views.
    let level = draw_strand_level(
        &config.intensity,
        &mut stream(
            config.seed,
            &[seeding::VIEW, plan.ordinal, ViewKind::ALL.len() as u64],
        ),
    );
    let views = ViewKind::ALL.map(|v| {
        let mut rng = stream(
            config.seed,
            &[seeding::VIEW, plan.ordinal, v.index() as u64],
        );
        render_view_with_strands(plan.density, v, config, level, &mut rng).image
    });
    SyntheticExam {
        exam_id: plan.exam_id.clone(),
        patient_id: plan.patient_id.clone(),
        date: plan.date,
        views,
        report: plan.report.clone(),
        density: plan.density,
        birads: plan.birads,
        missing_density: plan.missing_density,
    }
}

pub fn generate_corpus(
    n_patients: usize,
    exams_per_patient: std::ops::RangeInclusive<usize>,
    config: &PhantomConfig,
) -> Result<Vec<SyntheticExam>, SynthError> {
    Ok(plan_corpus(n_patients, exams_per_patient, config)?
        .iter()
        .map(|p| render_exam(p, config))
        .collect())
}

pub fn generate_corpus_exams(
    n_exams: usize,
    exams_per_patient: std::ops::RangeInclusive<usize>,
    config: &PhantomConfig,
) -> Result<Vec<SyntheticExam>, SynthError> {
    Ok(plan_corpus_exams(n_exams, exams_per_patient, config)?
        .iter()
        .map(|p| render_exam(p, config))
        .collect())
}

/// Mean intensity over breast tissue pixels.
pub fn mean_tissue_intensity(view: &RenderedView) -> f64 {
    let (sum, n) = view
        .image
        .pixels
        .iter()
        .zip(&view.tissue_mask)
        .filter(|(_, &t)| t)
        .fold((0.0, 0usize), |(s, n), (&p, _)| (s + p as f64, n + 1));
    sum / n.max(1) as f64
}
