//! Synthetic longitudinal fundus-like datasets.
//!
//! Each eye carries a latent lesion burden that grows linearly in time with
//! a multiplicative per-visit deviation, `b(tᵢ) = (b₀ + ρ·tᵢ)(1 + εᵢ)`. The
//! deviations are independent, so no visit's burden can be recovered from
//! the others. Visits are rendered as a dark frame holding an orange
//! retinal disc, a pale optic disc and yellow Gaussian "drusen" whose total
//! area is proportional to the burden.
//!
//! Progression is driven by a latent risk that accumulates the observed
//! burdens, each discounted by how long before the prediction visit it was
//! seen and weighted per visit:
//!
//! ```text
//! R = Σᵢ wᵢ · b(tᵢ) / (t_pred − tᵢ) + σ_R · z,   z ~ N(0, 1)
//! ```
//!
//! An eye progresses when `R` exceeds the `(1 − progress_rate)` quantile of
//! its distribution. The label is drawn first and the course is resampled
//! until it agrees (and, for progressors, until the lesion area has grown
//! between the first and last observed visits), so the progressor fraction
//! follows `progress_rate` exactly in distribution. Both the number of observed visits and the time
//! to the prediction visit therefore carry signal.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::preprocess::{Laterality, RawImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Early,
    Advanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    /// Image path relative to the manifest's directory.
    pub image: String,
    /// Years since the first visit.
    pub time: f64,
    pub stage: Stage,
    /// Precomputed feature vector replacing the image, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

/// One eye: observed visits (oldest first) and the labelled prediction visit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitSequence {
    pub id: String,
    pub patient_id: String,
    pub eye: Laterality,
    pub visits: Vec<Visit>,
    pub prediction_time: f64,
    pub prediction_stage: Stage,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_image: Option<String>,
}

impl VisitSequence {
    pub fn validate(&self) -> Result<()> {
        let ctx = |msg: String| Error::Input(format!("sequence {}: {msg}", self.id));
        if self.visits.is_empty() {
            return Err(ctx("no visits".into()));
        }
        if let Some(w) = self.visits.windows(2).find(|w| w[1].time <= w[0].time) {
            return Err(ctx(format!(
                "visit times not increasing ({} then {})",
                w[0].time, w[1].time
            )));
        }
        let last = self.visits[self.visits.len() - 1].time;
        if !(self.prediction_time > last) {
            return Err(ctx(format!(
                "prediction time {} does not follow last visit {last}",
                self.prediction_time
            )));
        }
        let expected = u8::from(self.prediction_stage == Stage::Advanced);
        if self.label != expected {
            return Err(ctx(format!(
                "label {} disagrees with prediction stage {:?}",
                self.label, self.prediction_stage
            )));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.visits.iter().map(|v| v.time).collect()
    }
}

pub fn write_manifest(path: &Path, records: &[VisitSequence]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<VisitSequence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VisitSequence =
            serde_json::from_str(&line).map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), n + 1)))?;
        rec.validate()?;
        if !ids.insert(rec.id.clone()) {
            return Err(Error::Input(format!("{}: duplicate eye id {}", path.display(), rec.id)));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Input(format!("{}: manifest is empty", path.display())));
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_eyes: usize,
    pub progress_rate: f64,
    pub seed: u64,
    /// Side of the rendered square images.
    pub image_size: usize,
    /// Visits per eye including the prediction visit.
    pub visits_per_eye: usize,
    pub gap_min: f64,
    pub gap_max: f64,
    pub two_eye_fraction: f64,
    /// Uniform range of the burden at the first visit.
    pub burden_min: f64,
    pub burden_max: f64,
    /// Log-uniform range of the yearly burden growth.
    pub growth_min: f64,
    pub growth_max: f64,
    /// Standard deviation of the relative per-visit burden deviation.
    pub burden_noise: f64,
    /// Weight of each observed visit in the latent risk, oldest first.
    pub risk_weights: Vec<f64>,
    /// Standard deviation of the unobserved part of the latent risk.
    pub risk_noise: f64,
    pub blobs_min: usize,
    pub blobs_max: usize,
    /// Total lesion σ² per unit burden, in units of the squared fundus radius.
    pub lesion_spread: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_eyes: 1000,
            progress_rate: 0.092,
            seed: 0,
            image_size: 64,
            visits_per_eye: 4,
            gap_min: 0.5,
            gap_max: 3.0,
            two_eye_fraction: 0.3,
            burden_min: 0.0,
            burden_max: 0.8,
            growth_min: 0.02,
            growth_max: 0.2,
            burden_noise: 0.25,
            risk_weights: vec![6.0, 3.0, 1.0],
            risk_noise: 0.1,
            blobs_min: 3,
            blobs_max: 8,
            lesion_spread: 0.4,
        }
    }
}

/// Courses drawn to calibrate the risk threshold.
const CALIBRATION_DRAWS: usize = 20_000;
/// Seed of the calibration stream; fixed so the threshold depends on the
/// generator parameters but not on the dataset seed.
const CALIBRATION_SEED: u64 = 0x4c50_474e;
/// Retinal disc radius as a fraction of the image side.
const FUNDUS_RADIUS: f64 = 0.42;
/// Drusen centres lie within this fraction of the fundus radius.
const MACULA_RADIUS: f64 = 0.55;

const BACKGROUND: [f64; 3] = [0.03, 0.02, 0.02];
const FUNDUS: [f64; 3] = [0.75, 0.35, 0.15];
const OPTIC_DISC: [f64; 3] = [0.98, 0.90, 0.75];
const DRUSEN: [f64; 3] = [0.95, 0.85, 0.35];
const PIXEL_NOISE: f64 = 0.01;

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_eyes < 10 {
            return bad(format!("n_eyes must be at least 10, got {}", self.n_eyes));
        }
        if !(self.progress_rate > 0.0 && self.progress_rate < 1.0) {
            return bad(format!("progress_rate {} outside (0, 1)", self.progress_rate));
        }
        if self.image_size < 32 {
            return bad(format!("image_size {} below 32", self.image_size));
        }
        if self.visits_per_eye < 2 {
            return bad("visits_per_eye must be at least 2".into());
        }
        if !(self.gap_min > 0.0 && self.gap_min <= self.gap_max && self.gap_max.is_finite()) {
            return bad(format!("invalid gap bounds [{}, {}]", self.gap_min, self.gap_max));
        }
        if !(0.0..=1.0).contains(&self.two_eye_fraction) {
            return bad(format!("two_eye_fraction {} outside [0, 1]", self.two_eye_fraction));
        }
        if !(0.0 <= self.burden_min && self.burden_min <= self.burden_max && self.burden_max <= 1.0) {
            return bad(format!(
                "invalid burden range [{}, {}]",
                self.burden_min, self.burden_max
            ));
        }
        if !(0.0 < self.growth_min && self.growth_min <= self.growth_max && self.growth_max.is_finite()) {
            return bad(format!(
                "invalid growth range [{}, {}]",
                self.growth_min, self.growth_max
            ));
        }
        if !(0.0..0.5).contains(&self.burden_noise) {
            return bad(format!("burden_noise {} outside [0, 0.5)", self.burden_noise));
        }
        if self.risk_weights.len() != self.observed_visits()
            || self.risk_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.risk_weights.iter().sum::<f64>() <= 0.0
        {
            return bad(format!(
                "risk_weights {:?} must hold {} non-negative weights, not all zero",
                self.risk_weights,
                self.observed_visits()
            ));
        }
        if !(self.risk_noise >= 0.0 && self.risk_noise.is_finite()) {
            return bad(format!(
                "risk_noise {} must be finite and non-negative",
                self.risk_noise
            ));
        }
        if !(self.lesion_spread > 0.0 && self.lesion_spread <= 1.0) {
            return bad(format!("lesion_spread {} outside (0, 1]", self.lesion_spread));
        }
        if self.blobs_min == 0 || self.blobs_min > self.blobs_max {
            return bad(format!(
                "invalid blob count range [{}, {}]",
                self.blobs_min, self.blobs_max
            ));
        }
        Ok(())
    }

    pub fn observed_visits(&self) -> usize {
        self.visits_per_eye - 1
    }
}

/// One rendered Gaussian lesion, in saved-image pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub row: f64,
    pub col: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitLog {
    pub burden: f64,
    /// Pixels above half of the lesion peak blend.
    pub area: usize,
    pub blobs: Vec<Blob>,
}

/// Ground truth for one eye: latent parameters and per-visit lesion placement
/// (observed visits first, then the prediction visit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyeLog {
    pub id: String,
    pub base_burden: f64,
    pub growth: f64,
    pub risk: f64,
    pub visits: Vec<VisitLog>,
}

impl VisitLog {
    /// Pixels where some lesion blends in at least half strength.
    pub fn mask(&self, size: usize) -> Vec<bool> {
        let mut mask = vec![false; size * size];
        for b in &self.blobs {
            // exp(−d²/2σ²) ≥ ½  ⇔  d² ≤ 2 ln 2 σ²
            let r2 = 2.0 * std::f64::consts::LN_2 * b.sigma * b.sigma;
            for (i, m) in mask.iter_mut().enumerate() {
                let (r, c) = ((i / size) as f64, (i % size) as f64);
                if (r - b.row).powi(2) + (c - b.col).powi(2) <= r2 {
                    *m = true;
                }
            }
        }
        mask
    }
}

/// Rendered images for one eye, observed visits first, then the prediction visit.
#[derive(Clone, Debug)]
pub struct GeneratedEye {
    pub record: VisitSequence,
    pub images: Vec<RawImage>,
    pub log: EyeLog,
}

struct Patient {
    id: String,
    eyes: Vec<Laterality>,
}

fn eye_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn assign_patients(config: &GenConfig) -> Vec<Patient> {
    let mut rng = eye_stream(config.seed, u64::MAX);
    let mut patients = Vec::new();
    let mut eyes = 0;
    while eyes < config.n_eyes {
        let both = config.n_eyes - eyes >= 2 && rng.random_bool(config.two_eye_fraction);
        let lat = if both {
            vec![Laterality::Left, Laterality::Right]
        } else if rng.random_bool(0.5) {
            vec![Laterality::Right]
        } else {
            vec![Laterality::Left]
        };
        eyes += lat.len();
        patients.push(Patient {
            id: format!("pat{:05}", patients.len()),
            eyes: lat,
        });
    }
    patients
}

/// Eye identity (id, patient id, laterality) in generation order.
fn eye_slots(config: &GenConfig) -> Vec<(String, String, Laterality)> {
    assign_patients(config)
        .into_iter()
        .flat_map(|p| {
            let pid = p.id;
            p.eyes.into_iter().map(move |lat| (pid.clone(), lat))
        })
        .enumerate()
        .map(|(i, (pid, lat))| (format!("eye{i:05}"), pid, lat))
        .collect()
}

struct Trajectory {
    times: Vec<f64>,
    burdens: Vec<f64>,
    base: f64,
    growth: f64,
    risk: f64,
}

fn draw_trajectory(rng: &mut ChaCha8Rng, config: &GenConfig) -> Trajectory {
    let (lg_lo, lg_hi) = (config.growth_min.ln(), config.growth_max.ln());
    let mut times = vec![0.0];
    for _ in 1..config.visits_per_eye {
        let gap = if config.gap_max > config.gap_min {
            rng.random_range(config.gap_min..config.gap_max)
        } else {
            config.gap_min
        };
        times.push(times[times.len() - 1] + gap);
    }
    let base = if config.burden_max > config.burden_min {
        rng.random_range(config.burden_min..config.burden_max)
    } else {
        config.burden_min
    };
    let growth = if lg_hi > lg_lo {
        rng.random_range(lg_lo..lg_hi).exp()
    } else {
        config.growth_min
    };
    let burdens: Vec<f64> = times
        .iter()
        .map(|t| {
            let e: f64 = rng.sample(rand_distr::StandardNormal);
            ((base + growth * t) * (1.0 + config.burden_noise * e)).max(0.0)
        })
        .collect();
    let predict = times[times.len() - 1];
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    let risk = config
        .risk_weights
        .iter()
        .zip(times.iter().zip(&burdens))
        .map(|(w, (&t, &b))| w * b / (predict - t))
        .sum::<f64>()
        + config.risk_noise * z;
    Trajectory {
        times,
        burdens,
        base,
        growth,
        risk,
    }
}

/// The `(1 − progress_rate)` quantile of the latent risk, estimated from a
/// fixed calibration stream.
pub fn risk_threshold(config: &GenConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
    let mut risks: Vec<f64> = (0..CALIBRATION_DRAWS)
        .map(|_| draw_trajectory(&mut rng, config).risk)
        .collect();
    risks.sort_unstable_by(f64::total_cmp);
    let k = ((1.0 - config.progress_rate) * CALIBRATION_DRAWS as f64) as usize;
    risks[k.min(CALIBRATION_DRAWS - 1)]
}

struct Canvas {
    size: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn to_raw(&self, mirror: bool) -> RawImage {
        let s = self.size;
        let mut pixels = Vec::with_capacity(s * s * 3);
        for r in 0..s {
            for c in 0..s {
                let src = if mirror { s - 1 - c } else { c };
                let i = (r * s + src) * 3;
                pixels.extend(
                    self.data[i..i + 3]
                        .iter()
                        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
                );
            }
        }
        RawImage::new(s, s, pixels).expect("canvas size")
    }
}

struct Anatomy {
    illumination: f64,
    /// Lesion centres (row, col) and relative sizes in left-eye render coordinates.
    sites: Vec<(f64, f64, f64)>,
}

fn draw_anatomy(rng: &mut ChaCha8Rng, config: &GenConfig) -> Anatomy {
    let s = config.image_size as f64;
    let (cx, radius) = (s / 2.0, FUNDUS_RADIUS * s);
    let k = rng.random_range(config.blobs_min..=config.blobs_max);
    let mut raw: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| {
            let rho = MACULA_RADIUS * radius * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            (
                cx + rho * phi.sin(),
                cx + 0.15 * radius + rho * phi.cos(),
                rng.random_range(0.5..1.5),
            )
        })
        .collect();
    let total: f64 = raw.iter().map(|b| b.2).sum();
    for b in &mut raw {
        b.2 /= total;
    }
    Anatomy {
        illumination: rng.random_range(0.95..1.05),
        sites: raw,
    }
}

fn render(
    rng: &mut ChaCha8Rng,
    config: &GenConfig,
    anatomy: &Anatomy,
    burden: f64,
    mirror: bool,
) -> (RawImage, VisitLog) {
    let size = config.image_size;
    let s = size as f64;
    let c0 = (s - 1.0) / 2.0;
    let radius = FUNDUS_RADIUS * s;
    let (disc_r, disc_c, disc_rad) = (c0, c0 - 0.55 * radius, 0.16 * radius);
    let blobs: Vec<Blob> = anatomy
        .sites
        .iter()
        .map(|&(row, col, w)| Blob {
            row,
            col,
            sigma: (config.lesion_spread * burden.max(0.0) * w).sqrt() * radius,
        })
        .collect();
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("positive sd");
    let mut canvas = Canvas {
        size,
        data: Vec::with_capacity(size * size * 3),
    };
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64, c as f64);
            let d = ((y - c0).powi(2) + (x - c0).powi(2)).sqrt();
            if d > radius {
                canvas.data.extend_from_slice(&BACKGROUND);
                continue;
            }
            let vignette = anatomy.illumination * (1.0 - 0.25 * (d / radius).powi(2));
            let mut px = FUNDUS.map(|v| v * vignette);
            let dd = ((y - disc_r).powi(2) + (x - disc_c).powi(2)).sqrt();
            let disc_alpha = (1.0 - (dd - disc_rad).max(0.0) / 1.5).clamp(0.0, 1.0);
            let lesion_alpha = blobs
                .iter()
                .filter(|b| b.sigma > 0.0)
                .map(|b| (-((y - b.row).powi(2) + (x - b.col).powi(2)) / (2.0 * b.sigma * b.sigma)).exp())
                .fold(0.0, f64::max);
            for ch in 0..3 {
                px[ch] += (OPTIC_DISC[ch] - px[ch]) * disc_alpha;
                px[ch] += (DRUSEN[ch] * anatomy.illumination - px[ch]) * lesion_alpha;
                px[ch] += noise.sample(rng);
            }
            canvas.data.extend_from_slice(&px);
        }
    }
    let saved: Vec<Blob> = blobs
        .into_iter()
        .map(|b| Blob {
            col: if mirror { s - 1.0 - b.col } else { b.col },
            ..b
        })
        .collect();
    let mut log = VisitLog {
        burden,
        area: 0,
        blobs: saved,
    };
    log.area = log.mask(size).iter().filter(|&&m| m).count();
    (canvas.to_raw(mirror), log)
}

fn round_years(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

/// Generate eye `index` of the dataset; depends only on the configuration and `index`.
fn generate_eye(config: &GenConfig, threshold: f64, index: usize, slot: &(String, String, Laterality)) -> GeneratedEye {
    let mut rng = eye_stream(config.seed, index as u64);
    let (id, patient_id, eye) = slot;
    let label = rng.random_bool(config.progress_rate);
    let mirror = *eye == Laterality::Right;
    let n_obs = config.visits_per_eye - 1;
    // Resample until the course agrees with the label and, for progressors,
    // the lesion area has grown between the first and last observed visits.
    let (traj, images, logs) = loop {
        let traj = draw_trajectory(&mut rng, config);
        if (traj.risk > threshold) != label {
            continue;
        }
        let anatomy = draw_anatomy(&mut rng, config);
        let (images, logs): (Vec<RawImage>, Vec<VisitLog>) = traj
            .burdens
            .iter()
            .map(|&burden| render(&mut rng, config, &anatomy, burden, mirror))
            .unzip();
        if !label || n_obs < 2 || logs[n_obs - 1].area > logs[0].area {
            break (traj, images, logs);
        }
    };
    let image_name = |v: usize| format!("images/{id}_v{v}.ppm");
    let visits = traj.times[..n_obs]
        .iter()
        .enumerate()
        .map(|(v, &t)| Visit {
            image: image_name(v),
            time: round_years(t),
            stage: Stage::Early,
            features: None,
        })
        .collect();
    let stage = if label { Stage::Advanced } else { Stage::Early };
    GeneratedEye {
        record: VisitSequence {
            id: id.clone(),
            patient_id: patient_id.clone(),
            eye: *eye,
            visits,
            prediction_time: round_years(traj.times[n_obs]),
            prediction_stage: stage,
            label: u8::from(label),
            prediction_image: Some(image_name(n_obs)),
        },
        images,
        log: EyeLog {
            id: id.clone(),
            base_burden: traj.base,
            growth: traj.growth,
            risk: traj.risk,
            visits: logs,
        },
    }
}

/// Generate every eye in memory.
pub fn generate_eyes(config: &GenConfig, mode: Execution) -> Result<Vec<GeneratedEye>> {
    config.validate()?;
    let slots = eye_slots(config);
    let threshold = risk_threshold(config);
    Ok(exec::map_indexed(slots.len(), mode, |i| {
        generate_eye(config, threshold, i, &slots[i])
    }))
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const BLOB_LOG_FILE: &str = "blobs.jsonl";
pub const GENERATOR_FILE: &str = "generator.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub eyes: usize,
    pub patients: usize,
    pub progressors: usize,
    pub images: usize,
    pub manifest: PathBuf,
}

/// Write `manifest.jsonl`, `blobs.jsonl`, `generator.json` and `images/*.ppm` under `out`.
pub fn generate_dataset(config: &GenConfig, out: &Path, mode: Execution) -> Result<DatasetSummary> {
    let eyes = generate_eyes(config, mode)?;
    let image_dir = out.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut images = 0;
    for eye in &eyes {
        let rec = &eye.record;
        let paths = rec.visits.iter().map(|v| &v.image).chain(rec.prediction_image.as_ref());
        for (path, img) in paths.zip(&eye.images) {
            img.write_ppm(&out.join(path))?;
            images += 1;
        }
    }
    let records: Vec<VisitSequence> = eyes.iter().map(|e| e.record.clone()).collect();
    let manifest = out.join(MANIFEST_FILE);
    write_manifest(&manifest, &records)?;

    let log_path = out.join(BLOB_LOG_FILE);
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut w = BufWriter::new(file);
    for eye in &eyes {
        serde_json::to_writer(&mut w, &eye.log).map_err(|e| Error::Json {
            path: log_path.clone(),
            source: e,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&log_path, e))?;

    let gen_path = out.join(GENERATOR_FILE);
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    std::fs::write(&gen_path, text + "\n").map_err(|e| Error::io(&gen_path, e))?;

    let patients: HashSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    Ok(DatasetSummary {
        eyes: records.len(),
        patients: patients.len(),
        progressors: records.iter().filter(|r| r.label == 1).count(),
        images,
        manifest,
    })
}

pub fn read_blob_log(path: &Path) -> Result<BTreeMap<String, EyeLog>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let log: EyeLog = serde_json::from_str(l).map_err(|e| Error::Json {
                path: path.into(),
                source: e,
            })?;
            Ok((log.id.clone(), log))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?}; expected train, val or test"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(["train", "val", "test"][self.index()])
    }
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

/// Partition by patient: patients are shuffled under `seed` and dealt in order
/// until each split reaches its cumulative eye quota, so both eyes of a
/// patient always share a split.
pub fn split_dataset(records: &[VisitSequence], fractions: [f64; 3], seed: u64) -> Result<[Vec<VisitSequence>; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_patient.entry(&r.patient_id).or_default().push(i);
    }
    let mut patients: Vec<Vec<usize>> = by_patient.into_values().collect();
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = records.len() as f64;
    let quota = [
        (fractions[0] * n).round() as usize,
        ((fractions[0] + fractions[1]) * n).round() as usize,
        records.len(),
    ];
    let mut out: [Vec<usize>; 3] = Default::default();
    let mut assigned = 0;
    for eyes in patients {
        let k = quota.iter().position(|&q| assigned < q).unwrap_or(2);
        assigned += eyes.len();
        out[k].extend(eyes);
    }
    if let Some(k) = out.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} leave the {:?} split empty",
            Split::ALL[k]
        )));
    }
    Ok(out.map(|mut idx| {
        idx.sort_unstable();
        idx.into_iter().map(|i| records[i].clone()).collect()
    }))
}
