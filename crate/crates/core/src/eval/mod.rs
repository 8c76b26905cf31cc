//! ROC analysis: curve, Mann-Whitney AUC, Youden operating point, De Long
//! variance, confidence interval and paired test, and eye-level bootstrap
//! intervals for sensitivity and specificity.
//!
//! Positivity is strict everywhere an operating point is applied
//! (`score > threshold`), matching [`crate::model::predict`]. ROC points are
//! indexed by the distinct scores themselves with the inclusive rule
//! (`score ≥ threshold`), so every distinct score yields one vertex.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// Default number of bootstrap replicates.
pub const DEFAULT_BOOTSTRAP: usize = 2000;
/// Fewer replicates than this make percentile intervals meaningless.
pub const MIN_BOOTSTRAP: usize = 100;
pub const CI_LEVEL: f64 = 0.95;
/// Below this the variance of a paired AUC difference is treated as zero.
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEye {
    pub id: String,
    pub score: f64,
    pub label: u8,
}

/// Per-eye scores with binary labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ScoredEye>", into = "Vec<ScoredEye>")]
pub struct ScoreSet {
    eyes: Vec<ScoredEye>,
    positives: usize,
}

impl TryFrom<Vec<ScoredEye>> for ScoreSet {
    type Error = Error;

    fn try_from(eyes: Vec<ScoredEye>) -> Result<Self> {
        ScoreSet::new(eyes)
    }
}

impl From<ScoreSet> for Vec<ScoredEye> {
    fn from(s: ScoreSet) -> Self {
        s.eyes
    }
}

impl ScoreSet {
    pub fn new(eyes: Vec<ScoredEye>) -> Result<Self> {
        for e in &eyes {
            if !(0.0..=1.0).contains(&e.score) {
                return Err(Error::Input(format!("eye {}: score {} outside [0, 1]", e.id, e.score)));
            }
            if e.label > 1 {
                return Err(Error::Input(format!("eye {}: label {} is not 0 or 1", e.id, e.label)));
            }
        }
        let positives = eyes.iter().filter(|e| e.label == 1).count();
        Ok(ScoreSet { eyes, positives })
    }

    /// Anonymous eyes `0, 1, …` from parallel score and label slices.
    pub fn from_slices(scores: &[f64], labels: &[u8]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Input(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        Self::new(
            scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&score, &label))| ScoredEye {
                    id: i.to_string(),
                    score,
                    label,
                })
                .collect(),
        )
    }

    pub fn eyes(&self) -> &[ScoredEye] {
        &self.eyes
    }

    pub fn len(&self) -> usize {
        self.eyes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eyes.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.positives
    }

    pub fn negatives(&self) -> usize {
        self.eyes.len() - self.positives
    }

    pub fn scores(&self) -> Vec<f64> {
        self.eyes.iter().map(|e| e.score).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.eyes.iter().map(|e| e.label).collect()
    }

    fn class_scores(&self, label: u8) -> Vec<f64> {
        self.eyes.iter().filter(|e| e.label == label).map(|e| e.score).collect()
    }

    /// Domain error unless both classes have at least `min` members.
    fn require(&self, min: usize, what: &str) -> Result<()> {
        let (m, n) = (self.positives(), self.negatives());
        if m < min || n < min {
            return Err(Error::Domain(format!(
                "{what} needs at least {min} positive and {min} negative eyes, got {m} and {n}"
            )));
        }
        Ok(())
    }
}

/// `f64` that serializes infinities as the strings `"inf"` / `"-inf"`, since
/// JSON has no representation for them.
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number, \"inf\" or \"-inf\", got {other:?}"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Distinct scores in descending order with the positive and negative counts
/// at each score.
fn score_groups(scores: &ScoreSet) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<(f64, u8)> = scores.eyes.iter().map(|e| (e.score, e.label)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (s, y) in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if y == 1 {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, usize::from(y == 1), usize::from(y == 0))),
        }
    }
    groups
}

/// ROC vertices: `(0, 0)` at threshold `+∞`, then one point per distinct
/// score in descending order (`score ≥ threshold` is positive), ending at
/// `(1, 1)`.
pub fn roc_curve(scores: &ScoreSet) -> Result<Vec<RocPoint>> {
    scores.require(1, "roc_curve")?;
    let (m, n) = (scores.positives() as f64, scores.negatives() as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0, 0);
    for (s, pos, neg) in score_groups(scores) {
        tp += pos;
        fp += neg;
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / n,
            tpr: tp as f64 / m,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a monotone ROC polyline.
pub fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Pair counts are accumulated exactly in
/// integers.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    scores.require(1, "auc")?;
    // walk scores ascending; `below` counts negatives strictly lower
    let mut twice_correct: u128 = 0;
    let mut below: u128 = 0;
    for (_, pos, neg) in score_groups(scores).into_iter().rev() {
        twice_correct += 2 * pos as u128 * below + pos as u128 * neg as u128;
        below += neg as u128;
    }
    let pairs = scores.positives() as u128 * scores.negatives() as u128;
    Ok(twice_correct as f64 / (2 * pairs) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl OperatingPoint {
    pub fn youden_index(&self) -> f64 {
        self.sensitivity + self.specificity - 1.0
    }
}

/// Candidate operating thresholds: `−∞`, the midpoints between adjacent
/// distinct scores, and `+∞`.
pub fn candidate_thresholds(scores: &ScoreSet) -> Vec<f64> {
    let mut distinct: Vec<f64> = score_groups(scores).into_iter().map(|g| g.0).collect();
    distinct.reverse();
    let mut out = vec![f64::NEG_INFINITY];
    out.extend(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(f64::INFINITY);
    out
}

/// Threshold maximizing `J = sensitivity + specificity − 1`. Ties go to the
/// higher sensitivity, then to the lower threshold.
pub fn youden(scores: &ScoreSet) -> Result<OperatingPoint> {
    scores.require(1, "youden")?;
    let (m, n) = (scores.positives(), scores.negatives());
    // J·m·n = tp·n + tn·m − m·n compares exactly in integers
    let mut best: Option<(usize, usize, f64, Confusion)> = None;
    for t in candidate_thresholds(scores) {
        let c = confusion(scores, t);
        let key = c.tp * n + c.tn * m;
        let better = match &best {
            None => true,
            Some((k, tp, _, _)) => key > *k || (key == *k && c.tp > *tp),
        };
        if better {
            best = Some((key, c.tp, t, c));
        }
    }
    let (_, _, threshold, c) = best.expect("at least two candidates");
    Ok(OperatingPoint {
        threshold,
        sensitivity: c.sensitivity(),
        specificity: c.specificity(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// `tp / (tp + fn)`; NaN without positives.
    pub fn sensitivity(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// `tn / (tn + fp)`; NaN without negatives.
    pub fn specificity(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }
}

/// Counts under the strict rule `score > threshold`.
pub fn confusion(scores: &ScoreSet, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for e in &scores.eyes {
        match (e.score > threshold, e.label == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Structural components `V10(xᵢ) = mean_j ψ(xᵢ, y_j)` over positives and
/// `V01(y_j) = mean_i ψ(xᵢ, y_j)` over negatives.
pub fn structural_components(scores: &ScoreSet) -> Result<(Vec<f64>, Vec<f64>)> {
    scores.require(1, "structural components")?;
    let pos = scores.class_scores(1);
    let neg = scores.class_scores(0);
    let mut pos_sorted = pos.clone();
    let mut neg_sorted = neg.clone();
    pos_sorted.sort_by(f64::total_cmp);
    neg_sorted.sort_by(f64::total_cmp);
    // mean ψ against a sorted sample: (count below + ½ count equal) / len
    let mean_psi = |x: f64, sorted: &[f64]| {
        let below = sorted.partition_point(|&v| v < x);
        let upto = sorted.partition_point(|&v| v <= x);
        (below as f64 + (upto - below) as f64 / 2.0) / sorted.len() as f64
    };
    let v10 = pos.iter().map(|&x| mean_psi(x, &neg_sorted)).collect();
    let v01 = neg.iter().map(|&y| 1.0 - mean_psi(y, &pos_sorted)).collect();
    Ok((v10, v01))
}

fn sample_covariance(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / k, b.iter().sum::<f64>() / k);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (k - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucEstimate {
    pub auc: f64,
    pub se: f64,
}

/// AUC with its De Long standard error, `var = S10/m + S01/n`.
pub fn delong_variance(scores: &ScoreSet) -> Result<AucEstimate> {
    scores.require(2, "delong_variance")?;
    let (v10, v01) = structural_components(scores)?;
    let var = sample_covariance(&v10, &v10) / v10.len() as f64 + sample_covariance(&v01, &v01) / v01.len() as f64;
    Ok(AucEstimate {
        auc: auc(scores)?,
        se: var.max(0.0).sqrt(),
    })
}

/// Two-sided standard-normal quantile for a central interval at `level`.
pub fn normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// Two-sided p-value of a standard-normal statistic.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `auc ± z·se`, clamped to [0, 1].
pub fn delong_ci(auc: f64, se: f64, level: f64) -> Result<Interval> {
    if !(se >= 0.0) || !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "delong_ci needs se ≥ 0 and level in (0, 1), got {se}, {level}"
        )));
    }
    let z = normal_quantile(level);
    Ok(Interval {
        lower: (auc - z * se).clamp(0.0, 1.0),
        upper: (auc + z * se).clamp(0.0, 1.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub auc_a: f64,
    pub auc_b: f64,
    /// `auc_a − auc_b`.
    pub delta: f64,
    pub se: f64,
    #[serde(with = "extended_f64")]
    pub z: f64,
    pub p_value: f64,
}

/// Align `b` to the eye order of `a`. Both sets must hold the same eye ids
/// with the same labels.
pub fn pair_by_id(a: &ScoreSet, b: &ScoreSet) -> Result<ScoreSet> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "paired comparison over {} and {} eyes",
            a.len(),
            b.len()
        )));
    }
    let index: HashMap<&str, &ScoredEye> = b.eyes.iter().map(|e| (e.id.as_str(), e)).collect();
    if index.len() != b.len() {
        return Err(Error::Input("duplicate eye ids in the second score set".into()));
    }
    let mut seen = std::collections::HashSet::new();
    let eyes = a
        .eyes
        .iter()
        .map(|e| {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Input(format!(
                    "duplicate eye id {} in the first score set",
                    e.id
                )));
            }
            let other = index
                .get(e.id.as_str())
                .ok_or_else(|| Error::Input(format!("eye {} is missing from the second score set", e.id)))?;
            if other.label != e.label {
                return Err(Error::Input(format!(
                    "eye {} is labelled differently in the two sets",
                    e.id
                )));
            }
            Ok((*other).clone())
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreSet::new(eyes)
}

/// Paired De Long test of `H₀: AUC_a = AUC_b` over the same eyes.
///
/// A zero-variance difference of exactly zero (a model against itself) is
/// reported as `z = 0, p = 1`.
pub fn delong_test(a: &ScoreSet, b: &ScoreSet) -> Result<PairedTest> {
    let b = pair_by_id(a, b)?;
    a.require(2, "delong_test")?;
    let (a10, a01) = structural_components(a)?;
    let (b10, b01) = structural_components(&b)?;
    let (m, n) = (a10.len() as f64, a01.len() as f64);
    let s10 = sample_covariance(&a10, &a10) + sample_covariance(&b10, &b10) - 2.0 * sample_covariance(&a10, &b10);
    let s01 = sample_covariance(&a01, &a01) + sample_covariance(&b01, &b01) - 2.0 * sample_covariance(&a01, &b01);
    let var = (s10 / m + s01 / n).max(0.0);
    let (auc_a, auc_b) = (auc(a)?, auc(&b)?);
    let delta = auc_a - auc_b;
    let (z, p_value) = if var < VARIANCE_FLOOR {
        if delta == 0.0 {
            (0.0, 1.0)
        } else {
            (delta.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let z = delta / var.sqrt();
        (z, two_sided_p(z))
    };
    Ok(PairedTest {
        auc_a,
        auc_b,
        delta,
        se: var.sqrt(),
        z,
        p_value,
    })
}

/// Percentile of sorted data with linear interpolation between order
/// statistics (`h = (len − 1)·q`).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub fpr: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub replicates: usize,
    pub seed: u64,
    /// Resamples discarded because they lacked a class.
    pub redrawn: usize,
    pub sensitivity: Interval,
    pub specificity: Interval,
}

/// Points of the FPR grid used for the ROC confidence band.
pub const BAND_GRID: usize = 51;

/// Replicate `r` of the eye-level bootstrap: `n` indices drawn with
/// replacement from stream `(seed, r)`, redrawn until both classes appear.
/// Returns the per-draw multiplicities and the number of redraws.
fn resample(labels: &[u8], seed: u64, r: usize, counts: &mut [u32]) -> usize {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    let mut redrawn = 0;
    loop {
        counts.fill(0);
        let mut positives = 0;
        for _ in 0..n {
            let i = rng.random_range(0..n);
            counts[i] += 1;
            positives += usize::from(labels[i] == 1);
        }
        if positives > 0 && positives < n {
            return redrawn;
        }
        redrawn += 1;
    }
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates < MIN_BOOTSTRAP {
        return Err(Error::Config(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {replicates}"
        )));
    }
    Ok(())
}

/// Percentile interval at [`CI_LEVEL`], widened if needed to contain `point`.
fn percentile_interval(mut values: Vec<f64>, point: f64) -> Interval {
    let alpha = (1.0 - CI_LEVEL) / 2.0;
    values.sort_by(f64::total_cmp);
    Interval {
        lower: percentile(&values, alpha).min(point),
        upper: percentile(&values, 1.0 - alpha).max(point),
    }
}

/// Resample eyes with replacement `replicates` times and report percentile
/// intervals for sensitivity and specificity at the fixed `threshold`.
///
/// Replicate `r` draws from its own stream `(seed, r)`; a resample without
/// both classes is redrawn from the same stream. Results are reduced in
/// replicate order, so the output does not depend on the execution mode.
/// Intervals are widened if needed to contain the full-sample estimate.
pub fn bootstrap_ci(
    scores: &ScoreSet,
    threshold: f64,
    replicates: usize,
    seed: u64,
    mode: Execution,
) -> Result<BootstrapCi> {
    scores.require(1, "bootstrap_ci")?;
    check_replicates(replicates)?;
    let labels = scores.labels();
    let called: Vec<bool> = scores.eyes.iter().map(|e| e.score > threshold).collect();
    let reps = exec::map_indexed(replicates, mode, |r| {
        let mut counts = vec![0u32; labels.len()];
        let redrawn = resample(&labels, seed, r, &mut counts);
        let mut c = Confusion::default();
        for ((&k, &y), &hit) in counts.iter().zip(&labels).zip(&called) {
            let k = k as usize;
            match (hit, y == 1) {
                (true, true) => c.tp += k,
                (true, false) => c.fp += k,
                (false, false) => c.tn += k,
                (false, true) => c.fn_ += k,
            }
        }
        (c.sensitivity(), c.specificity(), redrawn)
    });
    let full = confusion(scores, threshold);
    Ok(BootstrapCi {
        replicates,
        seed,
        redrawn: reps.iter().map(|r| r.2).sum(),
        sensitivity: percentile_interval(reps.iter().map(|r| r.0).collect(), full.sensitivity()),
        specificity: percentile_interval(reps.iter().map(|r| r.1).collect(), full.specificity()),
    })
}

/// TPR of the step ROC at each grid FPR: the best TPR reachable without
/// exceeding that FPR.
fn tpr_at(points: &[RocPoint], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&f| {
            points
                .iter()
                .filter(|p| p.fpr <= f + 1e-12)
                .map(|p| p.tpr)
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Pointwise percentile band of the ROC curve on a regular FPR grid, from the
/// same resamples as [`bootstrap_ci`] with equal `seed`.
pub fn roc_band(scores: &ScoreSet, replicates: usize, seed: u64, mode: Execution) -> Result<Vec<BandPoint>> {
    scores.require(1, "roc_band")?;
    check_replicates(replicates)?;
    let labels = scores.labels();
    let grid: Vec<f64> = (0..BAND_GRID).map(|i| i as f64 / (BAND_GRID - 1) as f64).collect();
    let reps = exec::map_indexed(replicates, mode, |r| {
        let mut counts = vec![0u32; labels.len()];
        resample(&labels, seed, r, &mut counts);
        let eyes = scores
            .eyes
            .iter()
            .zip(&counts)
            .flat_map(|(e, &k)| {
                std::iter::repeat_n(
                    ScoredEye {
                        id: String::new(),
                        score: e.score,
                        label: e.label,
                    },
                    k as usize,
                )
            })
            .collect();
        let sample = ScoreSet::new(eyes).expect("resampled from a valid set");
        tpr_at(&roc_curve(&sample).expect("both classes present"), &grid)
    });
    let full = tpr_at(&roc_curve(scores)?, &grid);
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &fpr)| {
            let iv = percentile_interval(reps.iter().map(|r| r[k]).collect(), full[k]);
            BandPoint {
                fpr,
                lower: iv.lower,
                upper: iv.upper,
            }
        })
        .collect())
}

pub const REPORT_SCHEMA: &str = "longiprog.eval/1";

/// Everything one evaluation produces, including the per-eye scores so that
/// reports can be compared without re-running the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub schema: String,
    pub n_eyes: usize,
    pub positives: usize,
    pub negatives: usize,
    pub auc: f64,
    pub auc_se: f64,
    pub auc_ci: Interval,
    pub ci_level: f64,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub sensitivity: f64,
    pub sensitivity_ci: Interval,
    pub specificity: f64,
    pub specificity_ci: Interval,
    pub confusion: Confusion,
    pub bootstrap: BootstrapSummary,
    pub roc: Vec<RocPoint>,
    pub roc_band: Vec<BandPoint>,
    pub scores: ScoreSet,
    /// Effective configuration and provenance of the run.
    pub context: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub seed: u64,
    pub redrawn: usize,
}

impl EvalReport {
    pub fn build(
        scores: ScoreSet,
        replicates: usize,
        seed: u64,
        mode: Execution,
        context: serde_json::Value,
    ) -> Result<Self> {
        let est = delong_variance(&scores)?;
        let op = youden(&scores)?;
        let boot = bootstrap_ci(&scores, op.threshold, replicates, seed, mode)?;
        let band = roc_band(&scores, replicates, seed, mode)?;
        Ok(EvalReport {
            schema: REPORT_SCHEMA.into(),
            n_eyes: scores.len(),
            positives: scores.positives(),
            negatives: scores.negatives(),
            auc: est.auc,
            auc_se: est.se,
            auc_ci: delong_ci(est.auc, est.se, CI_LEVEL)?,
            ci_level: CI_LEVEL,
            threshold: op.threshold,
            sensitivity: op.sensitivity,
            sensitivity_ci: boot.sensitivity,
            specificity: op.specificity,
            specificity_ci: boot.specificity,
            confusion: confusion(&scores, op.threshold),
            bootstrap: BootstrapSummary {
                replicates: boot.replicates,
                seed: boot.seed,
                redrawn: boot.redrawn,
            },
            roc: roc_curve(&scores)?,
            roc_band: band,
            scores,
            context,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("malformed evaluation report: {e}")))
    }
}
