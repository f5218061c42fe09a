//! Calibration and accuracy metrics.
//!
//! Calibration follows the per-image protocol: the score for one image is the
//! mean absolute gap between nominal and observed coverage over ten equally
//! spaced confidence levels, and the reported number is the average over
//! images. Regression intervals are central equal-tailed under a Gaussian
//! summary of the predictive (mean, total variance); classification bins
//! pixels by predicted confidence, with the gap weighted by bin mass.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{FvError, Result};
use crate::likelihood::PredictiveMoments;

/// Ten nominal levels against observed coverage (regression) or per-bin
/// accuracy (classification).
#[derive(Clone, Debug)]
pub struct CalibrationCurve {
    pub levels: Vec<f64>,
    pub observed: Vec<f64>,
}

/// Per-image regression group: per-pixel predictive moments and truths.
pub type RegressionGroup<'a> = (&'a [PredictiveMoments], &'a [f64]);

/// Regression calibration. For each level q the observed fraction of truths
/// inside the central q interval of N(mean, total_var) is recorded; the score
/// is the average over images of the mean absolute gap.
pub fn regression_calibration(groups: &[RegressionGroup<'_>]) -> Result<(CalibrationCurve, f64)> {
    if groups.is_empty() {
        return Err(FvError::EmptyInput("no calibration groups".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let levels: Vec<f64> = (1..=10).map(|j| j as f64 / 10.0).collect();
    let z: Vec<f64> = levels
        .iter()
        .map(|q| {
            if *q >= 1.0 {
                f64::INFINITY
            } else {
                normal.inverse_cdf(0.5 * (1.0 + q))
            }
        })
        .collect();
    let mut observed_sum = vec![0.0f64; levels.len()];
    let mut score_sum = 0.0;
    for (preds, truths) in groups {
        if preds.len() != truths.len() || preds.is_empty() {
            return Err(FvError::ShapeMismatch(
                "group predictions and truths must align and be nonempty".into(),
            ));
        }
        if preds.iter().any(|m| m.total_var < 0.0) {
            return Err(FvError::Domain("negative predictive variance".into()));
        }
        let mut gaps = 0.0;
        for (j, q) in levels.iter().enumerate() {
            let mut inside = 0usize;
            for (m, y) in preds.iter().zip(*truths) {
                let sd = m.total_var.sqrt();
                let resid = (y - m.mean).abs();
                // degenerate zero-variance predictions cover only exact hits
                let hit = if sd == 0.0 { resid == 0.0 } else { resid <= z[j] * sd };
                if hit {
                    inside += 1;
                }
            }
            let obs = inside as f64 / preds.len() as f64;
            observed_sum[j] += obs;
            gaps += (obs - q).abs();
        }
        score_sum += gaps / levels.len() as f64;
    }
    let n = groups.len() as f64;
    let curve = CalibrationCurve {
        levels,
        observed: observed_sum.into_iter().map(|v| v / n).collect(),
    };
    Ok((curve, score_sum / n))
}

/// Per-image classification group: per-pixel class probabilities and labels
/// (`None` = ignored pixel).
pub type ClassificationGroup<'a> = (&'a [Vec<f64>], &'a [Option<usize>]);

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Classification calibration: pixels are binned by predicted max-probability
/// into ten bins; per image the score is the bin-mass-weighted mean absolute
/// gap between accuracy and mean confidence. Empty bins carry zero weight.
pub fn classification_calibration(
    groups: &[ClassificationGroup<'_>],
) -> Result<(CalibrationCurve, f64)> {
    if groups.is_empty() {
        return Err(FvError::EmptyInput("no calibration groups".into()));
    }
    let nbins = 10usize;
    let mut score_sum = 0.0;
    let mut pooled_correct = vec![0.0f64; nbins];
    let mut pooled_conf = vec![0.0f64; nbins];
    let mut pooled_count = vec![0usize; nbins];
    for (probs, labels) in groups {
        if probs.len() != labels.len() {
            return Err(FvError::ShapeMismatch("probabilities and labels must align".into()));
        }
        let mut count = vec![0usize; nbins];
        let mut conf = vec![0.0f64; nbins];
        let mut correct = vec![0usize; nbins];
        let mut total = 0usize;
        for (p, lab) in probs.iter().zip(*labels) {
            let Some(y) = lab else { continue };
            let pred = argmax(p);
            let c = p[pred];
            let bin = ((c * nbins as f64).floor() as usize).min(nbins - 1);
            count[bin] += 1;
            conf[bin] += c;
            if pred == *y {
                correct[bin] += 1;
            }
            pooled_count[bin] += 1;
            pooled_conf[bin] += c;
            if pred == *y {
                pooled_correct[bin] += 1.0;
            }
            total += 1;
        }
        if total == 0 {
            return Err(FvError::EmptyInput("group has no labelled pixels".into()));
        }
        let mut s = 0.0;
        for b in 0..nbins {
            if count[b] == 0 {
                continue;
            }
            let acc = correct[b] as f64 / count[b] as f64;
            let cf = conf[b] / count[b] as f64;
            s += (count[b] as f64 / total as f64) * (acc - cf).abs();
        }
        score_sum += s;
    }
    let levels: Vec<f64> = (0..nbins).map(|b| (b as f64 + 0.5) / nbins as f64).collect();
    let observed: Vec<f64> = (0..nbins)
        .map(|b| {
            if pooled_count[b] == 0 {
                f64::NAN
            } else {
                pooled_correct[b] / pooled_count[b] as f64
            }
        })
        .collect();
    let _ = pooled_conf;
    Ok((
        CalibrationCurve { levels, observed },
        score_sum / groups.len() as f64,
    ))
}

/// Standard depth-regression error summary.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionErrors {
    /// mean |ŷ−y| / y over pixels with y > 0
    pub rel: f64,
    /// mean |log₁₀ŷ − log₁₀y| over pixels with ŷ, y > 0
    pub log10: f64,
    /// sqrt(mean (ŷ−y)²) over all pixels
    pub rms: f64,
}

pub fn regression_errors(preds: &[f64], truths: &[f64]) -> RegressionErrors {
    let mut rel = (0.0, 0usize);
    let mut l10 = (0.0, 0usize);
    let mut sq = 0.0;
    for (p, y) in preds.iter().zip(truths) {
        sq += (p - y) * (p - y);
        if *y > 0.0 {
            rel = (rel.0 + (p - y).abs() / y, rel.1 + 1);
            if *p > 0.0 {
                l10 = (l10.0 + (p.log10() - y.log10()).abs(), l10.1 + 1);
            }
        }
    }
    let avg = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
    RegressionErrors {
        rel: avg(rel),
        log10: avg(l10),
        rms: (sq / preds.len().max(1) as f64).sqrt(),
    }
}

/// Mean intersection-over-union and pixel accuracy, skipping ignored pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SegScores {
    pub mean_iou: f64,
    pub accuracy: f64,
}

pub fn seg_scores(pred: &[usize], truth: &[Option<usize>], n_classes: usize) -> SegScores {
    let mut inter = vec![0usize; n_classes];
    let mut union = vec![0usize; n_classes];
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        let Some(t) = t else { continue };
        total += 1;
        if p == t {
            correct += 1;
            inter[*t] += 1;
            union[*t] += 1;
        } else {
            union[*t] += 1;
            if *p < n_classes {
                union[*p] += 1;
            }
        }
    }
    let mut iou_sum = 0.0;
    let mut iou_n = 0usize;
    for c in 0..n_classes {
        if union[c] > 0 {
            iou_sum += inter[c] as f64 / union[c] as f64;
            iou_n += 1;
        }
    }
    SegScores {
        mean_iou: if iou_n == 0 { f64::NAN } else { iou_sum / iou_n as f64 },
        accuracy: if total == 0 { f64::NAN } else { correct as f64 / total as f64 },
    }
}

/// Writes a calibration curve as `level,observed` CSV.
pub fn curve_to_csv(curve: &CalibrationCurve) -> String {
    let mut out = String::from("level,observed\n");
    for (l, o) in curve.levels.iter().zip(&curve.observed) {
        if o.is_nan() {
            continue;
        }
        out.push_str(&format!("{l},{o}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn moments(mean: f64, var: f64) -> PredictiveMoments {
        PredictiveMoments {
            mean,
            epistemic_var: var,
            aleatoric_var: 0.0,
            total_var: var,
        }
    }

    #[test]
    fn calibrated_predictions_score_near_zero() {
        // truths drawn exactly from the predictive Gaussians
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000usize;
        let mut preds = Vec::with_capacity(n);
        let mut truths = Vec::with_capacity(n);
        for i in 0..n {
            let mean = (i as f64 * 0.01).sin();
            let sd = 0.3 + 0.2 * ((i % 7) as f64 / 7.0);
            let z: f64 = StandardNormal.sample(&mut rng);
            preds.push(moments(mean, sd * sd));
            truths.push(mean + sd * z);
        }
        let (curve, score) = regression_calibration(&[(&preds, &truths)]).unwrap();
        assert!(score <= 0.02, "score {score}");
        for (l, o) in curve.levels.iter().zip(&curve.observed) {
            assert!((l - o).abs() < 0.02);
        }
    }

    #[test]
    fn zero_variance_wrong_predictions_score_55() {
        let preds: Vec<PredictiveMoments> = (0..50).map(|_| moments(0.0, 0.0)).collect();
        let truths: Vec<f64> = (0..50).map(|i| 1.0 + i as f64).collect();
        let (_, score) = regression_calibration(&[(&preds, &truths)]).unwrap();
        assert!((score - 0.55).abs() < 1e-12, "score {score}");
    }

    #[test]
    fn diagonal_curve_for_analytic_case() {
        // exact coverage by construction: residuals placed at interval edges
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        let n = 1000usize;
        for i in 0..n {
            // u spread uniformly in (0,1); residual = Phi^{-1}((1+u)/2)
            let u = (i as f64 + 0.5) / n as f64;
            preds.push(moments(0.0, 1.0));
            truths.push(normal.inverse_cdf(0.5 * (1.0 + u)));
        }
        let (curve, score) = regression_calibration(&[(&preds, &truths)]).unwrap();
        for (l, o) in curve.levels.iter().zip(&curve.observed) {
            assert!((l - o).abs() <= 1.5 / n as f64 * 10.0, "level {l} observed {o}");
        }
        assert!(score < 0.005);
    }

    #[test]
    fn one_hot_correct_classification_scores_zero() {
        let probs: Vec<Vec<f64>> = (0..30).map(|i| {
            let mut p = vec![0.0; 3];
            p[i % 3] = 1.0;
            p
        }).collect();
        let labels: Vec<Option<usize>> = (0..30).map(|i| Some(i % 3)).collect();
        let (_, score) = classification_calibration(&[(&probs, &labels)]).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn uniform_probabilities_with_uniform_labels_balance() {
        let probs: Vec<Vec<f64>> = (0..30).map(|_| vec![1.0 / 3.0; 3]).collect();
        // argmax ties resolve to class 0; make exactly one third correct
        let labels: Vec<Option<usize>> = (0..30).map(|i| Some(i % 3)).collect();
        let (_, score) = classification_calibration(&[(&probs, &labels)]).unwrap();
        assert!(score < 1e-12, "score {score}");
    }

    #[test]
    fn miscalibrated_sharpener_matches_recount() {
        // overconfident predictor: probs sharpened beyond accuracy
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 600usize;
        let mut probs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let right = (i * 7 % 10) < 6; // 60% accuracy
            let conf = 0.95;
            let mut p = vec![(1.0 - conf) / 2.0; 3];
            let true_class = i % 3;
            let pred_class = if right { true_class } else { (true_class + 1) % 3 };
            p[pred_class] = conf;
            probs.push(p);
            labels.push(Some(true_class));
        }
        let _ = &mut rng;
        let (_, score) = classification_calibration(&[(&probs, &labels)]).unwrap();
        // brute force: every pixel lands in the 0.9 bin with conf 0.95
        let acc = 0.6;
        let expect = (acc - 0.95f64).abs();
        assert!((score - expect).abs() < 1e-9, "score {score} expect {expect}");
    }

    #[test]
    fn regression_error_examples() {
        let y = vec![1.0, 2.0, 4.0];
        let e = regression_errors(&y, &y);
        assert_eq!(e.rel, 0.0);
        assert_eq!(e.log10, 0.0);
        assert_eq!(e.rms, 0.0);
        let double: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let e = regression_errors(&double, &y);
        assert!((e.rel - 1.0).abs() < 1e-12);
        assert!((e.log10 - 2.0f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn regression_errors_match_direct_recount() {
        let preds = vec![1.2, 0.8, 2.6, 3.1, 0.4];
        let truths = vec![1.0, 1.0, 2.0, 4.0, 0.5];
        let e = regression_errors(&preds, &truths);
        let rel: f64 = preds
            .iter()
            .zip(&truths)
            .map(|(p, y)| (p - y).abs() / y)
            .sum::<f64>()
            / 5.0;
        let rms = (preds
            .iter()
            .zip(&truths)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / 5.0)
            .sqrt();
        assert!((e.rel - rel).abs() < 1e-12);
        assert!((e.rms - rms).abs() < 1e-12);
    }

    #[test]
    fn seg_scores_perfect_and_disjoint() {
        let truth: Vec<Option<usize>> = vec![Some(0), Some(1), Some(2), None, Some(1)];
        let perfect = vec![0, 1, 2, 0, 1];
        let s = seg_scores(&perfect, &truth, 3);
        assert_eq!(s.mean_iou, 1.0);
        assert_eq!(s.accuracy, 1.0);
        // class 2 predicted nowhere it should be
        let wrong2 = vec![0, 1, 0, 0, 1];
        let s = seg_scores(&wrong2, &truth, 3);
        assert!(s.mean_iou < 1.0);
        assert!((s.accuracy - 0.75).abs() < 1e-12);
    }

    #[test]
    fn seg_scores_match_bruteforce_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        use rand::Rng;
        let n = 64usize;
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let truth: Vec<Option<usize>> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < 0.1 {
                    None
                } else {
                    Some(rng.random_range(0..3))
                }
            })
            .collect();
        let s = seg_scores(&pred, &truth, 3);
        // brute force per class
        let mut ious = Vec::new();
        for c in 0..3 {
            let mut inter = 0;
            let mut uni = 0;
            for (p, t) in pred.iter().zip(&truth) {
                let Some(t) = t else { continue };
                let inp = *p == c;
                let int = *t == c;
                if inp && int {
                    inter += 1;
                }
                if inp || int {
                    uni += 1;
                }
            }
            if uni > 0 {
                ious.push(inter as f64 / uni as f64);
            }
        }
        let expect = ious.iter().sum::<f64>() / ious.len() as f64;
        assert!((s.mean_iou - expect).abs() < 1e-12);
    }
}
