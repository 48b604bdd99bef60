//! A deliberately naive AP/AR evaluator used as a test oracle. It shares no
//! code with `metrics_oks` beyond the input types: OKS is recomputed from the
//! formula, matching is done per threshold from scratch, and interpolated
//! precision is the brute-force maximum over all later operating points.

use crate::heatmap_codec::JointSet;
use crate::metrics_oks::{Detection, GroundTruth};

#[allow(clippy::needless_range_loop)]
fn naive_oks(pred: &JointSet, gt: &JointSet, area: f64, k: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for i in 0..gt.joints.len() {
        let g = &gt.joints[i];
        if !g.visibility.is_labeled() {
            continue;
        }
        let p = &pred.joints[i];
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        total += (-d2 / (2.0 * area * k[i] * k[i])).exp();
        count += 1.0;
    }
    if count == 0.0 {
        0.0
    } else {
        total / count
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NaiveSummary {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar: f64,
}

/// Precision and recall at one threshold, all areas.
fn at_threshold(gts: &[GroundTruth], dets: &[Detection], k: &[f64], t: f64, max_dets: usize) -> (f64, f64) {
    let mut image_ids: Vec<u64> = gts.iter().map(|g| g.image_id).chain(dets.iter().map(|d| d.image_id)).collect();
    image_ids.sort();
    image_ids.dedup();

    let positives = gts.iter().filter(|g| g.joints.labeled_count() > 0).count();
    if positives == 0 {
        return (-1.0, -1.0);
    }
    // (score, is_true_positive) over every kept detection, in image order
    let mut outcomes: Vec<(f64, bool)> = Vec::new();
    for id in image_ids {
        let mut mine: Vec<&Detection> = dets.iter().filter(|d| d.image_id == id).collect();
        mine.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        mine.truncate(max_dets);
        let theirs: Vec<&GroundTruth> = gts
            .iter()
            .filter(|g| g.image_id == id && g.joints.labeled_count() > 0)
            .collect();
        let mut used = vec![false; theirs.len()];
        for d in mine {
            let mut pick = None;
            let mut best = t.min(1.0 - 1e-10);
            for (gi, g) in theirs.iter().enumerate() {
                if used[gi] {
                    continue;
                }
                let o = naive_oks(&d.joints, &g.joints, g.area, k);
                if o >= best {
                    best = o;
                    pick = Some(gi);
                }
            }
            if let Some(gi) = pick {
                used[gi] = true;
            }
            outcomes.push((d.score, pick.is_some()));
        }
    }
    // insertion sort: stable, descending score
    for i in 1..outcomes.len() {
        let mut j = i;
        while j > 0 && outcomes[j - 1].0 < outcomes[j].0 {
            outcomes.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (n, (_, hit)) in outcomes.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (n + 1) as f64));
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(rc, _)| *rc >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += best;
    }
    let recall = points.last().map(|p| p.0).unwrap_or(0.0);
    (sum / 101.0, recall)
}

/// AP over thresholds 0.50:0.05:0.95, AP50, AP75 and AR with per-joint
/// constants `k` and at most `max_dets` detections per image.
pub fn naive_summary(gts: &[GroundTruth], dets: &[Detection], k: &[f64], max_dets: usize) -> NaiveSummary {
    let thresholds: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    let results: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|t| at_threshold(gts, dets, k, *t, max_dets))
        .collect();
    let mean = |f: fn(&(f64, f64)) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    NaiveSummary {
        ap: mean(|r| r.0),
        ap50: results[0].0,
        ap75: results[5].0,
        ar: mean(|r| r.1),
    }
}
