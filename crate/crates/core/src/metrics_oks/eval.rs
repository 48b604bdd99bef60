//! COCO-style keypoint AP/AR: per-image greedy matching at each OKS
//! threshold, 101-point interpolated precision, area buckets.

use serde::{Deserialize, Serialize};

use super::oks::{oks, OksParams};
use crate::error::Result;
use crate::heatmap_codec::JointSet;

/// Detections kept per image, highest scores first.
pub const MAX_DETECTIONS: usize = 20;
pub const RECALL_POINTS: usize = 101;
pub const MEDIUM_AREA: (f64, f64) = (32.0 * 32.0, 96.0 * 96.0);
pub const LARGE_AREA: (f64, f64) = (96.0 * 96.0, 1e10);
const ALL_AREA: (f64, f64) = (0.0, 1e10);

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub joints: JointSet,
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub joints: JointSet,
    pub score: f64,
}

impl Detection {
    /// Area of the tight box around the labeled joints.
    pub fn area(&self) -> f64 {
        self.joints
            .labeled_bounds()
            .map(|(x0, y0, x1, y1)| (x1 - x0) * (y1 - y0))
            .unwrap_or(0.0)
    }
}

/// Matching inputs of one image: detections (score-sorted, truncated) against
/// ground truths, with the OKS of every pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: u64,
    pub gt_areas: Vec<f64>,
    /// Ground truths with no labeled joints are never matchable.
    pub gt_matchable: Vec<bool>,
    pub det_scores: Vec<f64>,
    pub det_areas: Vec<f64>,
    /// `oks[d][g]`, in [0, 1].
    pub oks: Vec<Vec<f64>>,
}

/// Builds one record per image that has ground truth or detections, ordered
/// by image id.
pub fn evaluate(gts: &[GroundTruth], dets: &[Detection], params: &OksParams) -> Result<Vec<EvalRecord>> {
    params.validate()?;
    let mut ids: Vec<u64> = gts.iter().map(|g| g.image_id).chain(dets.iter().map(|d| d.image_id)).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut records = Vec::with_capacity(ids.len());
    for id in ids {
        let g: Vec<&GroundTruth> = gts.iter().filter(|g| g.image_id == id).collect();
        let mut d: Vec<&Detection> = dets.iter().filter(|d| d.image_id == id).collect();
        d.sort_by(|a, b| b.score.total_cmp(&a.score));
        d.truncate(MAX_DETECTIONS);
        let matchable: Vec<bool> = g.iter().map(|g| g.joints.labeled_count() > 0).collect();
        let mut table = Vec::with_capacity(d.len());
        for det in &d {
            let mut row = Vec::with_capacity(g.len());
            for (gt, ok) in g.iter().zip(&matchable) {
                row.push(if *ok { oks(&det.joints, &gt.joints, gt.area, params)? } else { 0.0 });
            }
            table.push(row);
        }
        records.push(EvalRecord {
            image_id: id,
            gt_areas: g.iter().map(|g| g.area).collect(),
            gt_matchable: matchable,
            det_scores: d.iter().map(|d| d.score).collect(),
            det_areas: d.iter().map(|d| d.area()).collect(),
            oks: table,
        });
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SummaryKind {
    Ap,
    Ap50,
    Ap75,
    ApMedium,
    ApLarge,
    Ar,
}

impl SummaryKind {
    pub const ALL: [SummaryKind; 6] = [
        SummaryKind::Ap,
        SummaryKind::Ap50,
        SummaryKind::Ap75,
        SummaryKind::ApMedium,
        SummaryKind::ApLarge,
        SummaryKind::Ar,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SummaryKind::Ap => "AP",
            SummaryKind::Ap50 => "AP50",
            SummaryKind::Ap75 => "AP75",
            SummaryKind::ApMedium => "APM",
            SummaryKind::ApLarge => "APL",
            SummaryKind::Ar => "AR",
        }
    }
}

/// Per-threshold precision (101-point mean) and final recall for one area
/// range; `None` where the range holds no matchable ground truth.
struct Accumulated {
    precision: Vec<Option<f64>>,
    recall: Vec<Option<f64>>,
}

struct Matched {
    score: f64,
    true_positive: bool,
}

fn match_image(rec: &EvalRecord, threshold: f64, range: (f64, f64)) -> (Vec<Matched>, usize) {
    let in_range = |a: f64| a >= range.0 && a <= range.1;
    let ignored: Vec<bool> = rec
        .gt_areas
        .iter()
        .zip(&rec.gt_matchable)
        .map(|(a, m)| !m || !in_range(*a))
        .collect();
    // non-ignored ground truths first, stable
    let mut order: Vec<usize> = (0..ignored.len()).collect();
    order.sort_by_key(|g| ignored[*g]);
    let relevant = ignored.iter().filter(|i| !**i).count();
    let mut gt_taken = vec![false; ignored.len()];
    let mut out = Vec::with_capacity(rec.det_scores.len());
    for d in 0..rec.det_scores.len() {
        let mut best = threshold.min(1.0 - 1e-10);
        let mut m: Option<usize> = None;
        for &g in &order {
            if gt_taken[g] {
                continue;
            }
            if let Some(prev) = m {
                if !ignored[prev] && ignored[g] {
                    break;
                }
            }
            if rec.oks[d][g] < best {
                continue;
            }
            best = rec.oks[d][g];
            m = Some(g);
        }
        let det_ignored = match m {
            Some(g) => {
                gt_taken[g] = true;
                ignored[g]
            }
            None => !in_range(rec.det_areas[d]),
        };
        if !det_ignored {
            out.push(Matched {
                score: rec.det_scores[d],
                true_positive: m.is_some(),
            });
        }
    }
    (out, relevant)
}

fn accumulate(records: &[EvalRecord], params: &OksParams, range: (f64, f64)) -> Accumulated {
    let mut precision = Vec::with_capacity(params.thresholds.len());
    let mut recall = Vec::with_capacity(params.thresholds.len());
    for &t in &params.thresholds {
        let mut all = Vec::new();
        let mut relevant = 0;
        for rec in records {
            let (m, r) = match_image(rec, t, range);
            all.extend(m);
            relevant += r;
        }
        if relevant == 0 {
            precision.push(None);
            recall.push(None);
            continue;
        }
        // stable: equal scores keep image order
        all.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut rc = Vec::with_capacity(all.len());
        let mut pr = Vec::with_capacity(all.len());
        for m in &all {
            if m.true_positive {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            rc.push(tp / relevant as f64);
            pr.push(tp / (tp + fp + f64::EPSILON));
        }
        for i in (1..pr.len()).rev() {
            if pr[i] > pr[i - 1] {
                pr[i - 1] = pr[i];
            }
        }
        let mut q = 0.0;
        for i in 0..RECALL_POINTS {
            let r = i as f64 / (RECALL_POINTS - 1) as f64;
            let idx = rc.partition_point(|x| *x < r);
            if idx < pr.len() {
                q += pr[idx];
            }
        }
        precision.push(Some(q / RECALL_POINTS as f64));
        recall.push(Some(rc.last().copied().unwrap_or(0.0)));
    }
    Accumulated { precision, recall }
}

fn mean_defined(values: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        -1.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// One summary metric. Returns −1 when no ground truth falls in the relevant
/// bucket.
pub fn summarize(records: &[EvalRecord], kind: SummaryKind, params: &OksParams) -> f64 {
    let at = |t: f64| params.thresholds.iter().position(|x| (x - t).abs() < 1e-9);
    match kind {
        SummaryKind::Ap => mean_defined(&accumulate(records, params, ALL_AREA).precision),
        SummaryKind::Ap50 | SummaryKind::Ap75 => {
            let t = if kind == SummaryKind::Ap50 { 0.5 } else { 0.75 };
            match at(t) {
                Some(i) => accumulate(records, params, ALL_AREA).precision[i].unwrap_or(-1.0),
                None => -1.0,
            }
        }
        SummaryKind::ApMedium => mean_defined(&accumulate(records, params, MEDIUM_AREA).precision),
        SummaryKind::ApLarge => mean_defined(&accumulate(records, params, LARGE_AREA).precision),
        SummaryKind::Ar => mean_defined(&accumulate(records, params, ALL_AREA).recall),
    }
}

/// AP at a single threshold over all areas (−1 without ground truth).
pub fn ap_at(records: &[EvalRecord], threshold: f64, params: &OksParams) -> f64 {
    let single = OksParams {
        k: params.k.clone(),
        thresholds: vec![threshold],
    };
    accumulate(records, &single, ALL_AREA).precision[0].unwrap_or(-1.0)
}
