//! PascalVOC-style average precision with all-point interpolation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A scored prediction on some image.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored<P> {
    pub image: u64,
    pub class_id: u32,
    pub score: f64,
    pub item: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<G> {
    pub image: u64,
    pub class_id: u32,
    pub item: G,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub class_id: u32,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub n_gt: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iou_threshold: f64,
    pub classes: Vec<ClassRecord>,
    /// Mean AP over classes with ground truth; `None` without any.
    pub map: Option<f64>,
    /// Micro precision over all predictions; `None` without predictions.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Area under the monotone precision envelope, all points.
pub fn average_precision(recall: &[f64], precision: &[f64]) -> f64 {
    let mut mrec = Vec::with_capacity(recall.len() + 2);
    mrec.push(0.0);
    mrec.extend_from_slice(recall);
    mrec.push(1.0);
    let mut mpre = Vec::with_capacity(precision.len() + 2);
    mpre.push(0.0);
    mpre.extend_from_slice(precision);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (1..mrec.len()).filter(|&i| mrec[i] != mrec[i - 1]).map(|i| (mrec[i] - mrec[i - 1]) * mpre[i]).sum()
}

/// Greedy matching in descending confidence (ties keep input order); each
/// prediction takes its highest-IoU ground truth of the same image and class
/// and is a true positive when that IoU reaches `threshold` and the ground
/// truth is still free.
pub fn compute_map<P, G>(
    predictions: &[Scored<P>],
    ground_truths: &[GroundTruth<G>],
    iou: impl Fn(&P, &G) -> f64,
    threshold: f64,
) -> EvalRecord {
    let mut gt_index: BTreeMap<(u32, u64), Vec<usize>> = BTreeMap::new();
    let mut n_gt: BTreeMap<u32, usize> = BTreeMap::new();
    for (k, g) in ground_truths.iter().enumerate() {
        gt_index.entry((g.class_id, g.image)).or_default().push(k);
        *n_gt.entry(g.class_id).or_default() += 1;
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].score.total_cmp(&predictions[a].score));

    let mut taken = vec![false; ground_truths.len()];
    let mut per_class: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
    for &k in &order {
        let p = &predictions[k];
        let mut best: Option<(f64, usize)> = None;
        for &g in gt_index.get(&(p.class_id, p.image)).into_iter().flatten() {
            let v = iou(&p.item, &ground_truths[g].item);
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, g));
            }
        }
        let hit = match best {
            Some((v, g)) if v >= threshold && !taken[g] => {
                taken[g] = true;
                true
            }
            _ => false,
        };
        per_class.entry(p.class_id).or_default().push(hit);
    }

    let mut classes: Vec<u32> = n_gt.keys().chain(per_class.keys()).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let mut records = Vec::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    for c in classes {
        let hits = per_class.get(&c).map(Vec::as_slice).unwrap_or(&[]);
        let total = n_gt.get(&c).copied().unwrap_or(0);
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut rec = Vec::with_capacity(hits.len());
        let mut prec = Vec::with_capacity(hits.len());
        for &h in hits {
            if h {
                tp += 1;
            } else {
                fp += 1;
            }
            rec.push(if total > 0 { tp as f64 / total as f64 } else { 0.0 });
            prec.push(tp as f64 / (tp + fp) as f64);
        }
        let ap = (total > 0).then(|| average_precision(&rec, &prec));
        tp_all += tp;
        fp_all += fp;
        fn_all += total - tp;
        records.push(ClassRecord { class_id: c, ap, n_gt: total, tp, fp, fn_: total - tp });
    }
    let aps: Vec<f64> = records.iter().filter_map(|r| r.ap).collect();
    let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
    let n_gt_all = ground_truths.len();
    EvalRecord {
        iou_threshold: threshold,
        classes: records,
        map,
        precision: (tp_all + fp_all > 0).then(|| tp_all as f64 / (tp_all + fp_all) as f64),
        recall: (n_gt_all > 0).then(|| tp_all as f64 / n_gt_all as f64),
        tp: tp_all,
        fp: fp_all,
        fn_: fn_all,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// `None` when no prediction passes the threshold.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub map: Option<f64>,
    pub tp: usize,
    pub fp: usize,
}

/// Re-evaluates with only predictions whose confidence is at least each
/// threshold.
pub fn pr_sweep<P: Clone, G>(
    predictions: &[Scored<P>],
    ground_truths: &[GroundTruth<G>],
    thresholds: &[f64],
    iou: impl Fn(&P, &G) -> f64 + Copy,
    iou_threshold: f64,
) -> Vec<SweepRow> {
    thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<Scored<P>> = predictions.iter().filter(|p| p.score >= t).cloned().collect();
            let r = compute_map(&kept, ground_truths, iou, iou_threshold);
            SweepRow { threshold: t, precision: r.precision, recall: r.recall, map: r.map, tp: r.tp, fp: r.fp }
        })
        .collect()
}
