//! Frame-level AUC and event-level detection counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::io::EventRow;
use crate::error::{Result, StanError};

fn check_labeled(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(StanError::Input(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(StanError::Input("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(StanError::NonFinite("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Area under the ROC curve as the rank statistic
/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`, with tied scores sharing their mean rank.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_labeled(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(StanError::Input("AUC needs both normal and abnormal frames".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum stays integral, so ties are resolved exactly.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mean_rank = (i + 1 + j + 1) as u64;
        let tied_pos = order[i..=j].iter().filter(|&&o| labels[o] == 1).count() as u64;
        twice_rank_sum += tied_pos * twice_mean_rank;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Threshold maximizing `TPR − FPR` over the observed scores.
pub fn optimal_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_labeled(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(StanError::Input("threshold search needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut best, mut best_j) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let j = tp as f64 / pos as f64 - fp as f64 / neg as f64;
        if j > best_j {
            best_j = j;
            best = s;
        }
    }
    Ok(best)
}

/// Inclusive frame interval.
pub type Interval = (usize, usize);

/// Maximal runs with `score >= threshold`; runs whose gap is shorter than
/// `merge_gap` frames are joined.
pub fn detect_events(scores: &[f64], threshold: f64, merge_gap: usize) -> Vec<Interval> {
    let mut runs: Vec<Interval> = Vec::new();
    let mut start = None;
    for (t, &s) in scores.iter().enumerate() {
        match (s >= threshold, start) {
            (true, None) => start = Some(t),
            (false, Some(b)) => {
                runs.push((b, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(b) = start {
        runs.push((b, scores.len() - 1));
    }
    let mut merged: Vec<Interval> = Vec::with_capacity(runs.len());
    for r in runs {
        match merged.last_mut() {
            Some(last) if r.0 - last.1 - 1 < merge_gap => last.1 = r.1,
            _ => merged.push(r),
        }
    }
    merged
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventResult {
    pub correct_detections: usize,
    pub false_alarms: usize,
    /// Ground-truth events credited by some detection.
    pub events_detected: usize,
    pub events_total: usize,
}

impl EventResult {
    /// `correct / (correct + false_alarms)`, undefined without detections.
    pub fn precision(&self) -> Option<f64> {
        let d = self.correct_detections + self.false_alarms;
        (d > 0).then(|| self.correct_detections as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.events_total > 0).then(|| self.events_detected as f64 / self.events_total as f64)
    }

    pub fn merge(&mut self, other: &EventResult) {
        self.correct_detections += other.correct_detections;
        self.false_alarms += other.false_alarms;
        self.events_detected += other.events_detected;
        self.events_total += other.events_total;
    }
}

fn overlaps(a: Interval, b: Interval) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// Detections are taken in order. One overlapping a not-yet-credited event
/// is correct and credits it; one overlapping no event is a false alarm; one
/// overlapping only already-credited events counts as neither.
pub fn event_metrics(detected: &[Interval], ground_truth: &[Interval]) -> EventResult {
    let mut credited = vec![false; ground_truth.len()];
    let mut r = EventResult {
        events_total: ground_truth.len(),
        ..EventResult::default()
    };
    for &det in detected {
        let hits: Vec<usize> = (0..ground_truth.len())
            .filter(|&i| overlaps(det, ground_truth[i]))
            .collect();
        if hits.is_empty() {
            r.false_alarms += 1;
        } else if let Some(&i) = hits.iter().find(|&&i| !credited[i]) {
            credited[i] = true;
            r.correct_detections += 1;
        }
    }
    r.events_detected = credited.iter().filter(|&&c| c).count();
    r
}

/// Per-clip scores and labels keyed by clip id.
#[derive(Clone, Debug, Default)]
pub struct LabeledClips {
    pub clips: BTreeMap<String, (Vec<f64>, Vec<u8>)>,
}

impl LabeledClips {
    pub fn insert(&mut self, id: impl Into<String>, scores: Vec<f64>, labels: Vec<u8>) -> Result<()> {
        let id = id.into();
        check_labeled(&scores, &labels).map_err(|e| StanError::Input(format!("clip {id}: {e}")))?;
        self.clips.insert(id, (scores, labels));
        Ok(())
    }

    /// All frames concatenated in clip-id order.
    pub fn pooled(&self) -> (Vec<f64>, Vec<u8>) {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for (sc, lb) in self.clips.values() {
            s.extend_from_slice(sc);
            l.extend_from_slice(lb);
        }
        (s, l)
    }

    pub fn auc(&self) -> Result<f64> {
        let (s, l) = self.pooled();
        roc_auc(&s, &l)
    }

    /// AUC of each clip; `None` for clips with a single class.
    pub fn per_clip_auc(&self) -> BTreeMap<String, Option<f64>> {
        self.clips
            .iter()
            .map(|(id, (s, l))| (id.clone(), roc_auc(s, l).ok()))
            .collect()
    }

    pub fn events(&self, ground_truth: &[EventRow], threshold: f64, merge_gap: usize) -> EventResult {
        let mut total = EventResult::default();
        for (id, (scores, _)) in &self.clips {
            let gt: Vec<Interval> = ground_truth
                .iter()
                .filter(|e| &e.clip_id == id)
                .map(|e| (e.start, e.end))
                .collect();
            total.merge(&event_metrics(&detect_events(scores, threshold, merge_gap), &gt));
        }
        total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub threshold: f64,
    pub merge_gap: usize,
    pub correct_detections: usize,
    pub false_alarms: usize,
    /// Empty when nothing was detected.
    pub precision: Option<f64>,
    pub events_detected: usize,
    pub events_total: usize,
}

impl EventReport {
    pub fn new(r: EventResult, threshold: f64, merge_gap: usize) -> Self {
        EventReport {
            threshold,
            merge_gap,
            correct_detections: r.correct_detections,
            false_alarms: r.false_alarms,
            precision: r.precision(),
            events_detected: r.events_detected,
            events_total: r.events_total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub per_clip_auc: BTreeMap<String, Option<f64>>,
    pub frames: usize,
    pub abnormal_frames: usize,
    pub events: Option<EventReport>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_oracle(s: &[f64], l: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] == 1 && l[j] == 0 {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        let (s, l) = ([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]);
        assert_eq!(roc_auc(&s, &l).unwrap(), 0.75);
        assert_eq!(pair_oracle(&s, &l), 0.75);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc_auc(&[0.1], &[0, 1]).is_err());
    }

    #[test]
    fn event_detection_examples() {
        assert!(detect_events(&[0.1, 0.2], 0.5, 10).is_empty());
        let mut s = vec![0.0; 60];
        s[10..=50].iter_mut().for_each(|v| *v = 0.9);
        assert_eq!(detect_events(&s, 0.5, 10), vec![(10, 50)]);
        let mut s = vec![0.0; 30];
        s[5..=8].iter_mut().for_each(|v| *v = 1.0);
        s[12..=15].iter_mut().for_each(|v| *v = 1.0);
        assert_eq!(detect_events(&s, 0.5, 10), vec![(5, 15)]);
        assert_eq!(detect_events(&s, 0.5, 3), vec![(5, 8), (12, 15)]);
        assert_eq!(detect_events(&s, 0.5, 4), vec![(5, 15)]);
    }

    #[test]
    fn event_metric_examples() {
        let gt: Vec<Interval> = (0..12).map(|i| (i * 100, i * 100 + 20)).collect();
        let det: Vec<Interval> = (0..12).map(|i| (i * 100 + 5, i * 100 + 30)).collect();
        let r = event_metrics(&det, &gt);
        assert_eq!((r.correct_detections, r.false_alarms), (12, 0));
        assert_eq!(r.precision(), Some(1.0));

        let r = event_metrics(&[], &gt);
        assert_eq!((r.correct_detections, r.false_alarms, r.precision()), (0, 0, None));

        let r = event_metrics(&[(0, 5), (50, 60)], &[(3, 10)]);
        assert_eq!((r.correct_detections, r.false_alarms), (1, 1));
        assert_eq!(r.precision(), Some(0.5));
        assert_eq!(r.recall(), Some(1.0));
    }

    #[test]
    fn one_credit_per_event() {
        let r = event_metrics(&[(0, 2), (4, 6)], &[(0, 10)]);
        assert_eq!((r.correct_detections, r.false_alarms, r.events_detected), (1, 0, 1));
    }

    #[test]
    fn youden_threshold_separates_clean_data() {
        let t = optimal_threshold(&[0.1, 0.2, 0.7, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(t, 0.7);
    }
}
