//! Scoring recognition logs against overlap annotations: TP/FP/FN/TN counts, precision,
//! recall and accuracy, and aggregation over repeated runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::Annotations;
use crate::io::FormatError;
use crate::protocol::{RecognitionLog, ReplyMessage, ReplyStatus};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("query frame {0} has no annotation")]
    UnannotatedQuery(u32),
    #[error("query frame {query} matched frame {matched}, which is outside the partner's sequence")]
    MatchedOutOfRange { query: u32, matched: u32 },
    #[error("no runs to aggregate")]
    NoRuns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    FalseNegative,
    TrueNegative,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl OutcomeCounts {
    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::TruePositive => self.tp += 1,
            Outcome::FalsePositive => self.fp += 1,
            Outcome::FalseNegative => self.fn_ += 1,
            Outcome::TrueNegative => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for OutcomeCounts {
    type Output = OutcomeCounts;

    fn add(self, o: OutcomeCounts) -> OutcomeCounts {
        OutcomeCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Fractions in [0, 1]; ratios with an empty denominator are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

/// Annotation table seen from one camera's queries.
#[derive(Debug, Clone, Default)]
pub struct QueryTruth {
    valid: HashMap<(u32, u32), bool>,
    has_valid: BTreeMap<u32, bool>,
    partner_frames: BTreeSet<u32>,
}

impl QueryTruth {
    /// For queries from the camera in the table's `frame_a` column.
    pub fn for_camera_a(ann: &Annotations) -> Self {
        QueryTruth {
            valid: ann.lookup(),
            has_valid: ann.valid_a.clone(),
            partner_frames: ann.valid_b.keys().copied().collect(),
        }
    }

    /// For queries from the camera in the table's `frame_b` column.
    pub fn for_camera_b(ann: &Annotations) -> Self {
        QueryTruth {
            valid: ann.pairs.iter().map(|p| ((p.frame_b, p.frame_a), p.valid)).collect(),
            has_valid: ann.valid_b.clone(),
            partner_frames: ann.valid_a.keys().copied().collect(),
        }
    }
}

/// Outcome of one query, or `None` for replies that are not query outcomes.
pub fn classify_outcome(
    query_frame: u32,
    reply: &ReplyMessage,
    truth: &QueryTruth,
) -> Result<Option<Outcome>, EvalError> {
    let has_valid = *truth
        .has_valid
        .get(&query_frame)
        .ok_or(EvalError::UnannotatedQuery(query_frame))?;
    Ok(match reply.status {
        ReplyStatus::Initialising => None,
        ReplyStatus::Match => {
            let matched = reply.matched_frame.expect("MATCH carries a frame");
            if !truth.partner_frames.contains(&matched) {
                return Err(EvalError::MatchedOutOfRange {
                    query: query_frame,
                    matched,
                });
            }
            if truth.valid.get(&(query_frame, matched)).copied().unwrap_or(false) {
                Some(Outcome::TruePositive)
            } else {
                Some(Outcome::FalsePositive)
            }
        }
        ReplyStatus::NoMatch if has_valid => Some(Outcome::FalseNegative),
        ReplyStatus::NoMatch => Some(Outcome::TrueNegative),
    })
}

/// Counts over every shared query in a log.
pub fn classify_log(log: &RecognitionLog, truth: &QueryTruth) -> Result<OutcomeCounts, EvalError> {
    let mut counts = OutcomeCounts::default();
    for e in log.query_events() {
        if let Some(o) = classify_outcome(e.frame_index, &e.reply, truth)? {
            counts.add(o);
        }
    }
    Ok(counts)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics over the summed counts of both cameras.
pub fn compute_metrics(cam1: &OutcomeCounts, cam2: &OutcomeCounts) -> PairMetrics {
    let c = *cam1 + *cam2;
    PairMetrics {
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        accuracy: ratio(c.tp + c.tn, c.total()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Componentwise lower median.
    pub median: PairMetrics,
    pub mean: PairMetrics,
    /// Sample standard deviation (0 for a single run).
    pub std: PairMetrics,
}

fn lower_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    // shifted by the first value so identical inputs give exactly that value and zero spread
    let mean = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate_repetitions(runs: &[PairMetrics]) -> Result<Aggregate, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let column = |f: fn(&PairMetrics) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
    let cols = [
        column(|m| m.precision),
        column(|m| m.recall),
        column(|m| m.accuracy),
    ];
    let build = |g: &dyn Fn(&Vec<f64>) -> f64| PairMetrics {
        precision: g(&cols[0]),
        recall: g(&cols[1]),
        accuracy: g(&cols[2]),
    };
    Ok(Aggregate {
        median: build(&|c| lower_median(c.clone())),
        mean: build(&|c| mean_std(c).0),
        std: build(&|c| mean_std(c).1),
    })
}

/// Scored outcome of one run of a sequence pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub run: usize,
    pub queries_cam1: u64,
    pub queries_cam2: u64,
    pub cam1: OutcomeCounts,
    pub cam2: OutcomeCounts,
    pub metrics: PairMetrics,
}

pub fn score_run(
    run: usize,
    log_cam1: &RecognitionLog,
    log_cam2: &RecognitionLog,
    ann: &Annotations,
) -> Result<RunScore, EvalError> {
    let cam1 = classify_log(log_cam1, &QueryTruth::for_camera_a(ann))?;
    let cam2 = classify_log(log_cam2, &QueryTruth::for_camera_b(ann))?;
    Ok(RunScore {
        run,
        queries_cam1: cam1.total(),
        queries_cam2: cam2.total(),
        cam1,
        cam2,
        metrics: compute_metrics(&cam1, &cam2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair: String,
    pub runs: Vec<RunScore>,
    pub summary: Aggregate,
}

impl PairReport {
    pub fn new(pair: impl Into<String>, runs: Vec<RunScore>) -> Result<Self, EvalError> {
        let metrics: Vec<PairMetrics> = runs.iter().map(|r| r.metrics).collect();
        Ok(PairReport {
            pair: pair.into(),
            summary: aggregate_repetitions(&metrics)?,
            runs,
        })
    }

    /// One row per run followed by `median`, `mean` and `std` rows; metrics in percent.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), FormatError> {
        let mut out = csv::Writer::from_writer(w);
        let err = crate::io::csv_error;
        out.write_record([
            "pair",
            "run",
            "n_queries_cam1",
            "n_queries_cam2",
            "tp",
            "fp",
            "fn",
            "tn",
            "precision",
            "recall",
            "accuracy",
        ])
        .map_err(err)?;
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        for r in &self.runs {
            let c = r.cam1 + r.cam2;
            out.write_record([
                self.pair.clone(),
                r.run.to_string(),
                r.queries_cam1.to_string(),
                r.queries_cam2.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                pct(r.metrics.precision),
                pct(r.metrics.recall),
                pct(r.metrics.accuracy),
            ])
            .map_err(err)?;
        }
        let first = self.runs.first();
        for (label, m) in [
            ("median", self.summary.median),
            ("mean", self.summary.mean),
            ("std", self.summary.std),
        ] {
            out.write_record([
                self.pair.clone(),
                label.to_string(),
                first.map(|r| r.queries_cam1.to_string()).unwrap_or_default(),
                first.map(|r| r.queries_cam2.to_string()).unwrap_or_default(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                pct(m.precision),
                pct(m.recall),
                pct(m.accuracy),
            ])
            .map_err(err)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::OverlapAnnotation;
    use proptest::prelude::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> OutcomeCounts {
        OutcomeCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn worked_example() {
        let m = compute_metrics(&counts(3, 1, 2, 4), &counts(1, 1, 2, 6));
        assert_eq!(m.precision, 4.0 / 6.0);
        assert_eq!(m.recall, 4.0 / 8.0);
        assert_eq!(m.accuracy, 14.0 / 20.0);
    }

    #[test]
    fn degenerate_counts() {
        let m = compute_metrics(&counts(0, 0, 0, 10), &OutcomeCounts::default());
        assert_eq!((m.precision, m.recall, m.accuracy), (0.0, 0.0, 1.0));
        let m = compute_metrics(&counts(5, 0, 0, 0), &OutcomeCounts::default());
        assert_eq!((m.precision, m.recall, m.accuracy), (1.0, 1.0, 1.0));
        let m = compute_metrics(&OutcomeCounts::default(), &OutcomeCounts::default());
        assert_eq!((m.precision, m.recall, m.accuracy), (0.0, 0.0, 0.0));
    }

    fn pair(a: u32, b: u32, valid: bool) -> OverlapAnnotation {
        OverlapAnnotation {
            frame_a: a,
            frame_b: b,
            frusta_intersect: valid,
            angular_distance: 0.0,
            euclidean_distance: 0.0,
            overlap_ratio: if valid { 1.0 } else { 0.0 },
            valid,
        }
    }

    fn table() -> Annotations {
        // query 0 has a valid partner at 1 but not at 0; query 1 has none
        Annotations::from_pairs(vec![pair(0, 0, false), pair(0, 1, true), pair(1, 0, false), pair(1, 1, false)])
    }

    #[test]
    fn classification() {
        let t = QueryTruth::for_camera_a(&table());
        let c = |q, r: ReplyMessage| classify_outcome(q, &r, &t).unwrap();
        assert_eq!(c(0, ReplyMessage::matched(1, 20)), Some(Outcome::TruePositive));
        assert_eq!(c(0, ReplyMessage::matched(0, 20)), Some(Outcome::FalsePositive));
        assert_eq!(c(0, ReplyMessage::no_match()), Some(Outcome::FalseNegative));
        assert_eq!(c(1, ReplyMessage::no_match()), Some(Outcome::TrueNegative));
        assert_eq!(c(1, ReplyMessage::initialising()), None);
        assert_eq!(
            classify_outcome(0, &ReplyMessage::matched(9, 20), &t),
            Err(EvalError::MatchedOutOfRange { query: 0, matched: 9 })
        );
        assert_eq!(
            classify_outcome(5, &ReplyMessage::no_match(), &t),
            Err(EvalError::UnannotatedQuery(5))
        );
        // from camera b's side, b-frame 1 pairs with a-frame 0
        let tb = QueryTruth::for_camera_b(&table());
        assert_eq!(
            classify_outcome(1, &ReplyMessage::matched(0, 20), &tb).unwrap(),
            Some(Outcome::TruePositive)
        );
        assert_eq!(
            classify_outcome(0, &ReplyMessage::no_match(), &tb).unwrap(),
            Some(Outcome::TrueNegative)
        );
    }

    #[test]
    fn aggregation() {
        let m = |a: f64| PairMetrics {
            precision: a,
            recall: a,
            accuracy: a,
        };
        assert_eq!(aggregate_repetitions(&[]), Err(EvalError::NoRuns));
        let same = aggregate_repetitions(&[m(0.4); 5]).unwrap();
        assert_eq!(same.median, m(0.4));
        assert_eq!(same.std, m(0.0));
        let three = aggregate_repetitions(&[m(0.1), m(0.3), m(0.2)]).unwrap();
        assert_eq!(three.median.accuracy, 0.2);
        let mut runs: Vec<PairMetrics> = (0..14).map(|i| m(i as f64 / 100.0)).collect();
        runs.extend([m(0.9); 16]);
        assert_eq!(aggregate_repetitions(&runs).unwrap().median, m(0.9));
        let even = aggregate_repetitions(&[m(0.1), m(0.2), m(0.3), m(0.4)]).unwrap();
        assert_eq!(even.median.recall, 0.2);
    }

    #[test]
    fn report_csv_layout() {
        let runs = vec![RunScore {
            run: 0,
            queries_cam1: 10,
            queries_cam2: 10,
            cam1: counts(3, 1, 2, 4),
            cam2: counts(1, 1, 2, 6),
            metrics: compute_metrics(&counts(3, 1, 2, 4), &counts(1, 1, 2, 6)),
        }];
        let report = PairReport::new("synthetic", runs).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "pair,run,n_queries_cam1,n_queries_cam2,tp,fp,fn,tn,precision,recall,accuracy"
        );
        assert_eq!(lines[1], "synthetic,0,10,10,4,2,4,10,66.67,50.00,70.00");
        assert!(lines[2].starts_with("synthetic,median,"));
        assert_eq!(lines.len(), 5);
    }

    proptest! {
        #[test]
        fn metrics_commute_and_stay_in_range(a in any::<[u16; 4]>(), b in any::<[u16; 4]>()) {
            let ca = counts(a[0] as u64, a[1] as u64, a[2] as u64, a[3] as u64);
            let cb = counts(b[0] as u64, b[1] as u64, b[2] as u64, b[3] as u64);
            let m = compute_metrics(&ca, &cb);
            prop_assert_eq!(m, compute_metrics(&cb, &ca));
            for x in [m.precision, m.recall, m.accuracy] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn every_query_gets_exactly_one_outcome(valid in proptest::collection::vec(any::<bool>(), 9), q in 0u32..3, m in 0u32..3, matched in any::<bool>()) {
            let pairs = (0..9).map(|i| pair(i / 3, i % 3, valid[i as usize])).collect();
            let ann = Annotations::from_pairs(pairs);
            let t = QueryTruth::for_camera_a(&ann);
            let reply = if matched { ReplyMessage::matched(m, 20) } else { ReplyMessage::no_match() };
            let o = classify_outcome(q, &reply, &t).unwrap().unwrap();
            let mut c = OutcomeCounts::default();
            c.add(o);
            prop_assert_eq!(c.total(), 1);
            let expected = match (matched, valid[(q * 3 + m) as usize], (0..3).any(|j| valid[(q * 3 + j) as usize])) {
                (true, true, _) => Outcome::TruePositive,
                (true, false, _) => Outcome::FalsePositive,
                (false, _, true) => Outcome::FalseNegative,
                (false, _, false) => Outcome::TrueNegative,
            };
            prop_assert_eq!(o, expected);
        }
    }
}
