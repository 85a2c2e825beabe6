//! F-measure scoring.
//!
//! Counts are summed over every frame of a sequence before precision, recall and F
//! are computed. A category scores the mean of its sequence F-measures and the
//! overall score is the mean of the category scores. Ignored pixels never count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::{LabelMap, Mask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Non-ignored pixels seen, including true negatives.
    pub scored: u64,
}

impl Counts {
    pub fn from_frame(mask: &Mask, labels: &LabelMap) -> Result<Counts> {
        if (mask.height(), mask.width()) != (labels.height(), labels.width()) {
            return Err(Error::shape(format!(
                "mask is {}x{} but labels are {}x{}",
                mask.height(),
                mask.width(),
                labels.height(),
                labels.width()
            )));
        }
        let mut c = Counts::default();
        for (&m, &l) in mask.values().iter().zip(labels.values()) {
            match (m != 0, l) {
                (_, -1) => continue,
                (true, 1) => c.tp += 1,
                (true, _) => c.fp += 1,
                (false, 1) => c.fn_ += 1,
                (false, _) => {}
            }
            c.scored += 1;
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.scored += other.scored;
    }

    pub fn precision(&self) -> Option<f64> {
        (self.tp + self.fp > 0).then(|| self.tp as f64 / (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.tp + self.fn_ > 0).then(|| self.tp as f64 / (self.tp + self.fn_) as f64)
    }

    /// `2TP / (2TP + FP + FN)`, which equals `2PR/(P+R)` wherever that is defined.
    /// A grouping with no foreground and no detections scores 1.
    pub fn f_measure(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Frame,
    Sequence,
    Category,
    Overall,
}

impl Grouping {
    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Frame => "frame",
            Grouping::Sequence => "sequence",
            Grouping::Category => "category",
            Grouping::Overall => "overall",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: Grouping,
    pub name: String,
    pub counts: Counts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_measure: f64,
}

impl EvalReport {
    fn from_counts(level: Grouping, name: impl Into<String>, counts: Counts) -> Self {
        EvalReport {
            level,
            name: name.into(),
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f_measure: counts.f_measure(),
        }
    }
}

/// Aggregates counts over aligned masks and labels and scores them once.
pub fn f_measure(masks: &[Mask], labels: &[LabelMap], level: Grouping) -> Result<EvalReport> {
    if masks.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} masks for {} label maps",
            masks.len(),
            labels.len()
        )));
    }
    let mut total = Counts::default();
    for (m, l) in masks.iter().zip(labels) {
        total.merge(Counts::from_frame(m, l)?);
    }
    if total.scored == 0 {
        return Err(Error::NoScorablePixels);
    }
    Ok(EvalReport::from_counts(level, level.as_str(), total))
}

/// Collects per-sequence results and produces sequence, category and overall reports.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    frames: Vec<EvalReport>,
    // (category, sequence) -> counts
    sequences: BTreeMap<(String, String), Counts>,
}

impl Evaluation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_frame(&mut self, category: &str, sequence: &str, frame: usize, mask: &Mask, labels: &LabelMap) -> Result<()> {
        let c = Counts::from_frame(mask, labels)?;
        self.frames.push(EvalReport::from_counts(
            Grouping::Frame,
            format!("{category}/{sequence}/{frame}"),
            c,
        ));
        self.sequences
            .entry((category.to_string(), sequence.to_string()))
            .or_default()
            .merge(c);
        Ok(())
    }

    pub fn frame_reports(&self) -> &[EvalReport] {
        &self.frames
    }

    /// Sequence reports, then one per category, then the overall report. Sequences
    /// with no scorable pixel are skipped; if nothing is scorable the result is an error.
    pub fn reports(&self) -> Result<Vec<EvalReport>> {
        let mut out = Vec::new();
        let mut by_category: BTreeMap<&str, Vec<(f64, Counts)>> = BTreeMap::new();
        for ((cat, seq), counts) in &self.sequences {
            if counts.scored == 0 {
                continue;
            }
            out.push(EvalReport::from_counts(Grouping::Sequence, format!("{cat}/{seq}"), *counts));
            by_category.entry(cat).or_default().push((counts.f_measure(), *counts));
        }
        if by_category.is_empty() {
            return Err(Error::NoScorablePixels);
        }
        let mut overall = Counts::default();
        let mut category_f = Vec::new();
        for (cat, seqs) in &by_category {
            let mut sum = Counts::default();
            for (_, c) in seqs {
                sum.merge(*c);
            }
            overall.merge(sum);
            let f = seqs.iter().map(|(f, _)| f).sum::<f64>() / seqs.len() as f64;
            category_f.push(f);
            let mut r = EvalReport::from_counts(Grouping::Category, *cat, sum);
            r.f_measure = f;
            out.push(r);
        }
        let mut r = EvalReport::from_counts(Grouping::Overall, "overall", overall);
        r.f_measure = category_f.iter().sum::<f64>() / category_f.len() as f64;
        out.push(r);
        Ok(out)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_reports_csv<W: Write>(out: W, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "name", "tp", "fp", "fn", "precision", "recall", "f_measure"])
        .map_err(csv_error)?;
    for r in reports {
        w.write_record([
            r.level.as_str().to_string(),
            r.name.clone(),
            r.counts.tp.to_string(),
            r.counts.fp.to_string(),
            r.counts.fn_.to_string(),
            opt(r.precision),
            opt(r.recall),
            format!("{:.6}", r.f_measure),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Fixed-width table for terminals.
pub fn format_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<9} {:<width$} {:>9} {:>9} {:>9} {:>9}",
        "level", "name", "precision", "recall", "F", "tp"
    );
    for r in reports {
        let p = r.precision.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let rc = r.recall.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<9} {:<width$} {:>9} {:>9} {:>9.4} {:>9}",
            r.level.as_str(),
            r.name,
            p,
            rc,
            r.f_measure,
            r.counts.tp
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(v: &[i8]) -> LabelMap {
        LabelMap::new(1, v.len(), v.to_vec()).unwrap()
    }

    fn mk(v: &[u8]) -> Mask {
        Mask::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_masks_score_one() {
        let l = lm(&[1, 0, 1, -1]);
        let m = mk(&[1, 0, 1, 0]);
        let r = f_measure(&[m], &[l], Grouping::Sequence).unwrap();
        assert_eq!(r.f_measure, 1.0);
    }

    #[test]
    fn hand_counted_example() {
        // TP=3, FP=1, FN=1 spread across two frames.
        let labels = [lm(&[1, 1, 0, 0]), lm(&[1, 1, 0])];
        let masks = [mk(&[1, 1, 1, 0]), mk(&[1, 0, 0])];
        let r = f_measure(&masks, &labels, Grouping::Sequence).unwrap();
        assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_), (3, 1, 1));
        assert_eq!(r.precision, Some(0.75));
        assert_eq!(r.recall, Some(0.75));
        assert!((r.f_measure - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ignored_pixels_do_not_count() {
        let r = f_measure(&[mk(&[1, 1])], &[lm(&[1, -1])], Grouping::Frame).unwrap();
        assert_eq!(r.counts.fp, 0);
        assert!(matches!(
            f_measure(&[mk(&[1])], &[lm(&[-1])], Grouping::Frame),
            Err(Error::NoScorablePixels)
        ));
        assert!(f_measure(&[mk(&[1])], &[], Grouping::Frame).is_err());
    }

    #[test]
    fn frame_order_does_not_matter() {
        let labels = [lm(&[1, 0, 0]), lm(&[0, 1, 1]), lm(&[1, 1, 0])];
        let masks = [mk(&[1, 1, 0]), mk(&[0, 0, 1]), mk(&[1, 1, 1])];
        let a = f_measure(&masks, &labels, Grouping::Sequence).unwrap();
        let rl = [labels[2].clone(), labels[0].clone(), labels[1].clone()];
        let rm = [masks[2].clone(), masks[0].clone(), masks[1].clone()];
        let b = f_measure(&rm, &rl, Grouping::Sequence).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn category_and_overall_are_means() {
        let mut ev = Evaluation::new();
        // seq a: F = 1; seq b: TP=1, FP=1 -> F = 2/3; category c2: F = 0.
        ev.add_frame("c1", "a", 1, &mk(&[1, 0]), &lm(&[1, 0])).unwrap();
        ev.add_frame("c1", "b", 1, &mk(&[1, 1]), &lm(&[1, 0])).unwrap();
        ev.add_frame("c2", "c", 1, &mk(&[0, 0]), &lm(&[1, 0])).unwrap();
        let reports = ev.reports().unwrap();
        let get = |level, name: &str| {
            reports
                .iter()
                .find(|r| r.level == level && r.name == name)
                .unwrap()
                .f_measure
        };
        let c1 = (1.0 + 2.0 / 3.0) / 2.0;
        assert!((get(Grouping::Category, "c1") - c1).abs() < 1e-15);
        assert_eq!(get(Grouping::Category, "c2"), 0.0);
        assert!((get(Grouping::Overall, "overall") - c1 / 2.0).abs() < 1e-15);
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("level,name,tp,fp,fn,precision,recall,f_measure\n"));
        assert_eq!(text.lines().count(), 1 + reports.len());
        assert!(format_table(&reports).contains("overall"));
    }
}
