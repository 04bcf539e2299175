//! Precision / recall / F1 over the three punctuation marks.
//!
//! `NONE` takes part in the confusion matrix, so a mark predicted where the
//! reference has none counts as a false positive of that mark, but `NONE`
//! itself is never scored.

use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::data::PunctuationLabel;
use crate::error::{Error, Result};

/// `counts[reference][hypothesis]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn add(&mut self, reference: PunctuationLabel, hypothesis: PunctuationLabel) {
        self.counts[reference.index()][hypothesis.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: PunctuationLabel) -> u64 {
        self.counts[c.index()][c.index()]
    }

    pub fn false_positives(&self, c: PunctuationLabel) -> u64 {
        (0..4).filter(|&r| r != c.index()).map(|r| self.counts[r][c.index()]).sum()
    }

    pub fn false_negatives(&self, c: PunctuationLabel) -> u64 {
        (0..4).filter(|&h| h != c.index()).map(|h| self.counts[c.index()][h]).sum()
    }

    pub fn support(&self, c: PunctuationLabel) -> u64 {
        self.counts[c.index()].iter().sum()
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().flatten().zip(rhs.counts.iter().flatten()) {
            *a += b;
        }
    }
}

/// Tallies aligned reference/hypothesis sequences. `masks`, when given,
/// selects which positions count.
pub fn confusion<R, H>(refs: &[R], hyps: &[H], masks: Option<&[Vec<bool>]>) -> Result<ConfusionMatrix>
where
    R: AsRef<[PunctuationLabel]>,
    H: AsRef<[PunctuationLabel]>,
{
    if refs.len() != hyps.len() || masks.is_some_and(|m| m.len() != refs.len()) {
        return Err(Error::SequenceMismatch {
            index: refs.len().min(hyps.len()),
            reason: format!("{} references vs {} hypotheses", refs.len(), hyps.len()),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (index, (r, h)) in refs.iter().zip(hyps).enumerate() {
        let (r, h) = (r.as_ref(), h.as_ref());
        let mask = masks.map(|m| m[index].as_slice());
        if r.len() != h.len() || mask.is_some_and(|m| m.len() != r.len()) {
            return Err(Error::SequenceMismatch {
                index,
                reason: format!("reference length {} vs hypothesis length {}", r.len(), h.len()),
            });
        }
        for (i, (&a, &b)) in r.iter().zip(h).enumerate() {
            if mask.is_none_or(|m| m[i]) {
                cm.add(a, b);
            }
        }
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // Equal to 2PR/(P+R), but exact from the integer counts.
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Self { precision, recall, f1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: PunctuationLabel,
    #[serde(flatten)]
    pub scores: Prf,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Micro average over the three marks.
    pub overall: Prf,
    /// Unweighted mean of the per-class scores.
    pub macro_avg: Prf,
    pub tokens: u64,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn class(&self, label: PunctuationLabel) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes the table; `with_macro` adds a row for the macro average.
    pub fn write_table(&self, f: &mut impl fmt::Write, with_macro: bool) -> fmt::Result {
        writeln!(f, "{:<10} {:>9} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1", "support")?;
        for c in &self.classes {
            let s = c.scores;
            writeln!(
                f,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                c.label.name(),
                s.precision,
                s.recall,
                s.f1,
                c.support
            )?;
        }
        let support: u64 = self.classes.iter().map(|c| c.support).sum();
        let o = self.overall;
        write!(
            f,
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9}",
            "OVERALL", o.precision, o.recall, o.f1, support
        )?;
        if with_macro {
            let m = self.macro_avg;
            write!(
                f,
                "\n{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                "MACRO", m.precision, m.recall, m.f1, support
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_table(f, false)
    }
}

pub fn report(cm: &ConfusionMatrix) -> EvalReport {
    let classes: Vec<ClassReport> = PunctuationLabel::MARKS
        .iter()
        .map(|&label| ClassReport {
            label,
            scores: Prf::from_counts(cm.true_positives(label), cm.false_positives(label), cm.false_negatives(label)),
            support: cm.support(label),
        })
        .collect();
    let sum = |f: fn(&ConfusionMatrix, PunctuationLabel) -> u64| PunctuationLabel::MARKS.iter().map(|&c| f(cm, c)).sum::<u64>();
    let overall = Prf::from_counts(
        sum(ConfusionMatrix::true_positives),
        sum(ConfusionMatrix::false_positives),
        sum(ConfusionMatrix::false_negatives),
    );
    let k = classes.len() as f64;
    let macro_avg = Prf {
        precision: classes.iter().map(|c| c.scores.precision).sum::<f64>() / k,
        recall: classes.iter().map(|c| c.scores.recall).sum::<f64>() / k,
        f1: classes.iter().map(|c| c.scores.f1).sum::<f64>() / k,
    };
    EvalReport {
        classes,
        overall,
        macro_avg,
        tokens: cm.total(),
        confusion: *cm,
    }
}
