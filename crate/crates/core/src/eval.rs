//! Dice scoring, per-case and pooled aggregation, ablation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::LabeledCase;
use crate::volume::Mask;

/// Voxel confusion counts for one target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn of(pred: &Mask, gt: &Mask) -> Result<Self> {
        if pred.shape() != gt.shape() {
            return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
        }
        let mut c = Counts::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                _ => {}
            }
        }
        Ok(c)
    }

    /// `2TP / (2TP + FP + FN)`, 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }

    /// `TP / (TP + FP)`, 1 when nothing is predicted.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(Counts::of(pred, gt)?.dice())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub dice_liver: f64,
    pub dice_lesion: f64,
    pub liver: Counts,
    pub lesion: Counts,
}

/// Predicted liver and lesion masks for one case.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub liver: Mask,
    pub lesion: Mask,
}

pub fn score_case(case: &LabeledCase, pred: &Prediction) -> Result<CaseScore> {
    let liver = Counts::of(&pred.liver, &case.liver)?;
    let lesion = Counts::of(&pred.lesion, &case.lesion)?;
    Ok(CaseScore {
        case_id: case.case_id.clone(),
        dice_liver: liver.dice(),
        dice_lesion: lesion.dice(),
        liver,
        lesion,
    })
}

/// Scores in case order; every case needs a prediction.
pub fn evaluate_cases(cases: &[LabeledCase], preds: &BTreeMap<String, Prediction>) -> Result<Vec<CaseScore>> {
    cases
        .iter()
        .map(|c| {
            let p = preds.get(&c.case_id).ok_or_else(|| Error::MissingPrediction(c.case_id.clone()))?;
            score_case(c, p)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cases: usize,
    pub mean_dice_liver: f64,
    pub mean_dice_lesion: f64,
    pub global_dice_liver: f64,
    pub global_dice_lesion: f64,
    pub lesion_precision: f64,
    pub liver: Counts,
    pub lesion: Counts,
}

/// Mean of per-case Dice plus Dice of the pooled counts.
pub fn aggregate(scores: &[CaseScore]) -> Aggregate {
    let mut a = Aggregate {
        cases: scores.len(),
        ..Default::default()
    };
    for s in scores {
        a.liver.add(&s.liver);
        a.lesion.add(&s.lesion);
        a.mean_dice_liver += s.dice_liver;
        a.mean_dice_lesion += s.dice_lesion;
    }
    if !scores.is_empty() {
        a.mean_dice_liver /= scores.len() as f64;
        a.mean_dice_lesion /= scores.len() as f64;
    }
    a.global_dice_liver = a.liver.dice();
    a.global_dice_lesion = a.lesion.dice();
    a.lesion_precision = a.lesion.precision();
    a
}

/// Row names of the ablation, in order.
pub const ABLATION_ROWS: [&str; 4] = ["Segmentation-only baseline", "3-i/o + BP in liver", "+ Detector", "+ 3D-CRF"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub summary: Aggregate,
    pub cases: Vec<CaseScore>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,mean_dice_liver,mean_dice_lesion,global_dice_lesion,lesion_precision\n");
        for r in &self.rows {
            let a = &r.summary;
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.config, a.mean_dice_liver, a.mean_dice_lesion, a.global_dice_lesion, a.lesion_precision
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<28} {:>12} {:>12} {:>12} {:>10}\n",
            "config", "liver dice", "lesion dice", "global les.", "precision"
        );
        for r in &self.rows {
            let a = &r.summary;
            let _ = writeln!(
                s,
                "{:<28} {:>12.4} {:>12.4} {:>12.4} {:>10.4}",
                r.config, a.mean_dice_liver, a.mean_dice_lesion, a.global_dice_lesion, a.lesion_precision
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> Mask {
        Mask::new([1, 1, bits.len()], [1.0; 3], bits.to_vec()).unwrap()
    }

    #[test]
    fn dice_conventions() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(dice(&mask(&[0; 4]), &mask(&[0; 4])).unwrap(), 1.0);
        assert_eq!(dice(&mask(&[0; 4]), &a).unwrap(), 0.0);
        assert!(matches!(dice(&a, &mask(&[1])), Err(Error::Shape(_))));
    }

    #[test]
    fn half_overlap() {
        let mut p = vec![0u8; 300];
        let mut g = vec![0u8; 300];
        p[..100].fill(1);
        g[50..150].fill(1);
        assert_eq!(dice(&mask(&p), &mask(&g)).unwrap(), 0.5);
    }

    fn score(id: &str, lesion: Counts) -> CaseScore {
        CaseScore {
            case_id: id.into(),
            dice_liver: 1.0,
            dice_lesion: lesion.dice(),
            liver: Counts { tp: 1, fp: 0, fn_: 0 },
            lesion,
        }
    }

    #[test]
    fn mean_and_pooled() {
        // 2*2/(4+3+3) = 0.4 and 2*3/(6+2+2) = 0.6
        let a = score("a", Counts { tp: 2, fp: 3, fn_: 3 });
        let b = score("b", Counts { tp: 3, fp: 2, fn_: 2 });
        let agg = aggregate(&[a.clone(), b]);
        assert!((agg.mean_dice_lesion - 0.5).abs() < 1e-15);
        assert!((agg.global_dice_lesion - 0.5).abs() < 1e-15);
        let one = aggregate(std::slice::from_ref(&a));
        assert_eq!(one.mean_dice_lesion, one.global_dice_lesion);
        // unequal sizes: pooled 2*92/(184+4+4) = 184/192, mean (0.4 + 180/182)/2
        let big = score("c", Counts { tp: 90, fp: 1, fn_: 1 });
        let agg = aggregate(&[a, big]);
        assert!((agg.global_dice_lesion - 184.0 / 192.0).abs() < 1e-15);
        assert!((agg.mean_dice_lesion - (0.4 + 180.0 / 182.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn missing_prediction() {
        let case = LabeledCase {
            case_id: "x".into(),
            image: crate::volume::Volume::filled([1, 1, 2], [1.0; 3], 0.0).unwrap(),
            liver: mask(&[1, 0]),
            lesion: mask(&[0, 0]),
        };
        assert!(matches!(evaluate_cases(&[case], &BTreeMap::new()), Err(Error::MissingPrediction(_))));
    }

    #[test]
    fn csv_layout() {
        let report = AblationReport {
            rows: ABLATION_ROWS
                .iter()
                .map(|n| AblationRow {
                    config: n.to_string(),
                    summary: Aggregate::default(),
                    cases: vec![],
                })
                .collect(),
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("config,mean_dice_liver,mean_dice_lesion,global_dice_lesion"));
        assert!(lines[3].starts_with("+ Detector,"));
    }
}
