//! Diameter-profile analysis: local extrema, narrowing percent, grading and
//! detection accuracy over labeled segments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{regroup, CoarseLabel, VascularGraph};
use crate::numerics::{euclidean_distance_transform, BinaryMask};

/// Vessel diameters sampled in order along a centerline, in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiameterProfile {
    samples: Vec<f64>,
}

impl DiameterProfile {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("diameter profile is empty"));
        }
        if let Some((i, v)) = samples.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::validation(format!(
                "diameter sample {i} is {v}; samples must be positive and finite"
            )));
        }
        Ok(DiameterProfile { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl TryFrom<Vec<f64>> for DiameterProfile {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        DiameterProfile::new(v)
    }
}

impl From<DiameterProfile> for Vec<f64> {
    fn from(p: DiameterProfile) -> Self {
        p.samples
    }
}

/// Twice the Euclidean distance to background at each centerline point.
/// Points are `[x, y]` and are rounded to the nearest cell.
pub fn diameters_from_mask(mask: &BinaryMask, centerline: &[[f64; 2]]) -> Result<DiameterProfile> {
    let mut cells = Vec::with_capacity(centerline.len());
    for (k, &[x, y]) in centerline.iter().enumerate() {
        let (cx, cy) = (x.round(), y.round());
        if !(cx >= 0.0 && cy >= 0.0 && (cx as usize) < mask.width() && (cy as usize) < mask.height()) {
            return Err(Error::validation(format!(
                "centerline point {k} ({x}, {y}) lies outside the {}x{} mask",
                mask.width(),
                mask.height()
            )));
        }
        let (cx, cy) = (cx as usize, cy as usize);
        if !mask.get(cx, cy) {
            return Err(Error::validation(format!(
                "centerline point {k} ({x}, {y}) lies on background"
            )));
        }
        cells.push((cx, cy));
    }
    let edt = euclidean_distance_transform(mask)?;
    DiameterProfile::new(cells.into_iter().map(|(x, y)| 2.0 * edt[(y, x)]).collect())
}

/// Interior minima and maxima from sign changes of the backward
/// difference. A zero difference inherits the previous nonzero sign, so a
/// plateau reports a single extremum at its far end.
pub fn local_extrema(d: &DiameterProfile) -> Result<(Vec<usize>, Vec<usize>)> {
    let s = d.samples();
    if s.len() < 3 {
        return Err(Error::validation(format!(
            "extrema need at least 3 samples, got {}",
            s.len()
        )));
    }
    let sign = |i: usize| {
        let diff = s[i] - s[i - 1];
        if diff > 0.0 {
            1
        } else if diff < 0.0 {
            -1
        } else {
            0
        }
    };
    let (mut minima, mut maxima) = (Vec::new(), Vec::new());
    let mut last = sign(1);
    for i in 1..s.len() - 1 {
        if sign(i) != 0 {
            last = sign(i);
        }
        let next = sign(i + 1);
        if last == -1 && next == 1 {
            minima.push(i);
        } else if last == 1 && next == -1 {
            maxima.push(i);
        }
    }
    Ok((minima, maxima))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grade {
    None,
    Minimal,
    Mild,
    Moderate,
    Severe,
}

/// `< 1` none, `[1, 25)` minimal, `[25, 50)` mild, `[50, 70)` moderate,
/// `[70, 100]` severe.
pub fn grade(percent: f64) -> Result<Grade> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(Error::validation(format!(
            "stenosis percent {percent} outside [0, 100]"
        )));
    }
    Ok(if percent < 1.0 {
        Grade::None
    } else if percent < 25.0 {
        Grade::Minimal
    } else if percent < 50.0 {
        Grade::Mild
    } else if percent < 70.0 {
        Grade::Moderate
    } else {
        Grade::Severe
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StenosisFinding {
    pub min_index: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub percent: f64,
    pub grade: Grade,
    /// No interior minimum or maximum; extremes are global and the grade
    /// is forced to none.
    pub degenerate: bool,
}

impl StenosisFinding {
    pub fn detected(&self) -> bool {
        !self.degenerate && self.grade != Grade::None
    }
}

/// Narrowing `(1 − d_min / d_max) · 100` between the smallest interior
/// minimum and the largest interior maximum.
pub fn stenosis_percent(d: &DiameterProfile) -> StenosisFinding {
    let s = d.samples();
    let (minima, maxima) = local_extrema(d).unwrap_or_default();
    let argmin = |idx: &mut dyn Iterator<Item = usize>| {
        idx.min_by(|&a, &b| s[a].total_cmp(&s[b])).expect("non-empty")
    };
    let degenerate = minima.is_empty() || maxima.is_empty();
    let (min_index, d_max) = if degenerate {
        let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (argmin(&mut (0..s.len())), hi)
    } else {
        let hi = maxima.iter().map(|&i| s[i]).fold(f64::NEG_INFINITY, f64::max);
        (argmin(&mut minima.iter().copied()), hi)
    };
    let d_min = s[min_index];
    let percent = ((1.0 - d_min / d_max) * 100.0).clamp(0.0, 100.0);
    StenosisFinding {
        min_index,
        d_min,
        d_max,
        percent,
        grade: if degenerate { Grade::None } else { grade(percent).expect("clamped") },
        degenerate,
    }
}

/// Per-segment ground truth for detection accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub class: CoarseLabel,
    pub stenotic: bool,
    /// The labeling assigned this segment its true class.
    pub label_correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStenosis {
    pub class: CoarseLabel,
    pub n: usize,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StenosisAccuracy {
    pub per_class: Vec<ClassStenosis>,
    /// `None` when no segment is stenotic.
    pub overall: Option<f64>,
}

/// Over stenotic segments only: a segment is a true positive when its
/// lesion is detected and its label is correct. Per-class recall is
/// averaged with weights `N_c / N`.
pub fn stenosis_accuracy(findings: &[StenosisFinding], truth: &[SegmentTruth]) -> Result<StenosisAccuracy> {
    if findings.len() != truth.len() {
        return Err(Error::validation(format!(
            "{} findings for {} segments",
            findings.len(),
            truth.len()
        )));
    }
    let mut per_class = Vec::new();
    let mut total = 0;
    let mut weighted = 0.0;
    for c in CoarseLabel::ALL {
        let (mut n, mut tp) = (0, 0);
        for (f, t) in findings.iter().zip(truth) {
            if t.stenotic && t.class == c {
                n += 1;
                if t.label_correct && f.detected() {
                    tp += 1;
                }
            }
        }
        if n > 0 {
            let acc = tp as f64 / n as f64;
            weighted += acc * n as f64;
            total += n;
            per_class.push(ClassStenosis { class: c, n, tp, fn_: n - tp, acc });
        }
    }
    Ok(StenosisAccuracy {
        per_class,
        overall: (total > 0).then(|| weighted / total as f64),
    })
}

/// Finding for one node of a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentFinding {
    pub node: usize,
    pub label: Option<String>,
    #[serde(flatten)]
    pub finding: StenosisFinding,
}

/// Analyzes every node that carries a diameter profile.
pub fn graph_findings(g: &VascularGraph) -> Result<Vec<SegmentFinding>> {
    let mut out = Vec::new();
    for (i, node) in g.nodes().iter().enumerate() {
        if let Some(d) = &node.diameters {
            let profile = DiameterProfile::new(d.clone())?;
            out.push(SegmentFinding {
                node: i,
                label: node.label.map(|l| l.to_string()),
                finding: stenosis_percent(&profile),
            });
        }
    }
    Ok(out)
}

/// Coarse class of a node label, if any.
pub fn node_class(g: &VascularGraph, i: usize) -> Option<CoarseLabel> {
    g.node(i).label.map(regroup)
}
