//! Template-based labeling: anatomy screening of candidate matchings,
//! majority voting, and one-vs-rest classification metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::ModelParams;
use crate::embedding::pair_affinity;
use crate::error::{Error, Result};
use crate::graph::{CoarseLabel, VascularGraph};
use crate::mgm;
use crate::numerics::{Matrix, SinkhornConfig};
use crate::seed;
use crate::training::enumerate_tuples;

/// Unordered coarse-label pairs that may share an edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnatomyTable {
    allowed: BTreeSet<(CoarseLabel, CoarseLabel)>,
}

fn ordered(a: CoarseLabel, b: CoarseLabel) -> (CoarseLabel, CoarseLabel) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl AnatomyTable {
    pub fn new(pairs: impl IntoIterator<Item = (CoarseLabel, CoarseLabel)>) -> Result<Self> {
        let allowed: BTreeSet<_> = pairs.into_iter().map(|(a, b)| ordered(a, b)).collect();
        if allowed.is_empty() {
            return Err(Error::validation("anatomy table must allow at least one pair"));
        }
        Ok(AnatomyTable { allowed })
    }

    pub fn allows(&self, a: CoarseLabel, b: CoarseLabel) -> bool {
        self.allowed.contains(&ordered(a, b))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (CoarseLabel, CoarseLabel)> + '_ {
        self.allowed.iter().copied()
    }
}

impl Default for AnatomyTable {
    /// LMA feeds LAD and LCX; LAD continues into LAD and gives off D; LCX
    /// continues into LCX and gives off OM.
    fn default() -> Self {
        use CoarseLabel::*;
        AnatomyTable::new([
            (LMA, LAD),
            (LMA, LCX),
            (LAD, LAD),
            (LAD, D),
            (LCX, LCX),
            (LCX, OM),
        ])
        .expect("non-empty")
    }
}

/// Fraction of edges whose label pair the table does not allow; zero for
/// an edgeless graph.
pub fn structural_loss(
    g: &VascularGraph,
    labels: &[CoarseLabel],
    table: &AnatomyTable,
) -> Result<f64> {
    if labels.len() != g.n() {
        return Err(Error::validation(format!(
            "{} labels for {} nodes of graph {}",
            labels.len(),
            g.n(),
            g.id()
        )));
    }
    if g.edges().is_empty() {
        return Ok(0.0);
    }
    let bad = g
        .edges()
        .iter()
        .filter(|&&(a, b)| !table.allows(labels[a], labels[b]))
        .count();
    Ok(bad as f64 / g.edges().len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreeningMode {
    /// Keep only matchings with zero structural loss.
    #[default]
    Strict,
    /// Keep all matchings, weighting each vote by `1 − loss`.
    Soft,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PivotChoice {
    /// The graph being labeled.
    #[default]
    Test,
    /// Seeded uniform choice per tuple.
    Random,
}

/// Labels one template matching would transfer onto the test graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub tuple: usize,
    pub template: String,
    pub labels: Vec<CoarseLabel>,
    /// Soft affinity of each test node to its matched template node.
    pub affinity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingRecord {
    pub tuple: usize,
    pub template: String,
    pub structural_loss: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub graph_id: String,
    /// `None` only when no compatible template exists.
    pub labels: Vec<Option<CoarseLabel>>,
    /// Per node: label name → vote weight.
    pub tallies: Vec<BTreeMap<String, f64>>,
    pub accepted: usize,
    pub rejected: usize,
    pub abstained: bool,
    pub matchings: Vec<MatchingRecord>,
}

/// Screens candidates against the table and takes a per-node weighted
/// majority. Ties go to the larger summed affinity, then to the smaller
/// label name. With nothing accepted, the lowest-loss candidate is used
/// as-is and the report is flagged abstained.
pub fn vote(
    test: &VascularGraph,
    candidates: &[Candidate],
    table: &AnatomyTable,
    mode: ScreeningMode,
) -> Result<LabelReport> {
    let n = test.n();
    let mut records = Vec::with_capacity(candidates.len());
    let mut weights = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.affinity.len() != n {
            return Err(Error::validation(format!(
                "candidate from {} has {} affinities for {n} nodes",
                c.template,
                c.affinity.len()
            )));
        }
        let loss = structural_loss(test, &c.labels, table)?;
        let w = match mode {
            ScreeningMode::Strict if loss == 0.0 => 1.0,
            ScreeningMode::Strict => 0.0,
            ScreeningMode::Soft => 1.0 - loss,
        };
        records.push(MatchingRecord {
            tuple: c.tuple,
            template: c.template.clone(),
            structural_loss: loss,
            accepted: w > 0.0,
        });
        weights.push(w);
    }
    let accepted = records.iter().filter(|r| r.accepted).count();
    let mut report = LabelReport {
        graph_id: test.id().to_string(),
        labels: vec![None; n],
        tallies: vec![BTreeMap::new(); n],
        accepted,
        rejected: records.len() - accepted,
        abstained: false,
        matchings: records,
    };
    if candidates.is_empty() {
        report.abstained = true;
        return Ok(report);
    }
    if accepted == 0 {
        let best = (0..candidates.len())
            .min_by(|&a, &b| {
                let (la, lb) = (report.matchings[a].structural_loss, report.matchings[b].structural_loss);
                la.total_cmp(&lb)
            })
            .expect("non-empty");
        report.labels = candidates[best].labels.iter().map(|&l| Some(l)).collect();
        report.abstained = true;
        return Ok(report);
    }
    for i in 0..n {
        let mut tally: BTreeMap<CoarseLabel, (f64, f64)> = BTreeMap::new();
        for (c, &w) in candidates.iter().zip(&weights) {
            if w > 0.0 {
                let e = tally.entry(c.labels[i]).or_insert((0.0, 0.0));
                e.0 += w;
                e.1 += c.affinity[i];
            }
        }
        let winner = tally
            .iter()
            .max_by(|(la, a), (lb, b)| {
                a.0.total_cmp(&b.0)
                    .then(a.1.total_cmp(&b.1))
                    .then(lb.name().cmp(la.name()))
            })
            .map(|(&l, _)| l);
        report.labels[i] = winner;
        report.tallies[i] = tally
            .into_iter()
            .map(|(l, (w, _))| (l.name().to_string(), w))
            .collect();
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub m: usize,
    pub max_tuples_per_graph: Option<usize>,
    pub mode: ScreeningMode,
    pub pivot: PivotChoice,
    pub sinkhorn: SinkhornConfig,
    pub seed: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            m: 3,
            max_tuples_per_graph: None,
            mode: ScreeningMode::Strict,
            pivot: PivotChoice::Test,
            sinkhorn: SinkhornConfig::default(),
            seed: 0,
        }
    }
}

/// Builds every tuple for `test`, solves each one, and votes over the
/// per-template matchings. Soft affinities are computed once per distinct
/// graph pair and shared across tuples.
pub fn label_graph(
    test: &VascularGraph,
    templates: &[VascularGraph],
    params: &ModelParams,
    table: &AnatomyTable,
    config: &LabelConfig,
) -> Result<LabelReport> {
    params.validate()?;
    test.check_feature_dim(params.dims.d_in)?;
    let template_labels = templates
        .iter()
        .map(|t| t.coarse_labels())
        .collect::<Result<Vec<_>>>()?;
    let graph_seed = seed::derive(config.seed, &[hash_id(test.id())]);
    let tuples = enumerate_tuples(test, templates, config.m, config.max_tuples_per_graph, graph_seed)?;

    // graph index 0 is the test graph, k + 1 is template k
    let members: Vec<Vec<usize>> = tuples
        .iter()
        .map(|t| std::iter::once(0).chain(t.templates.iter().map(|&k| k + 1)).collect())
        .collect();
    let pairs: BTreeSet<(usize, usize)> = members
        .iter()
        .flat_map(|g| {
            (0..g.len()).flat_map(move |i| (i + 1..g.len()).map(move |j| (g[i], g[j])))
        })
        .collect();
    let graph = |k: usize| if k == 0 { test } else { &templates[k - 1] };
    let cache: HashMap<(usize, usize), Matrix> = pairs
        .into_par_iter()
        .map(|(a, b)| Ok(((a, b), pair_affinity(graph(a), graph(b), params, config.sinkhorn)?)))
        .collect::<Result<_>>()?;

    let mut pivot_rng = ChaCha8Rng::seed_from_u64(graph_seed);
    let pivots: Vec<usize> = members
        .iter()
        .map(|g| match config.pivot {
            PivotChoice::Test => 0,
            PivotChoice::Random => pivot_rng.random_range(0..g.len()),
        })
        .collect();

    let per_tuple: Vec<Vec<Candidate>> = members
        .par_iter()
        .zip(&pivots)
        .enumerate()
        .map(|(t, (g, &pivot))| {
            let blocks: BTreeMap<(usize, usize), Matrix> = (0..g.len())
                .flat_map(|i| (i + 1..g.len()).map(move |j| (i, j)))
                .map(|(i, j)| ((i, j), cache[&(g[i], g[j])].clone()))
                .collect();
            let (_, _, result) = mgm::solve(&blocks, g.len(), test.n(), pivot)?;
            Ok((1..g.len())
                .map(|p| {
                    let perm = result.get(0, p);
                    let tk = g[p] - 1;
                    let s = &blocks[&(0, p)];
                    Candidate {
                        tuple: t,
                        template: templates[tk].id().to_string(),
                        labels: (0..test.n()).map(|i| template_labels[tk][perm.apply(i)]).collect(),
                        affinity: (0..test.n()).map(|i| s[(i, perm.apply(i))]).collect(),
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    vote(test, &per_tuple.concat(), table, config.mode)
}

fn hash_id(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// One row per screened matching.
pub fn write_matchings_csv(path: impl AsRef<Path>, reports: &[LabelReport]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let row_err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["graph_id", "tuple", "template", "structural_loss", "accepted"])
        .map_err(row_err)?;
    for r in reports {
        for m in &r.matchings {
            w.write_record([
                r.graph_id.as_str(),
                &m.tuple.to_string(),
                &m.template,
                &m.structural_loss.to_string(),
                &m.accepted.to_string(),
            ])
            .map_err(row_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: CoarseLabel,
    pub n: usize,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc: f64,
    pub prec: f64,
    pub rec: f64,
    pub f1: f64,
    /// Metrics whose denominator was zero and were scored 0.
    pub undefined: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weighted {
    pub acc: f64,
    pub prec: f64,
    pub rec: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    /// Fraction of exact matches.
    pub accuracy: f64,
    pub weighted: Weighted,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[t][p]`: truth class `t` predicted as `p`, in
    /// [`CoarseLabel::ALL`] order.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest metrics per class, averaged with weights `N_c / N` where
/// `N_c` counts the class in `truth`.
pub fn weighted_metrics(pred: &[CoarseLabel], truth: &[CoarseLabel]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::validation("metrics need at least one label"));
    }
    let k = CoarseLabel::ALL.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (p, t) in pred.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    let n = pred.len();
    let mut per_class = Vec::with_capacity(k);
    let mut w = Weighted { acc: 0.0, prec: 0.0, rec: 0.0, f1: 0.0 };
    for c in CoarseLabel::ALL {
        let i = c.index();
        let tp = confusion[i][i];
        let row: usize = confusion[i].iter().sum();
        let col: usize = confusion.iter().map(|r| r[i]).sum();
        let (fn_, fp) = (row - tp, col - tp);
        let tn = n - tp - fn_ - fp;
        let mut undefined = Vec::new();
        let acc = ratio(tp + tn, n, "acc", &mut undefined);
        let prec = ratio(tp, tp + fp, "prec", &mut undefined);
        let rec = ratio(tp, tp + fn_, "rec", &mut undefined);
        let f1 = if 2 * tp + fp + fn_ == 0 {
            undefined.push("f1".into());
            0.0
        } else {
            tp as f64 / (tp as f64 + 0.5 * (fp + fn_) as f64)
        };
        let share = row as f64 / n as f64;
        w.acc += acc * share;
        w.prec += prec * share;
        w.rec += rec * share;
        w.f1 += f1 * share;
        per_class.push(ClassMetrics { label: c, n: row, tp, tn, fp, fn_, acc, prec, rec, f1, undefined });
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(MetricsReport {
        n,
        accuracy: hits as f64 / n as f64,
        weighted: w,
        per_class,
        confusion,
    })
}
