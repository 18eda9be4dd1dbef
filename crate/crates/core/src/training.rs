//! Tuple enumeration, the pairwise cross-entropy loss and the per-tuple
//! training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, ModelDims, ModelParams, ParamVars, Tape, Var};
use crate::embedding::{intra_embed_var, pair_affinity_var};
use crate::error::{Error, Result};
use crate::graph::{ground_truth_permutation, VascularGraph};
use crate::mgm;
use crate::numerics::{Matrix, SinkhornConfig};
use crate::permutation::PermutationMatrix;
use crate::seed;

/// Probability clamp applied before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Graphs per matching set.
    pub m: usize,
    pub epochs: usize,
    pub lr: f64,
    #[serde(rename = "L")]
    pub intra_layers: usize,
    #[serde(rename = "C")]
    pub cross_layers: usize,
    pub d_intra: usize,
    pub d_cross: usize,
    pub sinkhorn: SinkhornConfig,
    pub seed: u64,
    /// Upper bound on tuples drawn per anchor graph and epoch.
    pub max_tuples_per_graph: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 3,
            epochs: 30,
            lr: 1e-5,
            intra_layers: 3,
            cross_layers: 3,
            d_intra: 256,
            d_cross: 256,
            sinkhorn: SinkhornConfig::default(),
            seed: 0,
            max_tuples_per_graph: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::validation(format!("m must be at least 2, got {}", self.m)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::validation(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.sinkhorn.max_iter == 0 || !(self.sinkhorn.tol >= 0.0) {
            return Err(Error::validation("sinkhorn needs max_iter >= 1 and tol >= 0"));
        }
        if self.max_tuples_per_graph == Some(0) {
            return Err(Error::validation("max_tuples_per_graph must be positive"));
        }
        self.dims(1).validate()
    }

    pub fn dims(&self, d_in: usize) -> ModelDims {
        ModelDims {
            d_in,
            d_intra: self.d_intra,
            d_cross: self.d_cross,
            intra_layers: self.intra_layers,
            cross_layers: self.cross_layers,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

/// An anchor graph plus `m − 1` templates, by index into the template pool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MatchTuple {
    pub templates: Vec<usize>,
}

impl MatchTuple {
    /// Anchor first, then templates in tuple order.
    pub fn graphs<'a>(
        &self,
        anchor: &'a VascularGraph,
        pool: &'a [VascularGraph],
    ) -> Vec<&'a VascularGraph> {
        std::iter::once(anchor)
            .chain(self.templates.iter().map(|&t| &pool[t]))
            .collect()
    }
}

/// Label-induced permutations for every pair `i < j`.
pub fn ground_truth(graphs: &[&VascularGraph]) -> Result<BTreeMap<(usize, usize), PermutationMatrix>> {
    let mut out = BTreeMap::new();
    for i in 0..graphs.len() {
        for j in i + 1..graphs.len() {
            out.insert((i, j), ground_truth_permutation(graphs[i], graphs[j])?);
        }
    }
    Ok(out)
}

fn compatible(a: &VascularGraph, b: &VascularGraph) -> bool {
    a.view() == b.view() && a.n() == b.n()
}

/// All `(m − 1)`-combinations of templates sharing the anchor's view and
/// node count, in lexicographic order. With a cap, a seeded shuffle picks
/// which ones survive; survivors keep lexicographic order.
pub fn enumerate_tuples(
    anchor: &VascularGraph,
    templates: &[VascularGraph],
    m: usize,
    cap: Option<usize>,
    seed: u64,
) -> Result<Vec<MatchTuple>> {
    if m < 2 {
        return Err(Error::validation(format!("m must be at least 2, got {m}")));
    }
    if m - 1 > templates.len() {
        return Err(Error::validation(format!(
            "m = {m} needs {} templates, only {} available",
            m - 1,
            templates.len()
        )));
    }
    let pool: Vec<usize> = (0..templates.len())
        .filter(|&t| compatible(anchor, &templates[t]))
        .collect();
    let k = m - 1;
    let mut out = Vec::new();
    if pool.len() >= k {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(MatchTuple {
                templates: idx.iter().map(|&i| pool[i]).collect(),
            });
            let Some(p) = (0..k).rev().find(|&p| idx[p] < pool.len() - k + p) else {
                break;
            };
            idx[p] += 1;
            for q in p + 1..k {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    if let Some(cap) = cap {
        if out.len() > cap {
            let mut order: Vec<usize> = (0..out.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            order.truncate(cap);
            order.sort_unstable();
            out = order.into_iter().map(|i| out[i].clone()).collect();
        }
    }
    Ok(out)
}

/// Soft affinities `Ŝ^{ij}` for every pair `i < j` of the given graphs.
pub fn tuple_affinity_vars(
    tape: &mut Tape,
    pv: &ParamVars,
    graphs: &[&VascularGraph],
    sinkhorn: SinkhornConfig,
) -> Result<BTreeMap<(usize, usize), Var>> {
    let embeds = graphs
        .iter()
        .map(|g| intra_embed_var(tape, pv, g))
        .collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    for i in 0..graphs.len() {
        for j in i + 1..graphs.len() {
            out.insert((i, j), pair_affinity_var(tape, pv, embeds[i], embeds[j], sinkhorn)?);
        }
    }
    Ok(out)
}

/// `−Σ_pairs Σ_ij [(1 − M) log(1 − Ŝ) + M log Ŝ]` with `Ŝ` clamped to
/// `[ε, 1 − ε]`.
pub fn bce_loss_var(tape: &mut Tape, predicted: &[Var], truth: &[Matrix]) -> Result<Var> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::shape(format!(
            "loss needs one truth per prediction and at least one pair, got {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&s, m) in predicted.iter().zip(truth) {
        if tape.shape(s) != m.shape() {
            return Err(Error::shape(format!(
                "prediction is {:?}, truth is {:?}",
                tape.shape(s),
                m.shape()
            )));
        }
        let p = tape.clamp(s, BCE_EPS, 1.0 - BCE_EPS);
        let log_p = tape.log(p);
        let q = tape.affine(p, -1.0, 1.0);
        let log_q = tape.log(q);
        let mv = tape.constant(m.clone());
        let not_m = tape.constant(m.map(|v| 1.0 - v));
        let pos = tape.mul(mv, log_p)?;
        let neg = tape.mul(not_m, log_q)?;
        let both = tape.add(pos, neg)?;
        let sum = tape.sum(both);
        total = Some(match total {
            None => sum,
            Some(t) => tape.add(t, sum)?,
        });
    }
    Ok(tape.scale(total.expect("non-empty"), -1.0))
}

/// Loss value on concrete matrices.
pub fn bce_loss(predicted: &[Matrix], truth: &[Matrix]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = predicted.iter().map(|p| tape.constant(p.clone())).collect();
    let l = bce_loss_var(&mut tape, &vars, truth)?;
    Ok(tape.value(l)[(0, 0)])
}

/// Fraction of nodes whose spectral + Hungarian match (pivot 0) agrees with
/// the truth, averaged over pairs `i < j`.
pub fn matching_accuracy(
    blocks: &BTreeMap<(usize, usize), Matrix>,
    truth: &BTreeMap<(usize, usize), PermutationMatrix>,
    m: usize,
    n: usize,
) -> Result<f64> {
    let (_, _, result) = mgm::solve(blocks, m, n, 0)?;
    let mut acc = 0.0;
    for (&(i, j), t) in truth {
        let hits = result
            .get(i, j)
            .assignment()
            .iter()
            .zip(t.assignment())
            .filter(|(a, b)| a == b)
            .count();
        acc += hits as f64 / n as f64;
    }
    Ok(acc / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_accuracy: f64,
    pub steps: usize,
    /// Tuples dropped because their graphs carry different label sets.
    pub skipped_tuples: usize,
}

/// Forward, loss and gradient for one tuple; returns the loss, the
/// gradients in tensor order and the matching accuracy of the forward pass.
pub fn tuple_step(
    params: &ModelParams,
    graphs: &[&VascularGraph],
    truth: &BTreeMap<(usize, usize), PermutationMatrix>,
    sinkhorn: SinkhornConfig,
) -> Result<(f64, Vec<Vec<f64>>, f64)> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let s = tuple_affinity_vars(&mut tape, &pv, graphs, sinkhorn)?;
    let pred: Vec<Var> = s.values().copied().collect();
    let dense: Vec<Matrix> = truth.values().map(|p| p.to_dense()).collect();
    let loss = bce_loss_var(&mut tape, &pred, &dense)?;
    tape.backward(loss)?;
    let blocks: BTreeMap<(usize, usize), Matrix> =
        s.iter().map(|(&k, &v)| (k, tape.value(v).clone())).collect();
    let acc = matching_accuracy(&blocks, truth, graphs.len(), graphs[0].n())?;
    Ok((tape.value(loss)[(0, 0)], pv.grads(&tape), acc))
}

/// One pass over the training graphs with a gradient step per tuple.
/// Tuple selection depends on `(config.seed, epoch, anchor index)`.
pub fn train_epoch(
    train: &[VascularGraph],
    templates: &[VascularGraph],
    params: &mut ModelParams,
    config: &TrainConfig,
    adam: &mut AdamState,
    epoch: usize,
) -> Result<EpochReport> {
    config.validate()?;
    params.validate()?;
    for g in train.iter().chain(templates) {
        g.check_unique_labels()?;
        g.check_feature_dim(params.dims.d_in)?;
    }
    if !adam.matches(&params.tensors()) {
        return Err(Error::validation("optimizer state does not fit the model"));
    }
    adam.lr = config.lr;
    let (mut loss_sum, mut acc_sum, mut steps, mut skipped) = (0.0, 0.0, 0usize, 0usize);
    for (k, anchor) in train.iter().enumerate() {
        let tuple_seed = seed::derive(config.seed, &[epoch as u64, k as u64]);
        let tuples = enumerate_tuples(
            anchor,
            templates,
            config.m,
            config.max_tuples_per_graph,
            tuple_seed,
        )?;
        for t in tuples {
            let graphs = t.graphs(anchor, templates);
            let Ok(truth) = ground_truth(&graphs) else {
                skipped += 1;
                continue;
            };
            let (loss, grads, acc) = tuple_step(params, &graphs, &truth, config.sinkhorn)?;
            adam_step(&mut params.tensors_mut(), &grads, adam)?;
            loss_sum += loss;
            acc_sum += acc;
            steps += 1;
        }
    }
    let denom = steps.max(1) as f64;
    Ok(EpochReport {
        epoch,
        mean_loss: loss_sum / denom,
        mean_accuracy: acc_sum / denom,
        steps,
        skipped_tuples: skipped,
    })
}

/// Appends one JSON line.
pub fn append_metrics(path: impl AsRef<Path>, report: &EpochReport) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(report)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{lca_fixture, relabel};
    use crate::graph::{PrimaryAngle, SecondaryAngle, ViewAngle};
    use rand::Rng;

    fn copies(k: usize) -> Vec<VascularGraph> {
        let g = lca_fixture();
        let perms = [[0, 1, 2, 3, 4], [4, 3, 2, 1, 0], [1, 2, 3, 4, 0], [2, 0, 1, 4, 3], [3, 4, 0, 2, 1]];
        (0..k)
            .map(|i| relabel(&g, &perms[i % perms.len()]).with_id(format!("t{i}")))
            .collect()
    }

    #[test]
    fn combinations_count() {
        let anchor = lca_fixture();
        let t = enumerate_tuples(&anchor, &copies(3), 3, None, 0).unwrap();
        let sets: Vec<Vec<usize>> = t.into_iter().map(|x| x.templates).collect();
        assert_eq!(sets, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn incompatible_templates_filtered() {
        let anchor = lca_fixture();
        let mut pool = copies(7);
        let other = ViewAngle::new(PrimaryAngle::LAO, SecondaryAngle::CAU);
        for i in [1, 3, 5] {
            let g = &pool[i];
            pool[i] = VascularGraph::new(g.id(), other, g.nodes().to_vec(), g.edges().to_vec()).unwrap();
        }
        let t = enumerate_tuples(&anchor, &pool, 4, None, 0).unwrap();
        // brute force over all 3-subsets of 7
        let mut want = Vec::new();
        for a in 0..7 {
            for b in a + 1..7 {
                for c in b + 1..7 {
                    if [a, b, c].iter().all(|i| ![1, 3, 5].contains(i)) {
                        want.push(vec![a, b, c]);
                    }
                }
            }
        }
        assert_eq!(t.iter().map(|x| x.templates.clone()).collect::<Vec<_>>(), want);
        assert_eq!(want.len(), 4);

        for g in pool.iter_mut() {
            *g = VascularGraph::new(g.id(), other, g.nodes().to_vec(), g.edges().to_vec()).unwrap();
        }
        assert!(enumerate_tuples(&anchor, &pool, 3, None, 0).unwrap().is_empty());
        assert!(enumerate_tuples(&anchor, &pool[..1], 3, None, 0).is_err());
    }

    #[test]
    fn cap_is_seeded_subset() {
        let anchor = lca_fixture();
        let pool = copies(6);
        let all = enumerate_tuples(&anchor, &pool, 3, None, 0).unwrap();
        let a = enumerate_tuples(&anchor, &pool, 3, Some(4), 11).unwrap();
        let b = enumerate_tuples(&anchor, &pool, 3, Some(4), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|t| all.contains(t)));
        assert!(a.windows(2).all(|w| w[0].templates < w[1].templates));
    }

    #[test]
    fn uniform_two_by_two_loss() {
        let l = bce_loss(&[Matrix::filled(2, 2, 0.5)], &[Matrix::identity(2)]).unwrap();
        assert!((l - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_near_zero() {
        let m = PermutationMatrix::new(vec![2, 0, 1]).unwrap().to_dense();
        let l = bce_loss(&[m.clone(), m.clone()], &[m.clone(), m]).unwrap();
        assert!(l >= 0.0);
        assert!(l <= 2.0 * 9.0 * -(1.0 - BCE_EPS).ln() + 1e-15);
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let pred: Vec<Matrix> = (0..3)
            .map(|_| Matrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0)))
            .collect();
        let truth: Vec<Matrix> = (0..3)
            .map(|_| Matrix::from_fn(n, n, |_, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 }))
            .collect();
        let mut want = 0.0;
        for (p, t) in pred.iter().zip(&truth) {
            for i in 0..n {
                for j in 0..n {
                    let s = p[(i, j)].clamp(1e-7, 1.0 - 1e-7);
                    want -= (1.0 - t[(i, j)]) * (1.0 - s).ln() + t[(i, j)] * s.ln();
                }
            }
        }
        assert!((bce_loss(&pred, &truth).unwrap() - want).abs() < 1e-10);
        assert!(bce_loss(&pred[..1], &truth).is_err());
    }

    fn small_params(seed: u64) -> ModelParams {
        ModelParams::init(ModelDims::new(2, 4, 2, 2), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            m: 3,
            lr: 0.0,
            intra_layers: 2,
            cross_layers: 2,
            d_intra: 4,
            d_cross: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_is_bitwise_noop() {
        let mut params = small_params(1);
        let before = params.clone();
        let mut adam = AdamState::new(&params.tensors(), 0.0);
        let train = copies(2);
        let tp = copies(3);
        let r = train_epoch(&train, &tp, &mut params, &small_config(), &mut adam, 0).unwrap();
        assert_eq!(params, before);
        assert_eq!(r.steps, 6);
        assert!(r.mean_loss > 0.0);
    }

    #[test]
    fn cap_one_gives_one_step_per_graph() {
        let mut params = small_params(1);
        let mut adam = AdamState::new(&params.tensors(), 0.0);
        let cfg = TrainConfig {
            max_tuples_per_graph: Some(1),
            lr: 1e-3,
            ..small_config()
        };
        let r = train_epoch(&copies(4), &copies(3), &mut params, &cfg, &mut adam, 0).unwrap();
        assert_eq!(r.steps, 4);
        assert_eq!(adam.step, 4);
    }

    #[test]
    fn unlabeled_training_graph_rejected() {
        let mut params = small_params(1);
        let mut adam = AdamState::new(&params.tensors(), 0.0);
        let train = vec![lca_fixture().without_labels()];
        assert!(train_epoch(&train, &copies(3), &mut params, &small_config(), &mut adam, 0).is_err());
    }

    #[test]
    fn identical_templates_give_full_accuracy_and_loss_drops() {
        let mut params = small_params(4);
        let cfg = TrainConfig { lr: 1e-2, ..small_config() };
        let mut adam = AdamState::new(&params.tensors(), cfg.lr);
        let (train, tp) = (copies(3), copies(3));
        let mut losses = Vec::new();
        for e in 0..5 {
            let r = train_epoch(&train, &tp, &mut params, &cfg, &mut adam, e).unwrap();
            losses.push(r.mean_loss);
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let params = small_params(9);
        let pool = copies(3);
        let graphs: Vec<&VascularGraph> = pool.iter().collect();
        let truth = ground_truth(&graphs).unwrap();
        let cfg = SinkhornConfig { max_iter: 10, tol: 0.0 };
        let (_, grads, _) = tuple_step(&params, &graphs, &truth, cfg).unwrap();
        let loss_at = |p: &ModelParams| tuple_step(p, &graphs, &truth, cfg).unwrap().0;
        let h = 1e-6;
        for (t, g) in grads.iter().enumerate() {
            for k in [0, g.len() / 2, g.len() - 1] {
                let mut plus = params.clone();
                plus.tensors_mut()[t][k] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[t][k] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
                assert!(err < 1e-4, "tensor {t} entry {k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn config_json() {
        let c = TrainConfig::from_json_str(r#"{"m":4,"L":2,"max_tuples_per_graph":3}"#).unwrap();
        assert_eq!((c.m, c.intra_layers, c.max_tuples_per_graph), (4, 2, Some(3)));
        assert!(TrainConfig::from_json_str(r#"{"bogus":1}"#).is_err());
        assert!(TrainConfig::from_json_str(r#"{"m":1}"#).is_err());
        assert!(TrainConfig::from_json_str(r#"{"d_cross":8}"#).is_err());
    }

    #[test]
    fn metrics_lines_append() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let r = EpochReport { epoch: 0, mean_loss: 1.5, mean_accuracy: 0.5, steps: 2, skipped_tuples: 0 };
        append_metrics(&p, &r).unwrap();
        append_metrics(&p, &EpochReport { epoch: 1, ..r.clone() }).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let back: Vec<EpochReport> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back[1].epoch, 1);
        assert_eq!(back[0], r);
    }
}
