//! Intra-graph and cross-graph node embeddings and their Sinkhorn
//! affinities.
//!
//! Every stage exists twice: a `*_var` function that records onto a
//! [`Tape`] (used by training and by batched inference), and a plain
//! function that evaluates one stage on concrete matrices.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ModelParams, ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::VascularGraph;
use crate::numerics::{Matrix, SinkhornConfig};

/// Logits are shifted so their maximum is zero, then floored here, keeping
/// `exp` strictly positive. Sinkhorn cancels the shift exactly.
const LOGIT_FLOOR: f64 = -700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Intra,
    Cross,
}

/// Row `i` embeds node `i` of the source graph.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings {
    pub graph_id: String,
    pub matrix: Matrix,
    pub stage: Stage,
}

/// `L` rounds of neighbor-sum message passing:
/// `x_i ← φ([Σ_{j ~ i} x_j, x_i])`.
pub fn intra_embed_var(tape: &mut Tape, pv: &ParamVars, g: &VascularGraph) -> Result<Var> {
    g.check_feature_dim(pv.dims.d_in)
        .map_err(|e| Error::shape(e.to_string()))?;
    let features = Matrix::from_fn(g.n(), pv.dims.d_in, |i, k| g.node(i).features[k]);
    let mut x = tape.constant(features);
    for layer in &pv.intra {
        let agg = tape.gather_sum(x, g.neighbor_lists())?;
        let cat = tape.concat_cols(agg, x)?;
        x = layer.forward(tape, cat)?;
    }
    Ok(x)
}

/// `Sinkhorn(exp(e_a · A · e_bᵀ / sqrt(d)))`.
pub fn affinity_var(
    tape: &mut Tape,
    ea: Var,
    eb: Var,
    a: Var,
    sinkhorn: SinkhornConfig,
) -> Result<Var> {
    let (na, d) = tape.shape(ea);
    let (nb, db) = tape.shape(eb);
    if na != nb {
        return Err(Error::shape(format!(
            "graph matching needs equal node counts, got {na} and {nb}"
        )));
    }
    if d != db || tape.shape(a) != (d, d) {
        return Err(Error::shape(format!(
            "embedding widths {d} and {db} with a {}x{} affinity matrix",
            tape.shape(a).0,
            tape.shape(a).1
        )));
    }
    let ea_a = tape.matmul(ea, a)?;
    let bilinear = tape.matmul_t(ea_a, eb)?;
    let logits = tape.div_scalar(bilinear, (d as f64).sqrt())?;
    let max = tape
        .value(logits)
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("non-finite affinity logits".into()));
    }
    let shifted = tape.affine(logits, 1.0, -max);
    let floored = tape.clamp(shifted, LOGIT_FLOOR, 0.0);
    let positive = tape.exp(floored);
    tape.sinkhorn(positive, sinkhorn)
}

/// `C` rounds of affinity-weighted exchange between two graphs. Side A
/// aggregates `S · e_b`, side B aggregates `Sᵀ · e_a`; both sides update
/// from the previous round's values and reuse the same `S`.
pub fn cross_embed_var(
    tape: &mut Tape,
    pv: &ParamVars,
    ea: Var,
    eb: Var,
    s: Var,
) -> Result<(Var, Var)> {
    let (na, nb) = (tape.shape(ea).0, tape.shape(eb).0);
    if tape.shape(s) != (na, nb) {
        return Err(Error::shape(format!(
            "affinity {}x{} does not fit graphs of {na} and {nb} nodes",
            tape.shape(s).0,
            tape.shape(s).1
        )));
    }
    let st = tape.transpose(s);
    let (mut xa, mut xb) = (ea, eb);
    for layer in &pv.cross {
        let agg_a = tape.matmul(s, xb)?;
        let agg_b = tape.matmul(st, xa)?;
        let cat_a = tape.concat_cols(agg_a, xa)?;
        let cat_b = tape.concat_cols(agg_b, xb)?;
        let next_a = layer.forward(tape, cat_a)?;
        let next_b = layer.forward(tape, cat_b)?;
        xa = next_a;
        xb = next_b;
    }
    Ok((xa, xb))
}

/// Intra affinity, cross embedding and cross affinity for one graph pair,
/// given intra embeddings. Returns the final doubly-stochastic `Ŝ`.
pub fn pair_affinity_var(
    tape: &mut Tape,
    pv: &ParamVars,
    ea: Var,
    eb: Var,
    sinkhorn: SinkhornConfig,
) -> Result<Var> {
    let s_bar = affinity_var(tape, ea, eb, pv.a_intra, sinkhorn)?;
    let (ca, cb) = cross_embed_var(tape, pv, ea, eb, s_bar)?;
    affinity_var(tape, ca, cb, pv.a_cross, sinkhorn)
}

pub fn intra_embed(g: &VascularGraph, params: &ModelParams) -> Result<NodeEmbeddings> {
    let mut tape = Tape::new();
    let pv = params.register_frozen(&mut tape);
    let x = intra_embed_var(&mut tape, &pv, g)?;
    Ok(NodeEmbeddings {
        graph_id: g.id().to_string(),
        matrix: tape.value(x).clone(),
        stage: Stage::Intra,
    })
}

fn require_stage(e: &NodeEmbeddings, stage: Stage) -> Result<()> {
    if e.stage != stage {
        return Err(Error::contract(format!(
            "embeddings of {} are {:?}-stage, expected {stage:?}",
            e.graph_id, e.stage
        )));
    }
    Ok(())
}

fn plain_affinity(
    ea: &NodeEmbeddings,
    eb: &NodeEmbeddings,
    a: &Matrix,
    sinkhorn: SinkhornConfig,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let (va, vb, vm) = (
        tape.constant(ea.matrix.clone()),
        tape.constant(eb.matrix.clone()),
        tape.constant(a.clone()),
    );
    let s = affinity_var(&mut tape, va, vb, vm, sinkhorn)?;
    Ok(tape.value(s).clone())
}

/// Doubly-stochastic affinity between two intra-stage embeddings.
pub fn intra_affinity(
    ea: &NodeEmbeddings,
    eb: &NodeEmbeddings,
    params: &ModelParams,
) -> Result<Matrix> {
    require_stage(ea, Stage::Intra)?;
    require_stage(eb, Stage::Intra)?;
    plain_affinity(ea, eb, &params.a_intra, SinkhornConfig::default())
}

/// Doubly-stochastic affinity between two cross-stage embeddings.
pub fn cross_affinity(
    ea: &NodeEmbeddings,
    eb: &NodeEmbeddings,
    params: &ModelParams,
) -> Result<Matrix> {
    require_stage(ea, Stage::Cross)?;
    require_stage(eb, Stage::Cross)?;
    plain_affinity(ea, eb, &params.a_cross, SinkhornConfig::default())
}

pub fn cross_embed(
    ea: &NodeEmbeddings,
    eb: &NodeEmbeddings,
    s: &Matrix,
    params: &ModelParams,
) -> Result<(NodeEmbeddings, NodeEmbeddings)> {
    let mut tape = Tape::new();
    let pv = params.register_frozen(&mut tape);
    let (va, vb, vs) = (
        tape.constant(ea.matrix.clone()),
        tape.constant(eb.matrix.clone()),
        tape.constant(s.clone()),
    );
    let (xa, xb) = cross_embed_var(&mut tape, &pv, va, vb, vs)?;
    let wrap = |id: &str, v: Var| NodeEmbeddings {
        graph_id: id.to_string(),
        matrix: tape.value(v).clone(),
        stage: Stage::Cross,
    };
    Ok((wrap(&ea.graph_id, xa), wrap(&eb.graph_id, xb)))
}

/// Full pairwise pipeline on two graphs: intra embedding, intra affinity,
/// cross embedding, cross affinity.
pub fn pair_affinity(
    a: &VascularGraph,
    b: &VascularGraph,
    params: &ModelParams,
    sinkhorn: SinkhornConfig,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let pv = params.register_frozen(&mut tape);
    let ea = intra_embed_var(&mut tape, &pv, a)?;
    let eb = intra_embed_var(&mut tape, &pv, b)?;
    let s = pair_affinity_var(&mut tape, &pv, ea, eb, sinkhorn)?;
    Ok(tape.value(s).clone())
}
