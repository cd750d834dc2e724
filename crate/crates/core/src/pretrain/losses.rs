use super::model::TaskModel;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::data::Subgraph;
use crate::error::{Error, Result};
use crate::paths::{mask_path, plain_tokens, Path};
use crate::sampling::NodeVectors;

/// `1 - cos(pred, target)`, in `[0, 2]`.
pub fn reconstruction_loss(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    let t = tape.constant_vec(target.to_vec())?;
    let c = tape.cosine(pred, t)?;
    let one = tape.constant(Tensor::scalar(1.0))?;
    tape.sub(one, c)
}

/// NT-Xent over `2N` rows of `z`: rows `m` and `m + N` are the two views of
/// anchor `m`. For each row the positive is its partner and the denominator
/// runs over every other row. Averaged over all `2N` rows.
pub fn loss_contrastive(tape: &mut Tape, z: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {tau}")));
    }
    let n2 = tape.shape(z).first().copied().unwrap_or(0);
    if n2 < 2 || n2 % 2 != 0 {
        return Err(Error::invalid(format!("contrastive batch needs 2N >= 2 rows, got {n2}")));
    }
    let n = n2 / 2;
    let c = tape.cosine_matrix(z)?;
    let s = tape.scale(c, 1.0 / tau)?;
    let e = tape.exp(s)?;
    let mask: Vec<f64> = (0..n2 * n2).map(|k| if k / n2 == k % n2 { 0.0 } else { 1.0 }).collect();
    let e = tape.mul_const(e, mask)?;
    let den = tape.sum_rows(e)?;
    let log_den = tape.log(den)?;
    let pos = tape.pick(s, (0..n2).map(|m| m * n2 + (m + n) % n2).collect())?;
    let per_anchor = tape.sub(log_den, pos)?;
    tape.mean(per_anchor)
}

/// `-ln sigmoid(pos - neg)`.
pub fn bpr_loss(tape: &mut Tape, pos: Var, neg: Var) -> Result<Var> {
    let diff = tape.sub(pos, neg)?;
    let ls = tape.log_sigmoid(diff)?;
    tape.scale(ls, -1.0)
}

fn ground_truth(gt: &NodeVectors, sub: &Subgraph) -> Result<Vec<f64>> {
    gt.get(sub.target)
        .map(<[f64]>::to_vec)
        .ok_or_else(|| Error::MissingGroundTruth(sub.target.to_string()))
}

/// GNN reconstruction of the target's ground-truth embedding.
pub fn loss_rg(tape: &mut Tape, store: &ParamStore, model: &TaskModel, sub: &Subgraph, meta: &NodeVectors, gt: &NodeVectors) -> Result<Var> {
    let target = ground_truth(gt, sub)?;
    let pred = model.gnn()?.forward(tape, store, &model.table, sub, meta)?;
    reconstruction_loss(tape, pred, &target)
}

/// Per-path reconstruction from the masked target position, averaged over
/// paths. Every path's anchor must be the target.
pub fn loss_rp(tape: &mut Tape, store: &ParamStore, model: &TaskModel, paths: &[Path], gt: &NodeVectors) -> Result<Var> {
    let Some(first) = paths.first() else {
        return Err(Error::invalid("no paths for path reconstruction"));
    };
    let target = gt
        .get(first.origin)
        .map(<[f64]>::to_vec)
        .ok_or_else(|| Error::MissingGroundTruth(first.origin.to_string()))?;
    let tr = model.transformer()?;
    let mut total: Option<Var> = None;
    for p in paths {
        let m = mask_path(p, p.anchor)?;
        let out = tr.read_out(tape, store, &model.table, &m.tokens(), p.anchor)?;
        let l = reconstruction_loss(tape, out, &target)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    tape.scale(total.expect("non-empty"), 1.0 / paths.len() as f64)
}

/// Contrastive loss over GNN encodings of augmented subgraph pairs.
pub fn loss_cg(tape: &mut Tape, store: &ParamStore, model: &TaskModel, views: &[(Subgraph, Subgraph)], meta: &NodeVectors, tau: f64) -> Result<Var> {
    let gnn = model.gnn()?;
    let head = model.head()?;
    let mut first = Vec::with_capacity(views.len());
    let mut second = Vec::with_capacity(views.len());
    for (a, b) in views {
        let ha = gnn.forward(tape, store, &model.table, a, meta)?;
        first.push(head.forward(tape, store, ha)?);
        let hb = gnn.forward(tape, store, &model.table, b, meta)?;
        second.push(head.forward(tape, store, hb)?);
    }
    first.extend(second);
    let z = tape.stack_rows(&first)?;
    loss_contrastive(tape, z, tau)
}

/// Contrastive loss over Transformer read-outs at the target position of
/// augmented path pairs.
pub fn loss_cp(tape: &mut Tape, store: &ParamStore, model: &TaskModel, views: &[(Path, Path)], tau: f64) -> Result<Var> {
    let tr = model.transformer()?;
    let head = model.head()?;
    let mut first = Vec::with_capacity(views.len());
    let mut second = Vec::with_capacity(views.len());
    for (a, b) in views {
        let ha = tr.read_out(tape, store, &model.table, &plain_tokens(a), a.anchor)?;
        first.push(head.forward(tape, store, ha)?);
        let hb = tr.read_out(tape, store, &model.table, &plain_tokens(b), b.anchor)?;
        second.push(head.forward(tape, store, hb)?);
    }
    first.extend(second);
    let z = tape.stack_rows(&first)?;
    loss_contrastive(tape, z, tau)
}
