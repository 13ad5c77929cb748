//! Ghost value import and residual export between ranks.
//!
//! Ranks are threads connected by in-order channels carrying byte buffers.
//! A message is a little-endian header `{source, kind, count}` of three
//! `u64` followed by `count` little-endian `f64` in plan order. Plans list,
//! per neighbor, the cells and the dofs of each cell that are exchanged in
//! ascending (cell, dof) order. Slim plans only carry the coefficient layers
//! that the face kernels read.

use std::cell::Cell;
use std::sync::mpsc::{channel, Receiver, Sender};

use crate::basis::ShapeMatrices1D;
use crate::dof::{face_dofs, DofLayout, ExchangeState, GhostedVector};
use crate::error::{DgError, Result};
use crate::mesh::Partition;

/// Data the face integrals need from neighbor cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaceNeeds {
    None,
    Values,
    ValuesAndFirstDerivatives,
}

/// Whether plans send the face layers only or complete cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlanKind {
    Slim,
    Full,
}

/// Exchange with one neighbor rank.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborPlan {
    pub peer: usize,
    /// Cells with the dofs (within the cell) that are exchanged.
    pub cells: Vec<(usize, Vec<usize>)>,
    /// Rank-local vector indices in pack order.
    pub indices: Vec<usize>,
}

/// Communication pattern of one rank.
#[derive(Clone, Debug, PartialEq)]
pub struct ExchangePlan {
    pub rank: usize,
    /// Owned cells sent to ranks that hold them as ghosts.
    pub send: Vec<NeighborPlan>,
    /// Ghost cells received from their owners.
    pub recv: Vec<NeighborPlan>,
}

impl ExchangePlan {
    pub fn values_sent(&self) -> usize {
        self.send.iter().map(|n| n.indices.len()).sum()
    }

    pub fn values_received(&self) -> usize {
        self.recv.iter().map(|n| n.indices.len()).sum()
    }

    /// Number of values received for each ghost cell.
    pub fn values_per_ghost_cell(&self) -> Vec<(usize, usize)> {
        self.recv.iter().flat_map(|n| n.cells.iter().map(|(c, dofs)| (*c, dofs.len()))).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.send.is_empty() && self.recv.is_empty()
    }
}

/// Builds mirrored plans for all ranks.
pub fn build_exchange_plans(
    partition: &Partition,
    layouts: &[DofLayout],
    shapes: &ShapeMatrices1D,
    needs: FaceNeeds,
    kind: PlanKind,
) -> Vec<ExchangePlan> {
    let n_ranks = partition.n_ranks;
    let mut plans: Vec<ExchangePlan> =
        (0..n_ranks).map(|rank| ExchangePlan { rank, send: Vec::new(), recv: Vec::new() }).collect();
    if needs == FaceNeeds::None {
        return plans;
    }
    let d = layouts[0].dim;
    let k = layouts[0].k;
    let all: Vec<usize> = (0..k.pow(d as u32)).collect();
    for r in 0..n_ranks {
        // Dof sets per ghost cell, united over the faces of this rank.
        let mut wanted: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for f in partition.faces_of(r) {
            let face = &partition.faces[f];
            let sides = [
                Some((face.interior_cell, face.interior_face_number)),
                face.exterior_cell.map(|c| (c, face.exterior_face_number)),
            ];
            for (c, fnum) in sides.into_iter().flatten() {
                if partition.cell_owner[c] == r {
                    continue;
                }
                let dofs = match kind {
                    PlanKind::Full => all.clone(),
                    PlanKind::Slim => {
                        let layers =
                            shapes.face_layers(fnum as usize % 2, needs == FaceNeeds::ValuesAndFirstDerivatives);
                        face_dofs(d, k, fnum as usize, &layers)
                    }
                };
                let entry = wanted.entry(c).or_default();
                entry.extend(dofs);
                entry.sort_unstable();
                entry.dedup();
            }
        }
        let mut by_owner: std::collections::BTreeMap<usize, Vec<(usize, Vec<usize>)>> = Default::default();
        for (c, dofs) in wanted {
            by_owner.entry(partition.cell_owner[c]).or_default().push((c, dofs));
        }
        for (owner, cells) in by_owner {
            let local = |layout: &DofLayout| -> Vec<usize> {
                cells
                    .iter()
                    .flat_map(|(c, dofs)| {
                        let a = layout.cell_access(*c).expect("exchanged cell present in layout");
                        dofs.iter().map(move |&j| a.index(j))
                    })
                    .collect()
            };
            plans[r].recv.push(NeighborPlan { peer: owner, cells: cells.clone(), indices: local(&layouts[r]) });
            plans[owner].send.push(NeighborPlan { peer: r, cells: cells.clone(), indices: local(&layouts[owner]) });
        }
    }
    for p in plans.iter_mut() {
        p.send.sort_by_key(|n| n.peer);
    }
    plans
}

/// Message kinds on the wire.
pub const KIND_UPDATE: u64 = 1;
pub const KIND_COMPRESS: u64 = 2;

pub fn encode_message(source: usize, kind: u64, values: &[f64]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + 8 * values.len());
    buf.extend_from_slice(&(source as u64).to_le_bytes());
    buf.extend_from_slice(&kind.to_le_bytes());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Returns `(source, kind, values)`.
pub fn decode_message(buf: &[u8]) -> Result<(usize, u64, Vec<f64>)> {
    let word = |i: usize| -> Result<[u8; 8]> {
        buf.get(8 * i..8 * i + 8)
            .map(|b| b.try_into().expect("eight bytes"))
            .ok_or_else(|| DgError::Transport("truncated message".into()))
    };
    let source = u64::from_le_bytes(word(0)?) as usize;
    let kind = u64::from_le_bytes(word(1)?);
    let count = u64::from_le_bytes(word(2)?) as usize;
    if buf.len() != 24 + 8 * count {
        return Err(DgError::Transport(format!("message length {} does not match count {count}", buf.len())));
    }
    let values = (0..count).map(|i| word(3 + i).map(f64::from_le_bytes)).collect::<Result<_>>()?;
    Ok((source, kind, values))
}

/// One rank's channel endpoints.
pub struct Endpoint {
    pub rank: usize,
    pub n_ranks: usize,
    senders: Vec<Option<Sender<Vec<u8>>>>,
    receivers: Vec<Option<Receiver<Vec<u8>>>>,
    sent_values: Cell<usize>,
    received_values: Cell<usize>,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint").field("rank", &self.rank).field("n_ranks", &self.n_ranks).finish()
    }
}

/// Fully connected set of endpoints, one per rank.
pub fn create_world(n_ranks: usize) -> Vec<Endpoint> {
    let mut senders: Vec<Vec<Option<Sender<Vec<u8>>>>> =
        (0..n_ranks).map(|_| (0..n_ranks).map(|_| None).collect()).collect();
    let mut receivers: Vec<Vec<Option<Receiver<Vec<u8>>>>> =
        (0..n_ranks).map(|_| (0..n_ranks).map(|_| None).collect()).collect();
    for src in 0..n_ranks {
        for dst in 0..n_ranks {
            if src != dst {
                let (tx, rx) = channel();
                senders[src][dst] = Some(tx);
                receivers[dst][src] = Some(rx);
            }
        }
    }
    senders
        .into_iter()
        .zip(receivers)
        .enumerate()
        .map(|(rank, (s, r))| Endpoint {
            rank,
            n_ranks,
            senders: s,
            receivers: r,
            sent_values: Cell::new(0),
            received_values: Cell::new(0),
        })
        .collect()
}

impl Endpoint {
    pub fn send(&self, dst: usize, kind: u64, values: &[f64]) -> Result<()> {
        let tx = self
            .senders
            .get(dst)
            .and_then(|s| s.as_ref())
            .ok_or_else(|| DgError::Transport(format!("rank {} has no channel to {dst}", self.rank)))?;
        tx.send(encode_message(self.rank, kind, values))
            .map_err(|_| DgError::Transport(format!("rank {dst} hung up")))?;
        self.sent_values.set(self.sent_values.get() + values.len());
        Ok(())
    }

    pub fn recv(&self, src: usize, kind: u64) -> Result<Vec<f64>> {
        let rx = self
            .receivers
            .get(src)
            .and_then(|r| r.as_ref())
            .ok_or_else(|| DgError::Transport(format!("rank {} has no channel from {src}", self.rank)))?;
        let buf = rx.recv().map_err(|_| DgError::Transport(format!("rank {src} hung up")))?;
        let (source, got_kind, values) = decode_message(&buf)?;
        if source != src || got_kind != kind {
            return Err(DgError::Transport(format!(
                "expected kind {kind} from {src}, got kind {got_kind} from {source}"
            )));
        }
        self.received_values.set(self.received_values.get() + values.len());
        Ok(values)
    }

    /// Values sent and received since creation.
    pub fn traffic(&self) -> (usize, usize) {
        (self.sent_values.get(), self.received_values.get())
    }
}

fn endpoint<'a>(plan: &ExchangePlan, ep: Option<&'a Endpoint>) -> Result<Option<&'a Endpoint>> {
    if plan.is_empty() {
        return Ok(ep);
    }
    ep.map(Some).ok_or_else(|| DgError::Transport("plan has neighbors but no endpoint was given".into()))
}

/// Posts the owned values requested by neighbors.
pub fn start_update(v: &mut GhostedVector, plan: &ExchangePlan, ep: Option<&Endpoint>) -> Result<()> {
    match v.state() {
        ExchangeState::Clean => {}
        s => {
            return Err(DgError::ContractViolation(format!("ghost update started in state {s:?}")));
        }
    }
    if let Some(ep) = endpoint(plan, ep)? {
        for n in &plan.send {
            let vals: Vec<f64> = n.indices.iter().map(|&i| v.data[i]).collect();
            ep.send(n.peer, KIND_UPDATE, &vals)?;
        }
    }
    Ok(())
}

/// Receives ghost values; the vector is then readable on ghost cells.
pub fn finish_update(v: &mut GhostedVector, plan: &ExchangePlan, ep: Option<&Endpoint>) -> Result<()> {
    if let Some(ep) = endpoint(plan, ep)? {
        for n in &plan.recv {
            let vals = ep.recv(n.peer, KIND_UPDATE)?;
            if vals.len() != n.indices.len() {
                return Err(DgError::Transport(format!("expected {} values, got {}", n.indices.len(), vals.len())));
            }
            for (&i, x) in n.indices.iter().zip(vals) {
                v.data[i] = x;
            }
        }
    }
    v.set_state(ExchangeState::GhostsValid);
    Ok(())
}

pub fn update_ghost_values(v: &mut GhostedVector, plan: &ExchangePlan, ep: Option<&Endpoint>) -> Result<()> {
    start_update(v, plan, ep)?;
    finish_update(v, plan, ep)
}

/// Sends ghost contributions to their owners, adds received contributions
/// into owned entries and zeros the ghost region.
pub fn compress(v: &mut GhostedVector, plan: &ExchangePlan, ep: Option<&Endpoint>) -> Result<()> {
    if let Some(ep) = endpoint(plan, ep)? {
        for n in &plan.recv {
            let vals: Vec<f64> = n.indices.iter().map(|&i| v.data[i]).collect();
            ep.send(n.peer, KIND_COMPRESS, &vals)?;
        }
        for n in &plan.send {
            let vals = ep.recv(n.peer, KIND_COMPRESS)?;
            if vals.len() != n.indices.len() {
                return Err(DgError::Transport(format!("expected {} values, got {}", n.indices.len(), vals.len())));
            }
            for (&i, x) in n.indices.iter().zip(vals) {
                v.data[i] += x;
            }
        }
    }
    v.zero_out_ghosts();
    Ok(())
}
