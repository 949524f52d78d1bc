//! Scale-gated low-rank adapter: a per-rank sigmoid gate over learnable
//! thresholds sits between the down- and up-projections, so the active
//! subspace follows the conditioning log-scale `s` continuously.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, NodeId};
use crate::tensor::{sigmoid_scalar, Tensor};

pub const SHARPNESS_INIT: f64 = 5.0;
pub const TAU_INIT: [f64; 3] = [0.0, 1.0, 4.0];

/// Reference tier proportions (object : structure : semantic) for rank 64.
const TIER_NUM: [usize; 2] = [11, 21];
const TIER_DEN: usize = 64;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("rank {0} cannot form three non-empty tiers (need rank >= 3)")]
    RankTooSmall(usize),

    #[error("gate requires a finite log-scale, got {0}")]
    NonFiniteScale(f64),
}

/// Partition of rank indices `[0, r)` into object / structure / semantic
/// intervals, stored as the two interior boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierLayout {
    pub rank: usize,
    pub object_end: usize,
    pub structure_end: usize,
}

impl TierLayout {
    pub fn for_rank(rank: usize) -> Result<Self, AdapterError> {
        if rank < 3 {
            return Err(AdapterError::RankTooSmall(rank));
        }
        // Keep the 11:21:32 proportion, rounded, every tier non-empty.
        let frac = |num: usize| (rank as f64 * num as f64 / TIER_DEN as f64).round() as usize;
        let object_end = frac(TIER_NUM[0]).clamp(1, rank - 2);
        let structure_end = (object_end + frac(TIER_NUM[1]).max(1)).min(rank - 1);
        Ok(TierLayout {
            rank,
            object_end,
            structure_end,
        })
    }

    pub fn object(&self) -> std::ops::Range<usize> {
        0..self.object_end
    }

    pub fn structure(&self) -> std::ops::Range<usize> {
        self.object_end..self.structure_end
    }

    pub fn semantic(&self) -> std::ops::Range<usize> {
        self.structure_end..self.rank
    }

    pub fn tier_of_rank(&self, k: usize) -> usize {
        if k < self.object_end {
            0
        } else if k < self.structure_end {
            1
        } else {
            2
        }
    }

    pub fn tier_ranges(&self) -> [std::ops::Range<usize>; 3] {
        [self.object(), self.structure(), self.semantic()]
    }
}

/// Gate evaluation at one log-scale: `h_k = sigmoid(alpha * (tau_k - s))`.
#[derive(Debug, Clone)]
pub struct GateVector {
    pub h: Vec<f64>,
    pub s: f64,
}

/// Low-rank pair with per-rank thresholds and a per-adapter sharpness,
/// stored as the log of the (always positive) sharpness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatedLoraAdapter {
    pub b: Tensor,
    pub a: Tensor,
    pub tau: Tensor,
    pub free_sharpness: Tensor,
    pub rank: usize,
    pub lora_scale: f64,
    pub tier_layout: TierLayout,
}

/// Tape handles for one adapter's trainable tensors.
#[derive(Debug, Clone, Copy)]
pub struct AdapterNodes {
    pub b: NodeId,
    pub a: NodeId,
    pub tau: NodeId,
    pub free_sharpness: NodeId,
}

/// Conditioning scale fed to a gate: either a plain value or a node already
/// on the tape (the estimated mean, when routing through the scale head).
#[derive(Debug, Clone, Copy)]
pub enum ScaleInput {
    Value(f64),
    Node(NodeId),
}

impl ScaleInput {
    pub fn into_node(self, graph: &mut Graph) -> NodeId {
        match self {
            ScaleInput::Value(v) => graph.leaf(Tensor::scalar(v)),
            ScaleInput::Node(n) => n,
        }
    }

    pub fn value(&self, graph: &Graph) -> f64 {
        match *self {
            ScaleInput::Value(v) => v,
            ScaleInput::Node(n) => graph.value(n).item(),
        }
    }
}

impl GatedLoraAdapter {
    /// Tier-structured initialization: thresholds 0 / 1 / 4 per tier,
    /// sharpness 5, `A` uniform in [-1/sqrt(d_in), 1/sqrt(d_in)], `B` zero
    /// so the update vanishes at step 0.
    pub fn init_tiers(
        rank: usize,
        d_out: usize,
        d_in: usize,
        lora_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, AdapterError> {
        let tier_layout = TierLayout::for_rank(rank)?;
        let mut tau = vec![0.0; rank];
        for (tier, range) in tier_layout.tier_ranges().into_iter().enumerate() {
            for slot in &mut tau[range] {
                *slot = TAU_INIT[tier];
            }
        }
        let bound = 1.0 / (d_in as f64).sqrt();
        let a_data: Vec<f64> = (0..rank * d_in).map(|_| rng.gen_range(-bound..bound)).collect();
        Ok(GatedLoraAdapter {
            b: Tensor::zeros(vec![d_out, rank]),
            a: Tensor::new(vec![rank, d_in], a_data).expect("A shape"),
            tau: Tensor::vector(tau),
            free_sharpness: Tensor::scalar(SHARPNESS_INIT.ln()),
            rank,
            lora_scale,
            tier_layout,
        })
    }

    pub fn d_out(&self) -> usize {
        self.b.shape()[0]
    }

    pub fn d_in(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn sharpness(&self) -> f64 {
        self.free_sharpness.item().exp()
    }

    pub fn scale_factor(&self) -> f64 {
        self.lora_scale / self.rank as f64
    }

    /// Pure gate evaluation for a frozen adapter.
    pub fn gate(&self, s: f64) -> Result<GateVector, AdapterError> {
        if !s.is_finite() {
            return Err(AdapterError::NonFiniteScale(s));
        }
        let alpha = self.sharpness();
        let h = self
            .tau
            .data()
            .iter()
            .map(|&t| sigmoid_scalar(alpha * (t - s)))
            .collect();
        Ok(GateVector { h, s })
    }

    /// Materialized update `(lora_scale/r) * B diag(h(s)) A`. Diagnostic
    /// path; forward passes use the factored form instead.
    pub fn delta_w(&self, s: f64) -> Result<Tensor, AdapterError> {
        let gate = self.gate(s)?;
        let (d_out, r) = (self.d_out(), self.rank);
        let d_in = self.d_in();
        let c = self.scale_factor();
        let mut out = vec![0.0; d_out * d_in];
        for i in 0..d_out {
            for k in 0..r {
                let w = c * self.b.data()[i * r + k] * gate.h[k];
                if w == 0.0 {
                    continue;
                }
                let arow = &self.a.data()[k * d_in..(k + 1) * d_in];
                let orow = &mut out[i * d_in..(i + 1) * d_in];
                for j in 0..d_in {
                    orow[j] += w * arow[j];
                }
            }
        }
        Ok(Tensor::new(vec![d_out, d_in], out).expect("delta shape"))
    }

    /// `(lora_scale/r) * sqrt(tr(B^T B A A^T))`, the Frobenius magnitude of
    /// the ungated update.
    pub fn effective_magnitude(&self) -> f64 {
        let r = self.rank;
        let d_out = self.d_out();
        let d_in = self.d_in();
        let mut gb = vec![0.0; r * r];
        for k in 0..d_out {
            let row = &self.b.data()[k * r..(k + 1) * r];
            for i in 0..r {
                for j in 0..r {
                    gb[i * r + j] += row[i] * row[j];
                }
            }
        }
        let mut ga = vec![0.0; r * r];
        for i in 0..r {
            let ri = &self.a.data()[i * d_in..(i + 1) * d_in];
            for j in 0..r {
                let rj = &self.a.data()[j * d_in..(j + 1) * d_in];
                let mut acc = 0.0;
                for k in 0..d_in {
                    acc += ri[k] * rj[k];
                }
                ga[i * r + j] = acc;
            }
        }
        // tr(Gb * Ga) with both matrices symmetric
        let trace: f64 = gb.iter().zip(&ga).map(|(x, y)| x * y).sum();
        self.scale_factor() * trace.max(0.0).sqrt()
    }

    /// Register this adapter's tensors on a tape.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> AdapterNodes {
        let mut ins = |t: &Tensor| {
            if trainable {
                graph.param(t.clone())
            } else {
                graph.leaf(t.clone())
            }
        };
        AdapterNodes {
            b: ins(&self.b),
            a: ins(&self.a),
            tau: ins(&self.tau),
            free_sharpness: ins(&self.free_sharpness),
        }
    }

    /// Gate vector as tape nodes: `sigmoid(exp(free) * (tau - s))`.
    pub fn gate_nodes(
        graph: &mut Graph,
        nodes: AdapterNodes,
        s: NodeId,
    ) -> Result<NodeId, crate::error::DiffError> {
        let alpha = graph.exp(nodes.free_sharpness)?;
        let diff = graph.sub_scalar(nodes.tau, s)?;
        let scaled = graph.mul_scalar(diff, alpha)?;
        graph.sigmoid(scaled)
    }

    /// Factored update applied to an activation:
    /// `(lora_scale/r) * B (h(s) ⊙ (A x))`.
    pub fn apply_nodes(
        &self,
        graph: &mut Graph,
        nodes: AdapterNodes,
        x: NodeId,
        s: NodeId,
    ) -> Result<NodeId, crate::error::DiffError> {
        let ax = graph.matmul(nodes.a, x)?;
        let h = Self::gate_nodes(graph, nodes, s)?;
        let gated = graph.mul(h, ax)?;
        let up = graph.matmul(nodes.b, gated)?;
        graph.scale_const(up, self.scale_factor())
    }
}

/// `frozen_w x + (lora_scale/r) B (h(s) ⊙ (A x))` on the tape.
pub fn apply_adapted(
    graph: &mut Graph,
    frozen_w: NodeId,
    adapter: &GatedLoraAdapter,
    nodes: AdapterNodes,
    x: NodeId,
    s: NodeId,
) -> Result<NodeId, crate::error::DiffError> {
    let base = graph.matmul(frozen_w, x)?;
    let delta = adapter.apply_nodes(graph, nodes, x, s)?;
    graph.add(base, delta)
}
