//! Batched forward graph on a [`Tape`].
//!
//! Layouts: frames `[B·τ, C, H, W]` (sample-major), boxes `[B·τ, 4]`, feature
//! maps `[B·τ, c, h, w]`, cells `[B·K, c]` with cell index `y·w + x`.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{IntentModel, ModelConfig, ModelError, PairSum, Variant, PADDING};
use crate::numeric::{NodeId, Real, Tape, Tensor};

/// A batch of observation windows ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T: Real = f32> {
    /// `[B·τ, C, H, W]`
    pub frames: Tensor<T>,
    /// `[B·τ, 4]` normalized boxes.
    pub boxes: Tensor<T>,
    pub batch: usize,
}

impl<T: Real> ModelInput<T> {
    /// Wrap a single window `frames [τ, C, H, W]`, `boxes [τ, 4]`.
    pub fn single(frames: Tensor<T>, boxes: Tensor<T>) -> Self {
        ModelInput { frames, boxes, batch: 1 }
    }

    pub fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let rows = self.batch * config.tau;
        let want_frames =
            vec![rows, config.frame_channels, config.frame_height, config.frame_width];
        if self.frames.shape() != want_frames.as_slice() {
            return Err(ModelError::Geometry {
                what: "frames",
                expected: want_frames,
                got: self.frames.shape().to_vec(),
            });
        }
        if self.boxes.shape() != [rows, 4] {
            return Err(ModelError::Geometry {
                what: "boxes",
                expected: vec![rows, 4],
                got: self.boxes.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Graph builder with every model parameter already placed on the tape.
pub struct Graph<'t, T: Real> {
    pub tape: &'t mut Tape<T>,
    pub config: &'t ModelConfig,
    params: BTreeMap<String, NodeId>,
}

impl<'t, T: Real> Graph<'t, T> {
    pub fn new(tape: &'t mut Tape<T>, model: &'t IntentModel<T>) -> Self {
        let params = model
            .params
            .iter()
            .map(|(name, t)| (name.to_owned(), tape.param(name, t.clone())))
            .collect();
        Graph { tape, config: &model.config, params }
    }

    pub fn param(&self, name: &str) -> Result<NodeId, ModelError> {
        self.params.get(name).copied().ok_or_else(|| ModelError::MissingParam(name.to_owned()))
    }

    /// `[N, C, H, W] → [N, c, h, w]`
    pub fn backbone(&mut self, frames: NodeId) -> Result<NodeId, ModelError> {
        let mut x = frames;
        for (i, block) in self.config.backbone_blocks.iter().enumerate() {
            let k = self.param(&format!("backbone.{i}.weight"))?;
            let b = self.param(&format!("backbone.{i}.bias"))?;
            x = self.tape.conv2d(x, k, block.stride, PADDING)?;
            x = self.tape.add_channel_bias(x, b)?;
            x = self.tape.relu(x)?;
        }
        Ok(x)
    }

    /// `[B·τ, c, h, w] → [B·K, c]`: one shared `c × τc` map per cell.
    pub fn temporal(&mut self, fmap: NodeId, batch: usize) -> Result<NodeId, ModelError> {
        let cfg = self.config;
        let (h, w) = cfg.feature_map().expect("validated config");
        let c = cfg.feature_channels;
        let x = self.tape.reshape(fmap, &[batch, cfg.tau, c, h, w])?;
        let x = self.tape.permute(x, &[0, 3, 4, 1, 2])?;
        let x = self.tape.reshape(x, &[batch * h * w, cfg.tau * c])?;
        let wt = self.param("temporal.weight")?;
        let bt = self.param("temporal.bias")?;
        Ok(self.tape.linear(x, wt, bt)?)
    }

    /// One GRU update on `x [B, 4]`, `h [B, d_h]`.
    pub fn gru_step(&mut self, x: NodeId, h: NodeId) -> Result<NodeId, ModelError> {
        let gate = |g: &mut Self, name: &str, recurrent: NodeId| -> Result<NodeId, ModelError> {
            let w = g.param(&format!("gru.w_{name}"))?;
            let u = g.param(&format!("gru.u_{name}"))?;
            let b = g.param(&format!("gru.b_{name}"))?;
            let input = g.tape.linear(x, w, b)?;
            let rec = g.tape.matmul_nt(recurrent, u)?;
            Ok(g.tape.add(input, rec)?)
        };
        let z = gate(self, "z", h)?;
        let z = self.tape.sigmoid(z)?;
        let r = gate(self, "r", h)?;
        let r = self.tape.sigmoid(r)?;
        let rh = self.tape.mul(r, h)?;
        let cand = gate(self, "h", rh)?;
        let cand = self.tape.tanh(cand)?;
        // h' = (1 − z)⊙h + z⊙ĥ = h + z⊙(ĥ − h)
        let diff = self.tape.sub(cand, h)?;
        let step = self.tape.mul(z, diff)?;
        Ok(self.tape.add(h, step)?)
    }

    /// `[B·τ, 4] → [B, d_h]`, starting from a zero state.
    pub fn trajectory(&mut self, boxes: NodeId, batch: usize) -> Result<NodeId, ModelError> {
        let tau = self.config.tau;
        let mut h = self.tape.input(Tensor::zeros(&[batch, self.config.traj_hidden]));
        for t in 0..tau {
            let rows: Arc<[usize]> = (0..batch).map(|b| b * tau + t).collect();
            let x = self.tape.gather_rows(boxes, rows)?;
            h = self.gru_step(x, h)?;
        }
        Ok(h)
    }

    /// Σ over cell pairs of `g_θ(f_m, f_n, q)`; `f_φ` is the identity.
    /// `cells [B·K, c]`, `q [B, d_h]` → `[B, d_r]`.
    pub fn relation(
        &mut self,
        cells: NodeId,
        q: NodeId,
        batch: usize,
        mode: PairSum,
    ) -> Result<NodeId, ModelError> {
        let cfg = self.config;
        let k = cfg.cells();
        let wg = self.param("relation.weight")?;
        let bg = self.param("relation.bias")?;
        match mode {
            PairSum::Enumerate => {
                let pairs = cfg.cell_pairs();
                let p = pairs.len();
                let mut rows_m = Vec::with_capacity(batch * p);
                let mut rows_n = Vec::with_capacity(batch * p);
                let mut rows_q = Vec::with_capacity(batch * p);
                for b in 0..batch {
                    for &(m, n) in &pairs {
                        rows_m.push(b * k + m);
                        rows_n.push(b * k + n);
                        rows_q.push(b);
                    }
                }
                let fm = self.tape.gather_rows(cells, rows_m.into())?;
                let fn_ = self.tape.gather_rows(cells, rows_n.into())?;
                let qq = self.tape.gather_rows(q, rows_q.into())?;
                let triplets = self.tape.concat_cols(&[fm, fn_, qq])?;
                let per_pair = self.tape.linear(triplets, wg, bg)?;
                let per_pair = self.tape.reshape(per_pair, &[batch, p, cfg.relation_dim])?;
                Ok(self.tape.sum_axis(per_pair, 1)?)
            }
            PairSum::Factorized => {
                // Each cell is the first (and the second) member of `k` pairs,
                // or `k − 1` without self-pairs.
                let per_cell = if cfg.include_self_pairs { k } else { k - 1 } as f64;
                let p = cfg.pair_count() as f64;
                let x = self.tape.reshape(cells, &[batch, k, cfg.feature_channels])?;
                let pooled = self.tape.sum_axis(x, 1)?;
                let pooled = self.tape.scale(pooled, per_cell)?;
                let qs = self.tape.scale(q, p)?;
                let x = self.tape.concat_cols(&[pooled, pooled, qs])?;
                let bias = self.tape.scale(bg, p)?;
                Ok(self.tape.linear(x, wg, bias)?)
            }
        }
    }

    /// Ablation path: one linear layer over `[flatten(f_st), q]`.
    pub fn fusion(&mut self, cells: NodeId, q: NodeId, batch: usize) -> Result<NodeId, ModelError> {
        let cfg = self.config;
        let flat = self.tape.reshape(cells, &[batch, cfg.cells() * cfg.feature_channels])?;
        let x = self.tape.concat_cols(&[flat, q])?;
        let w = self.param("fusion.weight")?;
        let b = self.param("fusion.bias")?;
        Ok(self.tape.linear(x, w, b)?)
    }

    /// `[B, d_r] → [B]` logits.
    pub fn classifier(&mut self, x: NodeId, batch: usize) -> Result<NodeId, ModelError> {
        let layers = self.config.classifier_hidden.len() + 1;
        let mut x = x;
        for i in 0..layers {
            let w = self.param(&format!("classifier.{i}.weight"))?;
            let b = self.param(&format!("classifier.{i}.bias"))?;
            x = self.tape.linear(x, w, b)?;
            if i + 1 < layers {
                x = self.tape.relu(x)?;
            }
        }
        Ok(self.tape.reshape(x, &[batch])?)
    }

    /// Pre-sigmoid intent logits for the configured variant.
    pub fn logits(&mut self, input: &ModelInput<T>) -> Result<NodeId, ModelError> {
        input.check(self.config)?;
        let b = input.batch;
        let frames = self.tape.input(input.frames.clone());
        let boxes = self.tape.input(input.boxes.clone());
        let fmap = self.backbone(frames)?;
        let cells = self.temporal(fmap, b)?;
        let q = self.trajectory(boxes, b)?;
        let fused = match self.config.variant {
            Variant::Relation => self.relation(cells, q, b, self.config.pair_sum)?,
            Variant::NoRelation => self.fusion(cells, q, b)?,
        };
        self.classifier(fused, b)
    }
}
