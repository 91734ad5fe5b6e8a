//! Single-sample entry points. Each builds a throwaway tape.

use super::{Graph, IntentModel, ModelError, ModelInput, PairSum, Variant};
use crate::numeric::{kernels, ParamStore, Real, Tape, Tensor};

/// Frame-level features `f_s [τ, h, w, c]` and the aggregated map `f_st [h, w, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatures<T: Real = f32> {
    pub frame_level: Tensor<T>,
    pub spatiotemporal: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logit: f64,
    pub probability: f64,
}

fn expect_shape<T: Real>(what: &'static str, t: &Tensor<T>, want: &[usize]) -> Result<(), ModelError> {
    if t.shape() != want {
        return Err(ModelError::Geometry { what, expected: want.to_vec(), got: t.shape().to_vec() });
    }
    Ok(())
}

/// Run every frame of `frames [N, C, H, W]` through the shared backbone;
/// returns `[N, h, w, c]`.
pub fn spatial_encode<T: Real>(frames: &Tensor<T>, model: &IntentModel<T>) -> Result<Tensor<T>, ModelError> {
    let cfg = &model.config;
    let n = frames.shape().first().copied().unwrap_or(0);
    expect_shape(
        "frames",
        frames,
        &[n.max(1), cfg.frame_channels, cfg.frame_height, cfg.frame_width],
    )?;
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, model);
    let x = g.tape.input(frames.clone());
    let fmap = g.backbone(x)?;
    let out = g.tape.permute(fmap, &[0, 2, 3, 1])?;
    Ok(tape.value(out).clone())
}

/// `f_s [τ, h, w, c] → f_st [h, w, c]`
pub fn temporal_aggregate<T: Real>(f_s: &Tensor<T>, model: &IntentModel<T>) -> Result<Tensor<T>, ModelError> {
    let cfg = &model.config;
    let (h, w) = cfg.feature_map().expect("validated config");
    let c = cfg.feature_channels;
    expect_shape("f_s", f_s, &[cfg.tau, h, w, c])?;
    let mut tape = Tape::new();
    let g = Graph::new(&mut tape, model);
    let wt = g.param("temporal.weight")?;
    let bt = g.param("temporal.bias")?;
    let x = g.tape.input(f_s.clone());
    let x = g.tape.permute(x, &[1, 2, 0, 3])?;
    let x = g.tape.reshape(x, &[h * w, cfg.tau * c])?;
    let y = g.tape.linear(x, wt, bt)?;
    let y = g.tape.reshape(y, &[h, w, c])?;
    Ok(tape.value(y).clone())
}

/// Both visual stages at once.
pub fn visual_features<T: Real>(frames: &Tensor<T>, model: &IntentModel<T>) -> Result<VisualFeatures<T>, ModelError> {
    let frame_level = spatial_encode(frames, model)?;
    let spatiotemporal = temporal_aggregate(&frame_level, model)?;
    Ok(VisualFeatures { frame_level, spatiotemporal })
}

/// Final GRU state `q [d_h]` for normalized boxes `[τ, 4]`.
pub fn encode_trajectory<T: Real>(boxes: &Tensor<T>, model: &IntentModel<T>) -> Result<Tensor<T>, ModelError> {
    let cfg = &model.config;
    expect_shape("boxes", boxes, &[cfg.tau, 4])?;
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, model);
    let x = g.tape.input(boxes.clone());
    let q = g.trajectory(x, 1)?;
    let q = g.tape.reshape(q, &[cfg.traj_hidden])?;
    Ok(tape.value(q).clone())
}

/// One GRU update with the `gru.*` tensors of `params`.
pub fn gru_cell_step<T: Real>(
    x_t: &Tensor<T>,
    h_prev: &Tensor<T>,
    params: &ParamStore<T>,
) -> Result<Tensor<T>, ModelError> {
    let w_z = params.get("gru.w_z").ok_or_else(|| ModelError::MissingParam("gru.w_z".into()))?;
    let (d_h, d_in) = (w_z.shape()[0], w_z.shape()[1]);
    let batch = x_t.shape().first().copied().unwrap_or(0).max(1);
    expect_shape("x_t", x_t, &[batch, d_in])?;
    expect_shape("h_prev", h_prev, &[batch, d_h])?;
    for gate in ["z", "r", "h"] {
        for (kind, shape) in [("w", vec![d_h, d_in]), ("u", vec![d_h, d_h]), ("b", vec![d_h])] {
            let name = format!("gru.{kind}_{gate}");
            let t = params.get(&name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape { name, expected: shape, got: t.shape().to_vec() });
            }
        }
    }
    let gru: ParamStore<T> = params
        .iter()
        .filter(|(n, _)| n.starts_with("gru."))
        .map(|(n, t)| (n.to_owned(), t.clone()))
        .collect();
    let model = IntentModel { config: Default::default(), params: gru };
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, &model);
    let x = g.tape.input(x_t.clone());
    let h = g.tape.input(h_prev.clone());
    let out = g.gru_step(x, h)?;
    Ok(tape.value(out).clone())
}

/// Relation features `[d_r]` by explicit enumeration of every cell pair.
pub fn relation_forward<T: Real>(
    f_st: &Tensor<T>,
    q: &Tensor<T>,
    model: &IntentModel<T>,
) -> Result<Tensor<T>, ModelError> {
    relation_forward_traced(f_st, q, model, PairSum::Enumerate).map(|(t, _)| t)
}

/// Like [`relation_forward`] with a choice of evaluation strategy; also
/// returns the number of rows `g_θ` was applied to.
pub fn relation_forward_traced<T: Real>(
    f_st: &Tensor<T>,
    q: &Tensor<T>,
    model: &IntentModel<T>,
    mode: PairSum,
) -> Result<(Tensor<T>, usize), ModelError> {
    let cfg = &model.config;
    if cfg.variant != Variant::Relation {
        return Err(ModelError::VariantMismatch { expected: Variant::Relation, got: cfg.variant });
    }
    let (h, w) = cfg.feature_map().expect("validated config");
    let c = cfg.feature_channels;
    expect_shape("f_st", f_st, &[h, w, c])?;
    expect_shape("q", q, &[cfg.traj_hidden])?;
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, model);
    let cells = g.tape.input(f_st.clone().reshape(&[h * w, c])?);
    let qn = g.tape.input(q.clone().reshape(&[1, cfg.traj_hidden])?);
    let out = g.relation(cells, qn, 1, mode)?;
    let out = g.tape.reshape(out, &[cfg.relation_dim])?;
    let weight = g.param("relation.weight")?;
    let evaluations = tape
        .ids()
        .filter(|&id| tape.op(id).name() == "linear" && tape.inputs_of(id)[1] == weight)
        .map(|id| tape.value(id).shape()[0])
        .sum();
    Ok((tape.value(out).clone(), evaluations))
}

fn forward<T: Real>(
    frames: &Tensor<T>,
    boxes: &Tensor<T>,
    model: &IntentModel<T>,
    expected: Variant,
) -> Result<Prediction, ModelError> {
    if model.config.variant != expected {
        return Err(ModelError::VariantMismatch { expected, got: model.config.variant });
    }
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, model);
    let input = ModelInput::single(frames.clone(), boxes.clone());
    let logit = g.logits(&input)?;
    let l = tape.value(logit).data()[0];
    Ok(Prediction { logit: l.as_f64(), probability: kernels::sigmoid(l).as_f64() })
}

/// `σ(MLP(R(f_st, q)))` for one observation window.
pub fn predict_intent<T: Real>(
    frames: &Tensor<T>,
    boxes: &Tensor<T>,
    model: &IntentModel<T>,
) -> Result<Prediction, ModelError> {
    forward(frames, boxes, model, Variant::Relation)
}

/// Ablation baseline: `σ(MLP(W·[flatten(f_st), q] + b))`.
pub fn baseline_forward<T: Real>(
    frames: &Tensor<T>,
    boxes: &Tensor<T>,
    model: &IntentModel<T>,
) -> Result<Prediction, ModelError> {
    forward(frames, boxes, model, Variant::NoRelation)
}
