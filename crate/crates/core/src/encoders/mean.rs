use super::{init::xavier_uniform, Activation, EncoderError, GraphContext, LayerOutput, LayerParams};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Var};

/// Mean-aggregation layer: `σ(h_v W_self + mean_{u ∈ N_v}(m_u) W_neigh)`.
/// Isolated nodes contribute a zero mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanLayer {
    pub w_self: ParamId,
    pub w_neigh: ParamId,
    pub activation: Activation,
}

impl MeanLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Self {
        Self {
            w_self: store.add(format!("{prefix}.w_self"), xavier_uniform(d_in, d_out, rng)),
            w_neigh: store.add(format!("{prefix}.w_neigh"), xavier_uniform(d_in, d_out, rng)),
            activation,
        }
    }

    pub(crate) fn aggregate(&self, tape: &mut Tape<'_>, ctx: &GraphContext, neigh: Var) -> Result<Var, EncoderError> {
        let n = ctx.num_nodes();
        let msgs = tape.gather_rows(neigh, ctx.messages.src.clone())?;
        let summed = tape.segment_sum(msgs, ctx.messages.dst.clone(), n)?;
        let inv = tape.constant(ctx.inv_degree.clone())?;
        let mean = tape.mul_rows(summed, inv)?;
        let w = tape.param(self.w_neigh)?;
        Ok(tape.matmul(mean, w)?)
    }

    pub(crate) fn combine(&self, tape: &mut Tape<'_>, self_repr: Var, aggregate: Var) -> Result<Var, EncoderError> {
        let w = tape.param(self.w_self)?;
        let own = tape.matmul(self_repr, w)?;
        let pre = tape.add(own, aggregate)?;
        Ok(self.activation.apply(tape, pre)?)
    }
}

pub fn homo_mean_layer(
    tape: &mut Tape<'_>,
    layer: &MeanLayer,
    ctx: &GraphContext,
    self_repr: Var,
    neigh: Var,
) -> Result<Var, EncoderError> {
    let out: LayerOutput = LayerParams::Mean(layer.clone()).apply(tape, ctx, self_repr, neigh, None)?;
    Ok(out.nodes)
}
