use super::context::direction_slot;
use super::{init::xavier_uniform, Activation, Composition, EncoderError, GraphContext, LayerOutput, LayerParams};
use crate::tensor::{DenseMatrix, ParamId, ParamStore, RngStream, Tape, Var};

/// CompGCN layer:
/// `σ(Σ_{(u,r,dir) ∈ N_v} φ(m_u, h_r) W_dir + φ(h_v, h_loop) W_self)`
/// with relation update `h_r' = h_r W_rel`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompGcnLayer {
    pub w_in: ParamId,
    pub w_out: ParamId,
    pub w_self: ParamId,
    pub w_rel: ParamId,
    /// Learned self-loop relation vector (1×d_in).
    pub h_loop: ParamId,
    pub d_out: usize,
    pub composition: Composition,
    pub activation: Activation,
}

impl CompGcnLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        composition: Composition,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Self {
        Self {
            w_in: store.add(format!("{prefix}.w_in"), xavier_uniform(d_in, d_out, rng)),
            w_out: store.add(format!("{prefix}.w_out"), xavier_uniform(d_in, d_out, rng)),
            w_self: store.add(format!("{prefix}.w_self"), xavier_uniform(d_in, d_out, rng)),
            w_rel: store.add(format!("{prefix}.w_rel"), xavier_uniform(d_in, d_out, rng)),
            h_loop: store.add(format!("{prefix}.h_loop"), xavier_uniform(1, d_in, rng)),
            d_out,
            composition,
            activation,
        }
    }

    pub(crate) fn aggregate(
        &self,
        tape: &mut Tape<'_>,
        ctx: &GraphContext,
        neigh: Var,
        relations: Var,
    ) -> Result<Var, EncoderError> {
        let n = ctx.num_nodes();
        let mut total: Option<Var> = None;
        for group in &ctx.direction_groups {
            let w = match direction_slot(group.direction) {
                0 => self.w_in,
                _ => self.w_out,
            };
            let w = tape.param(w)?;
            let ent = tape.gather_rows(neigh, group.src.clone())?;
            let rel = tape.gather_rows(relations, group.rel.clone())?;
            let comp = self.composition.apply(tape, ent, rel)?;
            let proj = tape.matmul(comp, w)?;
            let summed = tape.segment_sum(proj, group.dst.clone(), n)?;
            total = Some(match total {
                Some(t) => tape.add(t, summed)?,
                None => summed,
            });
        }
        match total {
            Some(t) => Ok(t),
            None => Ok(tape.constant(DenseMatrix::zeros(n, self.d_out))?),
        }
    }

    pub(crate) fn combine(
        &self,
        tape: &mut Tape<'_>,
        ctx: &GraphContext,
        self_repr: Var,
        aggregate: Var,
    ) -> Result<Var, EncoderError> {
        let loop_vec = tape.param(self.h_loop)?;
        let loop_rows = tape.gather_rows(loop_vec, ctx.zeros.clone())?;
        let comp = self.composition.apply(tape, self_repr, loop_rows)?;
        let w = tape.param(self.w_self)?;
        let own = tape.matmul(comp, w)?;
        let pre = tape.add(aggregate, own)?;
        Ok(self.activation.apply(tape, pre)?)
    }

    pub(crate) fn update_relations(&self, tape: &mut Tape<'_>, relations: Var) -> Result<Var, EncoderError> {
        let w = tape.param(self.w_rel)?;
        Ok(tape.matmul(relations, w)?)
    }
}

/// Returns `(node output, updated relation representations)`.
pub fn compgcn_layer(
    tape: &mut Tape<'_>,
    layer: &CompGcnLayer,
    ctx: &GraphContext,
    self_repr: Var,
    neigh: Var,
    relations: Var,
) -> Result<(Var, Var), EncoderError> {
    let LayerOutput { nodes, relations } =
        LayerParams::CompGcn(layer.clone()).apply(tape, ctx, self_repr, neigh, Some(relations))?;
    Ok((nodes, relations.expect("compgcn updates relations")))
}
