use super::context::direction_slot;
use super::{init::xavier_uniform, Activation, EncoderError, GraphContext, LayerParams};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Var};

/// R-GCN layer:
/// `σ(Σ_{(u,r,dir) ∈ N_v} (1/c_{v,r,dir}) m_u W_{r,dir} + h_v W_ent)`.
///
/// Each relation has separate weights for incoming and outgoing edges, and
/// `c_{v,r,dir}` counts the neighbors of `v` under that relation and
/// direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RgcnLayer {
    pub w_ent: ParamId,
    /// Indexed by `2 * relation + direction` (in = 0, out = 1).
    pub w_rel: Vec<ParamId>,
    pub d_out: usize,
    pub activation: Activation,
}

impl RgcnLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        num_relations: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let w_ent = store.add(format!("{prefix}.w_ent"), xavier_uniform(d_in, d_out, rng));
        let w_rel = (0..num_relations)
            .flat_map(|r| ["in", "out"].map(move |d| (r, d)))
            .map(|(r, d)| store.add(format!("{prefix}.w_rel.{r}.{d}"), xavier_uniform(d_in, d_out, rng)))
            .collect();
        Self {
            w_ent,
            w_rel,
            d_out,
            activation,
        }
    }

    pub(crate) fn aggregate(&self, tape: &mut Tape<'_>, ctx: &GraphContext, neigh: Var) -> Result<Var, EncoderError> {
        let n = ctx.num_nodes();
        let mut total: Option<Var> = None;
        for group in &ctx.relation_groups {
            let slot = 2 * group.relation + direction_slot(group.direction);
            let w = *self.w_rel.get(slot).ok_or(EncoderError::MissingRelation(group.relation))?;
            let w = tape.param(w)?;
            let msgs = tape.gather_rows(neigh, group.src.clone())?;
            let proj = tape.matmul(msgs, w)?;
            let coef = tape.constant(group.coef.clone())?;
            let scaled = tape.mul_rows(proj, coef)?;
            let summed = tape.segment_sum(scaled, group.dst.clone(), n)?;
            total = Some(match total {
                Some(t) => tape.add(t, summed)?,
                None => summed,
            });
        }
        match total {
            Some(t) => Ok(t),
            None => Ok(tape.constant(crate::tensor::DenseMatrix::zeros(n, self.d_out))?),
        }
    }

    pub(crate) fn combine(&self, tape: &mut Tape<'_>, self_repr: Var, aggregate: Var) -> Result<Var, EncoderError> {
        let w = tape.param(self.w_ent)?;
        let own = tape.matmul(self_repr, w)?;
        let pre = tape.add(aggregate, own)?;
        Ok(self.activation.apply(tape, pre)?)
    }
}

pub fn rgcn_layer(
    tape: &mut Tape<'_>,
    layer: &RgcnLayer,
    ctx: &GraphContext,
    self_repr: Var,
    neigh: Var,
) -> Result<Var, EncoderError> {
    Ok(LayerParams::Rgcn(layer.clone()).apply(tape, ctx, self_repr, neigh, None)?.nodes)
}
