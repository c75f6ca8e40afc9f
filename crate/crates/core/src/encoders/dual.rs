use super::{EncoderError, GraphContext, LayerParams};
use crate::tensor::{Tape, Var};

/// Node stream `H`, message stream `M` and relation stream `R` at one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualState {
    pub h: Var,
    pub m: Var,
    pub r: Option<Var>,
}

impl DualState {
    /// Layer-0 state: the message stream starts as a copy of the node stream.
    pub fn initial(h: Var, r: Option<Var>) -> Self {
        Self { h, m: h, r }
    }
}

/// One dual layer transition with shared parameters:
///
/// - `H' = f(H; M)`: neighbors always contribute message representations.
/// - `M' = f(g ⊙ H; M)`: the node's own term is scaled by its gate.
///
/// With `gates = None` the message stream is not split off (`M' = H'`),
/// which is the single-stream update when `M == H`.
pub fn dual_propagate(
    tape: &mut Tape<'_>,
    layer: &LayerParams,
    ctx: &GraphContext,
    state: DualState,
    gates: Option<Var>,
) -> Result<DualState, EncoderError> {
    let agg = layer.aggregate(tape, ctx, state.m, state.r)?;
    let h = layer.combine(tape, ctx, state.h, agg)?;
    let m = match gates {
        Some(g) => {
            let (rows, cols) = tape.shape(g);
            let nodes = tape.shape(state.h).0;
            if rows != nodes || cols != 1 {
                return Err(EncoderError::GateLength { gates: rows * cols, nodes });
            }
            let gated = tape.mul_rows(state.h, g)?;
            layer.combine(tape, ctx, gated, agg)?
        }
        None => h,
    };
    let r = layer.update_relations(tape, state.r)?;
    Ok(DualState { h, m, r })
}
