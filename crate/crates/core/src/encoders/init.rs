use rand_distr::{Distribution, Uniform};

use super::DualState;
use crate::tensor::{DenseMatrix, ParamId, ParamStore, RngStream, Tape, TensorError};

/// Glorot-uniform `rows × cols` matrix.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut RngStream) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rows, cols, bound, rng)
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut RngStream) -> DenseMatrix {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    DenseMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// One learned row per entity.
    Embedding { entities: usize },
    /// `H⁰ = X W₀` from fixed node features of width `feature_dim`.
    Projection { feature_dim: usize },
}

/// Parameters producing the layer-0 representations.
#[derive(Debug, Clone, PartialEq)]
pub struct InputParams {
    pub mode: InitMode,
    /// Entity table or projection `W₀`.
    pub table: ParamId,
    /// Relation table (|R|×d), if any.
    pub relations: Option<ParamId>,
}

impl InputParams {
    pub fn init(store: &mut ParamStore, mode: InitMode, dim: usize, num_relations: usize, rng: &mut RngStream) -> Self {
        let table = match mode {
            InitMode::Embedding { entities } => store.add("input.entities", xavier_uniform(entities, dim, rng)),
            InitMode::Projection { feature_dim } => store.add("input.projection", xavier_uniform(feature_dim, dim, rng)),
        };
        let relations = (num_relations > 0).then(|| {
            let bound = 1.0 / (dim as f64).sqrt();
            store.add("input.relations", uniform(num_relations, dim, bound, rng))
        });
        Self { mode, table, relations }
    }
}

/// Records the layer-0 [`DualState`]. `features` is required in projection
/// mode and ignored otherwise.
pub fn init_representations(
    tape: &mut Tape<'_>,
    input: &InputParams,
    features: Option<&DenseMatrix>,
) -> Result<DualState, TensorError> {
    let table = tape.param(input.table)?;
    let h = match input.mode {
        InitMode::Embedding { .. } => table,
        InitMode::Projection { .. } => {
            let x = features.ok_or_else(|| TensorError::InvalidArgument("projection mode needs features".into()))?;
            let x = tape.constant(x.clone())?;
            tape.matmul(x, table)?
        }
    };
    let r = input.relations.map(|id| tape.param(id)).transpose()?;
    Ok(DualState::initial(h, r))
}
