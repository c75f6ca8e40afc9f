use super::{DenseMatrix, RngStream, Tape, TensorError, Var};

const UNIFORM_FLOOR: f64 = 1e-12;

/// Standard Gumbel(0, 1) noise by inverse CDF, with the uniform clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn gumbel_noise(rows: usize, cols: usize, rng: &mut RngStream) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let u = rng.uniform().clamp(UNIFORM_FLOOR, 1.0 - UNIFORM_FLOOR);
        -(-u.ln()).ln()
    })
}

/// Gumbel-softmax over each row of `logits`.
///
/// Soft mode returns `softmax((logits + g) / temperature)`. Hard mode
/// returns the one-hot argmax of that sample while gradients flow through
/// the soft sample (straight-through).
pub fn gumbel_softmax(
    tape: &mut Tape<'_>,
    logits: Var,
    temperature: f64,
    hard: bool,
    rng: &mut RngStream,
) -> Result<Var, TensorError> {
    let (r, c) = tape.shape(logits);
    let noise = gumbel_noise(r, c, rng);
    gumbel_softmax_with_noise(tape, logits, &noise, temperature, hard)
}

/// [`gumbel_softmax`] with caller-supplied noise.
pub fn gumbel_softmax_with_noise(
    tape: &mut Tape<'_>,
    logits: Var,
    noise: &DenseMatrix,
    temperature: f64,
    hard: bool,
) -> Result<Var, TensorError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(TensorError::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if !tape.value(logits).is_finite() {
        return Err(TensorError::NonFinite { op: "gumbel_softmax" });
    }
    let g = tape.constant(noise.clone())?;
    let perturbed = tape.add(logits, g)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature)?;
    let soft = tape.softmax_rows(scaled)?;
    if !hard {
        return Ok(soft);
    }
    let sample = tape.value(soft);
    let mut onehot = DenseMatrix::zeros(sample.rows(), sample.cols());
    for (i, j) in sample.argmax_rows().into_iter().enumerate() {
        onehot.set(i, j, 1.0);
    }
    tape.straight_through(soft, onehot)
}
