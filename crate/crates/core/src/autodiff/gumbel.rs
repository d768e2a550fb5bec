use super::{AutodiffError, Matrix, Result, Tape, Tensor};

/// Standard Gumbel sample `-ln(-ln u)` for `u` in (0, 1).
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    -(-u.ln()).ln()
}

/// Binary Gumbel-Softmax draw for a column of nodes.
pub struct GumbelSample {
    /// `true` where the keep class wins the perturbed argmax.
    pub hard: Vec<bool>,
    /// Relaxed keep probability `softmax((logits + g) / tau)[keep]`.
    pub soft: Tensor,
    /// Forward value equals `hard` as 0/1, backward routes to `soft`.
    pub straight_through: Tensor,
}

/// Two-class (keep, drop) Gumbel-Softmax with a straight-through estimator.
///
/// `noise[i]` holds the Gumbel perturbations of node `i`'s (keep, drop)
/// logits. Ties resolve to keep.
pub fn gumbel_softmax_st(
    tape: &mut Tape,
    logits_keep: Tensor,
    logits_drop: Tensor,
    temperature: f64,
    noise: &[[f64; 2]],
) -> Result<GumbelSample> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(AutodiffError::BadTemperature(temperature));
    }
    if logits_keep.shape() != logits_drop.shape()
        || logits_keep.cols != 1
        || noise.len() != logits_keep.rows
    {
        return Err(AutodiffError::ShapeMismatch {
            op: "gumbel_softmax_st",
            lhs: logits_keep.shape(),
            rhs: (noise.len(), 2),
        });
    }
    // softmax over two classes reduces to a sigmoid of the logit gap
    let gap = tape.sub(logits_keep, logits_drop)?;
    let g = tape.constant(Matrix::column(noise.iter().map(|n| n[0] - n[1]).collect()))?;
    let perturbed = tape.add(gap, g)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature)?;
    let soft = tape.sigmoid(scaled)?;
    let hard: Vec<bool> = tape.value(scaled).data.iter().map(|&z| z >= 0.0).collect();
    let hard_values = Matrix::column(hard.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect());
    let straight_through = tape.straight_through(hard_values, soft)?;
    Ok(GumbelSample {
        hard,
        soft,
        straight_through,
    })
}
