use crate::{Error, Result};

/// Cohen's kappa of a 2x2 confusion table.
///
/// Evaluated in exact integer arithmetic as
/// `(N * trace - S) / (N^2 - S)` with `S` the sum of products of matching
/// row and column marginals, which equals `(p_o - p_e) / (1 - p_e)`. Only the
/// final division rounds, so a table built from independent marginals gives
/// exactly 0 and a table and its transpose give the same value.
pub fn cohen_kappa(confusion: &[[u64; 2]; 2]) -> Result<f64> {
    let n: i128 = confusion.iter().flatten().map(|&v| v as i128).sum();
    if n == 0 {
        return Err(Error::DegenerateMarginals);
    }
    let trace = confusion[0][0] as i128 + confusion[1][1] as i128;
    let rows = [
        confusion[0][0] as i128 + confusion[0][1] as i128,
        confusion[1][0] as i128 + confusion[1][1] as i128,
    ];
    let cols = [
        confusion[0][0] as i128 + confusion[1][0] as i128,
        confusion[0][1] as i128 + confusion[1][1] as i128,
    ];
    let chance = rows[0] * cols[0] + rows[1] * cols[1];
    let denom = n * n - chance;
    if denom == 0 {
        return Err(Error::DegenerateMarginals);
    }
    Ok((n * trace - chance) as f64 / denom as f64)
}
