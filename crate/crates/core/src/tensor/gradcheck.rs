use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared absolutely; above it,
/// relatively. Keeps near-zero components from dominating the report.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst component.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare the tape's gradients of `f` against central finite differences
/// for every element of every input.
///
/// Non-scalar outputs are reduced to a scalar through a fixed random
/// projection so that every output component contributes.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tape: &mut Tape, vals: &[Tensor]| -> Result<(Var, Vec<Var>)> {
        let vars: Vec<Var> = vals.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(tape, &vars)?;
        let loss = if tape.value(out).numel() == 1 {
            out
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x6a09_e667);
            let shape = tape.shape(out).to_vec();
            let weights = tape.input(Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)));
            let weighted = tape.mul(out, weights)?;
            tape.sum(weighted)?
        };
        Ok((loss, vars))
    };
    let scalar = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, _) = eval(&mut tape, vals)?;
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let (loss, vars) = eval(&mut tape, inputs)?;
    let grads = tape.backward(loss)?;

    let mut probe = inputs.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for j in 0..probe[which].numel() {
            let orig = probe[which].data()[j];
            probe[which].data_mut()[j] = orig + FD_STEP;
            let plus = scalar(&probe)?;
            probe[which].data_mut()[j] = orig - FD_STEP;
            let minus = scalar(&probe)?;
            probe[which].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel_error || worst.is_none() {
                max_rel_error = rel;
                worst = Some((which, j));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        checked,
        tolerance,
        passed: max_rel_error <= tolerance,
    })
}
