//! Central-difference verification of recorded gradients.

use crate::error::Result;
use crate::tensor::{NodeId, Tape, Tensor};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Relative-error floor; absorbs f64 rounding noise on near-zero gradients
/// while still flagging genuinely wrong values.
const DENOM_FLOOR: f64 = 1e-3;

/// Coordinates where the two one-sided slopes disagree by more than this
/// (relative) are treated as non-smooth at resolution `h` and skipped —
/// finite differences are meaningless across a kink.
const KINK_TOL: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat coordinate) of the worst error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Relative error between an analytic and a numeric gradient estimate.
pub fn compare_gradients(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Checks the tape gradient of `f` at `inputs` against central differences
/// with step `h`, coordinate by coordinate.
///
/// `f` must evaluate to a scalar and must be a deterministic function of
/// the staged inputs (sampling decided by anything other than the input
/// values breaks the comparison).
pub fn gradcheck<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let staged: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_grad()).collect();

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors
            .iter()
            .map(|t| tape.leaf(t))
            .collect::<Result<_>>()?;
        let out = f(&mut tape, &ids)?;
        Ok(tape.values(out)[0])
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = staged.iter().map(|t| tape.leaf(t)).collect::<Result<_>>()?;
    let out = f(&mut tape, &ids)?;
    let base = tape.values(out)[0];
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(&staged)
        .map(|(&id, t)| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let mut work: Vec<Tensor> = staged.clone();
    for (ti, t) in staged.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for coord in 0..t.numel() {
            let orig = t.values()[coord];
            work[ti].values_mut()[coord] = orig + h;
            let plus = eval(&work)?;
            work[ti].values_mut()[coord] = orig - h;
            let minus = eval(&work)?;
            work[ti].values_mut()[coord] = orig;

            let fwd = (plus - base) / h;
            let bwd = (base - minus) / h;
            let slope_scale = fwd.abs().max(bwd.abs()).max(1.0);
            if (fwd - bwd).abs() > KINK_TOL * slope_scale {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = compare_gradients(analytic[ti][coord], numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((ti, coord));
            }
        }
    }
    Ok(report)
}
