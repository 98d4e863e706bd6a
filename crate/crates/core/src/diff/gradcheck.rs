use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{NodeId, Param, Tape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates probed per parameter; every coordinate when the parameter is smaller.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coords_per_param: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Compares reverse-mode gradients against central differences.
///
/// `record` builds a scalar loss on the tape from the parameter leaves it is
/// handed (one per entry of `params`, in order) and returns the loss node.
pub fn grad_check<F>(params: &[Param], record: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Param]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = values.iter().map(|p| tape.param(p)).collect();
        let loss = record(&mut tape, &leaves)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = params.iter().map(|p| tape.param(p)).collect();
    let loss = record(&mut tape, &leaves)?;
    let grads = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.to_vec();
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    for (pi, param) in params.iter().enumerate() {
        let n = param.value.len();
        let coords: Vec<usize> = if n <= opts.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for c in coords {
            let analytic = grads.get(leaves[pi]).map_or(0.0, |g| g.values()[c]);
            let original = param.value.values()[c];
            probe[pi].value.values_mut()[c] = original + opts.step;
            let plus = eval(&probe)?;
            probe[pi].value.values_mut()[c] = original - opts.step;
            let minus = eval(&probe)?;
            probe[pi].value.values_mut()[c] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        coords_checked: checked,
    })
}
