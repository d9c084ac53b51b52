//! Central-difference gradient verification for anything expressible as a
//! scalar function of leaf tensors built on a [`Tape`].

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::Result;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Largest relative error across all checked inputs.
    pub max_rel_error: f64,
    /// Flattened input index where the maximum occurred, as (input, element).
    pub worst: (usize, usize),
    pub tolerance: f64,
    pub elements_checked: usize,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compare reverse-mode gradients against central differences.
///
/// `f` must rebuild the same computation each call from the leaves it is
/// handed (in the order of `inputs`) and return a scalar loss. Relative error
/// uses `|ad - fd| / max(|ad|, |fd|, 1e-8)`.
pub fn finite_difference_check<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    tolerance: f64,
    mut f: F,
) -> Result<FdReport>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<f64>], f: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    // one reverse pass for all analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let mut max_rel = 0.0;
    let mut worst = (0, 0);
    let mut checked = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ei in 0..input.len() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + step;
            let up = eval(&work, &mut f)?;
            work[ti].data_mut()[ei] = orig - step;
            let down = eval(&work, &mut f)?;
            work[ti].data_mut()[ei] = orig;
            let fd = (up - down) / (2.0 * step);
            let ad = analytic[ti][ei];
            let rel = (ad - fd).abs() / (ad.abs().max(fd.abs()).max(1e-8));
            if rel > max_rel {
                max_rel = rel;
                worst = (ti, ei);
            }
            checked += 1;
        }
    }
    Ok(FdReport {
        max_rel_error: max_rel,
        worst,
        tolerance,
        elements_checked: checked,
    })
}
