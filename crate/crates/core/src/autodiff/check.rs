use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding compare in absolute terms.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Per input, per checked element: `(element index, relative error, pass)`.
    pub elements: Vec<Vec<(usize, f64, bool)>>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.elements.iter().flatten().all(|e| e.2)
    }
}

/// Central-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub h: f64,
    pub tol: f64,
    /// Check at most this many evenly spaced elements per input.
    pub max_elements: Option<usize>,
    pub training: bool,
}

impl GradCheck {
    pub fn new(h: f64, tol: f64) -> Self {
        GradCheck {
            h,
            tol,
            max_elements: None,
            training: false,
        }
    }

    pub fn max_elements(mut self, n: usize) -> Self {
        self.max_elements = Some(n);
        self
    }

    pub fn training(mut self, on: bool) -> Self {
        self.training = on;
        self
    }

    pub fn run<F>(&self, f: F, inputs: &[Tensor]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let eval = |inputs: &[Tensor]| -> Result<f64> {
            let mut tape = Tape::new();
            tape.set_training(self.training);
            let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let out = f(&mut tape, &vars)?;
            Ok(tape.value(out).item())
        };

        let mut tape = Tape::new();
        tape.set_training(self.training);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.backward(out)?;

        let mut work: Vec<Tensor> = inputs.to_vec();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            elements: Vec::new(),
            tol: self.tol,
        };
        for (i, v) in vars.iter().enumerate() {
            let n = inputs[i].len();
            let analytic: Vec<f64> = match tape.grad(*v) {
                Some(g) => g.to_vec(),
                None => alloc::vec![0.0; n],
            };
            let stride = match self.max_elements {
                Some(m) if m > 0 && n > m => n.div_ceil(m),
                _ => 1,
            };
            let mut rows = Vec::new();
            for k in (0..n).step_by(stride) {
                let orig = work[i].data()[k];
                work[i].data_mut()[k] = orig + self.h;
                let fp = eval(&work)?;
                work[i].data_mut()[k] = orig - self.h;
                let fm = eval(&work)?;
                work[i].data_mut()[k] = orig;
                let numeric = (fp - fm) / (2.0 * self.h);
                let a = analytic[k];
                let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
                let err = (a - numeric).abs() / denom;
                report.max_rel_error = report.max_rel_error.max(err);
                rows.push((k, err, err <= self.tol));
            }
            report.elements.push(rows);
        }
        Ok(report)
    }
}

/// Checks every input element of `f` against central differences.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    GradCheck::new(h, tol).run(f, inputs)
}
