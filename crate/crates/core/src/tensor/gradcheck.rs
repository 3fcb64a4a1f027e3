//! Central finite-difference checking of tape gradients.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::matrix::Matrix;
use crate::tensor::tape::{GradientFault, Tape, Var};

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    let denom = analytic.abs().max(numeric.abs()).max(T::lit(1e-8));
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    /// Maximum relative error per input, in the order the inputs were given.
    pub per_input: Vec<T>,
    pub max_error: T,
    pub evaluations: usize,
}

impl<T: Scalar> GradCheckReport<T> {
    pub fn passes(&self, tolerance: T) -> bool {
        self.max_error < tolerance
    }
}

/// Configurable gradient check. The closure receives a fresh tape and one
/// leaf per input (all requiring gradients) and must return a scalar.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck<T> {
    pub eps: T,
    pub fault: Option<GradientFault>,
}

impl<T: Scalar> GradCheck<T> {
    pub fn new(eps: T) -> Self {
        GradCheck { eps, fault: None }
    }

    pub fn with_fault(mut self, fault: GradientFault) -> Self {
        self.fault = Some(fault);
        self
    }

    fn tape(&self) -> Tape<T> {
        match self.fault {
            Some(f) => Tape::with_fault(f),
            None => Tape::new(),
        }
    }

    fn eval<F>(&self, inputs: &[Matrix<T>], f: &F) -> Result<T>
    where
        F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
    {
        let mut tape = self.tape();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out)[(0, 0)])
    }

    pub fn run<F>(&self, inputs: &[Matrix<T>], f: F) -> Result<GradCheckReport<T>>
    where
        F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
    {
        let mut tape = self.tape();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        tape.backward(out)?;
        let analytic: Vec<Matrix<T>> = inputs
            .iter()
            .zip(&vars)
            .map(|(m, &v)| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
            })
            .collect();
        drop(tape);

        let two = T::lit(2.0);
        let mut work: Vec<Matrix<T>> = inputs.to_vec();
        let mut per_input = Vec::with_capacity(inputs.len());
        let mut evaluations = 1;
        for p in 0..inputs.len() {
            let mut worst = T::zero();
            for i in 0..inputs[p].len() {
                let orig = work[p].data()[i];
                work[p].data_mut()[i] = orig + self.eps;
                let plus = self.eval(&work, &f)?;
                work[p].data_mut()[i] = orig - self.eps;
                let minus = self.eval(&work, &f)?;
                work[p].data_mut()[i] = orig;
                evaluations += 2;
                let numeric = (plus - minus) / (two * self.eps);
                worst = worst.max(relative_error(analytic[p].data()[i], numeric));
            }
            per_input.push(worst);
        }
        let max_error = per_input.iter().copied().fold(T::zero(), T::max);
        Ok(GradCheckReport {
            per_input,
            max_error,
            evaluations,
        })
    }
}

/// Max relative error between tape gradients of `f` and central differences.
pub fn grad_check<T, F>(inputs: &[Matrix<T>], eps: T, f: F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    Ok(GradCheck::new(eps).run(inputs, f)?.max_error)
}
