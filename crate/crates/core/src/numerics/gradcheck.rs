use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::{NumericsError, Result};

/// Denominator floor for relative errors, so entries whose true gradient is
/// essentially zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Agreement between analytic and numerical gradients for one input.
#[derive(Clone, Debug)]
pub struct InputCheck {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Flat index of the worst relative error.
    pub worst_index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

/// Compares reverse-mode gradients of the scalar `f` at `point` with central
/// differences `(f(x + eps) - f(x - eps)) / 2 eps`, one coordinate at a time.
///
/// `f` receives a fresh tape and one differentiable leaf per point tensor.
/// The relative error of an entry is `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |pt: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pt.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(NumericsError::NotScalar { op: "grad_check", shape: tape.shape(out).to_vec() });
        }
        Ok((tape, vars, out))
    };
    let scalar = |pt: &[Tensor]| -> Result<f64> {
        let (tape, _, out) = eval(pt)?;
        Ok(tape.value(out).data()[0])
    };

    let (tape, vars, out) = eval(point)?;
    let grads = tape.backward(out)?;
    let mut work = point.to_vec();
    let mut inputs = Vec::with_capacity(point.len());
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every point tensor is a differentiable leaf");
        let mut check = InputCheck { max_abs_error: 0.0, max_rel_error: 0.0, worst_index: 0 };
        for k in 0..point[i].len() {
            let orig = point[i].data()[k];
            work[i].data_mut()[k] = orig + eps;
            let plus = scalar(&work)?;
            work[i].data_mut()[k] = orig - eps;
            let minus = scalar(&work)?;
            work[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            check.max_abs_error = check.max_abs_error.max(abs);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = k;
            }
        }
        inputs.push(check);
    }
    Ok(GradCheckReport { inputs, tolerance })
}
