//! Central-difference verification of taped gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Max relative error per parameter, in the order the parameters were given.
    pub max_rel_err: Vec<f64>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= self.tolerance
    }
}

/// Below this magnitude both gradients are treated as zero and the error is
/// measured absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<T, F>(f: &F, params: &[Tensor<T>], with_grad: bool) -> Result<(Tape<T>, Var, Vec<Var>)>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| {
            if with_grad {
                tape.param(p.clone())
            } else {
                tape.constant(p.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    if !value.item().is_finite() {
        return Err(Error::NonFinite { op: "gradcheck" });
    }
    Ok((tape, out, vars))
}

/// Compares the taped gradient of `f` with `(f(p+h) - f(p-h)) / 2h` for
/// every element of every parameter.
///
/// `f` receives a fresh tape and one leaf per parameter and must return a
/// scalar.
pub fn gradcheck<T, F>(f: F, params: &[Tensor<T>], h: f64, tol: f64) -> Result<GradcheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(1e-5..=1e-2).contains(&h) {
        return Err(Error::InvalidArgument(format!("step {h} outside [1e-5, 1e-2]")));
    }
    let (tape, out, vars) = evaluate(&f, params, true)?;
    let grads = tape.backward(out)?;
    drop(tape);

    let scalar = |ps: &[Tensor<T>]| -> Result<f64> {
        let (tape, out, _) = evaluate(&f, ps, false)?;
        Ok(tape.value(out).item().as_f64())
    };

    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut max_rel_err = Vec::with_capacity(params.len());
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every parameter is a grad leaf").clone();
        let mut worst = 0.0f64;
        for e in 0..params[pi].len() {
            let orig = params[pi].data()[e];
            work[pi].data_mut()[e] = T::lit(orig.as_f64() + h);
            let plus = scalar(&work)?;
            work[pi].data_mut()[e] = T::lit(orig.as_f64() - h);
            let minus = scalar(&work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[e].as_f64(), numeric));
        }
        max_rel_err.push(worst);
    }
    Ok(GradcheckReport {
        max_rel_err,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let p = Tensor::vector(vec![0.3f64, -1.2, 2.5]);
        let report = gradcheck(
            |tape, v| {
                let sq = tape.mul(v[0], v[0])?;
                let s = tape.sum(sq)?;
                tape.scale(s, 0.5)
            },
            &[p],
            1e-4,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn rejects_bad_step() {
        let p = Tensor::vector(vec![1.0f64]);
        let r = gradcheck(|t, v| t.sum(v[0]), &[p], 0.5, 1e-4);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_non_finite_function() {
        let p = Tensor::vector(vec![0.0f64]);
        let r = gradcheck(
            |t, v| {
                let one = t.constant(Tensor::vector(vec![1.0]))?;
                let q = t.div(one, v[0])?;
                t.sum(q)
            },
            &[p],
            1e-4,
            1e-4,
        );
        assert!(r.is_err());
    }
}
