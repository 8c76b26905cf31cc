//! Central-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a − n| / max(1, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}

/// Compare reverse-mode gradients of a scalar-valued `f` with central differences.
///
/// `f` receives a fresh graph with one leaf per entry of `inputs` and must
/// return a one-element node.
pub fn grad_check<F>(f: F, inputs: &[Tensor], delta: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&delta) {
        return Err(Error::Config(format!(
            "finite-difference delta {delta} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |values: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g, vars, out))
    };

    let (g, vars, out) = eval(inputs)?;
    let grads = g.backward(out)?;

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut perturbed = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for j in 0..inputs[i].len() {
            let original = inputs[i].data()[j];
            perturbed[i].data_mut()[j] = original + delta;
            let (gp, _, op) = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = original - delta;
            let (gm, _, om) = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = original;

            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * delta);
            let a = analytic.data()[j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite {
                    name: format!("gradient check input {i}"),
                    index: j,
                });
            }
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error {
                worst = GradCheck {
                    max_rel_error: err,
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(worst)
}

/// Reduce a tensor-valued node to a scalar with fixed pseudo-random weights,
/// so every output element contributes to the checked gradient.
pub fn random_projection(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    use rand::{Rng, SeedableRng};
    let shape = g.value(out).shape().to_vec();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let weights = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w = g.leaf(weights);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_quadratic() {
        let x = Tensor::vector(vec![0.5, -1.5]);
        let r = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn rejects_out_of_range_delta() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|_, v| Ok(v[0]), std::slice::from_ref(&x), 1e-2).is_err());
        assert!(grad_check(|_, v| Ok(v[0]), &[x], 1e-9).is_err());
    }

    #[test]
    fn reports_non_finite_element() {
        // The loss overflows, so the first perturbed element already yields inf − inf.
        let x = Tensor::vector(vec![1e200, 1.0]);
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 0, .. }), "{err:?}");
    }
}
