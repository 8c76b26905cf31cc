//! Gated recurrent unit.
//!
//! Gate convention:
//!
//! ```text
//! z  = σ(xᵀW_z + hᵀU_z + b_z)
//! r  = σ(xᵀW_r + hᵀU_r + b_r)
//! h̃ = tanh(xᵀW_h + (r ⊙ h)ᵀU_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Parameters of one GRU cell with input size `F_in` and hidden size `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub input_update: Tensor,
    pub input_reset: Tensor,
    pub input_candidate: Tensor,
    pub recurrent_update: Tensor,
    pub recurrent_reset: Tensor,
    pub recurrent_candidate: Tensor,
    pub bias_update: Tensor,
    pub bias_reset: Tensor,
    pub bias_candidate: Tensor,
}

/// Field names in checkpoint order.
pub const GRU_TENSOR_NAMES: [&str; 9] = [
    "input_update",
    "input_reset",
    "input_candidate",
    "recurrent_update",
    "recurrent_reset",
    "recurrent_candidate",
    "bias_update",
    "bias_reset",
    "bias_candidate",
];

impl GruParams {
    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[input_size, hidden]);
        let u = Tensor::zeros(&[hidden, hidden]);
        let b = Tensor::zeros(&[hidden]);
        GruParams {
            input_update: w.clone(),
            input_reset: w.clone(),
            input_candidate: w,
            recurrent_update: u.clone(),
            recurrent_reset: u.clone(),
            recurrent_candidate: u,
            bias_update: b.clone(),
            bias_reset: b.clone(),
            bias_candidate: b,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_update.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.bias_update.len()
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.input_update,
            &self.input_reset,
            &self.input_candidate,
            &self.recurrent_update,
            &self.recurrent_reset,
            &self.recurrent_candidate,
            &self.bias_update,
            &self.bias_reset,
            &self.bias_candidate,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.input_update,
            &mut self.input_reset,
            &mut self.input_candidate,
            &mut self.recurrent_update,
            &mut self.recurrent_reset,
            &mut self.recurrent_candidate,
            &mut self.bias_update,
            &mut self.bias_reset,
            &mut self.bias_candidate,
        ]
    }

    /// Build from tensors in [`GRU_TENSOR_NAMES`] order, checking shape consistency.
    pub fn from_tensors(tensors: [Tensor; 9]) -> Result<Self> {
        let [iu, ir, ic, ru, rr, rc, bu, br, bc] = tensors;
        let p = GruParams {
            input_update: iu,
            input_reset: ir,
            input_candidate: ic,
            recurrent_update: ru,
            recurrent_reset: rr,
            recurrent_candidate: rc,
            bias_update: bu,
            bias_reset: br,
            bias_candidate: bc,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.input_update.shape();
        if w.len() != 2 {
            return Err(Error::shape("gru", "F_in×H input weights", format!("{w:?}")));
        }
        let (f, h) = (w[0], w[1]);
        for (name, t) in GRU_TENSOR_NAMES.iter().zip(self.tensors()) {
            let expected: Vec<usize> = match &name[..5] {
                "input" => vec![f, h],
                "recur" => vec![h, h],
                _ => vec![h],
            };
            if t.shape() != expected.as_slice() {
                return Err(Error::shape(
                    "gru",
                    format!("{name} {expected:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> GruVars {
        let [iu, ir, ic, ru, rr, rc, bu, br, bc] = self.tensors().map(|t| g.leaf(t.clone()));
        GruVars {
            input_update: iu,
            input_reset: ir,
            input_candidate: ic,
            recurrent_update: ru,
            recurrent_reset: rr,
            recurrent_candidate: rc,
            bias_update: bu,
            bias_reset: br,
            bias_candidate: bc,
        }
    }
}

/// GRU parameters bound onto a [`Graph`].
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub input_update: Var,
    pub input_reset: Var,
    pub input_candidate: Var,
    pub recurrent_update: Var,
    pub recurrent_reset: Var,
    pub recurrent_candidate: Var,
    pub bias_update: Var,
    pub bias_reset: Var,
    pub bias_candidate: Var,
}

impl GruVars {
    pub fn all(&self) -> [Var; 9] {
        [
            self.input_update,
            self.input_reset,
            self.input_candidate,
            self.recurrent_update,
            self.recurrent_reset,
            self.recurrent_candidate,
            self.bias_update,
            self.bias_reset,
            self.bias_candidate,
        ]
    }
}

fn gate(g: &mut Graph, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let xw = g.matvec(x, w)?;
    let hu = g.matvec(h, u)?;
    let s = g.add(xw, hu)?;
    g.add(s, b)
}

/// One recurrence step on the graph.
pub fn gru_step_graph(g: &mut Graph, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let z_pre = gate(g, x, h_prev, p.input_update, p.recurrent_update, p.bias_update)?;
    let z = g.sigmoid(z_pre);
    let r_pre = gate(g, x, h_prev, p.input_reset, p.recurrent_reset, p.bias_reset)?;
    let r = g.sigmoid(r_pre);
    let rh = g.mul(r, h_prev)?;
    let c_pre = gate(g, x, rh, p.input_candidate, p.recurrent_candidate, p.bias_candidate)?;
    let candidate = g.tanh(c_pre);
    let keep = g.one_minus(z);
    let carried = g.mul(keep, h_prev)?;
    let fresh = g.mul(z, candidate)?;
    g.add(carried, fresh)
}

/// One recurrence step on plain values.
pub fn gru_step(x: &[f64], h_prev: &[f64], params: &GruParams) -> Result<Vec<f64>> {
    params.validate()?;
    if x.len() != params.input_size() || h_prev.len() != params.hidden() {
        return Err(Error::shape(
            "gru_step",
            format!("x[{}], h[{}]", params.input_size(), params.hidden()),
            format!("x[{}], h[{}]", x.len(), h_prev.len()),
        ));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let xv = g.leaf(Tensor::vector(x.to_vec()));
    let hv = g.leaf(Tensor::vector(h_prev.to_vec()));
    let out = gru_step_graph(&mut g, xv, hv, &vars)?;
    Ok(g.value(out).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::sigmoid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(f: usize, h: usize, rng: &mut ChaCha8Rng) -> GruParams {
        let mut p = GruParams::zeros(f, h);
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        p
    }

    #[test]
    fn zero_parameters_keep_zero_state() {
        let p = GruParams::zeros(4, 1);
        let h = gru_step(&[0.3, -2.0, 5.0, 1.0], &[0.0], &p).unwrap();
        assert_eq!(h, vec![0.0]);
    }

    #[test]
    fn saturated_update_gate_carries_state() {
        let mut p = GruParams::zeros(2, 1);
        p.bias_update.data_mut()[0] = -50.0;
        p.input_candidate.data_mut().fill(3.0);
        let h = gru_step(&[1.0, 1.0], &[0.42], &p).unwrap();
        assert!((h[0] - 0.42).abs() < 1e-12);
    }

    #[test]
    fn scalar_hidden_matches_hand_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_params(4, 1, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h0 = 0.37;
        let dot = |w: &Tensor| -> f64 { x.iter().zip(w.data()).map(|(a, b)| a * b).sum() };
        let z = sigmoid(dot(&p.input_update) + h0 * p.recurrent_update.item() + p.bias_update.item());
        let r = sigmoid(dot(&p.input_reset) + h0 * p.recurrent_reset.item() + p.bias_reset.item());
        let c = (dot(&p.input_candidate) + r * h0 * p.recurrent_candidate.item() + p.bias_candidate.item()).tanh();
        let expected = (1.0 - z) * h0 + z * c;
        let h = gru_step(&x, &[h0], &p).unwrap();
        assert!((h[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = GruParams::zeros(3, 2);
        assert!(gru_step(&[0.0; 2], &[0.0; 2], &p).is_err());
        assert!(gru_step(&[0.0; 3], &[0.0; 1], &p).is_err());
        let mut bad = GruParams::zeros(3, 2);
        bad.recurrent_reset = Tensor::zeros(&[2, 3]);
        assert!(bad.validate().is_err());
    }
}
