use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Matrix, ParamId, ParameterSet, Tape, Var};
use crate::{Error, Result, Rng};

/// Shape of a ReLU multilayer perceptron.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden: hidden.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config(format!("mlp dims must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.output_dim);
        d
    }
}

/// `x·W + b` with `W` stored `in×out`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    /// Uniform init in `±1/√fan_in` for weights and bias.
    pub fn new(
        set: &mut ParameterSet,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let w = uniform(input_dim, output_dim, bound, rng);
        let w = set.add(format!("{name}.w"), w);
        let b = bias.then(|| set.add(format!("{name}.b"), uniform(1, output_dim, bound, rng)));
        Self {
            w,
            b,
            input_dim,
            output_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, set: &ParameterSet, x: Var) -> Var {
        let w = tape.param(set, self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(set, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

pub(crate) fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// ReLU network; the last layer is linear.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(set: &mut ParameterSet, name: &str, spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let dims = spec.dims();
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(set, &format!("{name}.{i}"), d[0], d[1], true, rng))
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn forward(&self, tape: &mut Tape, set: &ParameterSet, x: Var) -> Var {
        assert_eq!(tape.value(x).cols(), self.spec.input_dim, "mlp input width");
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, set, h);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Batched evaluation without keeping the tape.
    pub fn eval(&self, set: &ParameterSet, x: &Matrix) -> Matrix {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let y = self.forward(&mut tape, set, v);
        tape.value(y).clone()
    }
}

/// Evaluate the MLP stored in `set` under `name` on one input vector.
pub fn mlp_forward(set: &ParameterSet, mlp: &Mlp, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != mlp.spec.input_dim {
        return Err(Error::config(format!(
            "mlp expects input of length {}, got {}",
            mlp.spec.input_dim,
            input.len()
        )));
    }
    Ok(mlp.eval(set, &Matrix::row_vector(input)).into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_stream;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut set = ParameterSet::new();
        let mlp = Mlp::new(&mut set, "f", MlpSpec::new(3, &[4, 4], 2), &mut rng_stream(0, 0)).unwrap();
        for id in set.ids().collect::<Vec<_>>() {
            set.value_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(mlp_forward(&set, &mlp, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_positive_input() {
        let mut set = ParameterSet::new();
        let mlp = Mlp::new(&mut set, "f", MlpSpec::new(3, &[3], 3), &mut rng_stream(0, 0)).unwrap();
        for l in &mlp.layers {
            *set.value_mut(l.w) = Matrix::identity(3);
            set.value_mut(l.b.unwrap()).data_mut().fill(0.0);
        }
        let x = [0.5, 1.5, 2.5];
        assert_eq!(mlp_forward(&set, &mlp, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn random_mlp_matches_hand_written_chain() {
        let mut set = ParameterSet::new();
        let mlp = Mlp::new(&mut set, "f", MlpSpec::new(4, &[6, 5], 3), &mut rng_stream(7, 1)).unwrap();
        let x = vec![0.3, -0.7, 1.1, 0.05];
        let mut h = x.clone();
        for (i, l) in mlp.layers.iter().enumerate() {
            let w = set.value(l.w);
            let b = set.value(l.b.unwrap());
            let mut out = vec![0.0; w.cols()];
            for (j, o) in out.iter_mut().enumerate() {
                let mut s = b.get(0, j);
                for (k, hk) in h.iter().enumerate() {
                    s += hk * w.get(k, j);
                }
                *o = if i + 1 < mlp.layers.len() { s.max(0.0) } else { s };
            }
            h = out;
        }
        let got = mlp_forward(&set, &mlp, &x).unwrap();
        for (a, b) in got.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_length_is_config_error() {
        let mut set = ParameterSet::new();
        let mlp = Mlp::new(&mut set, "f", MlpSpec::new(3, &[2], 1), &mut rng_stream(0, 0)).unwrap();
        assert!(matches!(mlp_forward(&set, &mlp, &[1.0]), Err(Error::Config(_))));
        assert!(MlpSpec::new(0, &[2], 1).validate().is_err());
    }
}
