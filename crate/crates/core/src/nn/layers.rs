use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<F: Real>(self, tape: &mut Tape<F>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }

    pub fn eval<F: Real>(self, x: F) -> F {
        match self {
            Activation::Relu => x.max(F::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Whether a forward pass accumulates gradients for the parameters it reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grad {
    Track,
    Stop,
}

pub(crate) fn load<F: Real>(tape: &mut Tape<F>, store: &ParamStore<F>, id: ParamId, g: Grad) -> Var {
    match g {
        Grad::Track => tape.param(store, id),
        Grad::Stop => tape.frozen(store, id),
    }
}

/// Affine map `x·W + b` with `W: in x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_uniform(format!("{name}.w"), inputs, outputs, inputs, rng)?;
        let b = store.add_uniform(format!("{name}.b"), 1, outputs, inputs, rng)?;
        Ok(Self {
            w,
            b,
            inputs,
            outputs,
        })
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var, g: Grad) -> Var {
        let w = load(tape, store, self.w, g);
        let b = load(tape, store, self.b, g);
        let xw = tape.matmul(x, w);
        tape.add(xw, b)
    }
}

/// Layer widths (including input and output) plus activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        Self {
            sizes,
            hidden,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty layer spec")
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub spec: LayerSpec,
}

impl Mlp {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        spec: LayerSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.sizes.len() < 2 {
            return Err(Error::Config("an MLP needs at least two layer sizes".into()));
        }
        let layers = spec
            .sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.l{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, spec })
    }

    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
        g: Grad,
    ) -> Result<Var> {
        let (_, cols) = tape.shape(x);
        if cols != self.spec.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "MLP expects {} inputs, got {cols}",
                self.spec.input_dim()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h, g);
            let act = if i == last {
                self.spec.output
            } else {
                self.spec.hidden
            };
            h = act.apply(tape, h);
        }
        Ok(h)
    }
}

/// Tape-free forward pass of a single input vector.
pub fn mlp_forward<F: Real>(store: &ParamStore<F>, mlp: &Mlp, input: &[F]) -> Result<Vec<F>> {
    if input.len() != mlp.spec.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "MLP expects {} inputs, got {}",
            mlp.spec.input_dim(),
            input.len()
        )));
    }
    let mut h = Tensor::row(input);
    let last = mlp.layers.len() - 1;
    for (i, layer) in mlp.layers.iter().enumerate() {
        let mut z = h.matmul(store.get(layer.w), false, false);
        for (v, &b) in z.data.iter_mut().zip(&store.get(layer.b).data) {
            *v += b;
        }
        let act = if i == last {
            mlp.spec.output
        } else {
            mlp.spec.hidden
        };
        h = z.map(|v| act.eval(v));
    }
    Ok(h.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let spec = LayerSpec::new(vec![3, 3], Activation::Relu, Activation::Identity);
        let mlp = Mlp::new(&mut store, "m", spec, &mut rng).unwrap();
        store
            .set(mlp.layers[0].w, Tensor::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 }))
            .unwrap();
        store.set(mlp.layers[0].b, Tensor::zeros(1, 3)).unwrap();
        let out = mlp_forward(&store, &mlp, &[1.5, -2.0, 0.25]).unwrap();
        assert_eq!(out, vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn zero_weights_yield_activated_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let spec = LayerSpec::new(vec![2, 3], Activation::Relu, Activation::Tanh);
        let mlp = Mlp::new(&mut store, "m", spec, &mut rng).unwrap();
        store.set(mlp.layers[0].w, Tensor::zeros(2, 3)).unwrap();
        store.set(mlp.layers[0].b, Tensor::row(&[0.5, -1.0, 2.0])).unwrap();
        let out = mlp_forward(&store, &mlp, &[7.0, -3.0]).unwrap();
        let expect: Vec<f64> = [0.5f64, -1.0, 2.0].iter().map(|b| b.tanh()).collect();
        assert_eq!(out, expect);
    }

    #[test]
    fn two_layer_net_matches_hand_written_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let spec = LayerSpec::new(vec![4, 5, 2], Activation::Relu, Activation::Identity);
        let mlp = Mlp::new(&mut store, "m", spec, &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1, 0.05];

        // Independent loop-based evaluation straight from the raw arrays.
        let w0 = store.get(mlp.layers[0].w);
        let b0 = store.get(mlp.layers[0].b);
        let w1 = store.get(mlp.layers[1].w);
        let b1 = store.get(mlp.layers[1].b);
        let mut hidden = [0.0; 5];
        for j in 0..5 {
            let mut acc = b0.data[j];
            for i in 0..4 {
                acc += x[i] * w0.data[i * 5 + j];
            }
            hidden[j] = if acc > 0.0 { acc } else { 0.0 };
        }
        let mut expect = [0.0; 2];
        for j in 0..2 {
            let mut acc = b1.data[j];
            for i in 0..5 {
                acc += hidden[i] * w1.data[i * 2 + j];
            }
            expect[j] = acc;
        }

        let got = mlp_forward(&store, &mlp, &x).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-14);
        }

        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::row(&x));
        let y = mlp.forward(&mut tape, &store, xv, Grad::Track).unwrap();
        assert_eq!(tape.value(y).data, got);
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f32>::new();
        let spec = LayerSpec::new(vec![3, 2], Activation::Relu, Activation::Identity);
        let mlp = Mlp::new(&mut store, "m", spec, &mut rng).unwrap();
        assert!(matches!(
            mlp_forward(&store, &mlp, &[1.0, 2.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
