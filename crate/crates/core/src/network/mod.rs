//! Small signal-to-signal networks with hand-written reverse mode.
//!
//! A network maps a whole vector (1D) or image (2D) to an output of the same
//! kind. Layers are dense maps on vectors, element-wise ReLU, and
//! single-channel same-size convolutions with a scalar bias.

mod adam;
mod checkpoint;
mod conv;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry, CheckpointManifest};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.contains(&0) || len != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: vec![data.len()],
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("tensor entry {v} is not finite")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Relu,
    ConvSame { kh: usize, kw: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Dense(n,h), ReLU, Dense(h,h), ReLU, Dense(h,n).
    pub fn dense_1d(n: usize, hidden: usize) -> Self {
        Self {
            input_shape: vec![n],
            layers: vec![
                LayerSpec::Dense {
                    input: n,
                    output: hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: hidden,
                    output: hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: hidden,
                    output: n,
                },
            ],
        }
    }

    /// Three same-size convolutions separated by ReLUs.
    pub fn conv_2d(rows: usize, cols: usize, kh: usize, kw: usize) -> Self {
        let conv = LayerSpec::ConvSame { kh, kw };
        Self {
            input_shape: vec![rows, cols],
            layers: vec![conv, LayerSpec::Relu, conv, LayerSpec::Relu, conv],
        }
    }

    /// Shapes flowing between layers: `input_shape` first, output last.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid network input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let current = shapes.last().expect("non-empty");
            let next = match *layer {
                LayerSpec::Dense { input, output } => {
                    if input == 0 || output == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: dense dimensions must be positive"
                        )));
                    }
                    if current != &[input] {
                        return Err(Error::ShapeMismatch {
                            expected: vec![input],
                            actual: current.clone(),
                        });
                    }
                    vec![output]
                }
                LayerSpec::Relu => current.clone(),
                LayerSpec::ConvSame { kh, kw } => {
                    if kh == 0 || kw == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: kernel dimensions must be positive"
                        )));
                    }
                    if current.len() != 2 {
                        return Err(Error::ArityMismatch(format!(
                            "layer {i}: convolution needs a 2D input, got shape {current:?}"
                        )));
                    }
                    current.clone()
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().expect("non-empty"))
    }

    /// Parameter names and shapes in layer order.
    pub fn parameter_layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.shapes()?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { input, output } => {
                    out.push((format!("layers.{i}.weight"), vec![output, input]));
                    out.push((format!("layers.{i}.bias"), vec![output]));
                }
                LayerSpec::ConvSame { kh, kw } => {
                    out.push((format!("layers.{i}.kernel"), vec![kh, kw]));
                    out.push((format!("layers.{i}.bias"), vec![1]));
                }
                LayerSpec::Relu => {}
            }
        }
        Ok(out)
    }
}

/// Named parameter tensors in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    /// Zero tensors laid out for `spec`.
    pub fn zeros_for(spec: &NetworkSpec) -> Result<Self> {
        Ok(Self::new(
            spec.parameter_layout()?
                .into_iter()
                .map(|(name, shape)| (name, Tensor::zeros(shape)))
                .collect(),
        ))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.entries
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// All parameters concatenated in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }

    /// Checks that names and shapes follow `spec`.
    pub fn check_layout(&self, spec: &NetworkSpec) -> Result<()> {
        let layout = spec.parameter_layout()?;
        if layout.len() != self.entries.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                self.entries.len()
            )));
        }
        for ((name, shape), (have_name, tensor)) in layout.iter().zip(&self.entries) {
            if name != have_name {
                return Err(Error::InvalidArgument(format!(
                    "expected parameter {name}, got {have_name}"
                )));
            }
            if tensor.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: shape.clone(),
                    actual: tensor.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn tensor(&self, name: &str) -> &Tensor {
        self.get(name).expect("layout checked")
    }
}

/// Uniform in `±sqrt(6 / fan_in)` for weights and kernels, zero biases.
pub fn init_params(spec: &NetworkSpec, rng: &mut SeededRng) -> Result<ParamStore> {
    init_params_scaled(spec, rng, 1.0)
}

/// [`init_params`] with the weight bound multiplied by `gain`.
pub fn init_params_scaled(
    spec: &NetworkSpec,
    rng: &mut SeededRng,
    gain: f64,
) -> Result<ParamStore> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "init gain must be positive, got {gain}"
        )));
    }
    let mut entries = Vec::new();
    for (name, shape) in spec.parameter_layout()? {
        let len: usize = shape.iter().product();
        let data = if name.ends_with(".bias") {
            vec![0.0; len]
        } else {
            let fan_in = match shape.as_slice() {
                [_, input] if name.ends_with(".weight") => *input,
                [kh, kw] => kh * kw,
                _ => len,
            };
            let bound = gain * (6.0 / fan_in as f64).sqrt();
            (0..len).map(|_| rng.uniform_range(-bound, bound)).collect()
        };
        entries.push((name, Tensor { shape, data }));
    }
    Ok(ParamStore::new(entries))
}

/// Activations recorded by [`forward_tape`]: the input of every layer
/// followed by the network output.
#[derive(Debug, Clone)]
pub struct Tape {
    activations: Vec<Tensor>,
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("tape holds the input")
    }
}

pub fn forward(spec: &NetworkSpec, params: &ParamStore, input: &Tensor) -> Result<Tensor> {
    let tape = forward_tape(spec, params, input)?;
    Ok(tape.activations.into_iter().last().expect("non-empty"))
}

pub fn forward_tape(spec: &NetworkSpec, params: &ParamStore, input: &Tensor) -> Result<Tape> {
    check_input(spec, params, input)?;
    let mut activations = Vec::with_capacity(spec.layers.len() + 1);
    activations.push(input.clone());
    for (i, layer) in spec.layers.iter().enumerate() {
        let x = activations.last().expect("non-empty");
        let y = match *layer {
            LayerSpec::Dense { input, output } => {
                let w = params.tensor(&format!("layers.{i}.weight")).data();
                let b = params.tensor(&format!("layers.{i}.bias")).data();
                let data = (0..output)
                    .map(|o| b[o] + dot(&w[o * input..(o + 1) * input], x.data()))
                    .collect();
                Tensor {
                    shape: vec![output],
                    data,
                }
            }
            LayerSpec::Relu => Tensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|&v| v.max(0.0)).collect(),
            },
            LayerSpec::ConvSame { kh, kw } => {
                let k = params.tensor(&format!("layers.{i}.kernel")).data();
                let b = params.tensor(&format!("layers.{i}.bias")).data()[0];
                let (rows, cols) = (x.shape[0], x.shape[1]);
                let mut data = conv::correlate_same(x.data(), rows, cols, k, kh, kw);
                data.iter_mut().for_each(|v| *v += b);
                Tensor {
                    shape: x.shape.clone(),
                    data,
                }
            }
        };
        activations.push(y);
    }
    Ok(Tape { activations })
}

/// Parameter gradients and input gradient for the output cotangent
/// `output_grad`, from the activations on `tape`.
pub fn backward_tape(
    spec: &NetworkSpec,
    params: &ParamStore,
    tape: &Tape,
    output_grad: &Tensor,
) -> Result<(ParamStore, Tensor)> {
    if output_grad.shape() != tape.output().shape() {
        return Err(Error::ShapeMismatch {
            expected: tape.output().shape().to_vec(),
            actual: output_grad.shape().to_vec(),
        });
    }
    let mut grads = ParamStore::zeros_for(spec)?;
    let mut g = output_grad.clone();
    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let x = &tape.activations[i];
        g = match *layer {
            LayerSpec::Dense { input, output } => {
                let w = params.tensor(&format!("layers.{i}.weight")).data();
                let gw = grads
                    .get_mut(&format!("layers.{i}.weight"))
                    .expect("layout")
                    .data_mut();
                for o in 0..output {
                    let go = g.data[o];
                    if go != 0.0 {
                        for (slot, &xv) in gw[o * input..(o + 1) * input].iter_mut().zip(x.data()) {
                            *slot = go * xv;
                        }
                    }
                }
                grads
                    .get_mut(&format!("layers.{i}.bias"))
                    .expect("layout")
                    .data_mut()
                    .copy_from_slice(g.data());
                let mut gx = vec![0.0; input];
                for o in 0..output {
                    let go = g.data[o];
                    if go != 0.0 {
                        for (slot, &wv) in gx.iter_mut().zip(&w[o * input..(o + 1) * input]) {
                            *slot += go * wv;
                        }
                    }
                }
                Tensor {
                    shape: vec![input],
                    data: gx,
                }
            }
            LayerSpec::Relu => Tensor {
                shape: g.shape.clone(),
                data: g
                    .data
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect(),
            },
            LayerSpec::ConvSame { kh, kw } => {
                let k = params.tensor(&format!("layers.{i}.kernel")).data();
                let (rows, cols) = (x.shape[0], x.shape[1]);
                let (gx, gk) =
                    conv::correlate_same_backward(x.data(), g.data(), rows, cols, k, kh, kw);
                grads
                    .get_mut(&format!("layers.{i}.kernel"))
                    .expect("layout")
                    .data_mut()
                    .copy_from_slice(&gk);
                grads
                    .get_mut(&format!("layers.{i}.bias"))
                    .expect("layout")
                    .data_mut()[0] = g.data.iter().sum();
                Tensor {
                    shape: g.shape.clone(),
                    data: gx,
                }
            }
        };
    }
    Ok((grads, g))
}

/// Reverse-mode gradients of `<output_grad, forward(input)>`.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamStore,
    input: &Tensor,
    output_grad: &Tensor,
) -> Result<(ParamStore, Tensor)> {
    let tape = forward_tape(spec, params, input)?;
    backward_tape(spec, params, &tape, output_grad)
}

fn check_input(spec: &NetworkSpec, params: &ParamStore, input: &Tensor) -> Result<()> {
    params.check_layout(spec)?;
    if input.shape() != spec.input_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: spec.input_shape.clone(),
            actual: input.shape().to_vec(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_dense() -> NetworkSpec {
        NetworkSpec {
            input_shape: vec![3],
            layers: vec![
                LayerSpec::Dense {
                    input: 3,
                    output: 3,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: 3,
                    output: 3,
                },
            ],
        }
    }

    fn small_conv() -> NetworkSpec {
        NetworkSpec {
            input_shape: vec![5, 4],
            layers: vec![
                LayerSpec::ConvSame { kh: 3, kw: 2 },
                LayerSpec::Relu,
                LayerSpec::ConvSame { kh: 4, kw: 5 },
            ],
        }
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut SeededRng) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
    }

    /// Scalar objective `<c, G(x)>` evaluated by a plain forward pass.
    fn objective(spec: &NetworkSpec, params: &ParamStore, x: &Tensor, c: &Tensor) -> f64 {
        dot(forward(spec, params, x).unwrap().data(), c.data())
    }

    /// Max relative error of reverse-mode gradients against central
    /// differences with step `h`, scaled by the largest gradient entry.
    fn fd_error(spec: &NetworkSpec, seed: u64, h: f64) -> f64 {
        let mut rng = SeededRng::new(seed);
        let mut params = init_params(spec, &mut rng).unwrap();
        for (name, t) in params.entries_mut() {
            if name.ends_with(".bias") {
                for v in t.data_mut() {
                    *v = rng.normal(0.0, 0.3);
                }
            }
        }
        let x = random_tensor(spec.input_shape.clone(), &mut rng);
        let c = random_tensor(spec.output_shape().unwrap(), &mut rng);
        let (grads, gx) = backward(spec, &params, &x, &c).unwrap();

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for k in 0..params.entries().len() {
            for j in 0..params.entries()[k].1.len() {
                let mut p = params.clone();
                p.entries_mut()[k].1.data_mut()[j] += h;
                let up = objective(spec, &p, &x, &c);
                p.entries_mut()[k].1.data_mut()[j] -= 2.0 * h;
                let down = objective(spec, &p, &x, &c);
                numeric.push((up - down) / (2.0 * h));
                analytic.push(grads.entries()[k].1.data()[j]);
            }
        }
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[j] += h;
            let up = objective(spec, &params, &xp, &c);
            xp.data_mut()[j] -= 2.0 * h;
            let down = objective(spec, &params, &xp, &c);
            numeric.push((up - down) / (2.0 * h));
            analytic.push(gx.data()[j]);
        }
        let scale = analytic.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn relu_example() {
        let spec = NetworkSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::Relu],
        };
        let params = init_params(&spec, &mut SeededRng::new(0)).unwrap();
        let y = forward(&spec, &params, &Tensor::vector(vec![-1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let spec = NetworkSpec {
            input_shape: vec![4, 6],
            layers: vec![LayerSpec::ConvSame { kh: 1, kw: 1 }],
        };
        let mut params = init_params(&spec, &mut SeededRng::new(0)).unwrap();
        params.get_mut("layers.0.kernel").unwrap().data_mut()[0] = 1.0;
        let x = random_tensor(vec![4, 6], &mut SeededRng::new(1));
        assert_eq!(forward(&spec, &params, &x).unwrap(), x);
    }

    #[test]
    fn conv_matches_double_loop() {
        let spec = NetworkSpec {
            input_shape: vec![5, 5],
            layers: vec![LayerSpec::ConvSame { kh: 3, kw: 3 }],
        };
        let mut rng = SeededRng::new(3);
        let mut params = init_params(&spec, &mut rng).unwrap();
        params.get_mut("layers.0.bias").unwrap().data_mut()[0] = 0.25;
        let x = random_tensor(vec![5, 5], &mut rng);
        let k = params.get("layers.0.kernel").unwrap().data().to_vec();
        let y = forward(&spec, &params, &x).unwrap();
        for i in 0..5i64 {
            for j in 0..5i64 {
                let mut acc = 0.25;
                for u in 0..3i64 {
                    for v in 0..3i64 {
                        let (p, q) = (i + u - 1, j + v - 1);
                        if (0..5).contains(&p) && (0..5).contains(&q) {
                            acc += k[(u * 3 + v) as usize] * x.data()[(p * 5 + q) as usize];
                        }
                    }
                }
                assert!((y.data()[(i * 5 + j) as usize] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_bounds_and_determinism() {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![LayerSpec::Dense {
                input: 4,
                output: 4,
            }],
        };
        let a = init_params(&spec, &mut SeededRng::new(5)).unwrap();
        let bound = (6.0f64 / 4.0).sqrt();
        assert!(a
            .get("layers.0.weight")
            .unwrap()
            .data()
            .iter()
            .all(|w| w.abs() <= bound));
        assert!(a
            .get("layers.0.bias")
            .unwrap()
            .data()
            .iter()
            .all(|&b| b == 0.0));
        assert_eq!(a, init_params(&spec, &mut SeededRng::new(5)).unwrap());
        let c = init_params(&spec, &mut SeededRng::new(6)).unwrap();
        let diff: f64 = a
            .flatten()
            .iter()
            .zip(c.flatten())
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        assert!(fd_error(&small_dense(), 11, 1e-5) <= 1e-4);
        assert!(fd_error(&small_conv(), 12, 1e-5) <= 1e-4);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let spec = small_conv();
        let mut rng = SeededRng::new(8);
        let params = init_params(&spec, &mut rng).unwrap();
        let x = random_tensor(vec![5, 4], &mut rng);
        let (grads, gx) = backward(&spec, &params, &x, &Tensor::zeros(vec![5, 4])).unwrap();
        assert!(grads.flatten().iter().all(|&v| v == 0.0));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_blocks_negative_units() {
        let spec = NetworkSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::Relu],
        };
        let params = ParamStore::zeros_for(&spec).unwrap();
        let x = Tensor::vector(vec![-2.0, 0.0, 1.5]).unwrap();
        let g = Tensor::vector(vec![1.0, 1.0, 1.0]).unwrap();
        let (_, gx) = backward(&spec, &params, &x, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shapes_are_preserved() {
        let spec = NetworkSpec::conv_2d(7, 9, 7, 9);
        assert_eq!(spec.output_shape().unwrap(), vec![7, 9]);
        let spec = NetworkSpec::dense_1d(12, 30);
        assert_eq!(spec.output_shape().unwrap(), vec![12]);
        let params = init_params(&spec, &mut SeededRng::new(0)).unwrap();
        assert_eq!(
            params.num_params(),
            12 * 30 + 30 + 30 * 30 + 30 + 30 * 12 + 12
        );
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let bad = NetworkSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::Dense {
                input: 4,
                output: 2,
            }],
        };
        assert!(matches!(bad.shapes(), Err(Error::ShapeMismatch { .. })));
        let bad = NetworkSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::ConvSame { kh: 1, kw: 1 }],
        };
        assert!(matches!(bad.shapes(), Err(Error::ArityMismatch(_))));
        let spec = small_dense();
        let params = init_params(&spec, &mut SeededRng::new(0)).unwrap();
        assert!(forward(&spec, &params, &Tensor::vector(vec![1.0; 4]).unwrap()).is_err());
        let x = Tensor::vector(vec![1.0; 3]).unwrap();
        assert!(backward(&spec, &params, &x, &Tensor::vector(vec![1.0; 2]).unwrap()).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn random_nets_match_finite_differences(seed in 0u64..10_000, conv in any::<bool>()) {
            let spec = if conv { small_conv() } else { small_dense() };
            prop_assert!(fd_error(&spec, seed, 1e-5) <= 1e-4);
        }

        #[test]
        fn forward_is_piecewise_linear(seed in 0u64..10_000) {
            // Along a short segment that crosses no activation boundary the
            // output is affine in the step length.
            let spec = small_dense();
            let mut rng = SeededRng::new(seed);
            let params = init_params(&spec, &mut rng).unwrap();
            let x = random_tensor(vec![3], &mut rng);
            let d = random_tensor(vec![3], &mut rng);
            let at = |t: f64| {
                let p = Tensor::vector(x.data().iter().zip(d.data()).map(|(a, b)| a + t * b).collect()).unwrap();
                forward_tape(&spec, &params, &p).unwrap()
            };
            let pattern = |tape: &Tape| tape.activations[1].data().iter().map(|v| *v > 0.0).collect::<Vec<_>>();
            let (t0, t1) = (at(0.0), at(1e-4));
            prop_assume!(pattern(&t0) == pattern(&t1) && pattern(&t0) == pattern(&at(5e-5)));
            let mid = at(5e-5);
            for ((a, b), m) in t0.output().data().iter().zip(t1.output().data()).zip(mid.output().data()) {
                prop_assert!((0.5 * (a + b) - m).abs() <= 1e-12 * (1.0 + m.abs()));
            }
        }

        #[test]
        fn forward_is_deterministic(seed in 0u64..10_000) {
            let spec = small_conv();
            let mut rng = SeededRng::new(seed);
            let params = init_params(&spec, &mut rng).unwrap();
            let x = random_tensor(vec![5, 4], &mut rng);
            prop_assert_eq!(forward(&spec, &params, &x).unwrap(), forward(&spec, &params, &x).unwrap());
        }
    }
}
