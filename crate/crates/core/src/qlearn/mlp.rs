//! Fully connected network with rectifier hidden layers, its gradients and
//! the Adam optimizer.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::LearnError;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"QNET";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    sizes: Vec<usize>,
    /// `weights[l]` has shape `(sizes[l], sizes[l + 1])`.
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Array1<S>>,
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Array1<S>>,
}

/// Layer outputs kept for backpropagation; `acts[0]` is the input.
pub struct Trace<S> {
    acts: Vec<Array2<S>>,
}

impl<S> Trace<S> {
    pub fn output(&self) -> &Array2<S> {
        self.acts.last().expect("trace has output")
    }
}

fn check_sizes(sizes: &[usize]) -> Result<(), LearnError> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(LearnError::InvalidShape(format!("{sizes:?}")));
    }
    Ok(())
}

impl<S: Scalar> Mlp<S> {
    pub fn zeros(sizes: &[usize]) -> Result<Self, LearnError> {
        check_sizes(sizes)?;
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect(),
            biases: sizes[1..].iter().map(|&n| Array1::zeros(n)).collect(),
        })
    }

    /// He-uniform weights (limit sqrt(6 / fan_in)), zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, LearnError> {
        let mut net = Self::zeros(sizes)?;
        for w in &mut net.weights {
            let limit = (6.0 / w.nrows() as f64).sqrt();
            let law = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            w.mapv_inplace(|_| S::of(law.sample(rng)));
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn check_input(&self, cols: usize) -> Result<(), LearnError> {
        if cols != self.input_dim() {
            return Err(LearnError::DimensionMismatch { expected: self.input_dim(), got: cols });
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: ArrayView2<S>) -> Result<Trace<S>, LearnError> {
        self.check_input(x.ncols())?;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.to_owned());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(|v| v.max(S::zero()));
            }
            acts.push(z);
        }
        Ok(Trace { acts })
    }

    /// Outputs for a batch of row vectors.
    pub fn forward(&self, x: ArrayView2<S>) -> Result<Array2<S>, LearnError> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut h = x.dot(&self.weights[0]);
        h += &self.biases[0];
        for l in 0..last {
            h.mapv_inplace(|v| v.max(S::zero()));
            h = h.dot(&self.weights[l + 1]);
            h += &self.biases[l + 1];
        }
        Ok(h)
    }

    pub fn forward_one(&self, x: &[S]) -> Result<Vec<S>, LearnError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Gradients of a loss whose derivative with respect to the outputs is `grad_out`.
    pub fn backward(&self, trace: &Trace<S>, grad_out: Array2<S>) -> Gradients<S> {
        let n = self.weights.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = grad_out;
        for l in (0..n).rev() {
            gw.push(trace.acts[l].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                Zip::from(&mut back).and(&trace.acts[l]).for_each(|d, &a| {
                    if a <= S::zero() {
                        *d = S::zero();
                    }
                });
                delta = back;
            }
        }
        gw.reverse();
        gb.reverse();
        Gradients { weights: gw, biases: gb }
    }

    /// Mean squared error on the chosen output of each row, and its gradients.
    pub fn selected_mse(&self, x: ArrayView2<S>, actions: &[usize], targets: &[S]) -> Result<(S, Gradients<S>), LearnError> {
        let trace = self.forward_trace(x)?;
        let out = trace.output();
        let batch = out.nrows();
        let scale = S::of(2.0 / batch as f64);
        let mut grad = Array2::zeros(out.raw_dim());
        let mut loss = S::zero();
        for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let diff = out[[i, a]] - y;
            loss = loss + diff * diff;
            grad[[i, a]] = scale * diff;
        }
        let loss = loss / S::of(batch as f64);
        let grads = self.backward(&trace, grad);
        Ok((loss, grads))
    }

    /// All parameters in checkpoint order (per layer: weights row-major, then biases).
    pub fn flat_params(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[S]) -> Result<(), LearnError> {
        if params.len() != self.param_count() {
            return Err(LearnError::DimensionMismatch { expected: self.param_count(), got: params.len() });
        }
        let mut it = params.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            w.iter_mut().chain(b.iter_mut()).for_each(|p| *p = it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Versioned little-endian binary: magic, version, layer count, sizes,
    /// then per layer the row-major weights and the biases as f64.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            out.write_all(&(s as u32).to_le_bytes())?;
        }
        for p in self.flat_params() {
            out.write_all(&p.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, LearnError> {
        let bad = |e: std::io::Error| LearnError::Checkpoint(e.to_string());
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(bad)?;
        if &magic != MAGIC {
            return Err(LearnError::Checkpoint("bad magic".into()));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |input: &mut R| -> Result<u32, LearnError> {
            input.read_exact(&mut word).map_err(bad)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported version {version}")));
        }
        let n = read_u32(&mut input)? as usize;
        if n > 64 {
            return Err(LearnError::Checkpoint(format!("implausible layer count {n}")));
        }
        let sizes = (0..n).map(|_| read_u32(&mut input).map(|s| s as usize)).collect::<Result<Vec<_>, _>>()?;
        let mut net = Self::zeros(&sizes)?;
        let mut params = Vec::with_capacity(net.param_count());
        let mut buf = [0u8; 8];
        for _ in 0..net.param_count() {
            input.read_exact(&mut buf).map_err(bad)?;
            params.push(S::of(f64::from_le_bytes(buf)));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest).map_err(bad)?;
        if !rest.is_empty() {
            return Err(LearnError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        net.set_flat_params(&params)?;
        Ok(net)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 2.5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub params: AdamParams,
    t: i32,
    m: Gradients<S>,
    v: Gradients<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(net: &Mlp<S>, params: AdamParams) -> Self {
        let zeros = || Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        Adam { params, t: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, net: &mut Mlp<S>, g: &Gradients<S>) {
        self.t += 1;
        let p = self.params;
        let b1 = S::of(p.beta1);
        let b2 = S::of(p.beta2);
        let one = S::one();
        let c1 = one - b1.powi(self.t);
        let c2 = one - b2.powi(self.t);
        let lr = S::of(p.lr);
        let eps = S::of(p.eps);
        let update = |param: &mut S, grad: &S, m: &mut S, v: &mut S| {
            *m = b1 * *m + (one - b1) * *grad;
            *v = b2 * *v + (one - b2) * *grad * *grad;
            let mh = *m / c1;
            let vh = *v / c2;
            *param = *param - lr * mh / (vh.sqrt() + eps);
        };
        for l in 0..net.weights.len() {
            Zip::from(&mut net.weights[l]).and(&g.weights[l]).and(&mut self.m.weights[l]).and(&mut self.v.weights[l]).for_each(update);
            Zip::from(&mut net.biases[l]).and(&g.biases[l]).and(&mut self.m.biases[l]).and(&mut self.v.biases[l]).for_each(update);
        }
    }
}
