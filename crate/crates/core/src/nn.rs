//! Small neural-network toolkit on top of candle tensors: a named parameter
//! store with seeded initialisation, dense/normalisation/recurrent layers
//! built from differentiable primitives, and an Adam optimiser with
//! global-norm gradient clipping.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
const LN_EPS: f64 = 1e-5;

/// Named trainable tensors. Iteration order is the lexical order of names,
/// which keeps optimiser state, checkpoints and soft updates aligned.
#[derive(Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("dtype", &self.dtype)
            .field("names", &self.vars.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Registers a uniformly initialised parameter in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
            .collect();
        self.insert(name, Tensor::from_vec(data, shape, &self.device)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let t = (Tensor::ones(shape, DType::F64, &self.device)? * value)?;
        self.insert(name, t)
    }

    fn insert(&mut self, name: &str, t: Tensor) -> Result<Var> {
        if self.vars.contains_key(name) {
            return Err(Error::contract(format!("parameter {name} registered twice")));
        }
        let var = Var::from_tensor(&t.to_dtype(self.dtype)?)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Copies every value into fresh storage so the clone no longer aliases `self`.
    pub fn deep_clone(&self) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (k, v) in &self.vars {
            vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        Ok(Self {
            vars,
            dtype: self.dtype,
            device: self.device.clone(),
        })
    }

    fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.vars.len() != other.vars.len() {
            return Err(Error::contract("parameter stores hold different parameter sets"));
        }
        for ((ka, va), (kb, vb)) in self.vars.iter().zip(&other.vars) {
            if ka != kb || va.dims() != vb.dims() {
                return Err(Error::contract(format!(
                    "parameter mismatch: {ka} {:?} vs {kb} {:?}",
                    va.dims(),
                    vb.dims()
                )));
            }
        }
        Ok(())
    }

    /// `self <- tau * source + (1 - tau) * self` for every parameter.
    pub fn soft_update_from(&self, source: &ParamStore, tau: f64) -> Result<()> {
        self.check_same_layout(source)?;
        for (t, s) in self.vars.values().zip(source.vars.values()) {
            let blended = if tau == 1.0 {
                s.as_tensor().copy()?
            } else if tau == 0.0 {
                continue;
            } else {
                ((s.as_tensor() * tau)? + (t.as_tensor() * (1.0 - tau))?)?
            };
            t.set(&blended)?;
        }
        Ok(())
    }

    /// Overwrites the values with those in `tensors`, checking names and shapes.
    pub fn load_tensors(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: stored {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        if let Some(extra) = tensors.keys().find(|k| !self.vars.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Largest absolute elementwise difference to another store.
    pub fn max_abs_diff(&self, other: &ParamStore) -> Result<f64> {
        self.check_same_layout(other)?;
        let mut m = 0.0f64;
        for (a, b) in self.vars.values().zip(other.vars.values()) {
            let d = (a.as_tensor() - b.as_tensor())?
                .abs()?
                .flatten_all()?
                .max(0)?
                .to_dtype(DType::F64)?
                .to_scalar::<f64>()?;
            m = m.max(d);
        }
        Ok(m)
    }
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * LEAKY_SLOPE)?)?)
}

/// Logistic function written via `tanh` so it stays differentiable.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let tail = ((x.abs()?.neg()?.exp()? + 1.0)?).log()?;
    Ok((pos + tail)?)
}

/// Fully connected layer acting on the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = store.uniform(&format!("{name}.weight"), &[in_dim, out_dim], bound, rng)?;
        let bias = store.uniform(&format!("{name}.bias"), &[out_dim], bound, rng)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = *dims.last().ok_or_else(|| Error::contract("linear input must have rank >= 1"))?;
        if last != self.in_dim {
            return Err(Error::contract(format!("linear expects last dim {}, got {last}", self.in_dim)));
        }
        let rows = x.elem_count() / last.max(1);
        let flat = x.reshape((rows, last))?;
        let y = flat.matmul(self.weight.as_tensor())?.broadcast_add(self.bias.as_tensor())?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim;
        Ok(y.reshape(out_dims)?)
    }
}

/// Layer normalisation over the last axis with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&format!("{name}.gamma"), &[dim], 1.0)?,
            beta: store.constant(&format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

/// `LeakyReLU(LayerNorm(W x + b))`, the embedding block used throughout.
#[derive(Debug, Clone)]
pub struct Dense {
    pub linear: Linear,
    pub norm: LayerNorm,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(store, &format!("{name}.fc"), in_dim, out_dim, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.ln"), out_dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        leaky_relu(&self.norm.forward(&self.linear.forward(x)?)?)
    }
}

/// Gated recurrent unit cell; gates ordered reset, update, candidate.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            input: Linear::new(store, &format!("{name}.ih"), in_dim, 3 * hidden_dim, rng)?,
            hidden: Linear::new(store, &format!("{name}.hh"), hidden_dim, 3 * hidden_dim, rng)?,
            hidden_dim,
        })
    }

    /// `x: [rows, in]`, `h: [rows, hidden]` → `[rows, hidden]`.
    pub fn forward(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let hd = self.hidden_dim;
        let gi = self.input.forward(x)?;
        let gh = self.hidden.forward(h)?;
        let r = sigmoid(&(gi.narrow(1, 0, hd)? + gh.narrow(1, 0, hd)?)?)?;
        let z = sigmoid(&(gi.narrow(1, hd, hd)? + gh.narrow(1, hd, hd)?)?)?;
        let n = (gi.narrow(1, 2 * hd, hd)? + (r * gh.narrow(1, 2 * hd, hd)?)?)?.tanh()?;
        let keep = (z.ones_like()? - &z)?;
        Ok(((keep * n)? + (z * h)?)?)
    }
}

/// Adam with bias correction and optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub step: u64,
    state: Vec<(Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64, clip_norm: Option<f64>) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            step: 0,
            state: Vec::new(),
        }
    }

    /// Global L2 norm of the gradients of `vars` (missing gradients count as zero).
    pub fn grad_norm(vars: &[Var], grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for v in vars {
            if let Some(g) = grads.get(v) {
                sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    /// Applies one update to `vars`; returns the pre-clip gradient norm.
    pub fn step(&mut self, vars: &[Var], grads: &GradStore) -> Result<f64> {
        if self.state.is_empty() {
            self.state = vars
                .iter()
                .map(|v| Ok((v.as_tensor().zeros_like()?, v.as_tensor().zeros_like()?)))
                .collect::<Result<_>>()?;
        }
        if self.state.len() != vars.len() {
            return Err(Error::contract("optimiser used with a different parameter list"));
        }
        let norm = Self::grad_norm(vars, grads)?;
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (v, (m, s)) in vars.iter().zip(self.state.iter_mut()) {
            let Some(g) = grads.get(v) else { continue };
            // Gradients carry autodiff history; the moments must not.
            let g = (g.detach() * scale)?;
            *m = ((&*m * self.beta1)? + (&g * (1.0 - self.beta1))?)?.detach();
            *s = ((&*s * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?.detach();
            let m_hat = (&*m / bc1)?;
            let denom = ((&*s / bc2)?.sqrt()? + self.eps)?;
            let update = ((m_hat / denom)? * self.lr)?;
            v.set(&(v.as_tensor() - update)?)?;
        }
        Ok(norm)
    }

    /// First and second moments in parameter order (for checkpoints).
    pub fn moments(&self) -> &[(Tensor, Tensor)] {
        &self.state
    }

    pub fn restore(&mut self, step: u64, moments: Vec<(Tensor, Tensor)>) {
        self.step = step;
        self.state = moments;
    }
}

/// Reads a rank-0/1 tensor as `f64` values.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn layer_norm_output_is_standardised() {
        let mut store = ParamStore::new(DType::F64);
        let ln = LayerNorm::new(&mut store, "ln", 6).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 4.0, 5.0, 9.0]], &Device::Cpu).unwrap();
        let y = to_f64_vec(&ln.forward(&x).unwrap()).unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 6.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn activations_match_closed_forms() {
        let x = Tensor::new(&[-3.0f64, -0.5, 0.0, 0.7, 40.0], &Device::Cpu).unwrap();
        let xs = [-3.0f64, -0.5, 0.0, 0.7, 40.0];
        let s = to_f64_vec(&sigmoid(&x).unwrap()).unwrap();
        let sp = to_f64_vec(&softplus(&x).unwrap()).unwrap();
        let lr = to_f64_vec(&leaky_relu(&x).unwrap()).unwrap();
        for i in 0..5 {
            assert!((s[i] - 1.0 / (1.0 + (-xs[i]).exp())).abs() < 1e-12);
            assert!((sp[i] - xs[i].exp().ln_1p()).abs() < 1e-12);
            let want = if xs[i] > 0.0 { xs[i] } else { 0.01 * xs[i] };
            assert!((lr[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn gru_with_zero_gates_interpolates() {
        let mut store = ParamStore::new(DType::F64);
        let gru = GruCell::new(&mut store, "g", 2, 3, &mut rng()).unwrap();
        let x = Tensor::zeros((4, 2), DType::F64, &Device::Cpu).unwrap();
        let h = Tensor::zeros((4, 3), DType::F64, &Device::Cpu).unwrap();
        let out = gru.forward(&x, &h).unwrap();
        assert_eq!(out.dims(), &[4, 3]);
        let rows = out.to_vec2::<f64>().unwrap();
        assert!(rows.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut store = ParamStore::new(DType::F64);
        let w = store.constant("w", &[2], 1.0).unwrap();
        let loss = w.as_tensor().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = Adam::new(0.1, None);
        opt.step(&store.vars(), &grads).unwrap();
        let v = to_f64_vec(w.as_tensor()).unwrap();
        assert!(v.iter().all(|x| (x - 0.9).abs() < 1e-6));
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut store = ParamStore::new(DType::F64);
        let w = store.constant("w", &[1], 0.0).unwrap();
        let loss = (w.as_tensor() * 1000.0).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = Adam::new(0.1, Some(10.0));
        let norm = opt.step(&store.vars(), &grads).unwrap();
        assert!((norm - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn soft_update_extremes() {
        let mut a = ParamStore::new(DType::F64);
        a.uniform("x", &[3, 2], 1.0, &mut rng()).unwrap();
        let mut b = ParamStore::new(DType::F64);
        b.uniform("x", &[3, 2], 1.0, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let before = b.deep_clone().unwrap();
        b.soft_update_from(&a, 0.0).unwrap();
        assert_eq!(b.max_abs_diff(&before).unwrap(), 0.0);
        b.soft_update_from(&a, 1.0).unwrap();
        assert_eq!(b.max_abs_diff(&a).unwrap(), 0.0);
        let mut c = ParamStore::new(DType::F64);
        c.uniform("y", &[3, 2], 1.0, &mut rng()).unwrap();
        assert!(c.soft_update_from(&a, 0.5).is_err());
    }
}
