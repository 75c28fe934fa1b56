use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{shape_err, NnError};

/// One affine layer, `weight` is `(fan_out, fan_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Dense>,
}

/// Intermediates of a batched forward pass.
///
/// `activations[0]` is the input batch and `activations[i + 1]` the output of
/// layer `i`; the last entry holds the logits. `pre_activations[i]` is the
/// affine output of layer `i` before the rectifier.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Array2<f64>>,
    pub activations: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Array2<f64> {
        self.activations.last().expect("trace always holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input: Option<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            weights: mlp.layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect(),
            biases: mlp.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            input: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
            && self.input.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Right-multiplies each layer's bias-augmented gradient `[G | g_b]` by `Pᵀ`.
    pub fn projected(&self, projectors: &[Array2<f64>]) -> Result<Gradients, NnError> {
        if projectors.len() != self.weights.len() {
            return Err(shape_err("projected", self.weights.len(), projectors.len()));
        }
        let mut out = self.clone();
        for (i, p) in projectors.iter().enumerate() {
            let (rows, cols) = self.weights[i].dim();
            if p.dim() != (cols + 1, cols + 1) {
                return Err(shape_err("projected", (cols + 1, cols + 1), p.dim()));
            }
            let mut aug = Array2::zeros((rows, cols + 1));
            aug.slice_mut(s![.., ..cols]).assign(&self.weights[i]);
            aug.column_mut(cols).assign(&self.biases[i]);
            let projected = aug.dot(&p.t());
            out.weights[i] = projected.slice(s![.., ..cols]).to_owned();
            out.biases[i] = projected.column(cols).to_owned();
        }
        Ok(out)
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self, NnError> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..=limit));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Mlp {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, NnError> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Mlp {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NnError> {
        let first = layers.first().ok_or_else(|| NnError::Dims(vec![]))?;
        let mut dims = vec![first.fan_in()];
        for layer in &layers {
            if layer.fan_in() != *dims.last().unwrap() {
                return Err(shape_err("from_layers", dims.last().unwrap(), layer.fan_in()));
            }
            if layer.bias.len() != layer.fan_out() {
                return Err(shape_err("from_layers bias", layer.fan_out(), layer.bias.len()));
            }
            dims.push(layer.fan_out());
        }
        validate_dims(&dims)?;
        Ok(Mlp { dims, layers })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, batch: &ArrayView2<f64>) -> Result<(), NnError> {
        if batch.ncols() != self.dims[0] {
            return Err(shape_err("forward input columns", self.dims[0], batch.ncols()));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Array2<f64>) -> Result<ForwardTrace, NnError> {
        self.check_input(&batch.view())?;
        let last = self.layers.len() - 1;
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine(activations.last().unwrap().view(), layer);
            let a = if i == last { z.clone() } else { z.mapv(relu) };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace {
            pre_activations,
            activations,
        })
    }

    /// Forward pass that keeps only the logits.
    pub fn logits(&self, batch: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&batch.view())?;
        let mut x = affine(batch.view(), &self.layers[0]);
        for layer in &self.layers[1..] {
            x.mapv_inplace(relu);
            x = affine(x.view(), layer);
        }
        Ok(x)
    }

    /// Activations of the last hidden layer (the input itself for a single-layer net).
    pub fn features(&self, batch: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&batch.view())?;
        let mut x = batch.clone();
        for layer in &self.layers[..self.layers.len() - 1] {
            x = affine(x.view(), layer);
            x.mapv_inplace(relu);
        }
        Ok(x)
    }

    pub fn backward(
        &self,
        trace: &ForwardTrace,
        dlogits: &Array2<f64>,
        want_input_grad: bool,
    ) -> Result<Gradients, NnError> {
        self.backward_impl(trace, dlogits, want_input_grad, None)
    }

    /// Backward pass whose weight gradients come out already projected:
    /// `[G | g_b] Pᵀ` per layer with the bias treated as a weight on a constant-1
    /// input. Agrees with `backward` followed by [`Gradients::projected`] but picks
    /// the cheaper multiplication order per layer.
    pub fn backward_projected(
        &self,
        trace: &ForwardTrace,
        dlogits: &Array2<f64>,
        projectors: &[Array2<f64>],
    ) -> Result<Gradients, NnError> {
        if projectors.len() != self.layers.len() {
            return Err(shape_err("backward_projected", self.layers.len(), projectors.len()));
        }
        for (layer, p) in self.layers.iter().zip(projectors) {
            let side = layer.fan_in() + 1;
            if p.dim() != (side, side) {
                return Err(shape_err("backward_projected", (side, side), p.dim()));
            }
        }
        self.backward_impl(trace, dlogits, false, Some(projectors))
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace,
        dlogits: &Array2<f64>,
        want_input_grad: bool,
        projectors: Option<&[Array2<f64>]>,
    ) -> Result<Gradients, NnError> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(shape_err(
                "backward trace depth",
                self.layers.len() + 1,
                trace.activations.len(),
            ));
        }
        if dlogits.dim() != trace.logits().dim() {
            return Err(shape_err("backward dlogits", trace.logits().dim(), dlogits.dim()));
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = dlogits.clone();
        let mut input = None;
        for l in (0..n).rev() {
            let x = &trace.activations[l];
            let (gw, gb) = match projectors {
                Some(ps) => projected_layer_grad(&delta, x, &ps[l]),
                None => (delta.t().dot(x), delta.sum_axis(Axis(0))),
            };
            weights.push(gw);
            biases.push(gb);
            if l > 0 || want_input_grad {
                let mut d_in = delta.dot(&self.layers[l].weight);
                if l > 0 {
                    Zip::from(&mut d_in)
                        .and(&trace.pre_activations[l - 1])
                        .for_each(|d, &z| {
                            if z <= 0.0 {
                                *d = 0.0;
                            }
                        });
                    delta = d_in;
                } else {
                    input = Some(d_in);
                }
            }
        }
        weights.reverse();
        biases.reverse();
        Ok(Gradients {
            weights,
            biases,
            input,
        })
    }

    /// `W ← W − lr·G`, or `[W | b] ← [W | b] − lr·[G | g_b]·Pᵀ` when projectors are given.
    pub fn sgd_step(
        &mut self,
        grads: &Gradients,
        lr: f64,
        projector: Option<&[Array2<f64>]>,
    ) -> Result<(), NnError> {
        if !(lr >= 0.0) {
            return Err(NnError::LearningRate(lr));
        }
        if grads.weights.len() != self.layers.len() || grads.biases.len() != self.layers.len() {
            return Err(shape_err("sgd_step layers", self.layers.len(), grads.weights.len()));
        }
        for (layer, (gw, gb)) in self.layers.iter().zip(grads.weights.iter().zip(&grads.biases)) {
            if gw.dim() != layer.weight.dim() || gb.len() != layer.bias.len() {
                return Err(shape_err("sgd_step", layer.weight.dim(), gw.dim()));
            }
        }
        let projected;
        let grads = match projector {
            Some(p) => {
                projected = grads.projected(p)?;
                &projected
            }
            None => grads,
        };
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
            layer.weight.scaled_add(-lr, gw);
            layer.bias.scaled_add(-lr, gb);
        }
        Ok(())
    }
}

fn validate_dims(dims: &[usize]) -> Result<(), NnError> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(NnError::Dims(dims.to_vec()));
    }
    Ok(())
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn affine(x: ArrayView2<f64>, layer: &Dense) -> Array2<f64> {
    let mut z = x.dot(&layer.weight.t());
    z += &layer.bias;
    z
}

/// `[δᵀX | Σδ] Pᵀ` for one layer. `P` is symmetric for OWM, but the transpose
/// is kept so the result matches [`Gradients::projected`] for any `P`.
fn projected_layer_grad(
    delta: &Array2<f64>,
    x: &Array2<f64>,
    p: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let (batch, fan_in) = x.dim();
    let fan_out = delta.ncols();
    let pt = p.t();
    let projected = if fan_out <= batch {
        let mut g = Array2::zeros((fan_out, fan_in + 1));
        g.slice_mut(s![.., ..fan_in]).assign(&delta.t().dot(x));
        g.column_mut(fan_in).assign(&delta.sum_axis(Axis(0)));
        g.dot(&pt)
    } else {
        // X_aug Pᵀ = X·Pᵀ[..fan_in, :] + 1·Pᵀ[fan_in, :]
        let mut xp = x.dot(&pt.slice(s![..fan_in, ..]));
        xp += &pt.row(fan_in);
        delta.t().dot(&xp)
    };
    let w = projected.slice(s![.., ..fan_in]).to_owned();
    let b = projected.column(fan_in).to_owned();
    (w, b)
}
