//! Fully connected ReLU networks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MarketError, Result};
use crate::params::{descend, LabeledDataset, LossSpec, ParameterVector};
use crate::scalar::Scalar;

/// `outputs × inputs` weights (row-major) plus one bias per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(MarketError::Architecture("empty layer".into()));
        }
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(MarketError::Architecture(format!(
                "layer {outputs}x{inputs} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(MarketError::NonFinite("layer"));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    #[inline]
    pub fn w(&self, out: usize, inp: usize) -> T {
        self.weights[out * self.inputs + inp]
    }

    pub fn row(&self, out: usize) -> &[T] {
        &self.weights[out * self.inputs..(out + 1) * self.inputs]
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Layers chain `widths[0] → widths[1] → …`; ReLU between layers, none after
/// the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<Layer<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpTaskKind {
    /// Single output, squared error.
    Regression(LossSpec),
    /// Labels hold class indices; mean softmax cross-entropy.
    Classification,
}

impl<T: Scalar> MlpParams<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(MarketError::Architecture("no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(MarketError::Architecture(format!(
                    "layer {i} has {} outputs but layer {} takes {} inputs",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-scaled Gaussian weights and small Gaussian biases.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(MarketError::Architecture("need at least two widths".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let scale = (2.0 / w[0] as f64).sqrt();
                let weights = (0..w[0] * w[1])
                    .map(|_| T::lit(scale * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                let bias = (0..w[1])
                    .map(|_| T::lit(0.1 * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                Layer::new(w[0], w[1], weights, bias)
            })
            .collect::<Result<_>>()?;
        Self::new(layers)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        let layers = widths
            .windows(2)
            .map(|w| Layer::new(w[0], w[1], vec![T::zero(); w[0] * w[1]], vec![T::zero(); w[1]]))
            .collect::<Result<_>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn same_architecture(&self, other: &Self) -> Result<()> {
        if self.widths() != other.widths() {
            return Err(MarketError::Architecture(format!(
                "widths {:?} vs {:?}",
                self.widths(),
                other.widths()
            )));
        }
        Ok(())
    }

    /// Layer by layer: weights row-major, then biases.
    pub fn flatten(&self) -> ParameterVector<T> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        ParameterVector::new(v).expect("layers hold finite values")
    }

    pub fn unflatten(widths: &[usize], flat: &ParameterVector<T>) -> Result<Self> {
        let expected: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if flat.dim() != expected {
            return Err(MarketError::DimensionMismatch {
                context: "unflatten",
                expected,
                found: flat.dim(),
            });
        }
        let v = flat.as_slice();
        let mut at = 0;
        let layers = widths
            .windows(2)
            .map(|w| {
                let nw = w[0] * w[1];
                let weights = v[at..at + nw].to_vec();
                let bias = v[at + nw..at + nw + w[1]].to_vec();
                at += nw + w[1];
                Layer::new(w[0], w[1], weights, bias)
            })
            .collect::<Result<_>>()?;
        Self::new(layers)
    }

    /// Output activations (logits) for one input row.
    pub fn forward(&self, input: &[T]) -> Vec<T> {
        self.activations(input).pop().expect("at least one layer")
    }

    /// Post-activation values of every layer, starting with the input.
    fn activations(&self, input: &[T]) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (k, l) in self.layers.iter().enumerate() {
            let a = acts.last().expect("non-empty");
            let last = k + 1 == self.layers.len();
            let z: Vec<T> = (0..l.outputs)
                .map(|o| {
                    let s = l.row(o).iter().zip(a).map(|(&w, &x)| w * x).sum::<T>() + l.bias[o];
                    if last {
                        s
                    } else {
                        s.max(T::zero())
                    }
                })
                .collect();
            acts.push(z);
        }
        acts
    }

    fn check_data(&self, data: &LabeledDataset<T>, kind: MlpTaskKind) -> Result<()> {
        let widths = self.widths();
        if data.dim() != widths[0] {
            return Err(MarketError::DimensionMismatch {
                context: "network input",
                expected: widths[0],
                found: data.dim(),
            });
        }
        let out = *widths.last().expect("non-empty");
        match kind {
            MlpTaskKind::Regression(_) if out != 1 => Err(MarketError::Architecture(format!(
                "regression needs one output, network has {out}"
            ))),
            MlpTaskKind::Classification
                if data
                    .labels()
                    .iter()
                    .any(|y| *y < T::zero() || y.fract() != T::zero() || y.to_f64_lossy() >= out as f64) =>
            {
                Err(MarketError::domain(format!(
                    "class labels must be integers in 0..{out}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Per-sample loss and its derivative with respect to the outputs.
fn sample_loss<T: Scalar>(out: &[T], label: T, kind: MlpTaskKind) -> (T, Vec<T>) {
    match kind {
        MlpTaskKind::Regression(_) => {
            let r = out[0] - label;
            (r * r, vec![T::lit(2.0) * r])
        }
        MlpTaskKind::Classification => {
            let class = label.to_f64_lossy() as usize;
            let m = out.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = out.iter().map(|&z| (z - m).exp()).collect();
            let total: T = exps.iter().copied().sum();
            let loss = total.ln() + m - out[class];
            let grad = exps
                .iter()
                .enumerate()
                .map(|(k, &e)| e / total - if k == class { T::one() } else { T::zero() })
                .collect();
            (loss, grad)
        }
    }
}

fn reduction<T: Scalar>(kind: MlpTaskKind, n: usize) -> T {
    match kind {
        MlpTaskKind::Regression(spec) => spec.reduction(n),
        MlpTaskKind::Classification => T::one() / T::from_count(n),
    }
}

pub fn mlp_forward_loss<T: Scalar>(
    params: &MlpParams<T>,
    data: &LabeledDataset<T>,
    kind: MlpTaskKind,
) -> Result<T> {
    params.check_data(data, kind)?;
    let total: T = (0..data.len())
        .map(|i| sample_loss(&params.forward(data.row(i)), data.labels()[i], kind).0)
        .sum();
    let loss = total * reduction::<T>(kind, data.len());
    if !loss.is_finite() {
        return Err(MarketError::Divergence { round: None });
    }
    Ok(loss)
}

/// Loss and its gradient in [`MlpParams::flatten`] layout.
pub fn mlp_loss_gradient<T: Scalar>(
    params: &MlpParams<T>,
    data: &LabeledDataset<T>,
    kind: MlpTaskKind,
) -> Result<(T, Vec<T>)> {
    params.check_data(data, kind)?;
    let layers = params.layers();
    let offsets: Vec<usize> = layers
        .iter()
        .scan(0, |at, l| {
            let start = *at;
            *at += l.len();
            Some(start)
        })
        .collect();
    let mut grad = vec![T::zero(); params.num_params()];
    let mut total = T::zero();
    for i in 0..data.len() {
        let acts = params.activations(data.row(i));
        let (loss, mut delta) = sample_loss(acts.last().expect("output"), data.labels()[i], kind);
        total += loss;
        for k in (0..layers.len()).rev() {
            let l = &layers[k];
            let a = &acts[k];
            let off = offsets[k];
            for o in 0..l.outputs {
                let d = delta[o];
                if d == T::zero() {
                    continue;
                }
                let row = &mut grad[off + o * l.inputs..off + (o + 1) * l.inputs];
                row.iter_mut().zip(a).for_each(|(g, &x)| *g += d * x);
                grad[off + l.weights.len() + o] += d;
            }
            if k > 0 {
                delta = (0..l.inputs)
                    .map(|j| {
                        if a[j] > T::zero() {
                            (0..l.outputs).map(|o| l.w(o, j) * delta[o]).sum()
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
            }
        }
    }
    let r = reduction::<T>(kind, data.len());
    grad.iter_mut().for_each(|g| *g *= r);
    let loss = total * r;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(MarketError::Divergence { round: None });
    }
    Ok((loss, grad))
}

/// One full-batch gradient step.
pub fn mlp_step<T: Scalar>(
    params: &MlpParams<T>,
    data: &LabeledDataset<T>,
    kind: MlpTaskKind,
    step_size: T,
) -> Result<MlpParams<T>> {
    let (_, g) = mlp_loss_gradient(params, data, kind)?;
    let next = descend(&params.flatten(), &g, step_size)?;
    MlpParams::unflatten(&params.widths(), &next)
}

pub fn train<T: Scalar>(
    params: &MlpParams<T>,
    data: &LabeledDataset<T>,
    kind: MlpTaskKind,
    step_size: T,
    steps: usize,
) -> Result<MlpParams<T>> {
    let mut p = params.clone();
    for _ in 0..steps {
        p = mlp_step(&p, data, kind, step_size)?;
    }
    Ok(p)
}

/// Fraction of rows whose arg-max output equals the label.
pub fn accuracy<T: Scalar>(params: &MlpParams<T>, data: &LabeledDataset<T>) -> f64 {
    let hits = (0..data.len())
        .filter(|&i| {
            let out = params.forward(data.row(i));
            let best = (0..out.len())
                .max_by(|&a, &b| out[a].partial_cmp(&out[b]).expect("finite").then(b.cmp(&a)))
                .expect("non-empty");
            best as f64 == data.labels()[i].to_f64_lossy()
        })
        .count();
    hits as f64 / data.len().max(1) as f64
}
