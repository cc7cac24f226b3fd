//! Noise-prediction MLP `ε_θ(x, t)` with hand-written backprop.
//!
//! Input is `x` concatenated with a sinusoidal embedding of the step index;
//! hidden layers use SiLU, the output layer is linear. Parameters live in one
//! flat buffer, layer by layer, each layer as a row-major `(fan_out, fan_in)`
//! weight block followed by its bias.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use super::DdpmError;
use crate::gaussian::Point;
use crate::param::ParamVector;
use crate::rng::RngState;

pub const DATA_DIM: usize = 2;
pub const DEFAULT_TIME_EMBED: usize = 16;
pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpWidths {
    /// Even; 0 disables the time input.
    pub time_embed: usize,
    pub hidden: Vec<usize>,
}

impl MlpWidths {
    /// Two hidden layers of the given width with the default time embedding.
    pub fn standard(hidden: usize) -> Self {
        Self {
            time_embed: DEFAULT_TIME_EMBED,
            hidden: vec![hidden, hidden],
        }
    }

    pub fn input_dim(&self) -> usize {
        DATA_DIM + self.time_embed
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim();
        for &h in self.hidden.iter().chain(std::iter::once(&DATA_DIM)) {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    fn validate(&self) -> Result<(), DdpmError> {
        if !self.time_embed.is_multiple_of(2) || self.hidden.contains(&0) {
            return Err(DdpmError::BadWidths(self.clone()));
        }
        Ok(())
    }

    /// `"16;128,128"`, the form stored in checkpoint metadata.
    pub fn encode(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        format!("{};{}", self.time_embed, hidden.join(","))
    }

    pub fn decode(s: &str) -> Result<Self, DdpmError> {
        let bad = || DdpmError::BadCheckpoint(format!("malformed widths `{s}`"));
        let (te, hidden) = s.split_once(';').ok_or_else(bad)?;
        let time_embed = te.parse().map_err(|_| bad())?;
        let hidden = if hidden.is_empty() {
            Vec::new()
        } else {
            hidden.split(',').map(|h| h.parse().map_err(|_| bad())).collect::<Result<_, _>>()?
        };
        let w = Self { time_embed, hidden };
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerSpan {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

fn spans(widths: &MlpWidths) -> Vec<LayerSpan> {
    let mut offset = 0;
    widths
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let s = LayerSpan { fan_in, fan_out, offset };
            offset += (fan_in + 1) * fan_out;
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    widths: MlpWidths,
    spans: Vec<LayerSpan>,
    flat: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(widths: MlpWidths) -> Result<Self, DdpmError> {
        let n = widths.param_count();
        Self::from_flat(widths, vec![0.0; n])
    }

    /// Zero biases, weights drawn from `N(0, 1/fan_in)`.
    pub fn init(widths: MlpWidths, rng: &mut RngState) -> Result<Self, DdpmError> {
        let mut p = Self::zeros(widths)?;
        for s in p.spans.clone() {
            let scale = 1.0 / (s.fan_in as f64).sqrt();
            for w in &mut p.flat[s.weights()] {
                *w = scale * rng.normal();
            }
        }
        Ok(p)
    }

    pub fn from_flat(widths: MlpWidths, flat: Vec<f64>) -> Result<Self, DdpmError> {
        widths.validate()?;
        if flat.len() != widths.param_count() {
            return Err(DdpmError::ParamCount {
                expected: widths.param_count(),
                got: flat.len(),
            });
        }
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(DdpmError::NonFiniteParam(i));
        }
        let spans = spans(&widths);
        Ok(Self { widths, spans, flat })
    }

    pub fn from_params(widths: MlpWidths, p: &ParamVector) -> Result<Self, DdpmError> {
        Self::from_flat(widths, p.as_slice().to_vec())
    }

    pub fn to_params(&self) -> ParamVector {
        ParamVector::new(self.flat.clone()).expect("MLP parameters are kept finite")
    }

    pub fn widths(&self) -> &MlpWidths {
        &self.widths
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.spans.len()
    }

    /// Flat index range of layer `l` (weights then bias).
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        let s = self.spans[l];
        s.offset..s.bias().end
    }

    fn weight_view(&self, l: usize) -> ArrayView2<'_, f64> {
        let s = self.spans[l];
        ArrayView2::from_shape((s.fan_out, s.fan_in), &self.flat[s.weights()]).expect("span shape")
    }

    fn bias_view(&self, l: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.flat[self.spans[l].bias()])
    }

    /// Network input rows `[x, emb(t)]`.
    pub fn assemble_input(&self, xs: &[Point], ts: &[usize]) -> Array2<f64> {
        let d = self.widths.time_embed;
        let mut input = Array2::zeros((xs.len(), DATA_DIM + d));
        for (mut row, (x, &t)) in input.rows_mut().into_iter().zip(xs.iter().zip(ts)) {
            row[0] = x[0];
            row[1] = x[1];
            let emb = row.as_slice_mut().expect("standard layout");
            time_embedding_into(t, &mut emb[DATA_DIM..]);
        }
        input
    }

    /// Batched forward pass keeping what backprop needs.
    pub fn forward(&self, input: Array2<f64>) -> Result<Activations, DdpmError> {
        let n = input.nrows();
        let mut pre = Vec::with_capacity(self.spans.len());
        let mut post = Vec::with_capacity(self.spans.len() + 1);
        post.push(input);
        for (l, s) in self.spans.iter().enumerate() {
            let mut z = Array2::zeros((n, s.fan_out));
            general_mat_mul(1.0, &post[l], &self.weight_view(l).t(), 0.0, &mut z);
            z += &self.bias_view(l);
            let last = l + 1 == self.spans.len();
            let a = if last { z.clone() } else { z.mapv(silu) };
            if a.iter().any(|v| !v.is_finite()) {
                return Err(DdpmError::NonFiniteActivation { layer: l });
            }
            pre.push(z);
            post.push(a);
        }
        Ok(Activations { pre, post })
    }

    /// Gradient of `Σ_rows ⟨d_out, output⟩` with respect to the flat parameters.
    pub fn backward(&self, acts: &Activations, d_out: ArrayView2<'_, f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.flat.len()];
        let layers = self.spans.len();
        let mut dz = d_out.to_owned();
        for l in (0..layers).rev() {
            let s = self.spans[l];
            let mut gw = ArrayViewMut2::from_shape((s.fan_out, s.fan_in), &mut grad[s.weights()]).expect("span shape");
            general_mat_mul(1.0, &dz.t(), &acts.post[l], 0.0, &mut gw);
            for (g, col) in grad[s.bias()].iter_mut().zip(dz.axis_iter(Axis(1))) {
                *g = col.sum();
            }
            if l > 0 {
                let mut da = Array2::zeros((dz.nrows(), s.fan_in));
                general_mat_mul(1.0, &dz, &self.weight_view(l), 0.0, &mut da);
                da.zip_mut_with(&acts.pre[l - 1], |d, &z| *d *= silu_prime(z));
                dz = da;
            }
        }
        grad
    }

    /// Predicted noise for a batch of points at the given steps.
    pub fn predict(&self, xs: &[Point], ts: &[usize]) -> Result<Vec<Point>, DdpmError> {
        let acts = self.forward(self.assemble_input(xs, ts))?;
        Ok(acts.output().rows().into_iter().map(|r| [r[0], r[1]]).collect())
    }
}

/// Single-point `ε_θ(x, t)`.
pub fn mlp_forward(p: &MlpParams, x: Point, t: usize, steps: usize) -> Result<Point, DdpmError> {
    if t >= steps {
        return Err(DdpmError::StepOutOfRange { t, steps });
    }
    Ok(p.predict(&[x], &[t])?[0])
}

#[derive(Debug, Clone)]
pub struct Activations {
    pre: Vec<Array2<f64>>,
    /// `post[0]` is the input, `post[L]` the output.
    post: Vec<Array2<f64>>,
}

impl Activations {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.post.last().expect("at least the input").view()
    }
}

/// Sinusoidal features `[sin(t·ω_i), cos(t·ω_i)]` with `ω_i = 10000^(−i/half)`.
pub fn time_embedding_into(t: usize, out: &mut [f64]) {
    let half = out.len() / 2;
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t as f64 * freq).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}
