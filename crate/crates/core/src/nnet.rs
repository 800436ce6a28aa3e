//! Deep bidirectional LSTM acoustic model with peephole connections.
//!
//! Each direction of each layer evaluates
//!
//! ```text
//! i_t = σ(W_ix x_t + W_ih h_{t-1} + w_ic ⊙ c_{t-1} + b_i)
//! f_t = σ(W_fx x_t + W_fh h_{t-1} + w_fc ⊙ c_{t-1} + b_f)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ tanh(W_cx x_t + W_ch h_{t-1} + b_c)
//! o_t = σ(W_ox x_t + W_oh h_{t-1} + w_oc ⊙ c_t + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! where "t-1" means the previously processed frame, i.e. `t+1` for the
//! backward direction. The concatenated `[h_fwd, h_bwd]` of one layer feeds
//! the next; the top layer feeds an affine map followed by a softmax over the
//! `K+1` CTC labels.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::math::{log_softmax_in_place, sigmoid};
use crate::{Error, Result};

/// Half-width of the uniform initialization interval.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn order(self, len: usize) -> Box<dyn Iterator<Item = usize>> {
        match self {
            Direction::Forward => Box::new(0..len),
            Direction::Backward => Box::new((0..len).rev()),
        }
    }
}

/// Parameters of one direction of one LSTM layer. Peephole weights are
/// vectors, i.e. the diagonals of the peephole matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub w_ix: Array2<f64>,
    pub w_fx: Array2<f64>,
    pub w_cx: Array2<f64>,
    pub w_ox: Array2<f64>,
    pub w_ih: Array2<f64>,
    pub w_fh: Array2<f64>,
    pub w_ch: Array2<f64>,
    pub w_oh: Array2<f64>,
    pub w_ic: Array1<f64>,
    pub w_fc: Array1<f64>,
    pub w_oc: Array1<f64>,
    pub b_i: Array1<f64>,
    pub b_f: Array1<f64>,
    pub b_c: Array1<f64>,
    pub b_o: Array1<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, cells: usize) -> Self {
        let wx = || Array2::zeros((cells, input_dim));
        let wh = || Array2::zeros((cells, cells));
        let v = || Array1::zeros(cells);
        Self {
            w_ix: wx(),
            w_fx: wx(),
            w_cx: wx(),
            w_ox: wx(),
            w_ih: wh(),
            w_fh: wh(),
            w_ch: wh(),
            w_oh: wh(),
            w_ic: v(),
            w_fc: v(),
            w_oc: v(),
            b_i: v(),
            b_f: v(),
            b_c: v(),
            b_o: v(),
        }
    }

    pub fn cells(&self) -> usize {
        self.b_i.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ix.ncols()
    }

    /// Parameter blocks in serialization order.
    pub fn tensors(&self) -> [&[f64]; 15] {
        [
            slice(&self.w_ix),
            slice(&self.w_fx),
            slice(&self.w_cx),
            slice(&self.w_ox),
            slice(&self.w_ih),
            slice(&self.w_fh),
            slice(&self.w_ch),
            slice(&self.w_oh),
            self.w_ic.as_slice().unwrap(),
            self.w_fc.as_slice().unwrap(),
            self.w_oc.as_slice().unwrap(),
            self.b_i.as_slice().unwrap(),
            self.b_f.as_slice().unwrap(),
            self.b_c.as_slice().unwrap(),
            self.b_o.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 15] {
        [
            self.w_ix.as_slice_mut().unwrap(),
            self.w_fx.as_slice_mut().unwrap(),
            self.w_cx.as_slice_mut().unwrap(),
            self.w_ox.as_slice_mut().unwrap(),
            self.w_ih.as_slice_mut().unwrap(),
            self.w_fh.as_slice_mut().unwrap(),
            self.w_ch.as_slice_mut().unwrap(),
            self.w_oh.as_slice_mut().unwrap(),
            self.w_ic.as_slice_mut().unwrap(),
            self.w_fc.as_slice_mut().unwrap(),
            self.w_oc.as_slice_mut().unwrap(),
            self.b_i.as_slice_mut().unwrap(),
            self.b_f.as_slice_mut().unwrap(),
            self.b_c.as_slice_mut().unwrap(),
            self.b_o.as_slice_mut().unwrap(),
        ]
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are stored in standard layout")
}

/// Activations of one direction over one utterance, kept for BPTT. All
/// matrices are `[T × cells]` and indexed by frame, not by processing step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub direction: Direction,
    inputs: Array2<f64>,
    input_gate: Array2<f64>,
    forget_gate: Array2<f64>,
    candidate: Array2<f64>,
    output_gate: Array2<f64>,
    cell: Array2<f64>,
    cell_tanh: Array2<f64>,
    pub hidden: Array2<f64>,
}

/// Runs one direction of an LSTM layer from zero initial state.
pub fn lstm_forward(
    params: &LstmLayerParams,
    inputs: ArrayView2<'_, f64>,
    direction: Direction,
) -> Result<LstmCache> {
    let (len, in_dim) = inputs.dim();
    if len == 0 {
        return Err(Error::InvalidInput("LSTM input has no frames".into()));
    }
    if in_dim != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "LSTM expects input dimension {}, got {in_dim}",
            params.input_dim()
        )));
    }
    let cells = params.cells();
    let pre_i = inputs.dot(&params.w_ix.t()) + &params.b_i;
    let pre_f = inputs.dot(&params.w_fx.t()) + &params.b_f;
    let pre_c = inputs.dot(&params.w_cx.t()) + &params.b_c;
    let pre_o = inputs.dot(&params.w_ox.t()) + &params.b_o;

    let mut cache = LstmCache {
        direction,
        inputs: inputs.to_owned(),
        input_gate: Array2::zeros((len, cells)),
        forget_gate: Array2::zeros((len, cells)),
        candidate: Array2::zeros((len, cells)),
        output_gate: Array2::zeros((len, cells)),
        cell: Array2::zeros((len, cells)),
        cell_tanh: Array2::zeros((len, cells)),
        hidden: Array2::zeros((len, cells)),
    };
    let mut h_prev = Array1::<f64>::zeros(cells);
    let mut c_prev = Array1::<f64>::zeros(cells);
    for t in direction.order(len) {
        let mut i = &pre_i.row(t) + &params.w_ih.dot(&h_prev) + &params.w_ic * &c_prev;
        i.mapv_inplace(sigmoid);
        let mut f = &pre_f.row(t) + &params.w_fh.dot(&h_prev) + &params.w_fc * &c_prev;
        f.mapv_inplace(sigmoid);
        let mut g = &pre_c.row(t) + &params.w_ch.dot(&h_prev);
        g.mapv_inplace(f64::tanh);
        let c = &f * &c_prev + &i * &g;
        let mut o = &pre_o.row(t) + &params.w_oh.dot(&h_prev) + &params.w_oc * &c;
        o.mapv_inplace(sigmoid);
        let c_tanh = c.mapv(f64::tanh);
        let h = &o * &c_tanh;
        if h.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("LSTM activation at frame {t}"),
            });
        }
        cache.input_gate.row_mut(t).assign(&i);
        cache.forget_gate.row_mut(t).assign(&f);
        cache.candidate.row_mut(t).assign(&g);
        cache.output_gate.row_mut(t).assign(&o);
        cache.cell.row_mut(t).assign(&c);
        cache.cell_tanh.row_mut(t).assign(&c_tanh);
        cache.hidden.row_mut(t).assign(&h);
        h_prev = h;
        c_prev = c;
    }
    Ok(cache)
}

/// BPTT through one direction. `d_hidden` is the gradient of the objective
/// with respect to the layer outputs; returns parameter gradients and the
/// gradient with respect to the layer inputs.
fn standard(m: Array2<f64>) -> Array2<f64> {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().into_owned()
    }
}

pub fn lstm_backward(
    params: &LstmLayerParams,
    cache: &LstmCache,
    d_hidden: ArrayView2<'_, f64>,
) -> Result<(LstmLayerParams, Array2<f64>)> {
    let (len, cells) = cache.hidden.dim();
    if d_hidden.dim() != (len, cells) || params.cells() != cells {
        return Err(Error::DimensionMismatch(format!(
            "LSTM backward: cache is {len}x{cells}, gradient is {}x{}",
            d_hidden.nrows(),
            d_hidden.ncols()
        )));
    }
    let mut da_i = Array2::<f64>::zeros((len, cells));
    let mut da_f = Array2::<f64>::zeros((len, cells));
    let mut da_g = Array2::<f64>::zeros((len, cells));
    let mut da_o = Array2::<f64>::zeros((len, cells));
    let mut h_prev_all = Array2::<f64>::zeros((len, cells));
    let mut c_prev_all = Array2::<f64>::zeros((len, cells));

    let order: Vec<usize> = cache.direction.order(len).collect();
    for (step, &t) in order.iter().enumerate() {
        if step > 0 {
            let p = order[step - 1];
            h_prev_all.row_mut(t).assign(&cache.hidden.row(p));
            c_prev_all.row_mut(t).assign(&cache.cell.row(p));
        }
    }

    let mut dh_rec = Array1::<f64>::zeros(cells);
    let mut dc_rec = Array1::<f64>::zeros(cells);
    for &t in order.iter().rev() {
        let i = cache.input_gate.row(t);
        let f = cache.forget_gate.row(t);
        let g = cache.candidate.row(t);
        let o = cache.output_gate.row(t);
        let c_tanh = cache.cell_tanh.row(t);
        let c_prev = c_prev_all.row(t);

        let dh = &d_hidden.row(t) + &dh_rec;
        let d_o = &dh * &c_tanh * &o * &o.mapv(|v| 1.0 - v);
        let dc = &dh * &o * &c_tanh.mapv(|v| 1.0 - v * v) + &d_o * &params.w_oc + &dc_rec;
        let d_i = &dc * &g * &i * &i.mapv(|v| 1.0 - v);
        let d_g = &dc * &i * &g.mapv(|v| 1.0 - v * v);
        let d_f = &dc * &c_prev * &f * &f.mapv(|v| 1.0 - v);

        dc_rec = &dc * &f + &d_i * &params.w_ic + &d_f * &params.w_fc;
        dh_rec = params.w_ih.t().dot(&d_i)
            + params.w_fh.t().dot(&d_f)
            + params.w_ch.t().dot(&d_g)
            + params.w_oh.t().dot(&d_o);

        da_i.row_mut(t).assign(&d_i);
        da_f.row_mut(t).assign(&d_f);
        da_g.row_mut(t).assign(&d_g);
        da_o.row_mut(t).assign(&d_o);
    }

    let x = &cache.inputs;
    let grads = LstmLayerParams {
        w_ix: standard(da_i.t().dot(x)),
        w_fx: standard(da_f.t().dot(x)),
        w_cx: standard(da_g.t().dot(x)),
        w_ox: standard(da_o.t().dot(x)),
        w_ih: standard(da_i.t().dot(&h_prev_all)),
        w_fh: standard(da_f.t().dot(&h_prev_all)),
        w_ch: standard(da_g.t().dot(&h_prev_all)),
        w_oh: standard(da_o.t().dot(&h_prev_all)),
        w_ic: (&da_i * &c_prev_all).sum_axis(Axis(0)),
        w_fc: (&da_f * &c_prev_all).sum_axis(Axis(0)),
        w_oc: (&da_o * &cache.cell).sum_axis(Axis(0)),
        b_i: da_i.sum_axis(Axis(0)),
        b_f: da_f.sum_axis(Axis(0)),
        b_c: da_g.sum_axis(Axis(0)),
        b_o: da_o.sum_axis(Axis(0)),
    };
    let d_inputs =
        da_i.dot(&params.w_ix) + da_f.dot(&params.w_fx) + da_g.dot(&params.w_cx) + da_o.dot(&params.w_ox);
    Ok((grads, d_inputs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub forward: LstmLayerParams,
    pub backward: LstmLayerParams,
}

/// Layer sizes of a stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Memory cells per direction, one entry per layer.
    pub cells: Vec<usize>,
    /// `K + 1`, blank included.
    pub num_outputs: usize,
}

impl ModelSpec {
    pub fn uniform(input_dim: usize, layers: usize, cells: usize, num_outputs: usize) -> Self {
        Self {
            input_dim,
            cells: vec![cells; layers],
            num_outputs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_outputs < 2 {
            return Err(Error::InvalidInput(format!(
                "model needs input_dim ≥ 1 and ≥ 2 outputs, got {} and {}",
                self.input_dim, self.num_outputs
            )));
        }
        if self.cells.is_empty() || self.cells.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "model needs at least one layer and non-zero cells, got {:?}",
                self.cells
            )));
        }
        Ok(())
    }
}

/// Stacked bidirectional LSTM with a softmax output layer. Gradients use the
/// same type.
#[derive(Debug, Clone, PartialEq)]
pub struct BlstmStack {
    pub layers: Vec<BiLstmLayer>,
    /// `[(K+1) × 2·cells_top]`
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl BlstmStack {
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.cells.len());
        let mut in_dim = spec.input_dim;
        for &cells in &spec.cells {
            layers.push(BiLstmLayer {
                forward: LstmLayerParams::zeros(in_dim, cells),
                backward: LstmLayerParams::zeros(in_dim, cells),
            });
            in_dim = 2 * cells;
        }
        Ok(Self {
            layers,
            w_out: Array2::zeros((spec.num_outputs, in_dim)),
            b_out: Array1::zeros(spec.num_outputs),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            input_dim: self.input_dim(),
            cells: self.layers.iter().map(|l| l.forward.cells()).collect(),
            num_outputs: self.num_outputs(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].forward.input_dim()
    }

    pub fn num_outputs(&self) -> usize {
        self.b_out.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.spec()).expect("spec of an existing stack is valid")
    }

    /// Every parameter block in serialization order: per layer forward then
    /// backward direction, then the output weights and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 30 + 2);
        for layer in &self.layers {
            out.extend(layer.forward.tensors());
            out.extend(layer.backward.tensors());
        }
        out.push(slice(&self.w_out));
        out.push(self.b_out.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 30 + 2);
        for layer in &mut self.layers {
            out.extend(layer.forward.tensors_mut());
            out.extend(layer.backward.tensors_mut());
        }
        out.push(self.w_out.as_slice_mut().unwrap());
        out.push(self.b_out.as_slice_mut().unwrap());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().into_iter().flat_map(|t| t.iter().copied())
    }

    /// `self += scale · other`, blockwise.
    pub fn scaled_add(&mut self, scale: f64, other: &BlstmStack) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Elementwise clamp to `[-limit, limit]`.
    pub fn clip(&mut self, limit: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = v.clamp(-limit, limit));
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Parameter at flat index `k` (serialization order).
    pub fn get_flat(&self, mut k: usize) -> Option<f64> {
        for t in self.tensors() {
            if k < t.len() {
                return Some(t[k]);
            }
            k -= t.len();
        }
        None
    }

    pub fn set_flat(&mut self, mut k: usize, value: f64) -> bool {
        for t in self.tensors_mut() {
            if k < t.len() {
                t[k] = value;
                return true;
            }
            k -= t.len();
        }
        false
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Forward pass over `[T × input_dim]` frames.
    pub fn forward(&self, frames: ArrayView2<'_, f64>) -> Result<ForwardPass> {
        if frames.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects feature dimension {}, got {}",
                self.input_dim(),
                frames.ncols()
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut input = frames.to_owned();
        for layer in &self.layers {
            let fwd = lstm_forward(&layer.forward, input.view(), Direction::Forward)?;
            let bwd = lstm_forward(&layer.backward, input.view(), Direction::Backward)?;
            input = ndarray::concatenate(Axis(1), &[fwd.hidden.view(), bwd.hidden.view()])
                .expect("both directions share the frame axis");
            caches.push((fwd, bwd));
        }
        let logits = (input.dot(&self.w_out.t()) + &self.b_out).as_standard_layout().into_owned();
        let mut log_posteriors = logits.clone();
        for mut row in log_posteriors.rows_mut() {
            log_softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
        }
        Ok(ForwardPass {
            caches,
            top_hidden: input,
            logits,
            log_posteriors,
        })
    }

    /// Backpropagates `output_errors` (the gradient of a scalar objective with
    /// respect to the pre-softmax activations) through the whole stack.
    pub fn backward(&self, pass: &ForwardPass, output_errors: ArrayView2<'_, f64>) -> Result<BlstmStack> {
        if output_errors.dim() != pass.logits.dim() || pass.caches.len() != self.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "output errors are {}x{}, forward pass produced {}x{}",
                output_errors.nrows(),
                output_errors.ncols(),
                pass.logits.nrows(),
                pass.logits.ncols()
            )));
        }
        let mut grads = self.zeros_like();
        grads.w_out = standard(output_errors.t().dot(&pass.top_hidden));
        grads.b_out = output_errors.sum_axis(Axis(0));
        let mut d_above = output_errors.dot(&self.w_out);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let cells = layer.forward.cells();
            let (fwd_cache, bwd_cache) = &pass.caches[l];
            let (g_fwd, dx_fwd) = lstm_backward(&layer.forward, fwd_cache, d_above.slice(s![.., ..cells]))?;
            let (g_bwd, dx_bwd) = lstm_backward(&layer.backward, bwd_cache, d_above.slice(s![.., cells..]))?;
            grads.layers[l] = BiLstmLayer {
                forward: g_fwd,
                backward: g_bwd,
            };
            d_above = dx_fwd + dx_bwd;
        }
        Ok(grads)
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub caches: Vec<(LstmCache, LstmCache)>,
    pub top_hidden: Array2<f64>,
    pub logits: Array2<f64>,
    pub log_posteriors: Array2<f64>,
}

impl ForwardPass {
    pub fn num_frames(&self) -> usize {
        self.logits.nrows()
    }

    pub fn posteriors(&self, utterance_id: impl Into<String>) -> PosteriorMatrix {
        PosteriorMatrix::from_log(utterance_id, self.log_posteriors.clone())
    }
}

/// Per-frame label posteriors `[T × (K+1)]`, kept alongside their logarithms
/// so that peaky outputs do not lose precision.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    pub utterance_id: String,
    log_probs: Array2<f64>,
}

impl PosteriorMatrix {
    pub fn from_log(utterance_id: impl Into<String>, log_probs: Array2<f64>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            log_probs,
        }
    }

    /// Builds from probabilities; every row must sum to one within 1e-6.
    pub fn from_probs(utterance_id: impl Into<String>, probs: Array2<f64>) -> Result<Self> {
        let utterance_id = utterance_id.into();
        for (t, row) in probs.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidInput(format!(
                    "posteriors of {utterance_id} at frame {t} are not a distribution (sum {sum})"
                )));
            }
        }
        Ok(Self {
            utterance_id,
            log_probs: probs.mapv(f64::ln),
        })
    }

    pub fn log_probs(&self) -> ArrayView2<'_, f64> {
        self.log_probs.view()
    }

    pub fn probs(&self) -> Array2<f64> {
        self.log_probs.mapv(f64::exp)
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.log_probs.row(t)
    }

    pub fn num_frames(&self) -> usize {
        self.log_probs.nrows()
    }

    pub fn num_labels(&self) -> usize {
        self.log_probs.ncols()
    }
}

/// Runs the stack over one utterance.
pub fn blstm_forward(stack: &BlstmStack, feat: &crate::features::FeatureMatrix) -> Result<(PosteriorMatrix, ForwardPass)> {
    let pass = stack.forward(feat.frames())?;
    Ok((pass.posteriors(feat.utterance_id.clone()), pass))
}

/// Draws every parameter from U[−0.1, 0.1] with a seeded ChaCha stream, in
/// serialization order.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<BlstmStack> {
    let mut stack = BlstmStack::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-INIT_RANGE, INIT_RANGE).expect("valid interval");
    for t in stack.tensors_mut() {
        for v in t.iter_mut() {
            *v = dist.sample(&mut rng);
        }
    }
    Ok(stack)
}
