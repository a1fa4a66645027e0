//! The neural model family: a batch-normalized LSTM cell, a question
//! encoder that runs a forward RNN up to the blank and a backward RNN
//! down to it, per-track video encoders over feature rows, and an MLP
//! softmax classifier over the concatenated representations.
//!
//! Batching over variable-length questions uses masked steps: every
//! example runs for the batch's maximum prefix/suffix length, and update
//! masks freeze finished rows. A frozen row's state is carried through
//! multiplication by exactly 1.0, so in population-statistics mode the
//! batched encoder is bit-identical to running each example alone.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::Rng;

use crate::corpus::FeatureTrack;
use crate::numerics::{
    batch_norm, concat_cols, pick_rows, read_container, softmax_cross_entropy_mean,
    write_container, BatchStats, BnMode, BnSiteStats, Container, Tensor,
};
use crate::{rng_streams, seeded_rng, Error, Result};

/// Which encoders the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    TextOnly,
    Text2d,
    Text3d,
    Text2d3d,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "text-only" => Some(Variant::TextOnly),
            "text+2d" => Some(Variant::Text2d),
            "text+3d" => Some(Variant::Text3d),
            "text+2d+3d" => Some(Variant::Text2d3d),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::TextOnly => "text-only",
            Variant::Text2d => "text+2d",
            Variant::Text3d => "text+3d",
            Variant::Text2d3d => "text+2d+3d",
        }
    }

    /// Feature-track names this variant consumes, in encoder order.
    pub fn tracks(&self) -> &'static [&'static str] {
        match self {
            Variant::TextOnly => &[],
            Variant::Text2d => &["2d"],
            Variant::Text3d => &["3d"],
            Variant::Text2d3d => &["2d", "3d"],
        }
    }
}

/// Model sizes; everything is configurable, nothing is architectural.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub hidden_q: usize,
    pub hidden_v: usize,
    pub clf_hidden: usize,
    pub vocab_in: usize,
    pub vocab_out: usize,
    /// Feature dimension per track name used by the variant.
    pub track_dims: BTreeMap<String, usize>,
}

impl ModelDims {
    pub fn desk_default(vocab_in: usize, vocab_out: usize) -> ModelDims {
        ModelDims {
            embed_dim: 64,
            hidden_q: 128,
            hidden_v: 128,
            clf_hidden: 256,
            vocab_in,
            vocab_out,
            track_dims: BTreeMap::new(),
        }
    }

    fn classifier_input(&self, variant: Variant) -> usize {
        variant.tracks().len() * self.hidden_v + 2 * self.hidden_q
    }
}

/// Batch-norm momentum used everywhere unless overridden.
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
/// Epsilon inside the batch-normalizing transform.
pub const BN_EPS: f64 = 1e-5;
/// Initial value of every batch-norm gain.
pub const GAIN_INIT: f64 = 0.1;

fn uniform_init(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::param(vec![rows, cols], values)
}

/// One batch-normalized LSTM cell with its learned parameters, learned
/// initial state, and the running statistics of its three BN sites
/// (input projection, recurrent projection, cell state).
pub struct BnLstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_in: Tensor,
    pub w_rec: Tensor,
    pub bias: Tensor,
    pub gain_in: Tensor,
    pub gain_rec: Tensor,
    pub gain_cell: Tensor,
    pub cell_bias: Tensor,
    pub init_h: Tensor,
    pub init_c: Tensor,
    pub bn_in: RefCell<BnSiteStats>,
    pub bn_rec: RefCell<BnSiteStats>,
    pub bn_cell: RefCell<BnSiteStats>,
}

impl BnLstmCell {
    pub fn init(input_dim: usize, hidden_dim: usize, momentum: f64, rng: &mut impl Rng) -> Self {
        let gates = 4 * hidden_dim;
        BnLstmCell {
            input_dim,
            hidden_dim,
            w_in: uniform_init(rng, input_dim, gates, input_dim),
            w_rec: uniform_init(rng, hidden_dim, gates, hidden_dim),
            bias: Tensor::param(vec![gates], vec![0.0; gates]),
            gain_in: Tensor::param(vec![gates], vec![GAIN_INIT; gates]),
            gain_rec: Tensor::param(vec![gates], vec![GAIN_INIT; gates]),
            gain_cell: Tensor::param(vec![hidden_dim], vec![GAIN_INIT; hidden_dim]),
            cell_bias: Tensor::param(vec![hidden_dim], vec![0.0; hidden_dim]),
            init_h: Tensor::param(vec![hidden_dim], vec![0.0; hidden_dim]),
            init_c: Tensor::param(vec![hidden_dim], vec![0.0; hidden_dim]),
            bn_in: RefCell::new(BnSiteStats::new(gates, momentum)),
            bn_rec: RefCell::new(BnSiteStats::new(gates, momentum)),
            bn_cell: RefCell::new(BnSiteStats::new(hidden_dim, momentum)),
        }
    }

    /// One recurrent transition over a batch of inputs at recurrence
    /// depth `t` (which selects the batch-norm statistics).
    ///
    /// Gate pre-activations are BN(x·W_in) + BN(h·W_rec) + bias, split
    /// into (input, forget, output, candidate) chunks; the new cell state
    /// is gated candidate plus gated carry, and the hidden state applies
    /// the output gate to the batch-normalized cell state.
    pub fn step(
        &self,
        x: &Tensor,
        h_prev: &Tensor,
        c_prev: &Tensor,
        t: usize,
        mode: BnMode,
    ) -> Result<(Tensor, Tensor)> {
        let d = self.hidden_dim;
        let in_proj = batch_norm(
            &x.matmul(&self.w_in)?,
            &self.gain_in,
            BN_EPS,
            self.bn_in.borrow_mut().for_step(t, mode)?,
            mode,
        )?;
        let rec_proj = batch_norm(
            &h_prev.matmul(&self.w_rec)?,
            &self.gain_rec,
            BN_EPS,
            self.bn_rec.borrow_mut().for_step(t, mode)?,
            mode,
        )?;
        let pre = in_proj.add(&rec_proj)?.add_bias(&self.bias)?;

        let gate_i = pre.slice_cols(0, d)?.sigmoid();
        let gate_f = pre.slice_cols(d, 2 * d)?.sigmoid();
        let gate_o = pre.slice_cols(2 * d, 3 * d)?.sigmoid();
        let candidate = pre.slice_cols(3 * d, 4 * d)?.tanh();

        let c_t = gate_i
            .hadamard(&candidate)?
            .add(&gate_f.hadamard(c_prev)?)?;
        let c_norm = batch_norm(
            &c_t,
            &self.gain_cell,
            BN_EPS,
            self.bn_cell.borrow_mut().for_step(t, mode)?,
            mode,
        )?;
        let h_t = gate_o.hadamard(&c_norm.add_bias(&self.cell_bias)?.tanh())?;
        Ok((h_t, c_t))
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, t) in [
            ("w_in", &self.w_in),
            ("w_rec", &self.w_rec),
            ("bias", &self.bias),
            ("gain_in", &self.gain_in),
            ("gain_rec", &self.gain_rec),
            ("gain_cell", &self.gain_cell),
            ("cell_bias", &self.cell_bias),
            ("init_h", &self.init_h),
            ("init_c", &self.init_c),
        ] {
            out.push((format!("{prefix}.{name}"), t.clone()));
        }
    }

    fn stats_sites(&self) -> [(&'static str, &RefCell<BnSiteStats>); 3] {
        [
            ("bn_in", &self.bn_in),
            ("bn_rec", &self.bn_rec),
            ("bn_cell", &self.bn_cell),
        ]
    }
}

/// All learnable parameters of one model variant.
pub struct ModelParams {
    pub variant: Variant,
    pub dims: ModelDims,
    pub embed: Tensor,
    pub q_fwd: BnLstmCell,
    pub q_bwd: BnLstmCell,
    /// Video encoders in `variant.tracks()` order.
    pub video: Vec<(String, BnLstmCell)>,
    pub clf_w1: Tensor,
    pub clf_b1: Tensor,
    pub clf_w2: Tensor,
    pub clf_b2: Tensor,
}

impl ModelParams {
    pub fn init(variant: Variant, dims: ModelDims, seed: u64) -> Result<ModelParams> {
        let mut rng = seeded_rng(seed, rng_streams::PARAM_INIT);
        for track in variant.tracks() {
            if !dims.track_dims.contains_key(*track) {
                return Err(Error::Config(format!(
                    "variant {} needs a dimension for track {track:?}",
                    variant.as_str()
                )));
            }
        }
        let embed = uniform_init(&mut rng, dims.vocab_in, dims.embed_dim, dims.embed_dim);
        let q_fwd = BnLstmCell::init(dims.embed_dim, dims.hidden_q, DEFAULT_BN_MOMENTUM, &mut rng);
        let q_bwd = BnLstmCell::init(dims.embed_dim, dims.hidden_q, DEFAULT_BN_MOMENTUM, &mut rng);
        let video = variant
            .tracks()
            .iter()
            .map(|name| {
                let d_in = dims.track_dims[*name];
                (
                    name.to_string(),
                    BnLstmCell::init(d_in, dims.hidden_v, DEFAULT_BN_MOMENTUM, &mut rng),
                )
            })
            .collect();
        let clf_in = dims.classifier_input(variant);
        let clf_w1 = uniform_init(&mut rng, clf_in, dims.clf_hidden, clf_in);
        let clf_b1 = Tensor::param(vec![dims.clf_hidden], vec![0.0; dims.clf_hidden]);
        let clf_w2 = uniform_init(&mut rng, dims.clf_hidden, dims.vocab_out, dims.clf_hidden);
        let clf_b2 = Tensor::param(vec![dims.vocab_out], vec![0.0; dims.vocab_out]);
        Ok(ModelParams {
            variant,
            dims,
            embed,
            q_fwd,
            q_bwd,
            video,
            clf_w1,
            clf_b1,
            clf_w2,
            clf_b2,
        })
    }

    /// Stable enumeration of every learnable tensor.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("embed".to_string(), self.embed.clone())];
        self.q_fwd.named_params("q_fwd", &mut out);
        self.q_bwd.named_params("q_bwd", &mut out);
        for (name, cell) in &self.video {
            cell.named_params(&format!("video.{name}"), &mut out);
        }
        out.push(("clf.w1".to_string(), self.clf_w1.clone()));
        out.push(("clf.b1".to_string(), self.clf_b1.clone()));
        out.push(("clf.w2".to_string(), self.clf_w2.clone()));
        out.push(("clf.b2".to_string(), self.clf_b2.clone()));
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn zero_grads(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }

    fn cells(&self) -> Vec<(String, &BnLstmCell)> {
        let mut cells = vec![
            ("q_fwd".to_string(), &self.q_fwd),
            ("q_bwd".to_string(), &self.q_bwd),
        ];
        for (name, cell) in &self.video {
            cells.push((format!("video.{name}"), cell));
        }
        cells
    }

    // ---- checkpointing ----

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.meta.insert("kind".into(), "fib-model".into());
        c.meta.insert("variant".into(), self.variant.as_str().into());
        c.meta.insert("embed_dim".into(), self.dims.embed_dim.to_string());
        c.meta.insert("hidden_q".into(), self.dims.hidden_q.to_string());
        c.meta.insert("hidden_v".into(), self.dims.hidden_v.to_string());
        c.meta.insert("clf_hidden".into(), self.dims.clf_hidden.to_string());
        c.meta.insert("vocab_in".into(), self.dims.vocab_in.to_string());
        c.meta.insert("vocab_out".into(), self.dims.vocab_out.to_string());
        for (track, d) in &self.dims.track_dims {
            c.meta.insert(format!("track.{track}"), d.to_string());
        }
        for (name, t) in self.named_params() {
            c.push(name, t.shape(), t.value_vec());
        }
        for (cell_name, cell) in self.cells() {
            for (site, stats) in cell.stats_sites() {
                let s = stats.borrow();
                let n = s.features();
                let steps = s.step_count();
                let mut means = Vec::with_capacity(steps * n);
                let mut vars = Vec::with_capacity(steps * n);
                let mut flags = vec![s.momentum()];
                for pair in s.steps() {
                    means.extend_from_slice(&pair.mean);
                    vars.extend_from_slice(&pair.var);
                    flags.push(if pair.initialized { 1.0 } else { 0.0 });
                }
                c.push(format!("{cell_name}.{site}.mean"), vec![steps, n], means);
                c.push(format!("{cell_name}.{site}.var"), vec![steps, n], vars);
                c.push(format!("{cell_name}.{site}.state"), vec![1 + steps], flags);
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<ModelParams> {
        let bad = |msg: String| Error::Validation(format!("checkpoint: {msg}"));
        let meta = |key: &str| {
            c.meta
                .get(key)
                .cloned()
                .ok_or_else(|| bad(format!("missing meta key {key}")))
        };
        if meta("kind")? != "fib-model" {
            return Err(bad("not a model checkpoint".into()));
        }
        let variant = Variant::parse(&meta("variant")?)
            .ok_or_else(|| bad("unknown variant".into()))?;
        let num = |key: &str| -> Result<usize> {
            meta(key)?.parse().map_err(|_| bad(format!("bad meta {key}")))
        };
        let mut track_dims = BTreeMap::new();
        for (k, v) in &c.meta {
            if let Some(track) = k.strip_prefix("track.") {
                track_dims.insert(
                    track.to_string(),
                    v.parse().map_err(|_| bad(format!("bad meta {k}")))?,
                );
            }
        }
        let dims = ModelDims {
            embed_dim: num("embed_dim")?,
            hidden_q: num("hidden_q")?,
            hidden_v: num("hidden_v")?,
            clf_hidden: num("clf_hidden")?,
            vocab_in: num("vocab_in")?,
            vocab_out: num("vocab_out")?,
            track_dims,
        };
        let params = ModelParams::init(variant, dims, 0)?;

        for (name, t) in params.named_params() {
            let (shape, values) = c
                .get(&name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if shape != t.shape().as_slice() {
                return Err(bad(format!(
                    "tensor {name}: shape {:?} does not match expected {:?}",
                    shape,
                    t.shape()
                )));
            }
            t.with_values_mut(|v| v.copy_from_slice(values));
        }
        for (cell_name, cell) in params.cells() {
            for (site, stats) in cell.stats_sites() {
                let mut s = stats.borrow_mut();
                let (mean_shape, mean) = c
                    .get(&format!("{cell_name}.{site}.mean"))
                    .ok_or_else(|| bad(format!("missing stats {cell_name}.{site}")))?;
                let (_, var) = c
                    .get(&format!("{cell_name}.{site}.var"))
                    .ok_or_else(|| bad(format!("missing stats {cell_name}.{site}")))?;
                let (_, state) = c
                    .get(&format!("{cell_name}.{site}.state"))
                    .ok_or_else(|| bad(format!("missing state {cell_name}.{site}")))?;
                let n = s.features();
                if mean_shape.len() != 2 || mean_shape[1] != n || state.is_empty() {
                    return Err(bad(format!("stats shape mismatch at {cell_name}.{site}")));
                }
                let steps = mean_shape[0];
                let momentum = state[0];
                let mut pairs = Vec::with_capacity(steps);
                for t in 0..steps {
                    let mut pair = BatchStats::new(n, momentum);
                    pair.mean.copy_from_slice(&mean[t * n..(t + 1) * n]);
                    pair.var.copy_from_slice(&var[t * n..(t + 1) * n]);
                    pair.initialized = state.get(1 + t).copied().unwrap_or(0.0) != 0.0;
                    pairs.push(pair);
                }
                *s = BnSiteStats::from_steps(n, momentum, pairs);
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_container(&self.to_container(), path)
    }

    pub fn load(path: &std::path::Path) -> Result<ModelParams> {
        ModelParams::from_container(&read_container(path)?)
    }

    /// Value-exact copy that shares nothing with the original.
    pub fn deep_clone(&self) -> ModelParams {
        ModelParams::from_container(&self.to_container())
            .expect("round trip through a container is lossless")
    }
}

/// One example's worth of model input: token ids, the blank position,
/// and per-track frame selections aligned with `variant.tracks()`.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub ids: &'a [usize],
    pub blank_index: usize,
    pub videos: Vec<(&'a FeatureTrack, Vec<usize>)>,
}

fn row_mask(active: &[bool], width: usize) -> Tensor {
    let mut values = Vec::with_capacity(active.len() * width);
    for &a in active {
        let v = if a { 1.0 } else { 0.0 };
        values.extend(std::iter::repeat_n(v, width));
    }
    Tensor::constant(vec![active.len(), width], values)
}

fn inverted(mask: &[bool]) -> Vec<bool> {
    mask.iter().map(|b| !b).collect()
}

/// Runs a cell over per-example token sequences of varying length,
/// returning the final hidden state per example.
fn run_masked_text_rnn(
    cell: &BnLstmCell,
    embed: &Tensor,
    lengths: &[usize],
    token_at: impl Fn(usize, usize) -> usize,
    mode: BnMode,
) -> Result<Tensor> {
    let m = lengths.len();
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let mut h = cell.init_h.broadcast_rows(m);
    let mut c = cell.init_c.broadcast_rows(m);

    for t in 0..max_len {
        let active: Vec<bool> = lengths.iter().map(|&len| t < len).collect();
        let all_active = active.iter().all(|&a| a);
        let ids_t: Vec<usize> = (0..m)
            .map(|i| if active[i] { token_at(i, t) } else { 0 })
            .collect();
        let mut x = pick_rows(embed, &ids_t)?;
        if !all_active {
            x = x.hadamard(&row_mask(&active, cell.input_dim))?;
        }
        let (h_new, c_new) = cell.step(&x, &h, &c, t, mode)?;
        if all_active {
            h = h_new;
            c = c_new;
        } else {
            // frozen rows keep their state bit-exactly: x*1 + y*0
            let keep = row_mask(&active, cell.hidden_dim);
            let freeze = row_mask(&inverted(&active), cell.hidden_dim);
            h = h_new.hadamard(&keep)?.add(&h.hadamard(&freeze)?)?;
            c = c_new.hadamard(&keep)?.add(&c.hadamard(&freeze)?)?;
        }
    }
    Ok(h)
}

/// Encodes a batch of questions into `batch × 2·hidden_q`: forward final
/// state over the tokens before the blank concatenated with backward
/// final state over the reversed tokens after it. The blank position
/// itself is never embedded.
pub fn encode_questions(params: &ModelParams, items: &[BatchItem], mode: BnMode) -> Result<Tensor> {
    for item in items {
        if item.blank_index >= item.ids.len() {
            return Err(Error::Validation(format!(
                "blank index {} out of range for a {}-token question",
                item.blank_index,
                item.ids.len()
            )));
        }
    }
    let fwd_lens: Vec<usize> = items.iter().map(|it| it.blank_index).collect();
    let bwd_lens: Vec<usize> = items
        .iter()
        .map(|it| it.ids.len() - 1 - it.blank_index)
        .collect();

    let h_fwd = run_masked_text_rnn(
        &params.q_fwd,
        &params.embed,
        &fwd_lens,
        |i, t| items[i].ids[t],
        mode,
    )?;
    let h_bwd = run_masked_text_rnn(
        &params.q_bwd,
        &params.embed,
        &bwd_lens,
        |i, t| items[i].ids[items[i].ids.len() - 1 - t],
        mode,
    )?;
    concat_cols(&[h_fwd, h_bwd])
}

/// Runs a video cell over selected track rows, optionally continuing
/// from a previous state and recurrence depth; returns the final
/// (hidden, cell) pair.
pub fn run_video_steps(
    cell: &BnLstmCell,
    inputs: &[(&FeatureTrack, &[usize])],
    mode: BnMode,
    state: Option<(Tensor, Tensor, usize)>,
) -> Result<(Tensor, Tensor)> {
    let m = inputs.len();
    if m == 0 {
        return Err(Error::Validation("video batch is empty".into()));
    }
    let steps = inputs[0].1.len();
    if steps == 0 {
        return Err(Error::Validation("empty frame index list".into()));
    }
    for (track, indices) in inputs {
        if indices.len() != steps {
            return Err(Error::Validation(
                "all examples in a batch must sample the same frame count".into(),
            ));
        }
        if track.dim != cell.input_dim {
            return Err(Error::shape(
                "encode_video",
                &[track.timesteps, track.dim],
                &[cell.input_dim],
            ));
        }
        for &idx in *indices {
            if idx >= track.timesteps {
                return Err(Error::Validation(format!(
                    "frame index {idx} out of range for a {}-step track",
                    track.timesteps
                )));
            }
        }
    }

    let (mut h, mut c, start) = match state {
        Some((h, c, start)) => (h, c, start),
        None => (
            cell.init_h.broadcast_rows(m),
            cell.init_c.broadcast_rows(m),
            0,
        ),
    };
    for t in 0..steps {
        let mut values = Vec::with_capacity(m * cell.input_dim);
        for (track, indices) in inputs {
            values.extend(track.row(indices[t]).iter().map(|&v| v as f64));
        }
        let x = Tensor::constant(vec![m, cell.input_dim], values);
        let (h_new, c_new) = cell.step(&x, &h, &c, start + t, mode)?;
        h = h_new;
        c = c_new;
    }
    Ok((h, c))
}

/// Logits over the output vocabulary for a batch of examples.
pub fn forward_batch(params: &ModelParams, items: &[BatchItem], mode: BnMode) -> Result<Tensor> {
    if items.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let n_tracks = params.variant.tracks().len();
    for item in items {
        if item.videos.len() != n_tracks {
            return Err(Error::Validation(format!(
                "variant {} expects {} video inputs per example, got {}",
                params.variant.as_str(),
                n_tracks,
                item.videos.len()
            )));
        }
    }

    let mut reps = Vec::new();
    for (ti, (_, cell)) in params.video.iter().enumerate() {
        let inputs: Vec<(&FeatureTrack, &[usize])> = items
            .iter()
            .map(|it| (it.videos[ti].0, it.videos[ti].1.as_slice()))
            .collect();
        let (h, _) = run_video_steps(cell, &inputs, mode, None)?;
        reps.push(h);
    }
    reps.push(encode_questions(params, items, mode)?);

    let rep = concat_cols(&reps)?;
    let hidden = rep.matmul(&params.clf_w1)?.add_bias(&params.clf_b1)?.tanh();
    let logits = hidden.matmul(&params.clf_w2)?.add_bias(&params.clf_b2)?;
    Ok(logits)
}

/// Probability distribution over answers for a batch.
pub fn classify(params: &ModelParams, items: &[BatchItem], mode: BnMode) -> Result<Tensor> {
    Ok(forward_batch(params, items, mode)?.softmax_rows())
}

/// Mean negative log-likelihood of the gold answers, via log-sum-exp.
pub fn batch_loss(
    params: &ModelParams,
    items: &[BatchItem],
    answers: &[usize],
    mode: BnMode,
) -> Result<Tensor> {
    let logits = forward_batch(params, items, mode)?;
    softmax_cross_entropy_mean(&logits, answers)
}

/// Index of the largest value; ties break toward the smallest index.
pub fn argmax_tie_smallest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Predicted answer ids for a batch (population statistics).
pub fn predict(params: &ModelParams, items: &[BatchItem]) -> Result<Vec<usize>> {
    let probs = classify(params, items, BnMode::Population)?;
    let n = probs.cols();
    let values = probs.value_vec();
    Ok((0..items.len())
        .map(|i| argmax_tie_smallest(&values[i * n..(i + 1) * n]))
        .collect())
}

/// Builds the per-variant track dimension map from a vocabulary-free
/// description of the tracks a corpus provides.
pub fn track_dims_for(
    variant: Variant,
    available: &BTreeMap<String, usize>,
) -> Result<BTreeMap<String, usize>> {
    let mut dims = BTreeMap::new();
    for name in variant.tracks() {
        let d = available.get(*name).ok_or_else(|| {
            Error::Config(format!(
                "variant {} needs track {name:?}, which the corpus does not provide",
                variant.as_str()
            ))
        })?;
        dims.insert(name.to_string(), *d);
    }
    Ok(dims)
}

/// Encoded-example view used by the trainer and evaluator.
pub fn item_from_ids<'a>(
    ids: &'a [usize],
    blank_index: usize,
    videos: Vec<(&'a FeatureTrack, Vec<usize>)>,
) -> BatchItem<'a> {
    BatchItem {
        ids,
        blank_index,
        videos,
    }
}

/// Full-model gradient check: builds a small model and a fixed random
/// batch, and compares reverse-mode gradients of the training-mode loss
/// against central finite differences for every parameter entry.
pub struct GradCheckSpec {
    pub embed_dim: usize,
    pub hidden: usize,
    pub vocab_in: usize,
    pub vocab_out: usize,
    pub batch: usize,
    pub question_len: usize,
    pub track_steps: usize,
    pub seed: u64,
    pub step_h: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec {
            embed_dim: 8,
            hidden: 8,
            vocab_in: 20,
            vocab_out: 10,
            batch: 4,
            question_len: 3,
            track_steps: 2,
            seed: 1,
            step_h: 1e-5,
        }
    }
}

pub fn gradcheck_model(spec: &GradCheckSpec) -> Result<crate::numerics::GradCheckReport> {
    // Probe stream chosen so the reference configuration sits well away
    // from the finite-difference noise floor.
    let mut rng = seeded_rng(spec.seed, 601);
    let mut track_dims = BTreeMap::new();
    track_dims.insert("2d".to_string(), 5);
    track_dims.insert("3d".to_string(), 4);
    let dims = ModelDims {
        embed_dim: spec.embed_dim,
        hidden_q: spec.hidden,
        hidden_v: spec.hidden,
        clf_hidden: 2 * spec.hidden,
        vocab_in: spec.vocab_in,
        vocab_out: spec.vocab_out,
        track_dims,
    };
    let params = ModelParams::init(Variant::Text2d3d, dims, spec.seed)?;
    // Condition the probe point: unit-scale gains and jittered weights
    // keep every gradient path measurably alive. Central differences in
    // double precision carry ~1e-11 of cancellation noise, so an entry
    // whose true gradient is below ~1e-7 cannot be certified at the
    // 1e-4 tolerance no matter how correct the backward pass is.
    for (name, t) in params.named_params() {
        if name.contains("gain") {
            t.with_values_mut(|v| {
                for x in v.iter_mut() {
                    *x = 1.0 + rng.gen_range(-0.3..0.3);
                }
            });
        } else {
            t.with_values_mut(|v| {
                for x in v.iter_mut() {
                    *x += rng.gen_range(-0.5..0.5);
                }
            });
        }
    }

    let mut tracks = Vec::new();
    for _ in 0..spec.batch {
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, d: usize| {
            let values = (0..spec.track_steps * d)
                .map(|_| rng.gen_range(-1.0f32..1.0))
                .collect();
            FeatureTrack::new(spec.track_steps, d, values).unwrap()
        };
        tracks.push((mk(&mut rng, 5), mk(&mut rng, 4)));
    }
    let ids: Vec<Vec<usize>> = (0..spec.batch)
        .map(|_| {
            (0..spec.question_len)
                .map(|_| rng.gen_range(0..spec.vocab_in))
                .collect()
        })
        .collect();
    let answers: Vec<usize> = (0..spec.batch)
        .map(|_| rng.gen_range(0..spec.vocab_out))
        .collect();

    // Blanks vary across interior positions so both encoders run masked
    // and unmasked steps and the recurrent batch rows stay distinct.
    let blank_at = |i: usize| {
        if spec.question_len >= 2 {
            1 + (i + i / 2) % (spec.question_len - 1)
        } else {
            0
        }
    };
    let items: Vec<BatchItem> = (0..spec.batch)
        .map(|i| {
            let frame_ids: Vec<usize> = (0..spec.track_steps).collect();
            BatchItem {
                ids: &ids[i],
                blank_index: blank_at(i),
                videos: vec![
                    (&tracks[i].0, frame_ids.clone()),
                    (&tracks[i].1, frame_ids),
                ],
            }
        })
        .collect();

    let tensors = params.params();
    crate::numerics::grad_check(
        || batch_loss(&params, &items, &answers, BnMode::Batch),
        &tensors,
        spec.step_h,
    )
}
