//! Training: negative-log-likelihood minimization with Adam, frame
//! sampling policy, data-fraction subsetting, and warm-start from a
//! text-only checkpoint.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::fibgen::{encode_question, EncodedExample, FibExample, Vocabulary};
use crate::model::{
    batch_loss, predict, track_dims_for, BatchItem, BnLstmCell, ModelDims, ModelParams, Variant,
};
use crate::numerics::{clip_global_norm, AdamConfig, AdamState, BnMode};
use crate::{rng_streams, seeded_rng, Error, Result};

/// Frame sampling policy: random while training, equispaced at eval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Eval,
}

/// Selects `k` frame indices out of `t` available.
///
/// Eval mode is deterministic: `round(i·(T−1)/(K−1))` per slot, the
/// middle frame for K=1. Train mode draws K distinct sorted indices, or
/// sorted draws with replacement when K exceeds T.
pub fn sample_frames(
    t: usize,
    k: usize,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if t < 1 || k < 1 {
        return Err(Error::Config(format!(
            "sample_frames needs positive dimensions, got T={t} K={k}"
        )));
    }
    match mode {
        SampleMode::Eval => {
            if k == 1 {
                return Ok(vec![(t - 1) / 2]);
            }
            Ok((0..k)
                .map(|i| {
                    let pos = (i as f64) * ((t - 1) as f64) / ((k - 1) as f64);
                    (pos.round() as usize).min(t - 1)
                })
                .collect())
        }
        SampleMode::Train => {
            let mut indices: Vec<usize> = if k <= t {
                rand::seq::index::sample(rng, t, k).into_vec()
            } else {
                (0..k).map(|_| rng.gen_range(0..t)).collect()
            };
            indices.sort_unstable();
            Ok(indices)
        }
    }
}

/// Everything the training loop needs to know.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Frames sampled per track per example.
    pub frames: usize,
    pub seed: u64,
    /// Fraction of training clips to keep, in (0, 1].
    pub data_fraction: f64,
    pub variant: Variant,
    pub finetune_from: Option<PathBuf>,
    pub embed_dim: usize,
    pub hidden_q: usize,
    pub hidden_v: usize,
    pub clf_hidden: usize,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Stop once training accuracy reaches this level (checked per epoch).
    pub early_stop_train_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 50,
            frames: 25,
            seed: 42,
            data_fraction: 1.0,
            variant: Variant::TextOnly,
            finetune_from: None,
            embed_dim: 64,
            hidden_q: 128,
            hidden_v: 128,
            clf_hidden: 256,
            clip_norm: 5.0,
            early_stop_train_acc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.frames < 1 {
            return Err(Error::Config("frame count must be at least 1".into()));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data fraction must be in (0, 1], got {}",
                self.data_fraction
            )));
        }
        Ok(())
    }
}

/// One epoch's log line. Wallclock is deliberately not recorded here so
/// that logs from identical runs are byte-identical; timing goes to
/// stderr instead.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub train_acc: Option<f64>,
}

pub fn save_epoch_log(log: &[EpochRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for rec in log {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::Validation(format!("serialize epoch record: {e}")))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn load_epoch_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, i + 1, format!("bad epoch record: {e}")))?,
        );
    }
    Ok(out)
}

/// An example joined with its clip: ready to batch.
pub struct PreparedExample<'a> {
    pub encoded: EncodedExample,
    pub split: Split,
    pub tracks: Vec<&'a crate::corpus::FeatureTrack>,
}

/// Encodes examples and resolves their clips' feature tracks for the
/// given variant. Fails if a video variant meets a clip without the
/// needed track.
pub fn prepare_examples<'a>(
    corpus: &'a Corpus,
    examples: &[FibExample],
    vocab: &Vocabulary,
    variant: Variant,
) -> Result<Vec<PreparedExample<'a>>> {
    let clip_index: HashMap<&str, usize> = corpus
        .clips
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clip_id.as_str(), i))
        .collect();
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let Some(&ci) = clip_index.get(ex.clip_id.as_str()) else {
            return Err(Error::Validation(format!(
                "example {} references unknown clip {:?}",
                ex.qid, ex.clip_id
            )));
        };
        let clip = &corpus.clips[ci];
        let mut tracks = Vec::new();
        for name in variant.tracks() {
            let track = clip.tracks.get(*name).ok_or_else(|| {
                Error::Validation(format!(
                    "clip {:?} lacks track {name:?} required by variant {}",
                    clip.clip_id,
                    variant.as_str()
                ))
            })?;
            tracks.push(track);
        }
        out.push(PreparedExample {
            encoded: encode_question(ex, vocab)?,
            split: clip.split,
            tracks,
        });
    }
    Ok(out)
}

/// Feature dimensions per track name, taken from the first clip that
/// carries each track; inconsistent dimensions are an error.
pub fn corpus_track_dims(corpus: &Corpus) -> Result<BTreeMap<String, usize>> {
    let mut dims = BTreeMap::new();
    for clip in &corpus.clips {
        for (name, track) in &clip.tracks {
            match dims.get(name) {
                None => {
                    dims.insert(name.clone(), track.dim);
                }
                Some(&d) if d != track.dim => {
                    return Err(Error::Validation(format!(
                        "track {name:?} has dimension {d} in one clip and {} in {:?}",
                        track.dim, clip.clip_id
                    )));
                }
                _ => {}
            }
        }
    }
    Ok(dims)
}

fn batch_items<'a>(
    prepared: &'a [PreparedExample],
    order: &[usize],
    frames: usize,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Result<(Vec<BatchItem<'a>>, Vec<usize>)> {
    let mut items = Vec::with_capacity(order.len());
    let mut answers = Vec::with_capacity(order.len());
    for &i in order {
        let ex = &prepared[i];
        let mut videos = Vec::with_capacity(ex.tracks.len());
        for track in &ex.tracks {
            let indices = sample_frames(track.timesteps, frames, mode, rng)?;
            videos.push((*track, indices));
        }
        items.push(BatchItem {
            ids: &ex.encoded.ids,
            blank_index: ex.encoded.blank_index,
            videos,
        });
        answers.push(ex.encoded.answer_id);
    }
    Ok((items, answers))
}

/// Accuracy of the model on prepared examples, batched, using population
/// statistics and equispaced frames.
pub fn eval_accuracy(
    params: &ModelParams,
    prepared: &[PreparedExample],
    frames: usize,
    batch_size: usize,
) -> Result<f64> {
    if prepared.is_empty() {
        return Err(Error::Validation("cannot evaluate on zero examples".into()));
    }
    let mut correct = 0usize;
    let mut rng = seeded_rng(0, 0); // eval sampling is deterministic; rng unused
    for chunk in (0..prepared.len()).collect::<Vec<_>>().chunks(batch_size) {
        let (items, answers) = batch_items(prepared, chunk, frames, SampleMode::Eval, &mut rng)?;
        let preds = predict(params, &items)?;
        correct += preds
            .iter()
            .zip(&answers)
            .filter(|(p, a)| p == a)
            .count();
    }
    Ok(correct as f64 / prepared.len() as f64)
}

/// Result of a training run.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
}

/// Trains a model from scratch (or from a finetune checkpoint).
///
/// Deterministic for a fixed config: shuffling, frame sampling and
/// initialization all derive from `config.seed`. Returns the parameters
/// of the epoch with the best validation accuracy when a validation
/// split exists, otherwise the final parameters.
pub fn train(
    corpus: &Corpus,
    examples: &[FibExample],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let corpus_frac;
    let corpus = if config.data_fraction < 1.0 {
        corpus_frac = crate::corpus::subset_fraction(corpus, config.data_fraction, config.seed)?;
        &corpus_frac
    } else {
        corpus
    };
    // drop examples whose clip was subsetted away
    let kept_ids: std::collections::HashSet<&str> =
        corpus.clips.iter().map(|c| c.clip_id.as_str()).collect();
    let examples: Vec<FibExample> = examples
        .iter()
        .filter(|e| kept_ids.contains(e.clip_id.as_str()))
        .cloned()
        .collect();

    let available = corpus_track_dims(corpus)?;
    let track_dims = track_dims_for(config.variant, &available)?;
    let dims = ModelDims {
        embed_dim: config.embed_dim,
        hidden_q: config.hidden_q,
        hidden_v: config.hidden_v,
        clf_hidden: config.clf_hidden,
        vocab_in: vocab.input_size(),
        vocab_out: vocab.output_size(),
        track_dims,
    };
    let params = match &config.finetune_from {
        None => ModelParams::init(config.variant, dims, config.seed)?,
        Some(path) => {
            let source = ModelParams::load(path)?;
            let target = ModelParams::init(config.variant, dims, config.seed)?;
            finetune_init(&target, &source)?;
            target
        }
    };

    let prepared = prepare_examples(corpus, &examples, vocab, config.variant)?;
    let train_idx: Vec<usize> = (0..prepared.len())
        .filter(|&i| prepared[i].split == Split::Train)
        .collect();
    let val_idx: Vec<usize> = (0..prepared.len())
        .filter(|&i| prepared[i].split == Split::Val)
        .collect();
    if train_idx.is_empty() {
        return Err(Error::Validation("no training examples".into()));
    }

    let tensors = params.params();
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
        },
        &tensors,
    );

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ModelParams)> = None;

    for epoch in 0..config.epochs {
        let epoch_start = std::time::Instant::now();
        let mut order = train_idx.clone();
        order.shuffle(&mut seeded_rng(
            config.seed.wrapping_add(epoch as u64),
            rng_streams::SHUFFLE,
        ));
        let mut frame_rng = seeded_rng(
            config.seed.wrapping_add(epoch as u64),
            rng_streams::FRAMES,
        );

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let (items, answers) =
                batch_items(&prepared, chunk, config.frames, SampleMode::Train, &mut frame_rng)?;
            params.zero_grads();
            let loss = batch_loss(&params, &items, &answers, BnMode::Batch)?;
            let loss_value = loss.item();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch} batch {batch_no}"
                )));
            }
            loss.backward()?;
            clip_global_norm(&tensors, config.clip_norm);
            adam.step(&tensors)?;
            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen as f64;

        let val_acc = if val_idx.is_empty() {
            None
        } else {
            let val_prepared: Vec<_> = val_idx.iter().map(|&i| &prepared[i]).collect();
            Some(eval_subset(&params, &val_prepared, config)?)
        };
        let train_acc = if config.early_stop_train_acc.is_some() {
            let train_prepared: Vec<_> = train_idx.iter().map(|&i| &prepared[i]).collect();
            Some(eval_subset(&params, &train_prepared, config)?)
        } else {
            None
        };

        log.push(EpochRecord {
            epoch,
            train_loss,
            val_acc,
            train_acc,
        });
        eprintln!(
            "epoch {epoch}: train_loss {train_loss:.4}{}{} ({:.1?})",
            val_acc.map_or(String::new(), |a| format!(" val_acc {a:.4}")),
            train_acc.map_or(String::new(), |a| format!(" train_acc {a:.4}")),
            epoch_start.elapsed()
        );

        if let Some(acc) = val_acc {
            let improved = best.as_ref().is_none_or(|(b, _)| acc > *b);
            if improved {
                best = Some((acc, params.deep_clone()));
            }
        }
        if let (Some(target), Some(acc)) = (config.early_stop_train_acc, train_acc) {
            if acc >= target {
                eprintln!("early stop: train accuracy {acc:.4} reached target {target:.4}");
                break;
            }
        }
    }

    let final_params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok(TrainOutcome {
        params: final_params,
        log,
    })
}

fn eval_subset(
    params: &ModelParams,
    subset: &[&PreparedExample],
    config: &TrainConfig,
) -> Result<f64> {
    let owned: Vec<PreparedExample> = subset
        .iter()
        .map(|p| PreparedExample {
            encoded: p.encoded.clone(),
            split: p.split,
            tracks: p.tracks.clone(),
        })
        .collect();
    eval_accuracy(params, &owned, config.frames, config.batch_size.max(64))
}

/// Warm-starts a video-variant model from a trained text-only model.
///
/// Word embeddings, both question cells, the classifier rows that read
/// the question representation, and the downstream classifier layers are
/// copied value-exactly; video encoders and the classifier rows that
/// read video representations keep their fresh initialization. The
/// source is never modified.
pub fn finetune_init(target: &ModelParams, source: &ModelParams) -> Result<()> {
    if source.variant != Variant::TextOnly {
        return Err(Error::Config(format!(
            "finetune source must be text-only, got {}",
            source.variant.as_str()
        )));
    }
    let d = &target.dims;
    let s = &source.dims;
    if d.embed_dim != s.embed_dim
        || d.hidden_q != s.hidden_q
        || d.clf_hidden != s.clf_hidden
        || d.vocab_in != s.vocab_in
        || d.vocab_out != s.vocab_out
    {
        return Err(Error::Config(format!(
            "finetune dimension mismatch: target {:?} vs source {:?}",
            d, s
        )));
    }

    let copy = |dst: &crate::numerics::Tensor, src: &crate::numerics::Tensor| {
        let values = src.value_vec();
        dst.with_values_mut(|v| v.copy_from_slice(&values));
    };
    copy(&target.embed, &source.embed);
    copy_cell(&target.q_fwd, &source.q_fwd);
    copy_cell(&target.q_bwd, &source.q_bwd);

    // classifier: question-representation rows sit at the tail of w1
    let clf_in_t = target.clf_w1.rows();
    let q_width = 2 * d.hidden_q;
    let video_rows = clf_in_t - q_width;
    let src_w1 = source.clf_w1.value_vec();
    let hidden = d.clf_hidden;
    target.clf_w1.with_values_mut(|v| {
        for r in 0..q_width {
            let dst_row = video_rows + r;
            v[dst_row * hidden..(dst_row + 1) * hidden]
                .copy_from_slice(&src_w1[r * hidden..(r + 1) * hidden]);
        }
    });
    copy(&target.clf_b1, &source.clf_b1);
    copy(&target.clf_w2, &source.clf_w2);
    copy(&target.clf_b2, &source.clf_b2);
    Ok(())
}

fn copy_cell(dst: &BnLstmCell, src: &BnLstmCell) {
    for (d, s) in [
        (&dst.w_in, &src.w_in),
        (&dst.w_rec, &src.w_rec),
        (&dst.bias, &src.bias),
        (&dst.gain_in, &src.gain_in),
        (&dst.gain_rec, &src.gain_rec),
        (&dst.gain_cell, &src.gain_cell),
        (&dst.cell_bias, &src.cell_bias),
        (&dst.init_h, &src.init_h),
        (&dst.init_c, &src.init_c),
    ] {
        let values = s.value_vec();
        d.with_values_mut(|v| v.copy_from_slice(&values));
    }
    *dst.bn_in.borrow_mut() = src.bn_in.borrow().clone();
    *dst.bn_rec.borrow_mut() = src.bn_rec.borrow().clone();
    *dst.bn_cell.borrow_mut() = src.bn_cell.borrow().clone();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthSignal};
    use crate::fibgen::{build_vocab, generate};
    use crate::textpipe::{Lexicon, Stoplist};
    use proptest::prelude::*;

    #[test]
    fn eval_frames_formula_cases() {
        let mut rng = seeded_rng(1, 1);
        assert_eq!(
            sample_frames(5, 3, SampleMode::Eval, &mut rng).unwrap(),
            vec![0, 2, 4]
        );
        assert_eq!(
            sample_frames(100, 2, SampleMode::Eval, &mut rng).unwrap(),
            vec![0, 99]
        );
        assert_eq!(
            sample_frames(7, 1, SampleMode::Eval, &mut rng).unwrap(),
            vec![3]
        );
        assert!(sample_frames(0, 3, SampleMode::Eval, &mut rng).is_err());
        assert!(sample_frames(3, 0, SampleMode::Eval, &mut rng).is_err());
    }

    #[test]
    fn train_frames_distinct_sorted_and_seeded() {
        let draw = |seed| {
            let mut rng = seeded_rng(seed, 2);
            sample_frames(20, 6, SampleMode::Train, &mut rng).unwrap()
        };
        let a = draw(7);
        let b = draw(7);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]), "{a:?}");
        assert!(a.iter().all(|&i| i < 20));

        // more frames than timesteps: sampled with replacement, sorted
        let mut rng = seeded_rng(7, 3);
        let over = sample_frames(3, 8, SampleMode::Train, &mut rng).unwrap();
        assert_eq!(over.len(), 8);
        assert!(over.windows(2).all(|w| w[0] <= w[1]));
        assert!(over.iter().all(|&i| i < 3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        // full eval-mode frame-index contract over 1 <= K <= T <= 200
        #[test]
        fn eval_frame_property(t in 1usize..=200, k_frac in 0.0f64..1.0) {
            let k = 1 + ((t - 1) as f64 * k_frac) as usize;
            let mut rng = seeded_rng(0, 0);
            let idx = sample_frames(t, k, SampleMode::Eval, &mut rng).unwrap();
            prop_assert_eq!(idx.len(), k);
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(idx.iter().all(|&i| i < t));
            if k >= 2 {
                prop_assert_eq!(idx[0], 0);
                prop_assert_eq!(*idx.last().unwrap(), t - 1);
            }
        }
    }

    fn tiny_setup(
        n_clips: usize,
        seed: u64,
    ) -> (Corpus, Vec<FibExample>, Vocabulary) {
        let corpus = synth_corpus(n_clips, SynthSignal::None, seed);
        let lex = Lexicon::builtin();
        let examples = generate(&corpus, &lex, &Stoplist::empty(), 1).unwrap();
        let vocab = build_vocab(&examples, &corpus, &lex, 1, 1).unwrap();
        (corpus, examples, vocab)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            frames: 4,
            embed_dim: 8,
            hidden_q: 8,
            hidden_v: 8,
            clf_hidden: 16,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (corpus, examples, vocab) = tiny_setup(30, 4);
        let config = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let outcome = train(&corpus, &examples, &vocab, &config).unwrap();
        assert!(outcome.log.is_empty());

        let available = corpus_track_dims(&corpus).unwrap();
        let dims = ModelDims {
            embed_dim: config.embed_dim,
            hidden_q: config.hidden_q,
            hidden_v: config.hidden_v,
            clf_hidden: config.clf_hidden,
            vocab_in: vocab.input_size(),
            vocab_out: vocab.output_size(),
            track_dims: track_dims_for(config.variant, &available).unwrap(),
        };
        let fresh = ModelParams::init(config.variant, dims, config.seed).unwrap();
        for ((na, ta), (_, tb)) in outcome
            .params
            .named_params()
            .iter()
            .zip(fresh.named_params().iter())
        {
            assert_eq!(ta.value_vec(), tb.value_vec(), "{na}");
        }
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let (corpus, examples, vocab) = tiny_setup(40, 6);
        let config = tiny_config();
        let a = train(&corpus, &examples, &vocab, &config).unwrap();
        let b = train(&corpus, &examples, &vocab, &config).unwrap();
        assert_eq!(a.log, b.log);
        // and identical parameters
        for ((_, ta), (_, tb)) in a
            .params
            .named_params()
            .iter()
            .zip(b.params.named_params().iter())
        {
            assert_eq!(ta.value_vec(), tb.value_vec());
        }
    }

    #[test]
    fn loss_decreases_over_first_steps_on_fixed_batch() {
        let (corpus, examples, vocab) = tiny_setup(32, 8);
        let config = tiny_config();
        let prepared = prepare_examples(&corpus, &examples, &vocab, config.variant).unwrap();
        let available = corpus_track_dims(&corpus).unwrap();
        let dims = ModelDims {
            embed_dim: config.embed_dim,
            hidden_q: config.hidden_q,
            hidden_v: config.hidden_v,
            clf_hidden: config.clf_hidden,
            vocab_in: vocab.input_size(),
            vocab_out: vocab.output_size(),
            track_dims: track_dims_for(config.variant, &available).unwrap(),
        };
        let params = ModelParams::init(config.variant, dims, 1).unwrap();
        let tensors = params.params();
        let mut adam = AdamState::new(AdamConfig::default(), &tensors);
        let order: Vec<usize> = (0..16.min(prepared.len())).collect();
        let mut rng = seeded_rng(3, 9);
        let (items, answers) =
            batch_items(&prepared, &order, 4, SampleMode::Eval, &mut rng).unwrap();

        let mut last = f64::INFINITY;
        for step in 0..5 {
            params.zero_grads();
            let loss = batch_loss(&params, &items, &answers, BnMode::Batch).unwrap();
            let v = loss.item();
            assert!(v < last, "loss did not decrease at step {step}: {v} vs {last}");
            last = v;
            loss.backward().unwrap();
            clip_global_norm(&tensors, 5.0);
            adam.step(&tensors).unwrap();
        }
    }

    #[test]
    fn batch_loss_equals_mean_of_singles_in_population_mode() {
        let (corpus, examples, vocab) = tiny_setup(24, 10);
        let config = tiny_config();
        let prepared = prepare_examples(&corpus, &examples, &vocab, config.variant).unwrap();
        let available = corpus_track_dims(&corpus).unwrap();
        let dims = ModelDims {
            embed_dim: config.embed_dim,
            hidden_q: config.hidden_q,
            hidden_v: config.hidden_v,
            clf_hidden: config.clf_hidden,
            vocab_in: vocab.input_size(),
            vocab_out: vocab.output_size(),
            track_dims: track_dims_for(config.variant, &available).unwrap(),
        };
        let params = ModelParams::init(config.variant, dims, 2).unwrap();
        // initialize population statistics with one batch pass
        let order: Vec<usize> = (0..8).collect();
        let mut rng = seeded_rng(1, 4);
        let (items, answers) =
            batch_items(&prepared, &order, 4, SampleMode::Eval, &mut rng).unwrap();
        batch_loss(&params, &items, &answers, BnMode::Batch).unwrap();

        let batched = batch_loss(&params, &items, &answers, BnMode::Population)
            .unwrap()
            .item();
        let mut singles = 0.0;
        for i in 0..items.len() {
            singles += batch_loss(
                &params,
                &items[i..i + 1],
                &answers[i..i + 1],
                BnMode::Population,
            )
            .unwrap()
            .item();
        }
        let mean_singles = singles / items.len() as f64;
        assert!(
            (batched - mean_singles).abs() < 1e-12,
            "{batched} vs {mean_singles}"
        );
    }

    #[test]
    fn uniform_model_loss_is_log_vocab() {
        let (corpus, examples, vocab) = tiny_setup(20, 12);
        let config = tiny_config();
        let prepared = prepare_examples(&corpus, &examples, &vocab, config.variant).unwrap();
        let available = corpus_track_dims(&corpus).unwrap();
        let dims = ModelDims {
            embed_dim: config.embed_dim,
            hidden_q: config.hidden_q,
            hidden_v: config.hidden_v,
            clf_hidden: config.clf_hidden,
            vocab_in: vocab.input_size(),
            vocab_out: vocab.output_size(),
            track_dims: track_dims_for(config.variant, &available).unwrap(),
        };
        let params = ModelParams::init(config.variant, dims, 3).unwrap();
        params.clf_w2.with_values_mut(|v| v.fill(0.0));
        params.clf_b2.with_values_mut(|v| v.fill(0.0));
        let order: Vec<usize> = (0..6).collect();
        let mut rng = seeded_rng(1, 5);
        let (items, answers) =
            batch_items(&prepared, &order, 4, SampleMode::Eval, &mut rng).unwrap();
        let loss = batch_loss(&params, &items, &answers, BnMode::Batch)
            .unwrap()
            .item();
        assert!((loss - (vocab.output_size() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn finetune_identity_and_video_extension() {
        let (corpus, examples, vocab) = tiny_setup(40, 14);
        let dir = tempfile::tempdir().unwrap();
        let text_config = TrainConfig {
            epochs: 1,
            ..tiny_config()
        };
        let text_outcome = train(&corpus, &examples, &vocab, &text_config).unwrap();
        let ckpt = dir.path().join("text.fibc");
        text_outcome.params.save(&ckpt).unwrap();
        let ckpt_bytes = std::fs::read(&ckpt).unwrap();

        // text-only -> text-only: evaluation is bit-identical
        let target = ModelParams::init(
            Variant::TextOnly,
            text_outcome.params.dims.clone(),
            999,
        )
        .unwrap();
        finetune_init(&target, &text_outcome.params).unwrap();
        let prepared = prepare_examples(&corpus, &examples, &vocab, Variant::TextOnly).unwrap();
        let a = eval_accuracy(&text_outcome.params, &prepared, 4, 16).unwrap();
        let b = eval_accuracy(&target, &prepared, 4, 16).unwrap();
        assert_eq!(a, b);

        // text-only -> text+2d: question block copied, video block fresh
        let available = corpus_track_dims(&corpus).unwrap();
        let dims2d = ModelDims {
            track_dims: track_dims_for(Variant::Text2d, &available).unwrap(),
            ..text_outcome.params.dims.clone()
        };
        let target2d = ModelParams::init(Variant::Text2d, dims2d, 999).unwrap();
        let fresh_w1 = target2d.clf_w1.value_vec();
        finetune_init(&target2d, &text_outcome.params).unwrap();
        let hidden = target2d.dims.clf_hidden;
        let video_rows = target2d.clf_w1.rows() - 2 * target2d.dims.hidden_q;
        let after_w1 = target2d.clf_w1.value_vec();
        let src_w1 = text_outcome.params.clf_w1.value_vec();
        // video rows untouched
        assert_eq!(
            &after_w1[..video_rows * hidden],
            &fresh_w1[..video_rows * hidden]
        );
        // question rows equal the source
        assert_eq!(&after_w1[video_rows * hidden..], &src_w1[..]);
        assert_eq!(
            target2d.embed.value_vec(),
            text_outcome.params.embed.value_vec()
        );

        // source checkpoint untouched on disk
        assert_eq!(std::fs::read(&ckpt).unwrap(), ckpt_bytes);
    }

    #[test]
    fn finetune_rejects_mismatched_dims() {
        let (corpus, examples, vocab) = tiny_setup(30, 15);
        let config = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let outcome = train(&corpus, &examples, &vocab, &config).unwrap();
        let mut bad_dims = outcome.params.dims.clone();
        bad_dims.hidden_q *= 2;
        bad_dims.track_dims = corpus_track_dims(&corpus).unwrap();
        let target = ModelParams::init(Variant::Text2d, bad_dims, 1).unwrap();
        let before: Vec<Vec<f64>> = target
            .named_params()
            .iter()
            .map(|(_, t)| t.value_vec())
            .collect();
        assert!(finetune_init(&target, &outcome.params).is_err());
        // nothing mutated
        for ((_, t), b) in target.named_params().iter().zip(&before) {
            assert_eq!(&t.value_vec(), b);
        }
    }

    #[test]
    fn divergent_loss_aborts_with_batch_diagnostic() {
        let (corpus, examples, vocab) = tiny_setup(40, 17);
        let config = TrainConfig {
            // batch norm and log-sum-exp absorb any finite scale, so the
            // parameters themselves must overflow f64 products
            learning_rate: 1e200,
            epochs: 2,
            ..tiny_config()
        };
        let err = match train(&corpus, &examples, &vocab, &config) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("expected the loss to diverge"),
        };
        assert!(err.contains("batch"), "{err}");
        assert!(err.contains("epoch"), "{err}");
    }

    #[test]
    fn data_fraction_trains_on_subset() {
        let (corpus, examples, vocab) = tiny_setup(60, 16);
        let config = TrainConfig {
            data_fraction: 0.5,
            epochs: 1,
            ..tiny_config()
        };
        let outcome = train(&corpus, &examples, &vocab, &config).unwrap();
        assert_eq!(outcome.log.len(), 1);
    }
}
