//! Evaluation: accuracy, per-answer true-positive rates with a frequency
//! correlation, constant baselines, frame-count sweeps, comparison
//! tables, and the human-evaluation export/import round trip.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::fibgen::{FibExample, Vocabulary};
use crate::model::{ModelParams, Variant};
use crate::trainer::{eval_accuracy, prepare_examples, PreparedExample};
use crate::{rng_streams, seeded_rng, Error, Result};

/// Fraction of matching positions. Errors on empty or mismatched input.
pub fn accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != golds.len() {
        return Err(Error::Validation(format!(
            "accuracy needs equal nonempty lists, got {} and {}",
            predictions.len(),
            golds.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Renders a fraction as a percentage with one decimal, e.g. "34.4".
pub fn render_pct(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

/// Per-answer outcome counts.
#[derive(Debug, Clone, Serialize)]
pub struct AnswerBreakdown {
    pub gold_count: usize,
    pub correct: usize,
    pub tpr: f64,
    /// Training-set frequency of the answer word.
    pub train_count: u64,
}

/// Evaluation summary for one model on one split.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n: usize,
    pub per_answer: BTreeMap<String, AnswerBreakdown>,
    /// Spearman rank correlation of per-answer TPR against training
    /// frequency; absent when fewer than two distinct answers occur.
    pub tpr_frequency_correlation: Option<f64>,
    pub config_echo: String,
}

/// True-positive rate per gold answer plus the TPR-vs-frequency rank
/// correlation. Answers never appearing in the golds are excluded.
pub fn per_answer_tpr(
    predictions: &[usize],
    golds: &[usize],
    vocab: &Vocabulary,
) -> Result<(BTreeMap<String, AnswerBreakdown>, Option<f64>)> {
    if predictions.is_empty() || predictions.len() != golds.len() {
        return Err(Error::Validation(
            "per_answer_tpr needs equal nonempty lists".into(),
        ));
    }
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &g) in predictions.iter().zip(golds) {
        let entry = per.entry(g).or_insert((0, 0));
        entry.0 += 1;
        if p == g {
            entry.1 += 1;
        }
    }
    let mut out = BTreeMap::new();
    let mut tprs = Vec::new();
    let mut freqs = Vec::new();
    for (id, (gold_count, correct)) in per {
        let tpr = correct as f64 / gold_count as f64;
        let train_count = vocab.output_count(id);
        tprs.push(tpr);
        freqs.push(train_count as f64);
        out.insert(
            vocab.output_tokens[id].clone(),
            AnswerBreakdown {
                gold_count,
                correct,
                tpr,
                train_count,
            },
        );
    }
    let correlation = spearman(&tprs, &freqs);
    Ok((out, correlation))
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// fewer than two points or either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // average rank over the tie group, 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Predicts every prepared example with equispaced frames and population
/// statistics, parallelizing across chunks when a rayon pool with more
/// than one thread is active. Chunks deserialize their own copy of the
/// parameters, so results are identical at any thread count.
pub fn predict_all(
    params: &ModelParams,
    prepared: &[PreparedExample],
    frames: usize,
) -> Result<Vec<usize>> {
    let chunk_size = 256;
    let chunks: Vec<&[PreparedExample]> = prepared.chunks(chunk_size).collect();
    if rayon::current_num_threads() <= 1 || chunks.len() <= 1 {
        let mut out = Vec::with_capacity(prepared.len());
        for chunk in chunks {
            out.extend(predict_chunk(params, chunk, frames)?);
        }
        return Ok(out);
    }
    let blob = params.to_container().to_bytes();
    let results: Result<Vec<Vec<usize>>> = chunks
        .par_iter()
        .map(|chunk| {
            let local = ModelParams::from_container(
                &crate::numerics::Container::from_bytes(&blob)?,
            )?;
            predict_chunk(&local, chunk, frames)
        })
        .collect();
    Ok(results?.into_iter().flatten().collect())
}

fn predict_chunk(
    params: &ModelParams,
    chunk: &[PreparedExample],
    frames: usize,
) -> Result<Vec<usize>> {
    use crate::model::BatchItem;
    use crate::trainer::{sample_frames, SampleMode};
    let mut rng = seeded_rng(0, 0); // eval sampling ignores the rng
    let mut out = Vec::with_capacity(chunk.len());
    for batch in chunk.chunks(64) {
        let mut items = Vec::with_capacity(batch.len());
        for ex in batch {
            let mut videos = Vec::with_capacity(ex.tracks.len());
            for track in &ex.tracks {
                let idx = sample_frames(track.timesteps, frames, SampleMode::Eval, &mut rng)?;
                videos.push((*track, idx));
            }
            items.push(BatchItem {
                ids: &ex.encoded.ids,
                blank_index: ex.encoded.blank_index,
                videos,
            });
        }
        out.extend(crate::model::predict(params, &items)?);
    }
    Ok(out)
}

/// Full evaluation of a model over examples: accuracy, per-answer TPR,
/// and the frequency correlation.
pub fn evaluate(
    params: &ModelParams,
    corpus: &Corpus,
    examples: &[FibExample],
    vocab: &Vocabulary,
    frames: usize,
) -> Result<EvalReport> {
    let prepared = prepare_examples(corpus, examples, vocab, params.variant)?;
    if prepared.is_empty() {
        return Err(Error::Validation("nothing to evaluate".into()));
    }
    let predictions = predict_all(params, &prepared, frames)?;
    let golds: Vec<usize> = prepared.iter().map(|p| p.encoded.answer_id).collect();
    let acc = accuracy(&predictions, &golds)?;
    let (per_answer, correlation) = per_answer_tpr(&predictions, &golds, vocab)?;
    Ok(EvalReport {
        accuracy: acc,
        n: golds.len(),
        per_answer,
        tpr_frequency_correlation: correlation,
        config_echo: format!(
            "variant={} frames={frames} n={}",
            params.variant.as_str(),
            golds.len()
        ),
    })
}

/// The constant predictor of the most frequent training answer.
#[derive(Debug, Clone)]
pub struct MajorityBaseline {
    pub answer: String,
    pub answer_id: usize,
    pub train_occurrences: usize,
}

/// Builds the majority baseline from training examples; ties break
/// lexicographically.
pub fn majority_baseline(
    train_examples: &[FibExample],
    vocab: &Vocabulary,
) -> Result<MajorityBaseline> {
    if train_examples.is_empty() {
        return Err(Error::Validation(
            "majority baseline needs training examples".into(),
        ));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for ex in train_examples {
        *counts.entry(ex.answer.as_str()).or_insert(0) += 1;
    }
    let (answer, n) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(t, c)| (t.to_string(), *c))
        .expect("nonempty by construction");
    let answer_id = vocab
        .output_id(&answer)
        .ok_or_else(|| Error::Validation(format!("majority answer {answer:?} not in vocab")))?;
    Ok(MajorityBaseline {
        answer,
        answer_id,
        train_occurrences: n,
    })
}

impl MajorityBaseline {
    /// Accuracy of always answering with the majority word.
    pub fn accuracy_on(&self, golds: &[usize]) -> Result<f64> {
        let preds = vec![self.answer_id; golds.len()];
        accuracy(&preds, golds)
    }
}

/// Evaluates a checkpoint at several frame budgets; equispaced eval
/// sampling throughout, deterministic.
pub fn frame_sweep(
    params: &ModelParams,
    corpus: &Corpus,
    examples: &[FibExample],
    vocab: &Vocabulary,
    frame_counts: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if params.variant == Variant::TextOnly {
        return Err(Error::Config(
            "frame sweep needs a video-variant checkpoint".into(),
        ));
    }
    let prepared = prepare_examples(corpus, examples, vocab, params.variant)?;
    let mut out = Vec::with_capacity(frame_counts.len());
    for &k in frame_counts {
        let acc = eval_accuracy(params, &prepared, k, 64)?;
        out.push((k, acc));
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// comparison tables

/// One model's result row for the comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantResult {
    pub label: String,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Training-data fraction this row was trained on.
    pub data_fraction: f64,
}

/// Renders rows as an aligned table (columns: validation, test), plus a
/// fraction-vs-accuracy series per label when fractional runs exist.
pub fn render_comparison(results: &[VariantResult]) -> String {
    let mut out = String::new();
    let label_w = results
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(10)
        .max("Model".len());
    out.push_str(&format!(
        "{:<label_w$}  {:>10}  {:>6}\n",
        "Model", "Validation", "Test"
    ));
    let fmt = |a: Option<f64>| a.map_or("-".to_string(), render_pct);
    for r in results.iter().filter(|r| r.data_fraction == 1.0) {
        out.push_str(&format!(
            "{:<label_w$}  {:>10}  {:>6}\n",
            r.label,
            fmt(r.val_accuracy),
            fmt(r.test_accuracy)
        ));
    }
    let fractional: Vec<&VariantResult> =
        results.iter().filter(|r| r.data_fraction < 1.0).collect();
    if !fractional.is_empty() {
        out.push_str("\ntraining-data fraction sweeps\n");
        let mut by_label: BTreeMap<&str, Vec<&VariantResult>> = BTreeMap::new();
        for r in results {
            by_label.entry(r.label.as_str()).or_default().push(r);
        }
        for (label, mut rows) in by_label {
            if rows.iter().all(|r| r.data_fraction == 1.0) {
                continue;
            }
            rows.sort_by(|a, b| a.data_fraction.partial_cmp(&b.data_fraction).unwrap());
            out.push_str(&format!("  {label}\n"));
            for r in rows {
                out.push_str(&format!(
                    "    {:>4.0}%  val {:>6}  test {:>6}\n",
                    r.data_fraction * 100.0,
                    fmt(r.val_accuracy),
                    fmt(r.test_accuracy)
                ));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------
// human evaluation export / import

/// Answer tiers offered to judges, strongest to weakest.
pub const JUDGMENT_TIERS: [&str; 4] = [
    "perfect",
    "makes sense for the sentence and video, but isn't quite perfect",
    "doesn't make sense at all",
    "wrong",
];

const GROUND_TRUTH_SOURCE: &str = "ground_truth";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportKey {
    /// Source (model name or "ground_truth") per answer column, in
    /// on-disk column order.
    pub column_sources: Vec<String>,
    pub seed: u64,
    pub judgment_tiers: Vec<String>,
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn csv_split(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if in_quotes && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Writes the human-evaluation sheet: one row per example with the
/// rendered question and shuffled answer columns (ground truth plus one
/// per model), and a sidecar key file mapping columns back to sources.
/// Row order and column order are seeded shuffles.
pub fn export_human_eval(
    examples: &[FibExample],
    model_answers: &[(String, Vec<String>)],
    out_path: &Path,
    key_path: &Path,
    seed: u64,
) -> Result<()> {
    for (name, answers) in model_answers {
        if answers.len() != examples.len() {
            return Err(Error::Validation(format!(
                "model {name:?} supplied {} answers for {} examples",
                answers.len(),
                examples.len()
            )));
        }
    }
    let mut rng = seeded_rng(seed, rng_streams::EXPORT);

    let mut sources: Vec<String> = vec![GROUND_TRUTH_SOURCE.to_string()];
    sources.extend(model_answers.iter().map(|(n, _)| n.clone()));
    sources.shuffle(&mut rng);

    let mut row_order: Vec<usize> = (0..examples.len()).collect();
    row_order.shuffle(&mut rng);

    let mut f = std::fs::File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let headers: Vec<String> = (1..=sources.len())
        .map(|i| format!("answer_{i}"))
        .collect();
    writeln!(f, "qid,question,clip_id,{}", headers.join(","))
        .map_err(|e| Error::io(out_path, e))?;
    for &i in &row_order {
        let ex = &examples[i];
        let mut fields = vec![
            csv_escape(&ex.qid),
            csv_escape(&ex.rendered()),
            csv_escape(&ex.clip_id),
        ];
        for source in &sources {
            let answer = if source == GROUND_TRUTH_SOURCE {
                &ex.answer
            } else {
                let (_, answers) = model_answers
                    .iter()
                    .find(|(n, _)| n == source)
                    .expect("source came from model_answers");
                &answers[i]
            };
            fields.push(csv_escape(answer));
        }
        writeln!(f, "{}", fields.join(",")).map_err(|e| Error::io(out_path, e))?;
    }

    let key = ExportKey {
        column_sources: sources,
        seed,
        judgment_tiers: JUDGMENT_TIERS.iter().map(|s| s.to_string()).collect(),
    };
    let key_json = serde_json::to_string_pretty(&key)
        .map_err(|e| Error::Validation(format!("serialize key: {e}")))?;
    std::fs::write(key_path, key_json).map_err(|e| Error::io(key_path, e))
}

/// One judged row after majority resolution.
#[derive(Debug, Clone)]
pub struct ResolvedJudgment {
    pub qid: String,
    /// Source whose answer the judges settled on.
    pub chosen_source: String,
}

/// Applies the agreement rule to per-judge answer choices: a choice made
/// by two or more judges wins; full disagreement resolves by a seeded
/// random pick among the three.
pub fn resolve_judgments(
    export_path: &Path,
    key: &ExportKey,
    judgments: &[Vec<usize>],
    seed: u64,
) -> Result<Vec<ResolvedJudgment>> {
    let text = std::fs::read_to_string(export_path).map_err(|e| Error::io(export_path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(export_path, 1, "empty export"))?;
    let n_cols = csv_split(header).len();
    let n_answers = key.column_sources.len();
    if n_cols != 3 + n_answers {
        return Err(Error::parse(export_path, 1, "header/key column mismatch"));
    }
    let rows: Vec<Vec<String>> = lines.map(csv_split).collect();
    if judgments.len() != rows.len() {
        return Err(Error::Validation(format!(
            "{} judgment rows for {} export rows",
            judgments.len(),
            rows.len()
        )));
    }
    let mut rng = seeded_rng(seed, rng_streams::JUDGE_TIEBREAK);
    let mut out = Vec::with_capacity(rows.len());
    for (row, judges) in rows.iter().zip(judgments) {
        if judges.iter().any(|&c| c >= n_answers) {
            return Err(Error::Validation("judgment column out of range".into()));
        }
        let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in judges {
            *tally.entry(c).or_insert(0) += 1;
        }
        let chosen = match tally.iter().find(|(_, &n)| n >= 2) {
            Some((&col, _)) => col,
            None => judges[rng.gen_range(0..judges.len())],
        };
        out.push(ResolvedJudgment {
            qid: row[0].clone(),
            chosen_source: key.column_sources[chosen].clone(),
        });
    }
    Ok(out)
}
