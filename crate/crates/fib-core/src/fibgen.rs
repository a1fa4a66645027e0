//! Fill-in-the-blank example generation, vocabulary construction, and
//! dataset statistics.
//!
//! Given an annotated corpus, every noun/verb/adjective/adverb that
//! survives the stoplist and a minimum training-frequency threshold
//! becomes one question: the sentence with that word blanked out and the
//! word as the answer.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Clip, Corpus, Split};
use crate::textpipe::{tag, tokenize_wordpunct, Lexicon, Stoplist, Tag, TaggedToken};
use crate::{Error, Result, BLANK_SYMBOL};

/// Default minimum training-set count for a word to be blanked.
pub const DEFAULT_MIN_COUNT: u64 = 50;

/// The reserved unknown token on the input side of a vocabulary.
pub const UNK_TOKEN: &str = "<unk>";

/// One generated question: `tokens` with position `blank_index` removed
/// is shown to the model, and `answer` (the removed token) is the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FibExample {
    pub qid: String,
    pub clip_id: String,
    pub tokens: Vec<String>,
    pub blank_index: usize,
    pub answer: String,
}

impl FibExample {
    /// Question text with the answer replaced by the blank marker.
    pub fn rendered(&self) -> String {
        let mut parts: Vec<&str> = self.tokens.iter().map(|t| t.as_str()).collect();
        parts[self.blank_index] = BLANK_SYMBOL;
        parts.join(" ")
    }
}

/// Tokenizes and tags a clip's annotation, honoring pre-tagged input.
pub fn tagged_tokens(clip: &Clip, lexicon: &Lexicon) -> Vec<TaggedToken> {
    match &clip.pretagged {
        Some(tagged) => tagged.clone(),
        None => tag(&tokenize_wordpunct(&clip.annotation), lexicon),
    }
}

/// Counts lowercased tokens over training-split annotations only.
pub fn count_train_tokens(corpus: &Corpus, lexicon: &Lexicon) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for clip in corpus.clips.iter().filter(|c| c.split == Split::Train) {
        for tok in tagged_tokens(clip, lexicon) {
            *counts.entry(tok.lower).or_insert(0) += 1;
        }
    }
    counts
}

/// Indices of blankable tokens: content-tagged and not stoplisted.
pub fn extract_candidates(tagged: &[TaggedToken], stoplist: &Stoplist) -> Vec<usize> {
    tagged
        .iter()
        .enumerate()
        .filter(|(_, t)| t.tag.is_content() && !stoplist.contains(&t.lower))
        .map(|(i, _)| i)
        .collect()
}

/// Generates one example per candidate whose training count reaches
/// `min_count`, for every clip in every split, in corpus order.
pub fn generate(
    corpus: &Corpus,
    lexicon: &Lexicon,
    stoplist: &Stoplist,
    min_count: u64,
) -> Result<Vec<FibExample>> {
    if min_count < 1 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let counts = count_train_tokens(corpus, lexicon);
    let mut examples = Vec::new();
    for clip in &corpus.clips {
        let tagged = tagged_tokens(clip, lexicon);
        let tokens: Vec<String> = tagged.iter().map(|t| t.lower.clone()).collect();
        for k in extract_candidates(&tagged, stoplist) {
            let answer = &tokens[k];
            if counts.get(answer).copied().unwrap_or(0) < min_count {
                continue;
            }
            examples.push(FibExample {
                qid: format!("{}#{:03}", clip.clip_id, k),
                clip_id: clip.clip_id.clone(),
                tokens: tokens.clone(),
                blank_index: k,
                answer: answer.clone(),
            });
        }
    }
    Ok(examples)
}

// ---------------------------------------------------------------------
// vocabulary

/// Token↔id maps for the question side (with UNK) and the answer side.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub input_tokens: Vec<String>,
    pub output_tokens: Vec<String>,
    pub input_counts: Vec<u64>,
    pub output_counts: Vec<u64>,
    input_ids: HashMap<String, usize>,
    output_ids: HashMap<String, usize>,
}

impl Vocabulary {
    fn build(input_tokens: Vec<(String, u64)>, output_tokens: Vec<(String, u64)>) -> Vocabulary {
        let input_ids = input_tokens
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        let output_ids = output_tokens
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        Vocabulary {
            input_counts: input_tokens.iter().map(|(_, c)| *c).collect(),
            output_counts: output_tokens.iter().map(|(_, c)| *c).collect(),
            input_tokens: input_tokens.into_iter().map(|(t, _)| t).collect(),
            output_tokens: output_tokens.into_iter().map(|(t, _)| t).collect(),
            input_ids,
            output_ids,
        }
    }

    pub fn unk_id(&self) -> usize {
        0
    }

    pub fn input_id(&self, token: &str) -> usize {
        self.input_ids.get(token).copied().unwrap_or(0)
    }

    pub fn output_id(&self, token: &str) -> Option<usize> {
        self.output_ids.get(token).copied()
    }

    pub fn input_size(&self) -> usize {
        self.input_tokens.len()
    }

    pub fn output_size(&self) -> usize {
        self.output_tokens.len()
    }

    /// Training count of an output token, for frequency analyses.
    pub fn output_count(&self, id: usize) -> u64 {
        self.output_counts[id]
    }
}

/// Sorts (token, count) by count descending, token ascending.
fn by_count_then_token(items: BTreeMap<String, u64>) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = items.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Builds the vocabulary.
///
/// Input side: training tokens with count ≥ `input_min`, plus UNK at
/// id 0. Output side: training tokens with count ≥ `output_min`, always
/// extended with every answer appearing in `examples` — a reduced output
/// vocabulary still contains all blanked words. Ids are assigned by
/// descending count with lexicographic tie-breaks.
pub fn build_vocab(
    examples: &[FibExample],
    corpus: &Corpus,
    lexicon: &Lexicon,
    input_min: u64,
    output_min: u64,
) -> Result<Vocabulary> {
    if output_min < 1 {
        return Err(Error::Config("output_min must be at least 1".into()));
    }
    let counts = count_train_tokens(corpus, lexicon);

    let input_kept: BTreeMap<String, u64> = counts
        .iter()
        .filter(|(_, &c)| c >= input_min)
        .map(|(t, &c)| (t.clone(), c))
        .collect();
    let mut input_tokens = vec![(UNK_TOKEN.to_string(), 0)];
    input_tokens.extend(by_count_then_token(input_kept));

    let mut output_kept: BTreeMap<String, u64> = counts
        .iter()
        .filter(|(_, &c)| c >= output_min)
        .map(|(t, &c)| (t.clone(), c))
        .collect();
    for ex in examples {
        output_kept
            .entry(ex.answer.clone())
            .or_insert_with(|| counts.get(&ex.answer).copied().unwrap_or(0));
    }
    let output_tokens = by_count_then_token(output_kept);

    Ok(Vocabulary::build(input_tokens, output_tokens))
}

/// A question mapped to ids: input ids (UNK for out-of-vocabulary
/// tokens), the blank position, and the answer's output id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub blank_index: usize,
    pub answer_id: usize,
}

pub fn encode_question(example: &FibExample, vocab: &Vocabulary) -> Result<EncodedExample> {
    let answer_id = vocab.output_id(&example.answer).ok_or_else(|| {
        Error::Validation(format!(
            "answer {:?} of {} missing from the output vocabulary",
            example.answer, example.qid
        ))
    })?;
    Ok(EncodedExample {
        ids: example.tokens.iter().map(|t| vocab.input_id(t)).collect(),
        blank_index: example.blank_index,
        answer_id,
    })
}

// ---------------------------------------------------------------------
// statistics

#[derive(Debug, Clone, Serialize)]
pub struct HistogramBin {
    /// Inclusive count interval covered by this bin.
    pub lo: u64,
    pub hi: u64,
    /// Number of distinct answers whose frequency falls in the interval.
    pub distinct_answers: usize,
    /// True for the pooled top-answers bin.
    pub pooled_top: bool,
}

/// Summary of a generated dataset.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetStats {
    pub total_examples: usize,
    pub per_split: BTreeMap<String, usize>,
    pub mean_question_len: f64,
    pub per_split_mean_len: BTreeMap<String, f64>,
    pub distinct_answers: usize,
    /// Answer-frequency histogram; the most frequent answers are pooled
    /// into one final bin when enough of them exist.
    pub histogram: Vec<HistogramBin>,
    /// Example counts by coarse POS category of the answer.
    pub pos_counts: BTreeMap<String, usize>,
    pub top_answers: Vec<(String, u64)>,
    pub examples_per_clip: f64,
}

/// How many of the most frequent answers the final histogram bin pools.
pub const HISTOGRAM_POOL_TOP: usize = 20;

/// Computes dataset statistics over generated examples.
pub fn stats(examples: &[FibExample], corpus: &Corpus, lexicon: &Lexicon) -> DatasetStats {
    let split_of: HashMap<&str, Split> = corpus
        .clips
        .iter()
        .map(|c| (c.clip_id.as_str(), c.split))
        .collect();
    let tags_of: HashMap<&str, Vec<TaggedToken>> = corpus
        .clips
        .iter()
        .map(|c| (c.clip_id.as_str(), tagged_tokens(c, lexicon)))
        .collect();

    let mut per_split: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_split_len: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in Split::ALL {
        per_split.insert(s.as_str().into(), 0);
        per_split_len.insert(s.as_str().into(), (0, 0));
    }
    let mut answer_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut pos_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total_len = 0usize;

    for ex in examples {
        let split = split_of
            .get(ex.clip_id.as_str())
            .map(|s| s.as_str())
            .unwrap_or("train");
        *per_split.entry(split.into()).or_insert(0) += 1;
        let (n, len) = per_split_len.entry(split.into()).or_insert((0, 0));
        *n += 1;
        *len += ex.tokens.len();
        total_len += ex.tokens.len();
        *answer_counts.entry(ex.answer.clone()).or_insert(0) += 1;

        let tag = tags_of
            .get(ex.clip_id.as_str())
            .and_then(|ts| ts.get(ex.blank_index))
            .map(|t| t.tag)
            .unwrap_or(Tag::Other);
        *pos_counts.entry(tag.as_str().into()).or_insert(0) += 1;
    }

    let ranked = by_count_then_token(answer_counts.clone());
    let distinct = ranked.len();
    let pooled = if distinct > HISTOGRAM_POOL_TOP {
        HISTOGRAM_POOL_TOP
    } else {
        0
    };
    let regular = &ranked[pooled..];
    let mut histogram = Vec::new();
    if !regular.is_empty() {
        let max_count = regular.iter().map(|(_, c)| *c).max().unwrap();
        let width = (max_count / 30).max(1);
        let mut bins: BTreeMap<u64, usize> = BTreeMap::new();
        for (_, c) in regular {
            *bins.entry((c - 1) / width).or_insert(0) += 1;
        }
        for (bin, n) in bins {
            histogram.push(HistogramBin {
                lo: bin * width + 1,
                hi: (bin + 1) * width,
                distinct_answers: n,
                pooled_top: false,
            });
        }
    }
    if pooled > 0 {
        let top = &ranked[..pooled];
        histogram.push(HistogramBin {
            lo: top.last().unwrap().1,
            hi: top.first().unwrap().1,
            distinct_answers: pooled,
            pooled_top: true,
        });
    }

    let per_split_mean_len = per_split_len
        .into_iter()
        .map(|(s, (n, len))| (s, if n == 0 { 0.0 } else { len as f64 / n as f64 }))
        .collect();

    let clips_with_examples: std::collections::HashSet<&str> =
        examples.iter().map(|e| e.clip_id.as_str()).collect();

    DatasetStats {
        total_examples: examples.len(),
        per_split,
        mean_question_len: if examples.is_empty() {
            0.0
        } else {
            total_len as f64 / examples.len() as f64
        },
        per_split_mean_len,
        distinct_answers: distinct,
        histogram,
        pos_counts,
        top_answers: ranked.into_iter().take(100).collect(),
        examples_per_clip: if clips_with_examples.is_empty() {
            0.0
        } else {
            examples.len() as f64 / clips_with_examples.len() as f64
        },
    }
}

impl DatasetStats {
    pub fn top(&self, k: usize) -> &[(String, u64)] {
        &self.top_answers[..k.min(self.top_answers.len())]
    }

    /// Aligned human-readable rendering.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("total examples      {}\n", self.total_examples));
        for (split, n) in &self.per_split {
            let mean = self.per_split_mean_len.get(split).copied().unwrap_or(0.0);
            out.push_str(&format!(
                "  {:<6} {:>8}   mean question length {:.2}\n",
                split, n, mean
            ));
        }
        out.push_str(&format!("distinct answers    {}\n", self.distinct_answers));
        out.push_str(&format!(
            "examples per clip   {:.2}\n",
            self.examples_per_clip
        ));
        out.push_str("answers by POS category\n");
        for (pos, n) in &self.pos_counts {
            out.push_str(&format!("  {:<6} {:>8}\n", pos, n));
        }
        out.push_str("top answers\n");
        for (tok, c) in self.top(20) {
            out.push_str(&format!("  {:<16} {:>8}\n", tok, c));
        }
        out.push_str("answer-frequency histogram (count interval: distinct answers)\n");
        for bin in &self.histogram {
            let marker = if bin.pooled_top { "  (pooled top)" } else { "" };
            out.push_str(&format!(
                "  [{} : {}] {}{}\n",
                bin.lo, bin.hi, bin.distinct_answers, marker
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------
// file formats

/// Writes examples as JSON lines.
pub fn save_examples(examples: &[FibExample], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for ex in examples {
        let line =
            serde_json::to_string(ex).map_err(|e| Error::Validation(format!("serialize: {e}")))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn load_examples(path: &Path) -> Result<Vec<FibExample>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: FibExample = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, format!("malformed example: {e}")))?;
        if ex.blank_index >= ex.tokens.len() || ex.tokens[ex.blank_index] != ex.answer {
            return Err(Error::parse(
                path,
                idx + 1,
                "blank_index/answer inconsistent with tokens",
            ));
        }
        out.push(ex);
    }
    Ok(out)
}

/// Vocabulary file: a sizes header, then `token<TAB>id<TAB>count` lines
/// for the input side followed by the output side.
pub fn save_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(
        f,
        "fibvocab\tv1\tinput\t{}\toutput\t{}",
        vocab.input_size(),
        vocab.output_size()
    )
    .map_err(|e| Error::io(path, e))?;
    for (i, tok) in vocab.input_tokens.iter().enumerate() {
        writeln!(f, "{tok}\t{i}\t{}", vocab.input_counts[i]).map_err(|e| Error::io(path, e))?;
    }
    for (i, tok) in vocab.output_tokens.iter().enumerate() {
        writeln!(f, "{tok}\t{i}\t{}", vocab.output_counts[i]).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty vocabulary file"))?;
    let fields: Vec<&str> = header.split('\t').collect();
    if fields.len() != 6 || fields[0] != "fibvocab" || fields[1] != "v1" {
        return Err(Error::parse(path, 1, "bad vocabulary header"));
    }
    let n_in: usize = fields[3]
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad input size"))?;
    let n_out: usize = fields[5]
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad output size"))?;

    let mut parse_side = |n: usize| -> Result<Vec<(String, u64)>> {
        let mut side = Vec::with_capacity(n);
        for _ in 0..n {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, "vocabulary file truncated"))?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::parse(path, idx + 1, "expected token<TAB>id<TAB>count"));
            }
            let count: u64 = parts[2]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, "bad count"))?;
            side.push((parts[0].to_string(), count));
        }
        Ok(side)
    };
    let input = parse_side(n_in)?;
    let output = parse_side(n_out)?;
    if input.first().map(|(t, _)| t.as_str()) != Some(UNK_TOKEN) {
        return Err(Error::parse(path, 2, "input side must start with <unk>"));
    }
    Ok(Vocabulary::build(input, output))
}
