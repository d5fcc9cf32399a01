//! Post preprocessing, skip-gram embeddings trained with negative sampling,
//! and composition of knowledge-unit and pair feature vectors.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_traits::Float;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_CODE_THRESHOLD: usize = 80;

/// Strips markup from a post and tokenizes it with the default code threshold.
pub fn preprocess(raw: &str) -> Vec<String> {
    preprocess_with(raw, DEFAULT_CODE_THRESHOLD)
}

/// Strips HTML tags, keeping the text of `<code>` elements shorter than
/// `code_threshold` characters, then lowercases and tokenizes.
pub fn preprocess_with(raw: &str, code_threshold: usize) -> Vec<String> {
    tokenize(&strip_markup(raw, code_threshold))
}

/// Splits on anything other than alphanumerics, `.` and `_`; dots and
/// underscores survive only inside a token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '.' || c == '_'))
        .map(|t| t.trim_matches(|c| c == '.' || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let hay = haystack.as_bytes();
    let nd = needle.as_bytes();
    if nd.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - nd.len()).find(|&i| hay[i..i + nd.len()].eq_ignore_ascii_case(nd))
}

fn tag_name(inner: &str) -> (bool, String) {
    let inner = inner.trim_start();
    let (closing, rest) = match inner.strip_prefix('/') {
        Some(r) => (true, r),
        None => (false, inner),
    };
    let name = rest
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    (closing, name)
}

/// Best-effort tag stripper. Never fails: an unterminated `<` is kept as text.
fn strip_markup(raw: &str, code_threshold: usize) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut text_start = 0;
    let mut i = 0;
    let bytes = raw.as_bytes();
    while i < bytes.len() {
        let opens_tag = bytes[i] == b'<'
            && bytes
                .get(i + 1)
                .is_some_and(|&c| c.is_ascii_alphabetic() || c == b'/' || c == b'!');
        if !opens_tag {
            i += 1;
            continue;
        }
        let Some(close) = raw[i..].find('>').map(|p| i + p) else {
            break;
        };
        out.push_str(&decode_entities(&raw[text_start..i]));
        out.push(' ');
        let inner = &raw[i + 1..close];
        if inner.starts_with("!--") {
            let end = raw[i..].find("-->").map_or(raw.len(), |p| i + p + 3);
            i = end;
            text_start = end;
            continue;
        }
        let (closing, name) = tag_name(inner);
        i = close + 1;
        if name == "code" && !closing && !inner.trim_end().ends_with('/') {
            let (content, next) = match find_ci(&raw[i..], "</code") {
                Some(p) => {
                    let end_tag = i + p;
                    let after = raw[end_tag..].find('>').map_or(raw.len(), |q| end_tag + q + 1);
                    (&raw[i..end_tag], after)
                }
                None => (&raw[i..], raw.len()),
            };
            let text = decode_entities(&strip_markup(content, usize::MAX));
            if text.trim().chars().count() < code_threshold {
                out.push_str(&text);
                out.push(' ');
            }
            i = next;
        }
        text_start = i;
    }
    if text_start < raw.len() {
        out.push_str(&decode_entities(&raw[text_start..]));
    }
    out
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let decoded = rest.find(';').filter(|&semi| semi <= 10).and_then(|semi| {
            let entity = &rest[1..semi];
            let ch = match entity {
                "lt" => Some('<'),
                "gt" => Some('>'),
                "amp" => Some('&'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some(' '),
                _ => entity
                    .strip_prefix("#x")
                    .or_else(|| entity.strip_prefix("#X"))
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .or_else(|| entity.strip_prefix('#').and_then(|d| d.parse().ok()))
                    .and_then(char::from_u32),
            };
            ch.map(|c| (c, semi))
        });
        match decoded {
            Some((c, semi)) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Tokenized documents used to train an embedding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Vec<String>>,
    pub sources: Vec<String>,
}

impl Corpus {
    pub fn push(&mut self, source: impl Into<String>, tokens: Vec<String>) {
        self.sources.push(source.into());
        self.documents.push(tokens);
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for doc in &self.documents {
            for tok in doc {
                h.update(tok.as_bytes());
                h.update([0x1f]);
            }
            h.update([0x1e]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: u64,
    pub initial_lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 200,
            window: 5,
            negatives: 5,
            epochs: 5,
            min_count: 5,
            initial_lr: 0.025,
            seed: 0,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 {
            return Err(Error::Config(
                "skip-gram dim, window and negatives must all be >= 1".into(),
            ));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.initial_lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: Option<SkipGramConfig>,
    pub corpus_hash: String,
    /// Mean negative-sampling loss per (center, context) pair, per epoch.
    pub loss_by_epoch: Vec<f64>,
}

/// Vocabulary plus input (`v_w`) and output (`v'_w`) vector tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    words: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    input: Vec<f32>,
    output: Vec<f32>,
    pub meta: TrainingMeta,
}

impl EmbeddingModel {
    /// Builds a model from explicit vector tables, row-major `V × dim`.
    pub fn from_tables(
        words: Vec<String>,
        dim: usize,
        input: Vec<f32>,
        output: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("embedding dim must be >= 1".into()));
        }
        if input.len() != words.len() * dim || output.len() != words.len() * dim {
            return Err(Error::Argument(format!(
                "vector tables must hold {} x {} values",
                words.len(),
                dim
            )));
        }
        if input.iter().chain(&output).any(|x| !x.is_finite()) {
            return Err(Error::Argument("embedding vectors must be finite".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(EmbeddingModel {
            words,
            index,
            dim,
            input,
            output,
            meta: TrainingMeta::default(),
        })
    }

    /// Vocabulary from `corpus` with freshly initialized vectors: input
    /// rows uniform in `±0.5/dim`, output rows zero.
    pub fn initialize(corpus: &Corpus, cfg: &SkipGramConfig) -> Result<Self> {
        cfg.validate()?;
        let (words, _) = build_vocab(corpus, cfg.min_count);
        if words.is_empty() {
            return Err(Error::Data(format!(
                "no word occurs at least {} times",
                cfg.min_count
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let half = 0.5 / cfg.dim as f32;
        let input = (0..words.len() * cfg.dim)
            .map(|_| rng.gen_range(-half..half))
            .collect();
        let output = vec![0.0; words.len() * cfg.dim];
        let mut model = Self::from_tables(words, cfg.dim, input, output)?;
        model.meta = TrainingMeta {
            config: Some(cfg.clone()),
            corpus_hash: corpus.content_hash(),
            loss_by_epoch: Vec::new(),
        };
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn input_vector(&self, word: &str) -> Option<&[f32]> {
        self.word_index(word).map(|i| self.input_row(i))
    }

    pub fn output_vector(&self, word: &str) -> Option<&[f32]> {
        self.word_index(word)
            .map(|i| &self.output[i * self.dim..(i + 1) * self.dim])
    }

    fn input_row(&self, i: usize) -> &[f32] {
        &self.input[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64> {
        let va = self.input_vector(a).ok_or_else(|| Error::Lookup(a.into()))?;
        let vb = self.input_vector(b).ok_or_else(|| Error::Lookup(b.into()))?;
        Ok(cosine(va, vb))
    }

    /// Writes the input vectors in word2vec text format.
    pub fn write_word2vec<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_table(&self.words, self.dim, &self.input, out)
    }

    /// Reads a word2vec text file. Output vectors start at zero.
    pub fn read_word2vec<R: Read>(reader: R) -> Result<Self> {
        let (words, dim, input) = read_table(reader)?;
        let output = vec![0.0; input.len()];
        Self::from_tables(words, dim, input, output)
    }

    /// Saves input vectors to `path` and output vectors to `<path>.ctx`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ctx = context_path(path);
        for (p, table) in [(path.to_path_buf(), &self.input), (ctx, &self.output)] {
            let file = File::create(&p).map_err(|e| Error::io(&p, e))?;
            let mut w = BufWriter::new(file);
            write_table(&self.words, self.dim, table, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Loads a model written by [`EmbeddingModel::save`]. A missing `.ctx`
    /// file leaves output vectors at zero.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut model = Self::read_word2vec(BufReader::new(file))?;
        let ctx = context_path(path);
        if ctx.exists() {
            let file = File::open(&ctx).map_err(|e| Error::io(&ctx, e))?;
            let (words, dim, output) = read_table(BufReader::new(file))?;
            if words != model.words || dim != model.dim {
                return Err(Error::Data(format!(
                    "{}: vocabulary does not match {}",
                    ctx.display(),
                    path.display()
                )));
            }
            model.output = output;
        }
        Ok(model)
    }
}

fn context_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ctx");
    PathBuf::from(s)
}

fn write_table<W: Write>(words: &[String], dim: usize, table: &[f32], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{} {}", words.len(), dim)?;
    for (w, row) in words.iter().zip(table.chunks(dim)) {
        write!(out, "{w}")?;
        for x in row {
            // shortest representation that round-trips the f32 exactly
            write!(out, " {x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn read_table<R: Read>(reader: R) -> Result<(Vec<String>, usize, Vec<f32>)> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("embedding file is empty".into()))?
        .map_err(|e| Error::io("<embedding>", e))?;
    let mut parts = header.split_whitespace().map(str::parse::<usize>);
    let (Some(Ok(v)), Some(Ok(dim)), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::Data(format!("line 1: bad header `{header}`")));
    };
    let mut words = Vec::with_capacity(v);
    let mut table = Vec::with_capacity(v * dim);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<embedding>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let word = fields.next().unwrap_or_default().to_string();
        let row: std::result::Result<Vec<f32>, _> = fields.map(str::parse).collect();
        match row {
            Ok(row) if row.len() == dim => table.extend(row),
            _ => return Err(Error::Data(format!("line {}: expected `word` + {dim} floats", n + 2))),
        }
        words.push(word);
    }
    if words.len() != v {
        return Err(Error::Data(format!(
            "header declares {v} words, found {}",
            words.len()
        )));
    }
    Ok((words, dim, table))
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Words with frequency `>= min_count`, most frequent first (ties by word).
fn build_vocab(corpus: &Corpus, min_count: u64) -> (Vec<String>, Vec<u64>) {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for tok in corpus.documents.iter().flatten() {
        *counts.entry(tok.as_str()).or_default() += 1;
    }
    let mut kept: Vec<(&str, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    kept.into_iter().map(|(w, c)| (w.to_string(), c)).unzip()
}

/// `-log σ(x)`, computed without overflow.
fn neg_log_sigmoid<T: Float>(x: T) -> T {
    if x > T::zero() {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

/// Negative-sampling loss for one (center, context) pair and its gradient.
///
/// `loss = -log σ(u_o·v) - Σ_k log σ(-u_k·v)` where `v` is the center's
/// input vector, `u_o` the context's output vector and `u_k` the sampled
/// noise words' output vectors. `grad_center` receives ∂loss/∂v;
/// `grad_outputs` receives ∂loss/∂u_o followed by ∂loss/∂u_k for each
/// negative, `dim` values apiece.
pub fn ns_loss_grad<T: Float>(
    center: &[T],
    positive: &[T],
    negatives: &[&[T]],
    grad_center: &mut [T],
    grad_outputs: &mut [T],
) -> T {
    let dim = center.len();
    debug_assert_eq!(grad_center.len(), dim);
    debug_assert_eq!(grad_outputs.len(), (1 + negatives.len()) * dim);
    grad_center.iter_mut().for_each(|g| *g = T::zero());

    let mut loss = T::zero();
    let rows = std::iter::once((positive, T::one())).chain(negatives.iter().map(|n| (*n, T::zero())));
    for (k, (u, label)) in rows.enumerate() {
        let score = dot(u, center);
        loss = loss
            + if label == T::one() {
                neg_log_sigmoid(score)
            } else {
                neg_log_sigmoid(-score)
            };
        let coeff = sigmoid(score) - label;
        let g_out = &mut grad_outputs[k * dim..(k + 1) * dim];
        for d in 0..dim {
            g_out[d] = coeff * center[d];
            grad_center[d] = grad_center[d] + coeff * u[d];
        }
    }
    loss
}

struct SgdScratch {
    center: Vec<f32>,
    rows: Vec<f32>,
    grad_center: Vec<f32>,
    grad_outputs: Vec<f32>,
}

/// Trains skip-gram embeddings with negative sampling, single-threaded and
/// deterministic for a given seed.
pub fn train_skipgram(corpus: &Corpus, cfg: &SkipGramConfig) -> Result<EmbeddingModel> {
    let mut model = EmbeddingModel::initialize(corpus, cfg)?;
    let (_, counts) = build_vocab(corpus, cfg.min_count);
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| Error::Internal(format!("noise distribution: {e}")))?;
    let docs: Vec<Vec<usize>> = corpus
        .documents
        .iter()
        .map(|d| d.iter().filter_map(|t| model.word_index(t)).collect())
        .collect();
    let tokens_per_epoch: usize = docs.iter().map(Vec::len).sum();
    let total = (tokens_per_epoch * cfg.epochs).max(1) as f64;

    // separate stream from initialization so epochs=0 leaves the init intact
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let dim = cfg.dim;
    let mut scratch = SgdScratch {
        center: vec![0.0; dim],
        rows: vec![0.0; (1 + cfg.negatives) * dim],
        grad_center: vec![0.0; dim],
        grad_outputs: vec![0.0; (1 + cfg.negatives) * dim],
    };
    let mut negatives = Vec::with_capacity(cfg.negatives);
    let mut processed = 0usize;

    for _ in 0..cfg.epochs {
        let (mut loss_sum, mut pairs) = (0.0f64, 0usize);
        for doc in &docs {
            for (pos, &center) in doc.iter().enumerate() {
                let lr = (cfg.initial_lr * (1.0 - processed as f64 / total)).max(cfg.initial_lr * 1e-4) as f32;
                processed += 1;
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(doc.len());
                for (ctx_pos, &context) in doc.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    negatives.clear();
                    for _ in 0..cfg.negatives {
                        let w = noise.sample(&mut rng);
                        if w != context {
                            negatives.push(w);
                        }
                    }
                    loss_sum += sgd_step(&mut model, center, context, &negatives, lr, &mut scratch) as f64;
                    pairs += 1;
                }
            }
        }
        model
            .meta
            .loss_by_epoch
            .push(if pairs == 0 { 0.0 } else { loss_sum / pairs as f64 });
    }
    if model.input.iter().chain(&model.output).any(|x| !x.is_finite()) {
        return Err(Error::Training(
            "skip-gram training diverged (non-finite vectors)".into(),
        ));
    }
    Ok(model)
}

fn sgd_step(
    model: &mut EmbeddingModel,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f32,
    s: &mut SgdScratch,
) -> f32 {
    let dim = model.dim;
    s.center.copy_from_slice(&model.input[center * dim..(center + 1) * dim]);
    let ids: Vec<usize> = std::iter::once(context).chain(negatives.iter().copied()).collect();
    for (k, &w) in ids.iter().enumerate() {
        s.rows[k * dim..(k + 1) * dim].copy_from_slice(&model.output[w * dim..(w + 1) * dim]);
    }
    let n = ids.len();
    let (pos_row, neg_rows) = s.rows[..n * dim].split_at(dim);
    let negs: Vec<&[f32]> = neg_rows.chunks(dim).collect();
    let loss = ns_loss_grad(
        &s.center,
        pos_row,
        &negs,
        &mut s.grad_center,
        &mut s.grad_outputs[..n * dim],
    );
    for (k, &w) in ids.iter().enumerate() {
        let row = &mut model.output[w * dim..(w + 1) * dim];
        for (x, g) in row.iter_mut().zip(&s.grad_outputs[k * dim..(k + 1) * dim]) {
            *x -= lr * g;
        }
    }
    let row = &mut model.input[center * dim..(center + 1) * dim];
    for (x, g) in row.iter_mut().zip(&s.grad_center) {
        *x -= lr * g;
    }
    loss
}

/// Exact full-softmax `p(target | center)` over the whole vocabulary.
pub fn softmax_prob(model: &EmbeddingModel, center: &str, target: &str) -> Result<f64> {
    let ci = model.word_index(center).ok_or_else(|| Error::Lookup(center.into()))?;
    let ti = model.word_index(target).ok_or_else(|| Error::Lookup(target.into()))?;
    let v: Vec<f64> = model.input_row(ci).iter().map(|&x| x as f64).collect();
    let scores: Vec<f64> = model
        .output
        .chunks(model.dim)
        .map(|u| u.iter().zip(&v).map(|(a, b)| *a as f64 * b).sum())
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    Ok((scores[ti] - max).exp() / z)
}

/// Element-wise sum of the input vectors of in-vocabulary tokens. Unknown
/// tokens are skipped; no known tokens gives the zero vector.
pub fn ku_vector<S: AsRef<str>>(model: &EmbeddingModel, tokens: &[S]) -> Vec<f64> {
    let mut acc = vec![0.0; model.dim];
    for t in tokens {
        if let Some(v) = model.input_vector(t.as_ref()) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += *x as f64;
            }
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    #[default]
    Add,
    Concat,
}

impl std::str::FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "add" => Ok(PairMode::Add),
            "concat" => Ok(PairMode::Concat),
            other => Err(Error::Config(format!("unknown pair mode `{other}`"))),
        }
    }
}

impl PairMode {
    pub fn feature_dim(self, embedding_dim: usize) -> usize {
        match self {
            PairMode::Add => embedding_dim,
            PairMode::Concat => 2 * embedding_dim,
        }
    }
}

/// Feature vector for a pair of knowledge units.
pub fn pair_features<S: AsRef<str>>(
    model: &EmbeddingModel,
    tokens_a: &[S],
    tokens_b: &[S],
    mode: PairMode,
) -> Vec<f64> {
    let a = ku_vector(model, tokens_a);
    let b = ku_vector(model, tokens_b);
    match mode {
        PairMode::Add => a.iter().zip(&b).map(|(x, y)| x + y).collect(),
        PairMode::Concat => a.into_iter().chain(b).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn preprocess_keeps_short_code() {
        assert_eq!(preprocess("<p>use <code>int x</code></p>"), toks(&["use", "int", "x"]));
    }

    #[test]
    fn preprocess_drops_long_code() {
        let blob = "a".repeat(400);
        assert_eq!(preprocess(&format!("<p>see <code>{blob}</code></p>")), toks(&["see"]));
    }

    #[test]
    fn preprocess_empty() {
        assert!(preprocess("").is_empty());
    }

    #[test]
    fn preprocess_identifiers_and_entities() {
        assert_eq!(
            preprocess("<p>Call <code>System.out.println(a &amp;&amp; b)</code>.</p><pre><code>my_var</code></pre>"),
            toks(&["call", "system.out.println", "a", "b", "my_var"])
        );
        assert_eq!(preprocess("end. _x_ __init__"), toks(&["end", "x", "init"]));
    }

    #[test]
    fn preprocess_tolerates_malformed_markup() {
        assert_eq!(preprocess("a < b and <b>bold"), toks(&["a", "b", "and", "bold"]));
        assert_eq!(preprocess("x <code>unterminated"), toks(&["x", "unterminated"]));
        assert_eq!(preprocess("<!-- hidden --> shown"), toks(&["shown"]));
        assert_eq!(preprocess("<p"), toks(&["p"]));
    }

    #[test]
    fn preprocess_threshold_is_configurable() {
        let html = "<code>abcdef</code> tail";
        assert_eq!(preprocess_with(html, 5), toks(&["tail"]));
        assert_eq!(preprocess_with(html, 7), toks(&["abcdef", "tail"]));
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(raw in "[a-zA-Z0-9 <>/._&;=\"-]{0,120}") {
            let once = preprocess(&raw);
            let twice = preprocess(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }

    fn hand_model() -> EmbeddingModel {
        EmbeddingModel::from_tables(
            toks(&["a", "b", "c"]),
            2,
            vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5],
            vec![0.2, -0.1, 0.4, 0.3, -0.5, 0.25],
        )
        .unwrap()
    }

    #[test]
    fn softmax_hand_computed() {
        let m = hand_model();
        // center b has v = (0, 1); output scores -0.1, 0.3, 0.25
        let z = (-0.1f64).exp() + 0.3f64.exp() + 0.25f64.exp();
        let expected = 0.3f64.exp() / z;
        // f32 storage of 0.3 etc. limits agreement to f32 precision of the inputs
        let p = softmax_prob(&m, "b", "b").unwrap();
        let scores = [-0.1f32 as f64, 0.3f32 as f64, 0.25f32 as f64];
        let z32: f64 = scores.iter().map(|s| s.exp()).sum();
        assert!((p - scores[1].exp() / z32).abs() < 1e-12);
        assert!((p - expected).abs() < 1e-7);
    }

    #[test]
    fn softmax_normalizes_and_zero_is_uniform() {
        let m = hand_model();
        for w in ["a", "b", "c"] {
            let s: f64 = ["a", "b", "c"].iter().map(|t| softmax_prob(&m, w, t).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let z = EmbeddingModel::from_tables(toks(&["a", "b", "c", "d"]), 3, vec![0.0; 12], vec![0.0; 12]).unwrap();
        assert!((softmax_prob(&z, "a", "d").unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(softmax_prob(&z, "a", "zz"), Err(Error::Lookup(_))));
    }

    #[test]
    fn ku_vector_composition() {
        let m = hand_model();
        assert_eq!(ku_vector(&m, &["c"]), vec![0.5, 0.5]);
        assert_eq!(ku_vector::<&str>(&m, &[]), vec![0.0, 0.0]);
        assert_eq!(ku_vector(&m, &["c", "c"]), vec![1.0, 1.0]);
        assert_eq!(ku_vector(&m, &["oov", "a"]), vec![1.0, 0.0]);
    }

    #[test]
    fn pair_feature_modes() {
        let m = hand_model();
        let a = ["a", "c"];
        let b: [&str; 0] = [];
        assert_eq!(pair_features(&m, &a, &b, PairMode::Add), ku_vector(&m, &a));
        assert_eq!(
            pair_features(&m, &["a"], &["b"], PairMode::Add),
            pair_features(&m, &["b"], &["a"], PairMode::Add)
        );
        assert_eq!(pair_features(&m, &["a"], &["b"], PairMode::Concat), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(PairMode::Concat.feature_dim(200), 400);
    }

    fn toy_corpus() -> Corpus {
        let mut c = Corpus::default();
        let verbs = ["sat", "ran", "slept", "ate"];
        for i in 0..200 {
            let v = verbs[i % verbs.len()];
            let line = match i % 4 {
                0 => format!("the cat {v} on the mat"),
                1 => format!("the dog {v} on the mat"),
                2 => format!("a cat {v} near the rug"),
                _ => "xyzzy plugh frobnicate quux zork".to_string(),
            };
            c.push("toy", tokenize(&line));
        }
        c
    }

    fn toy_cfg() -> SkipGramConfig {
        SkipGramConfig {
            dim: 10,
            window: 2,
            negatives: 3,
            epochs: 5,
            min_count: 1,
            initial_lr: 0.05,
            seed: 17,
        }
    }

    #[test]
    fn skipgram_groups_shared_contexts() {
        let m = train_skipgram(&toy_corpus(), &toy_cfg()).unwrap();
        assert!(m.cosine("cat", "dog").unwrap() > m.cosine("cat", "xyzzy").unwrap());
    }

    #[test]
    fn skipgram_loss_trace_decreases() {
        let m = train_skipgram(&toy_corpus(), &toy_cfg()).unwrap();
        let trace = &m.meta.loss_by_epoch;
        assert_eq!(trace.len(), 5);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{trace:?}");
        }
    }

    #[test]
    fn skipgram_zero_epochs_is_initialization() {
        let mut corpus = Corpus::default();
        corpus.push("one", toks(&["hello", "world"]));
        let cfg = SkipGramConfig { dim: 2, epochs: 0, min_count: 1, ..Default::default() };
        let trained = train_skipgram(&corpus, &cfg).unwrap();
        let init = EmbeddingModel::initialize(&corpus, &cfg).unwrap();
        assert_eq!(trained.input, init.input);
        assert_eq!(trained.output, init.output);
    }

    #[test]
    fn skipgram_is_deterministic() {
        let a = train_skipgram(&toy_corpus(), &toy_cfg()).unwrap();
        let b = train_skipgram(&toy_corpus(), &toy_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn skipgram_empty_vocab_errors() {
        let mut corpus = Corpus::default();
        corpus.push("x", toks(&["rare"]));
        let cfg = SkipGramConfig { min_count: 5, ..Default::default() };
        assert!(matches!(train_skipgram(&corpus, &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn word2vec_text_round_trip() {
        let m = train_skipgram(&toy_corpus(), &toy_cfg()).unwrap();
        let mut buf = Vec::new();
        m.write_word2vec(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("{} 10\n", m.vocab_size())));
        let back = EmbeddingModel::read_word2vec(&buf[..]).unwrap();
        assert_eq!(back.input, m.input);
        assert_eq!(back.words(), m.words());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        m.save(&path).unwrap();
        let loaded = EmbeddingModel::load(&path).unwrap();
        assert_eq!(loaded.input, m.input);
        assert_eq!(loaded.output, m.output);
    }

    #[test]
    fn word2vec_rejects_bad_rows() {
        let bad = "2 2\na 1 2\nb 1\n";
        let err = EmbeddingModel::read_word2vec(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
