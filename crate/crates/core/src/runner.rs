//! Experiment orchestration: data preparation, stratified folds, tuned and
//! untuned runs, comparisons and report files.
//!
//! Everything a run writes is a pure function of the configuration, the seed
//! and the input bytes, except wall-clock timings. Those live in separate
//! `timing.*` files so the rest of an output directory can be compared byte
//! for byte across runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataforge::{self, KnowledgeUnit, KuPair, KuPairDataset, LinkRecord, Relation, Split};
use crate::despace::{self, Candidate, DeConfig, ParamDef, ParamSpace, ParamValue, TraceRow};
use crate::embedkit::{self, EmbeddingModel, PairMode, SkipGramConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, render_table, MetricsReport};
use crate::statlab::{self, Magnitude};
use crate::svmcore::{self, KernelKind, SmoConfig, SvmParams};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Pair list in JSONL, with or without features.
    pub pairs: Option<PathBuf>,
    /// Knowledge units in JSONL.
    pub units: Option<PathBuf>,
    /// Published benchmark pair lists.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub posts: Option<PathBuf>,
    pub postlinks: Option<PathBuf>,
    /// Generate a synthetic dump instead of reading one.
    pub synthetic: Option<SynthConfig>,
    /// Pretrained embedding in word2vec text format.
    pub embedding_model: Option<PathBuf>,
    /// Pairs to label per class when sampling from a dump.
    pub counts: [usize; 4],
    pub test_fraction: f64,
    pub corpus_tag: String,
    pub corpus_max_units: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            pairs: None,
            units: None,
            train: None,
            test: None,
            posts: None,
            postlinks: None,
            synthetic: None,
            embedding_model: None,
            counts: [2000; 4],
            test_fraction: 0.2,
            corpus_tag: "java".into(),
            corpus_max_units: 100_000,
        }
    }
}

/// Untuned SVM settings; a missing gamma means `1 / n_features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmDefaults {
    pub c: f64,
    pub kernel: KernelKind,
    pub gamma: Option<f64>,
    pub coef0: f64,
    pub degree: u32,
}

impl Default for SvmDefaults {
    fn default() -> Self {
        SvmDefaults {
            c: 1.0,
            kernel: KernelKind::Rbf,
            gamma: None,
            coef0: 0.0,
            degree: 3,
        }
    }
}

impl SvmDefaults {
    pub fn params(&self, n_features: usize) -> SvmParams {
        SvmParams {
            c: self.c,
            kernel: self.kernel,
            gamma: self.gamma.unwrap_or(1.0 / n_features.max(1) as f64),
            coef0: self.coef0,
            degree: self.degree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecDefault {
    Real(f64),
    Label(String),
}

/// One tunable parameter as written in the config file. Give `lo`/`hi` for
/// a continuous range or `values` for a categorical one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub values: Option<Vec<String>>,
    pub default: Option<SpecDefault>,
}

const TUNABLE: [&str; 5] = ["c", "kernel", "gamma", "coef0", "degree"];

impl ParamSpec {
    fn to_def(&self) -> Result<ParamDef> {
        let key = self.name.to_ascii_lowercase();
        if !TUNABLE.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "unknown SVM parameter `{}` (expected one of C, kernel, gamma, coef0, degree)",
                self.name
            )));
        }
        match (&self.values, self.lo, self.hi) {
            (Some(values), None, None) => {
                if key != "kernel" {
                    return Err(Error::Config(format!("`{}` cannot be categorical", self.name)));
                }
                for v in values {
                    KernelKind::from_str(v)?;
                }
                let refs: Vec<&str> = values.iter().map(String::as_str).collect();
                let default = match &self.default {
                    Some(SpecDefault::Label(l)) => l.as_str(),
                    None => refs.first().copied().unwrap_or(""),
                    Some(SpecDefault::Real(_)) => {
                        return Err(Error::Config(format!("`{}` needs a label default", self.name)))
                    }
                };
                ParamDef::categorical(&self.name, &refs, default)
            }
            (None, Some(lo), Some(hi)) => {
                if key == "kernel" {
                    return Err(Error::Config("`kernel` must list its values".into()));
                }
                let default = match &self.default {
                    Some(SpecDefault::Real(x)) => *x,
                    None => lo,
                    Some(SpecDefault::Label(_)) => {
                        return Err(Error::Config(format!("`{}` needs a numeric default", self.name)))
                    }
                };
                ParamDef::continuous(&self.name, lo, hi, default)
            }
            _ => Err(Error::Config(format!(
                "parameter `{}` needs either lo and hi, or values",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub folds: usize,
    pub repeats: usize,
    pub pair_mode: PairMode,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub embedding: SkipGramConfig,
    pub de: DeConfig,
    pub svm: SvmDefaults,
    pub smo: SmoConfig,
    /// Search space; the built-in C/kernel/gamma/coef0 space when absent.
    pub space: Option<Vec<ParamSpec>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            folds: 10,
            repeats: 1,
            pair_mode: PairMode::Add,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            embedding: SkipGramConfig::default(),
            de: DeConfig::default(),
            svm: SvmDefaults::default(),
            smo: SmoConfig::default(),
            space: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        let d = &mut self.data;
        for p in [&mut d.pairs, &mut d.units, &mut d.train, &mut d.test, &mut d.posts, &mut d.postlinks, &mut d.embedding_model]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        self.de.validate()?;
        self.embedding.validate()?;
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::Config("data.test_fraction must lie in [0, 1)".into()));
        }
        if self.data.train.is_some() != self.data.test.is_some() {
            return Err(Error::Config("data.train and data.test must be given together".into()));
        }
        if self.data.posts.is_some() != self.data.postlinks.is_some() {
            return Err(Error::Config("data.posts and data.postlinks must be given together".into()));
        }
        // negated so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.smo.tol > 0.0) || self.smo.max_iter == 0 {
            return Err(Error::Config("smo.tol must be positive and smo.max_iter >= 1".into()));
        }
        self.svm.params(1).validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(synth) = &self.data.synthetic {
            synth.validate()?;
        }
        self.param_space(1)?;
        Ok(())
    }

    /// Checks that every input file named in the config exists.
    pub fn check_paths(&self) -> Result<()> {
        let d = &self.data;
        for p in [&d.pairs, &d.units, &d.train, &d.test, &d.posts, &d.postlinks, &d.embedding_model]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!("input {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn param_space(&self, n_features: usize) -> Result<ParamSpace> {
        match &self.space {
            Some(specs) => ParamSpace::new(specs.iter().map(ParamSpec::to_def).collect::<Result<_>>()?),
            None => default_space(&self.svm.params(n_features)),
        }
    }
}

/// C in [1, 50], kernel among the four kinds, gamma and coef0 in [0, 1].
/// Defaults are the untuned settings, clamped into range.
pub fn default_space(base: &SvmParams) -> Result<ParamSpace> {
    let names: Vec<&str> = KernelKind::ALL.iter().map(|k| k.name()).collect();
    ParamSpace::new(vec![
        ParamDef::continuous("C", 1.0, 50.0, base.c.clamp(1.0, 50.0))?,
        ParamDef::categorical("kernel", &names, base.kernel.name())?,
        ParamDef::continuous("gamma", 0.0, 1.0, base.gamma.clamp(0.0, 1.0))?,
        ParamDef::continuous("coef0", 0.0, 1.0, base.coef0.clamp(0.0, 1.0))?,
    ])
}

/// Overlays the candidate's values on `base`.
pub fn candidate_params(space: &ParamSpace, candidate: &Candidate, base: &SvmParams) -> Result<SvmParams> {
    let mut p = *base;
    for (def, value) in space.defs().iter().zip(&candidate.values) {
        match (def.name.to_ascii_lowercase().as_str(), value) {
            ("c", ParamValue::Real(x)) => p.c = *x,
            ("gamma", ParamValue::Real(x)) => p.gamma = *x,
            ("coef0", ParamValue::Real(x)) => p.coef0 = *x,
            ("degree", ParamValue::Real(x)) => p.degree = x.round().max(1.0) as u32,
            ("kernel", ParamValue::Choice(_)) => p.kernel = KernelKind::from_str(&def.format_value(value))?,
            (name, _) => return Err(Error::Config(format!("cannot map parameter `{name}` onto the SVM"))),
        }
    }
    Ok(p)
}

/// One split, as indices into the training pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub tune: Vec<usize>,
}

/// Stratified k-fold assignment: each class is shuffled and dealt round
/// robin, continuing the deal across classes so fold sizes differ by at most
/// one. Split `i` tunes on fold `i` and trains on the rest.
pub fn split_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if folds < 2 {
        return Err(Error::Config(format!("folds must be >= 2, got {folds}")));
    }
    if labels.len() < folds {
        return Err(Error::Data(format!("{} pairs cannot fill {folds} folds", labels.len())));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < folds {
            return Err(Error::Data(format!(
                "class {} has {} pairs, too few for {folds} stratified folds",
                Relation::from_index(c).map_or_else(|| c.to_string(), |r| r.name().to_string()),
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    let mut dealt = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = dealt % folds;
            dealt += 1;
        }
    }
    Ok((0..folds)
        .map(|f| {
            let (tune, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| fold_of[i] == f);
            FoldSplit { train, tune }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tuned,
    Untuned,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tuned => "tuned",
            Method::Untuned => "untuned",
        }
    }
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub tuning: f64,
    pub training: f64,
    pub testing: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.tuning + self.training + self.testing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub repeat: usize,
    pub fold: usize,
    /// DE's pick; absent for untuned runs.
    pub candidate: Option<Candidate>,
    pub params: SvmParams,
    pub tune_f1: Option<f64>,
    pub evaluations: usize,
    pub test: MetricsReport,
    #[serde(skip)]
    pub timing: PhaseTimes,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingSummary {
    pub total_seconds: f64,
    pub per_record: Vec<PhaseTimes>,
}

impl TimingSummary {
    pub fn phase_totals(&self) -> PhaseTimes {
        self.per_record.iter().fold(PhaseTimes::default(), |acc, t| PhaseTimes {
            tuning: acc.tuning + t.tuning,
            training: acc.training + t.training,
            testing: acc.testing + t.testing,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub repeat: usize,
    pub fold: usize,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub method: String,
    pub seed: u64,
    pub folds: usize,
    pub repeats: usize,
    pub feature_dim: usize,
    pub class_names: Vec<String>,
    pub dataset_hash: String,
    pub space: Option<ParamSpace>,
    pub records: Vec<RunRecord>,
    pub aggregate: MetricsReport,
    #[serde(skip)]
    pub traces: Vec<FoldTrace>,
    #[serde(skip)]
    pub timing: TimingSummary,
}

impl RunOutput {
    /// Writes `run.json`, `timing.json` and one DE trace CSV per fold.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("run.json"), self)?;
        write_json(&dir.join("timing.json"), &self.timing)?;
        if let Some(space) = &self.space {
            let tdir = dir.join("traces");
            std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
            for t in &self.traces {
                let p = tdir.join(format!("repeat{}_fold{}.csv", t.repeat, t.fold));
                let mut buf = Vec::new();
                despace::write_trace_csv(space, &t.rows, &mut buf)?;
                std::fs::write(&p, buf).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }

    /// Reads `run.json` and, when present, `timing.json`.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut out: RunOutput = read_json(&dir.join("run.json"))?;
        let timing = dir.join("timing.json");
        if timing.exists() {
            out.timing = read_json(&timing)?;
            for (r, t) in out.records.iter_mut().zip(&out.timing.per_record) {
                r.timing = *t;
            }
        }
        Ok(out)
    }

    /// Per-run values of one cell, in record order.
    pub fn samples(&self, metric: Metric, class: Option<usize>) -> Vec<f64> {
        self.records.iter().map(|r| metric.value(&r.test, class)).collect()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Class names in label order, as used in run outputs.
pub fn class_names() -> Vec<String> {
    Relation::ALL.iter().map(|r| r.name().to_string()).collect()
}

fn display_class(name: &str) -> &str {
    if let Some(r) = Relation::parse(name) {
        return r.display_name();
    }
    name
}

struct Design {
    x: Array2<f64>,
    y: Vec<usize>,
}

impl Design {
    fn from_pairs(pairs: &[&KuPair]) -> Result<Self> {
        let dim = pairs
            .first()
            .and_then(|p| p.features.as_ref())
            .map(Vec::len)
            .ok_or_else(|| Error::Data("pairs carry no feature vectors".into()))?;
        let mut x = Array2::zeros((pairs.len(), dim));
        for (mut row, p) in x.outer_iter_mut().zip(pairs) {
            let f = p
                .features
                .as_ref()
                .filter(|f| f.len() == dim)
                .ok_or_else(|| Error::Data(format!("pair ({}, {}) lacks a {dim}-d feature vector", p.a, p.b)))?;
            row.assign(&ndarray::ArrayView1::from(f.as_slice()));
        }
        Ok(Design {
            x,
            y: pairs.iter().map(|p| p.label.index()).collect(),
        })
    }

    fn subset(&self, rows: &[usize]) -> Design {
        Design {
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

fn fit_and_score(train: &Design, eval: &Design, params: &SvmParams, smo: &SmoConfig) -> Result<MetricsReport> {
    let model = svmcore::train_multiclass(train.x.view(), &train.y, params, smo)?;
    let pred = model.predict_batch(eval.x.view())?;
    metrics::score(&metrics::confusion(&eval.y, &pred, Relation::ALL.len())?)
}

/// Seed for one (repeat, fold) cell, mixed so neighbouring cells differ.
fn cell_seed(seed: u64, repeat: usize, fold: usize) -> u64 {
    let mut z = seed
        .wrapping_add((repeat as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add((fold as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    method: Method,
    cfg: &ExperimentConfig,
    space: &ParamSpace,
    base: &SvmParams,
    train_all: &Design,
    test: &Design,
    split: &FoldSplit,
    repeat: usize,
    fold: usize,
) -> Result<(RunRecord, Option<FoldTrace>)> {
    let train = train_all.subset(&split.train);
    let mut timing = PhaseTimes::default();
    let (params, candidate, tune_f1, evaluations, trace) = match method {
        Method::Untuned => (*base, None, None, 0, None),
        Method::Tuned => {
            let tune_set = train_all.subset(&split.tune);
            let start = Instant::now();
            let mut objective = |c: &Candidate| -> Result<f64> {
                let p = candidate_params(space, c, base)?;
                Ok(fit_and_score(&train, &tune_set, &p, &cfg.smo)?.f1)
            };
            let de = DeConfig {
                seed: cell_seed(cfg.seed, repeat, fold),
                ..cfg.de.clone()
            };
            let outcome = despace::tune(space, &mut objective, &de)?;
            timing.tuning = start.elapsed().as_secs_f64();
            let p = candidate_params(space, &outcome.best, base)?;
            log::info!(
                "repeat {repeat} fold {fold}: {} -> tune F1 {:.4} after {} evaluations",
                space.describe(&outcome.best),
                outcome.best.score.unwrap_or(f64::NAN),
                outcome.evaluations
            );
            let trace = FoldTrace {
                repeat,
                fold,
                rows: outcome.trace,
            };
            (p, Some(outcome.best.clone()), outcome.best.score, outcome.evaluations, Some(trace))
        }
    };
    let start = Instant::now();
    let model = svmcore::train_multiclass(train.x.view(), &train.y, &params, &cfg.smo)?;
    timing.training = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let pred = model.predict_batch(test.x.view())?;
    let report = metrics::score(&metrics::confusion(&test.y, &pred, Relation::ALL.len())?)?;
    timing.testing = start.elapsed().as_secs_f64();
    Ok((
        RunRecord {
            repeat,
            fold,
            candidate,
            params,
            tune_f1,
            evaluations,
            test: report,
            timing,
        },
        trace,
    ))
}

/// Runs every (repeat, fold) cell. Folds run one after another so the
/// per-phase timings add up to no more than the wall clock; each SVM
/// training parallelizes over its class pairs instead.
pub fn run(method: Method, cfg: &ExperimentConfig, dataset: &KuPairDataset) -> Result<RunOutput> {
    cfg.validate()?;
    let wall = Instant::now();
    let train_pairs = dataset.split(Split::Train);
    let test_pairs = dataset.split(Split::Test);
    if train_pairs.is_empty() || test_pairs.is_empty() {
        return Err(Error::Data(format!(
            "need both train and test pairs, got {} and {}",
            train_pairs.len(),
            test_pairs.len()
        )));
    }
    let train_all = Design::from_pairs(&train_pairs)?;
    let test = Design::from_pairs(&test_pairs)?;
    let n_features = train_all.x.ncols();
    if test.x.ncols() != n_features {
        return Err(Error::Data("train and test feature dimensions differ".into()));
    }
    let base = cfg.svm.params(n_features);
    let space = cfg.param_space(n_features)?;

    let mut records = Vec::new();
    let mut traces = Vec::new();
    for repeat in 0..cfg.repeats {
        let splits = split_folds(&train_all.y, cfg.folds, cfg.seed.wrapping_add(repeat as u64))?;
        for (fold, split) in splits.iter().enumerate() {
            let (record, trace) = run_fold(method, cfg, &space, &base, &train_all, &test, split, repeat, fold)
                .map_err(|e| Error::Fold {
                    fold,
                    source: Box::new(e),
                })?;
            records.push(record);
            traces.extend(trace);
        }
    }
    let aggregate = MetricsReport::mean(&records.iter().map(|r| r.test.clone()).collect::<Vec<_>>())?;
    let timing = TimingSummary {
        total_seconds: wall.elapsed().as_secs_f64(),
        per_record: records.iter().map(|r| r.timing).collect(),
    };
    Ok(RunOutput {
        method: method.name().to_string(),
        seed: cfg.seed,
        folds: cfg.folds,
        repeats: cfg.repeats,
        feature_dim: n_features,
        class_names: class_names(),
        dataset_hash: dataset.content_hash()?,
        space: matches!(method, Method::Tuned).then_some(space),
        records,
        aggregate,
        traces,
        timing,
    })
}

pub fn run_tuned(cfg: &ExperimentConfig, dataset: &KuPairDataset) -> Result<RunOutput> {
    run(Method::Tuned, cfg, dataset)
}

pub fn run_untuned(cfg: &ExperimentConfig, dataset: &KuPairDataset) -> Result<RunOutput> {
    run(Method::Untuned, cfg, dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Accuracy,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Precision, Metric::Recall, Metric::F1, Metric::Accuracy];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Accuracy => "accuracy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s.trim().to_ascii_lowercase())
    }

    /// `class = None` selects the overall column. Accuracy exists only
    /// overall.
    pub fn value(self, report: &MetricsReport, class: Option<usize>) -> f64 {
        match (self, class) {
            (Metric::Precision, Some(j)) => report.per_class[j].precision,
            (Metric::Recall, Some(j)) => report.per_class[j].recall,
            (Metric::F1, Some(j)) => report.per_class[j].f1,
            (Metric::Precision, None) => report.precision,
            (Metric::Recall, None) => report.recall,
            (Metric::F1, None) => report.f1,
            (Metric::Accuracy, _) => report.accuracy,
        }
    }
}

/// Published single-value scores keyed by (metric, class), with `overall`
/// as the class of the summary column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PublishedScores {
    pub method: String,
    pub values: BTreeMap<(String, String), f64>,
    pub cells: BTreeMap<(String, String), String>,
}

const PUBLISHED_CSV: &str = include_str!("../data/published.csv");

impl PublishedScores {
    /// Methods present in the bundled table.
    pub fn bundled_methods() -> Vec<String> {
        let mut out: Vec<String> = parse_published(PUBLISHED_CSV)
            .map(|all| all.into_keys().collect())
            .unwrap_or_default();
        out.sort();
        out
    }

    pub fn bundled(method: &str) -> Result<Self> {
        parse_published(PUBLISHED_CSV)?
            .remove(method)
            .ok_or_else(|| Error::Argument(format!("no published scores for `{method}`")))
    }

    /// Reads a CSV with header `method,metric,class,value[,cell]`; it must
    /// hold exactly one method.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut all = parse_published(text)?;
        if all.len() != 1 {
            return Err(Error::Data(format!("expected one method in score table, found {}", all.len())));
        }
        Ok(all.pop_first().map(|(_, v)| v).unwrap_or_default())
    }

    pub fn get(&self, metric: Metric, class: &str) -> Option<f64> {
        self.values.get(&(metric.name().to_string(), class.to_string())).copied()
    }

    pub fn classes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, c) in self.values.keys() {
            if c != "overall" && !out.contains(c) {
                out.push(c.clone());
            }
        }
        out.sort_by_key(|c| Relation::parse(c).map_or(usize::MAX, Relation::index));
        out
    }
}

fn parse_published(text: &str) -> Result<BTreeMap<String, PublishedScores>> {
    let mut out: BTreeMap<String, PublishedScores> = BTreeMap::new();
    let mut header_seen = false;
    for (n, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            if t.starts_with("method,") {
                continue;
            }
        }
        let f: Vec<&str> = t.split(',').map(str::trim).collect();
        let bad = |why: &str| Error::Data(format!("score table line {}: {why}", n + 1));
        if f.len() < 4 {
            return Err(bad("expected method,metric,class,value"));
        }
        let metric = Metric::parse(f[1]).ok_or_else(|| bad("unknown metric"))?;
        let class = if f[2].eq_ignore_ascii_case("overall") {
            "overall".to_string()
        } else {
            Relation::parse(f[2]).ok_or_else(|| bad("unknown class"))?.name().to_string()
        };
        let value: f64 = f[3].parse().map_err(|_| bad("bad value"))?;
        let entry = out.entry(f[0].to_string()).or_insert_with(|| PublishedScores {
            method: f[0].to_string(),
            ..Default::default()
        });
        let key = (metric.name().to_string(), class);
        if let Some(cell) = f.get(4) {
            entry.cells.insert(key.clone(), cell.to_string());
        }
        entry.values.insert(key, value);
    }
    Ok(out)
}

pub enum Baseline<'a> {
    Run(&'a RunOutput),
    Published(&'a PublishedScores),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric: Metric,
    pub class: String,
    pub a: f64,
    pub b: f64,
    /// `a − b`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub metric: Metric,
    pub class: String,
    pub n: usize,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub cliffs_delta: f64,
    pub magnitude: Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: String,
    pub b: String,
    pub class_names: Vec<String>,
    pub deltas: Vec<DeltaRow>,
    pub statistics: Vec<StatRow>,
    /// Why statistics are missing, if they are.
    pub statistics_note: Option<String>,
    /// Total wall-clock seconds of each side, when both are runs.
    #[serde(skip)]
    pub seconds: Option<(f64, f64)>,
}

pub const SINGLE_VALUE_NOTE: &str = "not available: single published values";

/// Score deltas `a − b` per metric and class, plus paired statistics when
/// both sides carry per-run scores.
pub fn compare(a: &RunOutput, b: Baseline<'_>) -> Result<ComparisonReport> {
    let classes = a.class_names.clone();
    let cells: Vec<(Metric, Option<usize>)> = [Metric::Precision, Metric::Recall, Metric::F1]
        .into_iter()
        .flat_map(|m| (0..classes.len()).map(Some).chain([None]).map(move |c| (m, c)))
        .chain([(Metric::Accuracy, None)])
        .collect();
    let class_label = |c: Option<usize>| c.map_or_else(|| "overall".to_string(), |j| classes[j].clone());

    let mut deltas = Vec::new();
    let mut statistics = Vec::new();
    let mut note = None;
    let mut seconds = None;
    match b {
        Baseline::Run(b) => {
            if b.class_names != classes {
                return Err(Error::Argument(format!(
                    "class sets differ: {:?} vs {:?}",
                    classes, b.class_names
                )));
            }
            seconds = Some((a.timing.total_seconds, b.timing.total_seconds));
            for &(m, c) in &cells {
                let (va, vb) = (m.value(&a.aggregate, c), m.value(&b.aggregate, c));
                deltas.push(DeltaRow {
                    metric: m,
                    class: class_label(c),
                    a: va,
                    b: vb,
                    delta: va - vb,
                });
            }
            if a.records.len() != b.records.len() || a.records.len() < 2 {
                note = Some(format!(
                    "not available: need equally many runs on both sides (have {} and {})",
                    a.records.len(),
                    b.records.len()
                ));
            } else {
                let mut ps = Vec::new();
                for &(m, c) in &cells {
                    let (xa, xb) = (a.samples(m, c), b.samples(m, c));
                    let test = statlab::wilcoxon_signed_rank(&xa, &xb)?;
                    let eff = statlab::cliffs_delta(&xa, &xb)?;
                    ps.push(test.p_value);
                    statistics.push(StatRow {
                        metric: m,
                        class: class_label(c),
                        n: xa.len(),
                        p_value: test.p_value,
                        p_adjusted: f64::NAN,
                        cliffs_delta: eff.delta,
                        magnitude: eff.magnitude,
                    });
                }
                for (row, adj) in statistics.iter_mut().zip(statlab::bh_adjust(&ps)?) {
                    row.p_adjusted = adj;
                }
            }
        }
        Baseline::Published(p) => {
            let theirs = p.classes();
            if theirs != classes {
                return Err(Error::Argument(format!(
                    "class sets differ: {:?} vs {:?} ({})",
                    classes, theirs, p.method
                )));
            }
            for &(m, c) in &cells {
                let label = class_label(c);
                if let Some(vb) = p.get(m, &label) {
                    let va = m.value(&a.aggregate, c);
                    deltas.push(DeltaRow {
                        metric: m,
                        class: label,
                        a: va,
                        b: vb,
                        delta: va - vb,
                    });
                }
            }
            note = Some(SINGLE_VALUE_NOTE.to_string());
        }
    }
    Ok(ComparisonReport {
        a: a.method.clone(),
        b: match b {
            Baseline::Run(r) => r.method.clone(),
            Baseline::Published(p) => p.method.clone(),
        },
        class_names: classes,
        deltas,
        statistics,
        statistics_note: note,
        seconds,
    })
}

impl ComparisonReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Chart data: one row per metric and class.
    pub fn delta_csv(&self) -> String {
        let mut out = String::from("metric,class,a,b,delta\n");
        for d in &self.deltas {
            let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6}", d.metric.name(), d.class, d.a, d.b, d.delta);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut headers = vec!["Metric".to_string()];
        headers.extend(self.class_names.iter().map(|c| display_class(c).to_string()));
        headers.push("Overall".into());
        let mut rows = Vec::new();
        for m in Metric::ALL {
            let mut row = vec![m.name().to_string()];
            let mut any = false;
            for c in self.class_names.iter().map(String::as_str).chain(["overall"]) {
                match self.deltas.iter().find(|d| d.metric == m && d.class == c) {
                    Some(d) => {
                        any = true;
                        row.push(format!("{:+.3}", d.delta));
                    }
                    None => row.push("-".into()),
                }
            }
            if any {
                rows.push(row);
            }
        }
        let mut out = render_table(&format!("Score delta: {} - {}", self.a, self.b), &headers, &rows);
        out.push('\n');
        match &self.statistics_note {
            Some(note) => {
                let _ = writeln!(out, "Statistics: {note}");
            }
            None => {
                let headers: Vec<String> = ["Metric", "Class", "n", "p", "p (BH)", "Cliff's delta", "Magnitude"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
                let rows: Vec<Vec<String>> = self
                    .statistics
                    .iter()
                    .map(|s| {
                        vec![
                            s.metric.name().to_string(),
                            display_class(&s.class).to_string(),
                            s.n.to_string(),
                            format!("{:.4}", s.p_value),
                            format!("{:.4}", s.p_adjusted),
                            format!("{:+.3}", s.cliffs_delta),
                            s.magnitude.name().to_string(),
                        ]
                    })
                    .collect();
                out.push_str(&render_table("Statistics (Wilcoxon signed-rank, Benjamini-Hochberg)", &headers, &rows));
            }
        }
        out
    }
}

/// `a / b` rendered like `12.0x`.
pub fn format_speedup(a_seconds: f64, b_seconds: f64) -> String {
    if b_seconds > 0.0 && a_seconds.is_finite() {
        format!("{:.1}x", a_seconds / b_seconds)
    } else {
        "n/a".into()
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn folds_csv(run: &RunOutput) -> String {
    let mut out = String::from("repeat,fold,kernel,c,gamma,coef0,degree,tune_f1,precision,recall,f1,accuracy\n");
    for r in &run.records {
        let p = &r.params;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.repeat,
            r.fold,
            p.kernel,
            p.c,
            p.gamma,
            p.coef0,
            p.degree,
            r.tune_f1.map_or_else(String::new, |f| format!("{f:.6}")),
            r.test.precision,
            r.test.recall,
            r.test.f1,
            r.test.accuracy
        );
    }
    out
}

fn timing_text(runs: &[&RunOutput], comparisons: &[ComparisonReport]) -> String {
    let headers: Vec<String> = ["Run", "Tuning (s)", "Training (s)", "Testing (s)", "Wall clock (s)"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let t = r.timing.phase_totals();
            vec![
                r.method.clone(),
                format!("{:.0}", t.tuning),
                format!("{:.0}", t.training),
                format!("{:.0}", t.testing),
                format!("{:.0}", r.timing.total_seconds),
            ]
        })
        .collect();
    let mut out = render_table("Timing", &headers, &rows);
    out.push('\n');
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            let _ = writeln!(
                out,
                "{} vs {}: {}",
                a.method,
                b.method,
                format_speedup(a.timing.total_seconds, b.timing.total_seconds)
            );
        }
    }
    for c in comparisons {
        if let Some((sa, sb)) = c.seconds {
            if !runs.iter().any(|r| r.method == c.a) || !runs.iter().any(|r| r.method == c.b) {
                let _ = writeln!(out, "{} vs {}: {}", c.a, c.b, format_speedup(sa, sb));
            }
        }
    }
    out
}

/// Writes metrics CSVs, aligned tables, per-run fold CSVs, delta chart
/// data and a timing summary. Returns the written paths in order.
pub fn emit_report(runs: &[&RunOutput], comparisons: &[ComparisonReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(Error::Argument("report needs at least one run".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    let mut used: Vec<String> = Vec::new();
    for run in runs {
        let mut stem = file_stem(&run.method);
        if used.contains(&stem) {
            stem = format!("{stem}_{}", used.len());
        }
        used.push(stem.clone());
        let names: Vec<&str> = run.class_names.iter().map(|c| display_class(c)).collect();
        put(format!("{stem}_metrics.csv"), run.aggregate.to_csv(&run.class_names.iter().map(String::as_str).collect::<Vec<_>>()))?;
        put(
            format!("{stem}_table.txt"),
            run.aggregate.to_table(&names, &format!("{} ({} runs)", run.method, run.records.len())),
        )?;
        put(format!("{stem}_folds.csv"), folds_csv(run))?;
    }
    for c in comparisons {
        let stem = format!("{}_vs_{}", file_stem(&c.a), file_stem(&c.b));
        put(format!("delta_{stem}.csv"), c.delta_csv())?;
        put(format!("comparison_{stem}.txt"), c.to_text())?;
    }
    put("timing_summary.txt".into(), timing_text(runs, comparisons))?;
    Ok(written)
}

/// Units and labelled pairs, before featurization.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub units: Vec<KnowledgeUnit>,
    pub pairs: KuPairDataset,
}

fn dump_sources(cfg: &ExperimentConfig) -> Result<Option<(Vec<KnowledgeUnit>, Vec<LinkRecord>)>> {
    let d = &cfg.data;
    if let (Some(posts), Some(links)) = (&d.posts, &d.postlinks) {
        let dump = dataforge::parse_dump(posts, links)?;
        if dump.skipped_rows > 0 {
            log::warn!("skipped {} malformed dump rows", dump.skipped_rows);
        }
        return Ok(Some((dump.units, dump.links)));
    }
    if let Some(s) = &d.synthetic {
        let dump = synth::generate(s)?;
        return Ok(Some((dump.units, dump.links)));
    }
    Ok(None)
}

fn default_path(cfg: &ExperimentConfig, rel: &str) -> Option<PathBuf> {
    let p = cfg.output_dir.join(rel);
    p.exists().then_some(p)
}

/// Units from the configured units file, a previous `ingest` in the output
/// directory, or the dump sources.
pub fn load_units(cfg: &ExperimentConfig) -> Result<Vec<KnowledgeUnit>> {
    if let Some(p) = cfg.data.units.clone().or_else(|| default_path(cfg, "data/units.jsonl")) {
        return dataforge::read_units(&p);
    }
    match dump_sources(cfg)? {
        Some((units, _)) => Ok(units),
        None => Err(Error::Config(
            "no unit source: set data.units, data.posts/postlinks or data.synthetic".into(),
        )),
    }
}

/// Builds units and labelled pairs from the configured sources.
pub fn ingest(cfg: &ExperimentConfig) -> Result<Ingested> {
    cfg.validate()?;
    cfg.check_paths()?;
    let d = &cfg.data;
    let sources = dump_sources(cfg)?;
    let units = match (&d.units, &sources) {
        (Some(p), _) => dataforge::read_units(p)?,
        (None, Some((u, _))) => u.clone(),
        (None, None) => Vec::new(),
    };
    let pairs = if let (Some(train), Some(test)) = (&d.train, &d.test) {
        let (ds, report) = dataforge::load_benchmark(train, test)?;
        if report.empty {
            return Err(Error::Data("benchmark files hold no pairs".into()));
        }
        ds
    } else if let Some(p) = &d.pairs {
        KuPairDataset::load(p)?
    } else if let Some((_, links)) = &sources {
        let mut ds = dataforge::label_pairs(&units, links, d.counts, cfg.seed)?;
        ds.assign_test_split(d.test_fraction, cfg.seed)?;
        ds
    } else {
        return Err(Error::Config(
            "no pair source: set data.train/test, data.pairs, data.posts/postlinks or data.synthetic".into(),
        ));
    };
    if units.is_empty() && pairs.feature_dim().is_none() {
        return Err(Error::Config("pairs need unit texts: set data.units or a dump source".into()));
    }
    Ok(Ingested { units, pairs })
}

/// Trains a skip-gram model on the tag-filtered corpus.
pub fn train_embedding(cfg: &ExperimentConfig, units: &[KnowledgeUnit]) -> Result<EmbeddingModel> {
    let corpus = dataforge::select_corpus(units, &cfg.data.corpus_tag, cfg.data.corpus_max_units, cfg.embedding.seed);
    if corpus.is_empty() {
        return Err(Error::Data(format!(
            "no units tagged `{}` to train an embedding on",
            cfg.data.corpus_tag
        )));
    }
    embedkit::train_skipgram(&corpus, &cfg.embedding)
}

/// The featurized dataset a run works on. Reuses the outputs of earlier
/// `ingest` and `embed` steps in the output directory when present.
pub fn prepare(cfg: &ExperimentConfig) -> Result<KuPairDataset> {
    cfg.validate()?;
    cfg.check_paths()?;
    let pairs_path = cfg.data.pairs.clone().or_else(|| default_path(cfg, "data/pairs.jsonl"));
    let (pairs, units) = match pairs_path {
        Some(p) => {
            let ds = KuPairDataset::load(&p)?;
            if ds.feature_dim().is_some() {
                return Ok(ds);
            }
            (ds, load_units(cfg)?)
        }
        None => {
            let ing = ingest(cfg)?;
            if ing.pairs.feature_dim().is_some() {
                return Ok(ing.pairs);
            }
            (ing.pairs, ing.units)
        }
    };
    let model_path = cfg
        .data
        .embedding_model
        .clone()
        .or_else(|| default_path(cfg, "embedding/model.txt"));
    let model = match model_path {
        Some(p) => EmbeddingModel::load(&p)?,
        None => train_embedding(cfg, &units)?,
    };
    let tokens = dataforge::tokenize_units(&units);
    dataforge::featurize(&pairs, &tokens, &model, cfg.pair_mode)
}
