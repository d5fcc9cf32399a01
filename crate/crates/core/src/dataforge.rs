//! Stack-Exchange dump ingestion, relatedness labelling of knowledge-unit
//! pairs, benchmark loading and featurization.
//!
//! Dumps are read one `<row .../>` per line, which is how the public
//! Stack-Exchange exports are laid out; a row that fails to parse is logged
//! and skipped rather than aborting the whole file.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedkit::{self, Corpus, EmbeddingModel, PairMode};
use crate::error::{Error, Result};

/// `LinkTypeId` marking a duplicate in the postlinks table.
pub const DUPLICATE_LINK_TYPE: u32 = 3;

/// A question together with all of its answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeUnit {
    pub id: u64,
    pub title: String,
    pub body: String,
    pub answers: Vec<String>,
    pub tags: Vec<String>,
}

impl KnowledgeUnit {
    pub fn tokens(&self) -> Vec<String> {
        let mut toks = embedkit::preprocess(&self.title);
        toks.extend(embedkit::preprocess(&self.body));
        for a in &self.answers {
            toks.extend(embedkit::preprocess(a));
        }
        toks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub post_id: u64,
    pub related_post_id: u64,
    pub link_type: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dump {
    pub units: Vec<KnowledgeUnit>,
    pub links: Vec<LinkRecord>,
    pub skipped_rows: usize,
}

/// The four relatedness classes, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Duplicate,
    #[serde(rename = "direct")]
    DirectLink,
    #[serde(rename = "indirect")]
    IndirectLink,
    Isolated,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::Duplicate,
        Relation::DirectLink,
        Relation::IndirectLink,
        Relation::Isolated,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Duplicate => "duplicate",
            Relation::DirectLink => "direct",
            Relation::IndirectLink => "indirect",
            Relation::Isolated => "isolated",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Relation::Duplicate => "Duplicate",
            Relation::DirectLink => "Direct Link",
            Relation::IndirectLink => "Indirect Link",
            Relation::Isolated => "Isolated",
        }
    }

    pub fn display_names() -> [&'static str; 4] {
        Self::ALL.map(Relation::display_name)
    }

    /// Accepts class indices and common spellings of the class names.
    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "0" | "duplicate" | "dup" => Some(Relation::Duplicate),
            "1" | "direct" | "directlink" | "directlinked" => Some(Relation::DirectLink),
            "2" | "indirect" | "indirectlink" | "indirectlinked" => Some(Relation::IndirectLink),
            "3" | "isolated" => Some(Relation::Isolated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Tune,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Tune => "tune",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KuPair {
    pub a: u64,
    pub b: u64,
    pub label: Relation,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KuPairDataset {
    pub pairs: Vec<KuPair>,
    /// Free-form notes about where the pairs came from. Not persisted in JSONL.
    pub provenance: BTreeMap<String, String>,
}

impl KuPairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.pairs.first().and_then(|p| p.features.as_ref().map(Vec::len))
    }

    pub fn split(&self, split: Split) -> Vec<&KuPair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    /// Per-split, per-class counts.
    pub fn counts(&self) -> BTreeMap<(Split, Relation), usize> {
        let mut out = BTreeMap::new();
        for p in &self.pairs {
            *out.entry((p.split, p.label)).or_insert(0) += 1;
        }
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for p in &self.pairs {
            let line = serde_json::to_string(p)
                .map_err(|e| Error::Internal(format!("serializing pair: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut pairs: Vec<KuPair> = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<dataset>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let pair = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
            pairs.push(pair);
        }
        let ds = KuPairDataset {
            pairs,
            provenance: BTreeMap::new(),
        };
        ds.check_feature_dims()?;
        Ok(ds)
    }

    fn check_feature_dims(&self) -> Result<()> {
        let dims: BTreeSet<Option<usize>> = self
            .pairs
            .iter()
            .map(|p| p.features.as_ref().map(Vec::len))
            .collect();
        if dims.len() > 1 {
            return Err(Error::Data(format!(
                "inconsistent feature dimensionality: {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ds = Self::from_jsonl(BufReader::new(file))
            .map_err(|e| annotate(e, path))?;
        ds.provenance.insert("source".into(), path.display().to_string());
        Ok(ds)
    }

    /// SHA-256 of the canonical JSONL rendering.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_jsonl()?.as_bytes())))
    }

    /// Human-readable per-class/per-split counts.
    pub fn summary(&self) -> String {
        let counts = self.counts();
        let mut out = String::new();
        let _ = writeln!(out, "pairs: {}", self.len());
        if let Some(d) = self.feature_dim() {
            let _ = writeln!(out, "feature_dim: {d}");
        }
        for split in [Split::Train, Split::Tune, Split::Test] {
            let row: Vec<String> = Relation::ALL
                .iter()
                .map(|r| format!("{}={}", r.name(), counts.get(&(split, *r)).unwrap_or(&0)))
                .collect();
            let total: usize = Relation::ALL.iter().map(|r| counts.get(&(split, *r)).unwrap_or(&0)).sum();
            if total > 0 {
                let _ = writeln!(out, "{}: {} ({})", split.name(), total, row.join(" "));
            }
        }
        out
    }

    /// Moves `round(test_fraction × class size)` pairs of every class into
    /// the test split, chosen with a seeded shuffle; the rest become train.
    pub fn assign_test_split(&mut self, test_fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::Config(format!(
                "test fraction must lie in [0, 1], got {test_fraction}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in Relation::ALL {
            let mut idx: Vec<usize> = (0..self.pairs.len()).filter(|&i| self.pairs[i].label == r).collect();
            idx.shuffle(&mut rng);
            let n_test = (idx.len() as f64 * test_fraction).round() as usize;
            for (k, &i) in idx.iter().enumerate() {
                self.pairs[i].split = if k < n_test { Split::Test } else { Split::Train };
            }
        }
        Ok(())
    }
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    }
}

/// Attributes of a single `<row .../>` element.
fn parse_row(line: &str) -> std::result::Result<HashMap<String, String>, String> {
    let mut reader = Reader::from_str(line);
    loop {
        match reader.read_event() {
            Ok(Event::Empty(e)) | Ok(Event::Start(e)) if e.name().as_ref() == b"row" => {
                let mut attrs = HashMap::new();
                for a in e.attributes() {
                    let a = a.map_err(|err| err.to_string())?;
                    let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
                    let value = a.unescape_value().map_err(|err| err.to_string())?;
                    attrs.insert(key, value.into_owned());
                }
                return Ok(attrs);
            }
            Ok(Event::Eof) => return Err("no <row> element".into()),
            Ok(_) => continue,
            Err(e) => return Err(e.to_string()),
        }
    }
}

fn required<T: std::str::FromStr>(attrs: &HashMap<String, String>, key: &str) -> std::result::Result<T, String> {
    attrs
        .get(key)
        .ok_or_else(|| format!("missing {key}"))?
        .trim()
        .parse()
        .map_err(|_| format!("bad {key}"))
}

fn parse_tags(raw: &str) -> Vec<String> {
    raw.split(['<', '>', '|'])
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// A parsed `<row>`'s attributes, or why it could not be parsed.
type Row = std::result::Result<HashMap<String, String>, String>;

fn rows<R: BufRead>(reader: R, what: &str) -> Result<impl Iterator<Item = (usize, Row)>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(what, e))?;
        let t = line.trim_start();
        if t.starts_with("<row") {
            out.push((n + 1, parse_row(t)));
        }
    }
    Ok(out.into_iter())
}

/// Joins questions (`PostTypeId` 1) with their answers (`PostTypeId` 2).
/// Returns the units in question-id order and the number of skipped rows.
pub fn parse_posts<R: BufRead>(reader: R) -> Result<(Vec<KnowledgeUnit>, usize)> {
    let mut questions: BTreeMap<u64, KnowledgeUnit> = BTreeMap::new();
    let mut answers: Vec<(u64, u64, String)> = Vec::new();
    let mut skipped = 0;
    for (line, row) in rows(reader, "posts")? {
        let parsed = row.and_then(|a| {
            let id: u64 = required(&a, "Id")?;
            let kind: u32 = required(&a, "PostTypeId")?;
            Ok((a, id, kind))
        });
        let (attrs, id, kind) = match parsed {
            Ok(v) => v,
            Err(e) => {
                log::warn!("posts line {line}: skipping malformed row ({e})");
                skipped += 1;
                continue;
            }
        };
        let text = |k: &str| attrs.get(k).cloned().unwrap_or_default();
        match kind {
            1 => {
                questions.insert(
                    id,
                    KnowledgeUnit {
                        id,
                        title: text("Title"),
                        body: text("Body"),
                        answers: Vec::new(),
                        tags: parse_tags(&text("Tags")),
                    },
                );
            }
            2 => match required::<u64>(&attrs, "ParentId") {
                Ok(parent) => answers.push((parent, id, text("Body"))),
                Err(e) => {
                    log::warn!("posts line {line}: skipping answer ({e})");
                    skipped += 1;
                }
            },
            _ => {}
        }
    }
    answers.sort_by_key(|(parent, id, _)| (*parent, *id));
    for (parent, id, body) in answers {
        match questions.get_mut(&parent) {
            Some(q) => q.answers.push(body),
            None => log::debug!("answer {id} refers to unknown question {parent}"),
        }
    }
    let units = questions
        .into_values()
        .filter(|u| !(u.title.trim().is_empty() && u.body.trim().is_empty()))
        .collect();
    Ok((units, skipped))
}

pub fn parse_links<R: BufRead>(reader: R) -> Result<(Vec<LinkRecord>, usize)> {
    let mut links = Vec::new();
    let mut skipped = 0;
    for (line, row) in rows(reader, "postlinks")? {
        let rec = row.and_then(|a| {
            Ok(LinkRecord {
                post_id: required(&a, "PostId")?,
                related_post_id: required(&a, "RelatedPostId")?,
                link_type: required(&a, "LinkTypeId")?,
            })
        });
        match rec {
            Ok(r) => links.push(r),
            Err(e) => {
                log::warn!("postlinks line {line}: skipping malformed row ({e})");
                skipped += 1;
            }
        }
    }
    Ok((links, skipped))
}

/// Reads `Posts.xml` and `PostLinks.xml`.
pub fn parse_dump(posts: &Path, postlinks: &Path) -> Result<Dump> {
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| Error::io(p, e));
    let (units, s1) = parse_posts(open(posts)?)?;
    let (links, s2) = parse_links(open(postlinks)?)?;
    Ok(Dump {
        units,
        links,
        skipped_rows: s1 + s2,
    })
}

/// Undirected link graph over post ids.
#[derive(Debug, Clone, Default)]
pub struct LinkGraph {
    adj: BTreeMap<u64, BTreeSet<u64>>,
}

impl LinkGraph {
    pub fn new(links: &[LinkRecord]) -> Self {
        let mut adj: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
        for l in links {
            if l.post_id == l.related_post_id {
                continue;
            }
            adj.entry(l.post_id).or_default().insert(l.related_post_id);
            adj.entry(l.related_post_id).or_default().insert(l.post_id);
        }
        LinkGraph { adj }
    }

    /// Edge-count distances from `src` to every reachable node.
    pub fn distances(&self, src: u64) -> HashMap<u64, usize> {
        let mut dist = HashMap::from([(src, 0)]);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for &v in self.adj.get(&u).into_iter().flatten() {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn distance(&self, a: u64, b: u64) -> Option<usize> {
        self.distances(a).get(&b).copied()
    }

    /// Component label per node; nodes absent from the graph get none.
    pub fn components(&self) -> HashMap<u64, usize> {
        let mut comp = HashMap::new();
        let mut next = 0;
        for &start in self.adj.keys() {
            if comp.contains_key(&start) {
                continue;
            }
            for node in self.distances(start).into_keys() {
                comp.insert(node, next);
            }
            next += 1;
        }
        comp
    }
}

fn norm(a: u64, b: u64) -> (u64, u64) {
    (a.min(b), a.max(b))
}

/// Samples labelled pairs following the relatedness rules:
/// a postlink of type 3 is a duplicate, any other postlink a direct link,
/// connected pairs more than two links apart are indirect, and pairs in
/// different components of the undirected link graph are isolated.
/// `counts` gives the number of pairs per class in [`Relation`] order.
pub fn label_pairs(
    units: &[KnowledgeUnit],
    links: &[LinkRecord],
    counts: [usize; 4],
    seed: u64,
) -> Result<KuPairDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<u64> = {
        let set: BTreeSet<u64> = units.iter().map(|u| u.id).collect();
        set.into_iter().collect()
    };
    let is_unit: HashSet<u64> = ids.iter().copied().collect();
    let graph = LinkGraph::new(links);

    let mut dup: BTreeSet<(u64, u64)> = BTreeSet::new();
    let mut direct: BTreeSet<(u64, u64)> = BTreeSet::new();
    for l in links {
        if l.post_id == l.related_post_id || !is_unit.contains(&l.post_id) || !is_unit.contains(&l.related_post_id) {
            continue;
        }
        let key = norm(l.post_id, l.related_post_id);
        if l.link_type == DUPLICATE_LINK_TYPE {
            dup.insert(key);
        } else {
            direct.insert(key);
        }
    }
    direct.retain(|k| !dup.contains(k));

    let mut indirect: Vec<(u64, u64)> = Vec::new();
    if counts[Relation::IndirectLink.index()] > 0 {
        for &u in ids.iter().filter(|u| graph.adj.contains_key(u)) {
            let mut far: Vec<u64> = graph
                .distances(u)
                .into_iter()
                .filter(|&(v, d)| d > 2 && v > u && is_unit.contains(&v))
                .map(|(v, _)| v)
                .collect();
            far.sort_unstable();
            indirect.extend(far.into_iter().map(|v| (u, v)));
        }
    }

    let comp = graph.components();
    // singletons get labels past the graph's components
    let base = comp.values().max().map_or(0, |m| m + 1);
    let component = |id: u64, pos: usize| comp.get(&id).copied().unwrap_or(base + pos);
    let want_isolated = counts[Relation::Isolated.index()];
    let mut isolated: BTreeSet<(u64, u64)> = BTreeSet::new();
    if want_isolated > 0 && ids.len() >= 2 {
        let attempts = 50 * want_isolated + 1000;
        for _ in 0..attempts {
            if isolated.len() >= want_isolated {
                break;
            }
            let (i, j) = (rng.gen_range(0..ids.len()), rng.gen_range(0..ids.len()));
            if i != j && component(ids[i], i) != component(ids[j], j) {
                isolated.insert(norm(ids[i], ids[j]));
            }
        }
        if isolated.len() < want_isolated {
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    if component(ids[i], i) != component(ids[j], j) {
                        isolated.insert((ids[i], ids[j]));
                    }
                }
            }
        }
    }

    let pools: [Vec<(u64, u64)>; 4] = [
        dup.into_iter().collect(),
        direct.into_iter().collect(),
        indirect,
        isolated.into_iter().collect(),
    ];
    let mut pairs = Vec::new();
    for (r, mut pool) in Relation::ALL.into_iter().zip(pools) {
        let want = counts[r.index()];
        if pool.len() < want {
            return Err(Error::Data(format!(
                "only {} eligible {} pairs, {} requested",
                pool.len(),
                r.name(),
                want
            )));
        }
        pool.shuffle(&mut rng);
        pairs.extend(pool.into_iter().take(want).map(|(a, b)| KuPair {
            a,
            b,
            label: r,
            split: Split::Train,
            features: None,
        }));
    }
    let mut provenance = BTreeMap::new();
    provenance.insert("generator".into(), "label_pairs".into());
    provenance.insert("seed".into(), seed.to_string());
    Ok(KuPairDataset { pairs, provenance })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub per_split: BTreeMap<&'static str, [usize; 4]>,
    /// Every class holds exactly a quarter of each non-empty split.
    pub balanced: bool,
    pub empty: bool,
}

impl BalanceReport {
    pub fn of(ds: &KuPairDataset) -> Self {
        let mut per_split: BTreeMap<&'static str, [usize; 4]> = BTreeMap::new();
        for p in &ds.pairs {
            per_split.entry(p.split.name()).or_default()[p.label.index()] += 1;
        }
        let balanced = per_split
            .values()
            .all(|c| c.iter().all(|&n| n == c[0]));
        BalanceReport {
            per_split,
            balanced,
            empty: ds.is_empty(),
        }
    }
}

fn read_pair_list(path: &Path, split: Split) -> Result<Vec<KuPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split([',', '\t', ' ']).filter(|f| !f.is_empty()).collect();
        let bad = || Error::Data(format!("{}:{}: expected `id_a id_b class`, got `{t}`", path.display(), n + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let a = fields[0].parse().map_err(|_| bad())?;
        let b = fields[1].parse().map_err(|_| bad())?;
        let label = Relation::parse(fields[2]).ok_or_else(bad)?;
        out.push(KuPair {
            a,
            b,
            label,
            split,
            features: None,
        });
    }
    Ok(out)
}

/// Loads a published train/test pair list: one `id_a id_b class` record per
/// line (comma, tab or space separated; class as index or name).
pub fn load_benchmark(train: &Path, test: &Path) -> Result<(KuPairDataset, BalanceReport)> {
    let mut pairs = read_pair_list(train, Split::Train)?;
    pairs.extend(read_pair_list(test, Split::Test)?);
    let mut provenance = BTreeMap::new();
    provenance.insert("train".into(), train.display().to_string());
    provenance.insert("test".into(), test.display().to_string());
    let ds = KuPairDataset { pairs, provenance };
    let report = BalanceReport::of(&ds);
    if report.empty {
        log::warn!("benchmark files contain no pairs");
    } else if !report.balanced {
        log::warn!("benchmark classes are not balanced: {:?}", report.per_split);
    }
    Ok((ds, report))
}

/// Pre-tokenized unit texts keyed by post id.
pub type UnitTokens = HashMap<u64, Vec<String>>;

pub fn tokenize_units(units: &[KnowledgeUnit]) -> UnitTokens {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        units.par_iter().map(|u| (u.id, u.tokens())).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        units.iter().map(|u| (u.id, u.tokens())).collect()
    }
}

/// Attaches pair feature vectors to every pair.
pub fn featurize(
    dataset: &KuPairDataset,
    units: &UnitTokens,
    model: &EmbeddingModel,
    mode: PairMode,
) -> Result<KuPairDataset> {
    let missing: BTreeSet<u64> = dataset
        .pairs
        .iter()
        .flat_map(|p| [p.a, p.b])
        .filter(|id| !units.contains_key(id))
        .collect();
    if !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(20).map(u64::to_string).collect();
        return Err(Error::Data(format!(
            "no text for {} unit id(s): {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 20 { ", ..." } else { "" }
        )));
    }
    let attach = |p: &KuPair| KuPair {
        features: Some(embedkit::pair_features(model, &units[&p.a], &units[&p.b], mode)),
        ..p.clone()
    };
    #[cfg(feature = "parallel")]
    let pairs = {
        use rayon::prelude::*;
        dataset.pairs.par_iter().map(attach).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let pairs = dataset.pairs.iter().map(attach).collect();

    let mut provenance = dataset.provenance.clone();
    provenance.insert("pair_mode".into(), format!("{mode:?}").to_lowercase());
    provenance.insert("feature_dim".into(), mode.feature_dim(model.dim()).to_string());
    Ok(KuPairDataset { pairs, provenance })
}

/// Units whose tags contain `tag_substring`, up to `max_units` of them
/// chosen with a seeded shuffle, as a training corpus.
pub fn select_corpus(units: &[KnowledgeUnit], tag_substring: &str, max_units: usize, seed: u64) -> Corpus {
    let mut chosen: Vec<&KnowledgeUnit> = units
        .iter()
        .filter(|u| tag_substring.is_empty() || u.tags.iter().any(|t| t.contains(tag_substring)))
        .collect();
    chosen.sort_by_key(|u| u.id);
    chosen.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    chosen.truncate(max_units);
    chosen.sort_by_key(|u| u.id);
    let mut corpus = Corpus::default();
    for u in chosen {
        corpus.push(u.id.to_string(), u.tokens());
    }
    corpus
}

pub fn write_units(units: &[KnowledgeUnit], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for u in units {
        let line = serde_json::to_string(u).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_units(path: &Path) -> Result<Vec<KnowledgeUnit>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}
