//! Mixed continuous/categorical parameter spaces and a steady-state
//! differential evolution tuner, plus an exhaustive grid-search baseline.
//!
//! The tuner keeps a population of `population_factor × n` candidates for a
//! space of `n` decisions. Each pass walks the population in order and tries
//! to replace every member with a mutant built from three other members;
//! replacements take effect immediately, so later mutants in the same pass
//! can draw on them.

use std::fmt;
use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on grid-search evaluations.
pub const MAX_GRID_EVALUATIONS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Continuous { lo: f64, hi: f64 },
    Categorical(Vec<String>),
}

/// A single decision value. Categorical values are indices into the
/// decision's ordered value list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    Real(f64),
    Choice(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDef {
    pub name: String,
    pub domain: Domain,
    pub default: ParamValue,
}

impl ParamDef {
    pub fn continuous(name: &str, lo: f64, hi: f64, default: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Config(format!(
                "parameter `{name}`: range [{lo}, {hi}] must satisfy lo < hi"
            )));
        }
        if !(lo..=hi).contains(&default) {
            return Err(Error::Config(format!(
                "parameter `{name}`: default {default} outside [{lo}, {hi}]"
            )));
        }
        Ok(ParamDef {
            name: name.to_string(),
            domain: Domain::Continuous { lo, hi },
            default: ParamValue::Real(default),
        })
    }

    pub fn categorical(name: &str, values: &[&str], default: &str) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config(format!(
                "parameter `{name}`: categorical list is empty"
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if values[..i].contains(v) {
                return Err(Error::Config(format!(
                    "parameter `{name}`: duplicate category `{v}`"
                )));
            }
        }
        let default = values.iter().position(|v| *v == default).ok_or_else(|| {
            Error::Config(format!(
                "parameter `{name}`: default `{default}` is not a listed category"
            ))
        })?;
        Ok(ParamDef {
            name: name.to_string(),
            domain: Domain::Categorical(values.iter().map(|s| s.to_string()).collect()),
            default: ParamValue::Choice(default),
        })
    }

    pub fn contains(&self, value: &ParamValue) -> bool {
        match (&self.domain, value) {
            (Domain::Continuous { lo, hi }, ParamValue::Real(x)) => *lo <= *x && *x <= *hi,
            (Domain::Categorical(list), ParamValue::Choice(i)) => *i < list.len(),
            _ => false,
        }
    }

    /// Renders a value for traces and reports.
    pub fn format_value(&self, value: &ParamValue) -> String {
        match (&self.domain, value) {
            (Domain::Categorical(list), ParamValue::Choice(i)) => {
                list.get(*i).cloned().unwrap_or_else(|| format!("#{i}"))
            }
            (_, ParamValue::Real(x)) => format!("{x}"),
            (_, ParamValue::Choice(i)) => format!("#{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSpace {
    defs: Vec<ParamDef>,
}

impl ParamSpace {
    pub fn new(defs: Vec<ParamDef>) -> Result<Self> {
        for (i, d) in defs.iter().enumerate() {
            if defs[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Config(format!("duplicate parameter `{}`", d.name)));
            }
            if !d.contains(&d.default) {
                return Err(Error::Config(format!(
                    "parameter `{}`: default outside its range",
                    d.name
                )));
            }
        }
        Ok(ParamSpace { defs })
    }

    pub fn defs(&self) -> &[ParamDef] {
        &self.defs
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.defs.iter().position(|d| d.name == name)
    }

    pub fn default_candidate(&self) -> Candidate {
        Candidate::new(self.defs.iter().map(|d| d.default).collect())
    }

    pub fn contains(&self, candidate: &Candidate) -> bool {
        candidate.values.len() == self.defs.len()
            && self
                .defs
                .iter()
                .zip(&candidate.values)
                .all(|(d, v)| d.contains(v))
    }

    pub fn describe(&self, candidate: &Candidate) -> String {
        self.defs
            .iter()
            .zip(&candidate.values)
            .map(|(d, v)| format!("{}={}", d.name, d.format_value(v)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One concrete setting of every decision in a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub values: Vec<ParamValue>,
    pub score: Option<f64>,
}

impl Candidate {
    pub fn new(values: Vec<ParamValue>) -> Self {
        Candidate {
            values,
            score: None,
        }
    }

    /// Continuous value at `index`. Panics if the decision is categorical.
    pub fn real(&self, index: usize) -> f64 {
        match self.values[index] {
            ParamValue::Real(x) => x,
            ParamValue::Choice(_) => panic!("decision {index} is categorical"),
        }
    }

    /// Categorical index at `index`. Panics if the decision is continuous.
    pub fn choice(&self, index: usize) -> usize {
        match self.values[index] {
            ParamValue::Choice(i) => i,
            ParamValue::Real(_) => panic!("decision {index} is continuous"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeConfig {
    /// Population size is `population_factor × number of decisions`.
    pub population_factor: usize,
    /// Per-decision crossover probability.
    pub p1: f64,
    /// Differential weight.
    pub f: f64,
    pub max_generations: usize,
    pub seed: u64,
    /// Stop after a full pass in which no mutant strictly improved its slot.
    pub early_stop: bool,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig {
            population_factor: 10,
            p1: 0.75,
            f: 0.75,
            max_generations: 10,
            seed: 0,
            early_stop: true,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_factor < 4 {
            return Err(Error::Config(format!(
                "population_factor must be >= 4, got {}",
                self.population_factor
            )));
        }
        if !(self.p1 > 0.0 && self.p1 <= 1.0) {
            return Err(Error::Config(format!("p1 must lie in (0, 1], got {}", self.p1)));
        }
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(Error::Config(format!("f must be positive, got {}", self.f)));
        }
        Ok(())
    }
}

/// Scores a candidate; higher is better.
pub trait Objective {
    fn evaluate(&mut self, candidate: &Candidate) -> Result<f64>;
}

impl<F> Objective for F
where
    F: FnMut(&Candidate) -> Result<f64>,
{
    fn evaluate(&mut self, candidate: &Candidate) -> Result<f64> {
        self(candidate)
    }
}

/// Draws one candidate uniformly from the space.
pub fn sample<R: Rng + ?Sized>(space: &ParamSpace, rng: &mut R) -> Result<Candidate> {
    if space.is_empty() {
        return Err(Error::Config("cannot sample from an empty space".into()));
    }
    let values = space
        .defs
        .iter()
        .map(|d| match &d.domain {
            Domain::Continuous { lo, hi } => ParamValue::Real(rng.gen_range(*lo..=*hi)),
            Domain::Categorical(list) => ParamValue::Choice(rng.gen_range(0..list.len())),
        })
        .collect();
    Ok(Candidate::new(values))
}

/// Builds a mutant for `pop[target]` from three distinct donors.
///
/// Each decision independently crosses over with probability `p1`: a
/// continuous decision becomes `a + f·(b − c)` clamped to its range, a
/// categorical one a uniform pick among the donors' values. Decisions that
/// do not cross over are copied from the target.
pub fn mutate<R: Rng + ?Sized>(
    space: &ParamSpace,
    pop: &[Candidate],
    target: usize,
    cfg: &DeConfig,
    rng: &mut R,
) -> Result<Candidate> {
    if pop.len() < 4 {
        return Err(Error::Config(format!(
            "mutation needs a population of at least 4, got {}",
            pop.len()
        )));
    }
    if target >= pop.len() {
        return Err(Error::Argument(format!(
            "target index {target} out of range for population of {}",
            pop.len()
        )));
    }
    let picks = index::sample(rng, pop.len() - 1, 3);
    let donor = |i: usize| if i >= target { &pop[i + 1] } else { &pop[i] };
    let (a, b, c) = (donor(picks.index(0)), donor(picks.index(1)), donor(picks.index(2)));

    let values = space
        .defs
        .iter()
        .enumerate()
        .map(|(k, d)| {
            if rng.gen::<f64>() >= cfg.p1 {
                return pop[target].values[k];
            }
            match &d.domain {
                Domain::Continuous { lo, hi } => {
                    let (ak, bk, ck) = (a.real(k), b.real(k), c.real(k));
                    ParamValue::Real((ak + cfg.f * (bk - ck)).clamp(*lo, *hi))
                }
                Domain::Categorical(_) => {
                    let options = [a.values[k], b.values[k], c.values[k]];
                    options[rng.gen_range(0..3)]
                }
            }
        })
        .collect();
    Ok(Candidate::new(values))
}

/// One evaluated candidate in a tuning run. Generation 0 is the initial
/// population; `candidate_id` is the population slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub generation: usize,
    pub candidate_id: usize,
    pub values: Vec<ParamValue>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: Candidate,
    pub trace: Vec<TraceRow>,
    pub evaluations: usize,
    /// Completed passes over the population (excluding initialization).
    pub generations: usize,
    /// Best population score after initialization and after each pass.
    pub best_by_generation: Vec<f64>,
}

fn score_candidate<O: Objective + ?Sized>(objective: &mut O, candidate: &Candidate) -> Result<f64> {
    let score = objective
        .evaluate(candidate)
        .map_err(|e| Error::Objective {
            candidate: candidate.clone(),
            source: Box::new(e),
        })?;
    if !score.is_finite() {
        return Err(Error::Objective {
            candidate: candidate.clone(),
            source: Box::new(Error::Internal(format!("non-finite score {score}"))),
        });
    }
    Ok(score)
}

fn best_of(pop: &[Candidate]) -> &Candidate {
    let mut best = &pop[0];
    for c in &pop[1..] {
        if c.score > best.score {
            best = c;
        }
    }
    best
}

/// Runs steady-state differential evolution and returns the best candidate
/// found. Deterministic for a given `cfg.seed`.
pub fn tune<O: Objective + ?Sized>(
    space: &ParamSpace,
    objective: &mut O,
    cfg: &DeConfig,
) -> Result<TuneOutcome> {
    cfg.validate()?;
    if space.is_empty() {
        return Err(Error::Config("cannot tune an empty space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.population_factor * space.len();
    let mut trace = Vec::with_capacity(n * (1 + cfg.max_generations));

    let mut pop = Vec::with_capacity(n);
    for id in 0..n {
        let mut c = sample(space, &mut rng)?;
        let score = score_candidate(objective, &c)?;
        c.score = Some(score);
        trace.push(TraceRow {
            generation: 0,
            candidate_id: id,
            values: c.values.clone(),
            score,
        });
        pop.push(c);
    }
    let mut best_by_generation = vec![best_of(&pop).score.unwrap_or(f64::NEG_INFINITY)];

    let mut generations = 0;
    while generations < cfg.max_generations {
        generations += 1;
        let mut improved = false;
        for i in 0..n {
            let mut m = mutate(space, &pop, i, cfg, &mut rng)?;
            let score = score_candidate(objective, &m)?;
            m.score = Some(score);
            trace.push(TraceRow {
                generation: generations,
                candidate_id: i,
                values: m.values.clone(),
                score,
            });
            let current = pop[i].score.unwrap_or(f64::NEG_INFINITY);
            if score >= current {
                improved |= score > current;
                pop[i] = m;
            }
        }
        best_by_generation.push(best_of(&pop).score.unwrap_or(f64::NEG_INFINITY));
        if cfg.early_stop && !improved {
            break;
        }
    }

    Ok(TuneOutcome {
        best: best_of(&pop).clone(),
        evaluations: trace.len(),
        trace,
        generations,
        best_by_generation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best: Candidate,
    pub evaluations: usize,
}

/// Values visited along one axis of a grid.
pub fn grid_axis(def: &ParamDef, points_per_axis: usize) -> Vec<ParamValue> {
    match &def.domain {
        Domain::Continuous { lo, hi } => (0..points_per_axis)
            .map(|i| {
                if i + 1 == points_per_axis {
                    ParamValue::Real(*hi)
                } else {
                    ParamValue::Real(lo + (hi - lo) * i as f64 / (points_per_axis - 1) as f64)
                }
            })
            .collect(),
        Domain::Categorical(list) => (0..list.len()).map(ParamValue::Choice).collect(),
    }
}

/// Evaluates the full Cartesian grid. Continuous axes get `points_per_axis`
/// evenly spaced points including both endpoints; categorical axes
/// enumerate every value. Ties keep the first grid point visited.
pub fn grid_search<O: Objective + ?Sized>(
    space: &ParamSpace,
    objective: &mut O,
    points_per_axis: usize,
) -> Result<GridOutcome> {
    if points_per_axis < 2 {
        return Err(Error::Config(format!(
            "grid search needs at least 2 points per axis, got {points_per_axis}"
        )));
    }
    if space.is_empty() {
        return Err(Error::Config("cannot grid-search an empty space".into()));
    }
    let axes: Vec<Vec<ParamValue>> = space
        .defs
        .iter()
        .map(|d| grid_axis(d, points_per_axis))
        .collect();
    let total = axes
        .iter()
        .try_fold(1u64, |acc, a| acc.checked_mul(a.len() as u64))
        .filter(|t| *t <= MAX_GRID_EVALUATIONS)
        .ok_or_else(|| {
            Error::Config(format!(
                "grid exceeds {MAX_GRID_EVALUATIONS} evaluations"
            ))
        })?;

    let mut cursor = vec![0usize; axes.len()];
    let mut best: Option<Candidate> = None;
    for _ in 0..total {
        let mut c = Candidate::new(cursor.iter().zip(&axes).map(|(&i, a)| a[i]).collect());
        let score = score_candidate(objective, &c)?;
        c.score = Some(score);
        if best.as_ref().is_none_or(|b| Some(score) > b.score) {
            best = Some(c);
        }
        // odometer, last axis fastest
        for k in (0..cursor.len()).rev() {
            cursor[k] += 1;
            if cursor[k] < axes[k].len() {
                break;
            }
            cursor[k] = 0;
        }
    }
    Ok(GridOutcome {
        best: best.expect("grid has at least one point"),
        evaluations: total as usize,
    })
}

/// Writes a tuning trace as CSV: `generation,candidate_id,<param...>,score`.
pub fn write_trace_csv<W: Write>(space: &ParamSpace, trace: &[TraceRow], mut out: W) -> Result<()> {
    let io = |e| Error::io("<trace>", e);
    let mut header = vec!["generation".to_string(), "candidate_id".to_string()];
    header.extend(space.defs.iter().map(|d| d.name.clone()));
    header.push("score".into());
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for row in trace {
        let mut fields = vec![row.generation.to_string(), row.candidate_id.to_string()];
        fields.extend(
            space
                .defs
                .iter()
                .zip(&row.values)
                .map(|(d, v)| d.format_value(v)),
        );
        fields.push(format!("{}", row.score));
        writeln!(out, "{}", fields.join(",")).map_err(io)?;
    }
    Ok(())
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Real(x) => write!(f, "{x}"),
            ParamValue::Choice(i) => write!(f, "#{i}"),
        }
    }
}
