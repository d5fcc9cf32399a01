//! Soft-margin kernel SVM trained with sequential minimal optimization and
//! combined one-vs-one for multi-class problems.
//!
//! The binary solver works on the dual
//!
//! ```text
//! min_α  ½ αᵀQα − eᵀα   s.t.  0 ≤ α_i ≤ C,  yᵀα = 0,   Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! selecting working pairs with second-order information and stopping once
//! the maximal KKT violation drops below the tolerance.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Poly,
    Rbf,
    Sigmoid,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Linear,
        KernelKind::Poly,
        KernelKind::Rbf,
        KernelKind::Sigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Poly => "poly",
            KernelKind::Rbf => "rbf",
            KernelKind::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown kernel `{s}`")))
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: KernelKind,
    pub gamma: f64,
    pub coef0: f64,
    pub degree: u32,
}

impl SvmParams {
    /// Untuned defaults: C = 1, rbf, gamma = 1/n_features, coef0 = 0, degree 3.
    pub fn defaults_for(n_features: usize) -> Self {
        SvmParams {
            c: 1.0,
            kernel: KernelKind::Rbf,
            gamma: 1.0 / n_features.max(1) as f64,
            coef0: 0.0,
            degree: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Argument(format!("C must be positive, got {}", self.c)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Argument(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !self.coef0.is_finite() {
            return Err(Error::Argument("coef0 must be finite".into()));
        }
        if self.degree == 0 {
            return Err(Error::Argument("degree must be >= 1".into()));
        }
        Ok(())
    }
}

fn dot(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.dot(&y)
}

fn kernel_unchecked(p: &SvmParams, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    match p.kernel {
        KernelKind::Linear => dot(x, y),
        KernelKind::Poly => (p.gamma * dot(x, y) + p.coef0).powi(p.degree as i32),
        KernelKind::Rbf => {
            if p.gamma == 0.0 {
                return 1.0;
            }
            let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            (-p.gamma * d2).exp()
        }
        KernelKind::Sigmoid => (p.gamma * dot(x, y) + p.coef0).tanh(),
    }
}

pub fn kernel_eval(params: &SvmParams, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "kernel arguments differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Argument("kernel arguments must be finite".into()));
    }
    Ok(kernel_unchecked(params, x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoConfig {
    /// Stop when the maximal KKT violation falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Precompute the full Gram matrix up to this many rows.
    pub cache_rows: usize,
    /// Drop bounded variables that are unlikely to move from the working
    /// set. Ignored while recording the objective.
    pub shrinking: bool,
    /// Record the dual objective after every iteration.
    pub record_objective: bool,
}

impl Default for SmoConfig {
    fn default() -> Self {
        SmoConfig {
            tol: 1e-3,
            max_iter: 1_000_000,
            cache_rows: 10_000,
            shrinking: true,
            record_objective: false,
        }
    }
}

enum Gram<'a> {
    Full { n: usize, k: Vec<f64> },
    OnDemand { x: ArrayView2<'a, f64>, params: SvmParams },
}

impl Gram<'_> {
    fn row<'s>(&'s self, i: usize, buf: &'s mut Vec<f64>) -> &'s [f64] {
        match self {
            Gram::Full { n, k } => &k[i * n..(i + 1) * n],
            Gram::OnDemand { x, params } => {
                buf.clear();
                let xi = x.row(i);
                buf.extend(x.outer_iter().map(|xt| kernel_unchecked(params, xi, xt)));
                buf
            }
        }
    }
}

/// Raw solution of the binary dual problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision offset: `f(x) = Σ α_i y_i K(x_i, x) − rho`.
    pub rho: f64,
    pub iterations: usize,
    /// Maximal KKT violation at exit.
    pub kkt_gap: f64,
    pub converged: bool,
    /// Dual objective `eᵀα − ½ αᵀQα` at exit.
    pub objective: f64,
    /// Dual objective after each iteration, when requested.
    pub objective_trace: Vec<f64>,
}

fn check_inputs(x: ArrayView2<f64>, y: &[i8]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Argument(format!(
            "{} feature rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("features must be finite".into()));
    }
    if let Some(bad) = y.iter().find(|&&l| l != 1 && l != -1) {
        return Err(Error::Argument(format!("binary labels must be ±1, got {bad}")));
    }
    if !y.contains(&1) || !y.contains(&-1) {
        return Err(Error::Training(
            "binary training needs at least one example of each label".into(),
        ));
    }
    Ok(())
}

/// Solves the soft-margin dual with SMO.
pub fn solve_dual(
    x: ArrayView2<f64>,
    y: &[i8],
    params: &SvmParams,
    cfg: &SmoConfig,
) -> Result<DualSolution> {
    params.validate()?;
    check_inputs(x, y)?;
    let n = y.len();
    let c = params.c;
    let yf: Vec<f64> = y.iter().map(|&l| l as f64).collect();

    let gram = if n <= cfg.cache_rows {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = kernel_unchecked(params, x.row(i), x.row(j));
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Gram::Full { n, k }
    } else {
        Gram::OnDemand { x, params: *params }
    };
    let diag: Vec<f64> = (0..n).map(|i| kernel_unchecked(params, x.row(i), x.row(i))).collect();

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut buf_i = Vec::with_capacity(n);
    let mut buf_j = Vec::with_capacity(n);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let objective = |alpha: &[f64], grad: &[f64]| -> f64 {
        -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>()
    };
    let is_up = |t: usize, alpha: &[f64]| if y[t] == 1 { alpha[t] < c } else { alpha[t] > 0.0 };
    let is_low = |t: usize, alpha: &[f64]| if y[t] == 1 { alpha[t] > 0.0 } else { alpha[t] < c };
    // max −y∇f over I_up and max y∇f over I_low
    let extremes = |set: &[usize], alpha: &[f64], grad: &[f64]| {
        let (mut up, mut low) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &t in set {
            let v = yf[t] * grad[t];
            if is_up(t, alpha) {
                up = up.max(-v);
            }
            if is_low(t, alpha) {
                low = low.max(v);
            }
        }
        (up, low)
    };
    // refresh the gradient of inactive variables from scratch
    let reconstruct = |active: &[usize], alpha: &[f64], grad: &mut [f64], buf: &mut Vec<f64>| {
        let mut inactive = vec![true; n];
        for &t in active {
            inactive[t] = false;
        }
        let idle: Vec<usize> = (0..n).filter(|&t| inactive[t]).collect();
        if idle.is_empty() {
            return;
        }
        for &t in &idle {
            grad[t] = -1.0;
        }
        for s in 0..n {
            if alpha[s] > 0.0 {
                let row = gram.row(s, buf);
                let w = yf[s] * alpha[s];
                for &t in &idle {
                    grad[t] += yf[t] * w * row[t];
                }
            }
        }
    };

    let shrinking = cfg.shrinking && !cfg.record_objective;
    let mut active: Vec<usize> = (0..n).collect();
    let mut unshrunk = false;
    let mut counter = n.min(1000) + 1;

    loop {
        if shrinking {
            counter -= 1;
            if counter == 0 {
                counter = n.min(1000);
                let (up, low) = extremes(&active, &alpha, &grad);
                if !unshrunk && up + low <= 10.0 * cfg.tol {
                    unshrunk = true;
                    reconstruct(&active, &alpha, &mut grad, &mut buf_i);
                    active = (0..n).collect();
                }
                active.retain(|&t| {
                    let g = grad[t];
                    if alpha[t] >= c {
                        if y[t] == 1 { -g <= up } else { -g <= low }
                    } else if alpha[t] <= 0.0 {
                        if y[t] == 1 { g <= low } else { g <= up }
                    } else {
                        true
                    }
                });
            }
        }

        // i: maximal violator in I_up; j: second-order choice in I_low
        let select = |active: &[usize], alpha: &[f64], grad: &[f64], buf: &mut Vec<f64>| {
            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for &t in active {
                if is_up(t, alpha) && -yf[t] * grad[t] >= gmax {
                    gmax = -yf[t] * grad[t];
                    i = t;
                }
            }
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j = usize::MAX;
            if i != usize::MAX {
                let row_i = gram.row(i, buf);
                let mut obj_min = f64::INFINITY;
                for &t in active {
                    if !is_low(t, alpha) {
                        continue;
                    }
                    let v = yf[t] * grad[t];
                    if v >= gmax2 {
                        gmax2 = v;
                    }
                    let b = gmax + v;
                    if b > 0.0 {
                        let mut a = diag[i] + diag[t] - 2.0 * row_i[t];
                        if a <= 0.0 {
                            a = TAU;
                        }
                        let obj = -(b * b) / a;
                        if obj <= obj_min {
                            obj_min = obj;
                            j = t;
                        }
                    }
                }
            }
            let done = i == usize::MAX || j == usize::MAX || gmax + gmax2 < cfg.tol;
            (i, j, done)
        };
        let (mut i, mut j, done) = select(&active, &alpha, &grad, &mut buf_i);
        if done {
            if active.len() == n {
                converged = true;
                break;
            }
            // optimal on the active set; check again on all variables
            reconstruct(&active, &alpha, &mut grad, &mut buf_i);
            active = (0..n).collect();
            let (i2, j2, done2) = select(&active, &alpha, &grad, &mut buf_i);
            if done2 {
                converged = true;
                break;
            }
            (i, j) = (i2, j2);
            counter = 1;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;
        let row_i = gram.row(i, &mut buf_i);
        let row_j = gram.row(j, &mut buf_j);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kij = row_i[j];
        if y[i] != y[j] {
            let mut quad = diag[i] + diag[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let wi = yf[i] * (alpha[i] - old_i);
        let wj = yf[j] * (alpha[j] - old_j);
        for &t in &active {
            grad[t] += yf[t] * (wi * row_i[t] + wj * row_j[t]);
        }
        if cfg.record_objective {
            trace.push(objective(&alpha, &grad));
        }
    }
    if active.len() < n {
        reconstruct(&active, &alpha, &mut grad, &mut buf_i);
    }
    let all: Vec<usize> = (0..n).collect();
    let (up, low) = extremes(&all, &alpha, &grad);
    let kkt_gap = up + low;

    // offset from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = yf[t] * grad[t];
        if alpha[t] >= c {
            if y[t] == -1 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] == 1 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    if !converged {
        log::debug!("smo stopped after {iterations} iterations with gap {kkt_gap:.3e}");
    }

    Ok(DualSolution {
        objective: objective(&alpha, &grad),
        alpha,
        rho,
        iterations,
        kkt_gap,
        converged,
        objective_trace: trace,
    })
}

/// A trained two-class model. `positive` is predicted when the decision
/// value is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    pub support_vectors: Array2<f64>,
    /// `α_i y_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub params: SvmParams,
    pub positive: usize,
    pub negative: usize,
}

impl BinaryModel {
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        self.support_vectors
            .outer_iter()
            .zip(&self.dual_coef)
            .map(|(sv, coef)| coef * kernel_unchecked(&self.params, sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn n_features(&self) -> usize {
        self.support_vectors.ncols()
    }
}

/// Trains a binary soft-margin SVM on labels in `{-1, +1}`.
pub fn train_binary(
    x: ArrayView2<f64>,
    y: &[i8],
    params: &SvmParams,
    cfg: &SmoConfig,
) -> Result<BinaryModel> {
    let sol = solve_dual(x, y, params, cfg)?;
    Ok(binary_from_solution(x, y, &sol, params, (1, 0)))
}

fn binary_from_solution(
    x: ArrayView2<f64>,
    y: &[i8],
    sol: &DualSolution,
    params: &SvmParams,
    (positive, negative): (usize, usize),
) -> BinaryModel {
    let keep: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
    BinaryModel {
        support_vectors: x.select(Axis(0), &keep),
        dual_coef: keep.iter().map(|&i| sol.alpha[i] * y[i] as f64).collect(),
        bias: -sol.rho,
        params: *params,
        positive,
        negative,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    pub n_classes: usize,
    /// One model per class pair `(i, j)`, `i < j`, in lexicographic order.
    pub binaries: Vec<BinaryModel>,
}

/// Trains one binary model per unordered class pair. Labels are class
/// indices `0..K`; every class in that range must have examples.
pub fn train_multiclass(
    x: ArrayView2<f64>,
    y: &[usize],
    params: &SvmParams,
    cfg: &SmoConfig,
) -> Result<MulticlassModel> {
    params.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::Argument(format!(
            "{} feature rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    let k = y.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Training("need at least two classes".into()));
    }
    let mut members = vec![Vec::new(); k];
    for (i, &l) in y.iter().enumerate() {
        members[l].push(i);
    }
    if let Some(missing) = members.iter().position(Vec::is_empty) {
        return Err(Error::Training(format!("class {missing} has no examples")));
    }

    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
        .collect();
    let train_pair = |&(a, b): &(usize, usize)| -> Result<BinaryModel> {
        let rows: Vec<usize> = members[a].iter().chain(&members[b]).copied().collect();
        let sub = x.select(Axis(0), &rows);
        let labels: Vec<i8> = rows.iter().map(|&r| if y[r] == a { 1 } else { -1 }).collect();
        let sol = solve_dual(sub.view(), &labels, params, cfg)?;
        Ok(binary_from_solution(sub.view(), &labels, &sol, params, (a, b)))
    };

    #[cfg(feature = "parallel")]
    let binaries = {
        use rayon::prelude::*;
        pairs.par_iter().map(train_pair).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let binaries = pairs.iter().map(train_pair).collect::<Result<Vec<_>>>()?;

    Ok(MulticlassModel {
        n_classes: k,
        binaries,
    })
}

/// Majority vote; ties go to the lowest class index.
fn tally(n_classes: usize, winners: impl Iterator<Item = usize>) -> usize {
    let mut votes = vec![0usize; n_classes];
    for w in winners {
        votes[w] += 1;
    }
    let mut best = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    best
}

impl MulticlassModel {
    pub fn n_features(&self) -> usize {
        self.binaries.first().map_or(0, BinaryModel::n_features)
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<usize> {
        if x.len() != self.n_features() {
            return Err(Error::Argument(format!(
                "expected {} features, got {}",
                self.n_features(),
                x.len()
            )));
        }
        Ok(tally(
            self.n_classes,
            self.binaries.iter().map(|b| {
                if b.decision(x) > 0.0 {
                    b.positive
                } else {
                    b.negative
                }
            }),
        ))
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        x.outer_iter().map(|row| self.predict(row)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)
            .map_err(|e| Error::Internal(format!("serializing model: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}
