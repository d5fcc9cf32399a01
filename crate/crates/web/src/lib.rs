//! Browser bindings for three small demos: a differential-evolution trace
//! on a 2-d surface, an SVM decision boundary from clicked points, and
//! kernel profiles. The plain functions are usable natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use easytune::despace::{self, Candidate, DeConfig, ParamDef, ParamSpace};
use easytune::svmcore::{self, KernelKind, SmoConfig, SvmParams};
use ndarray::{Array2, ArrayView1};
use wasm_bindgen::prelude::*;

/// A 2-d surface to maximize, with its square domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Bowl,
    Himmelblau,
    Rastrigin,
}

impl Surface {
    pub fn parse(name: &str) -> Result<Self, String> {
        match name {
            "bowl" => Ok(Surface::Bowl),
            "himmelblau" => Ok(Surface::Himmelblau),
            "rastrigin" => Ok(Surface::Rastrigin),
            other => Err(format!("unknown surface `{other}` (bowl, himmelblau, rastrigin)")),
        }
    }

    pub fn half_width(self) -> f64 {
        match self {
            Surface::Bowl => 5.0,
            Surface::Himmelblau => 6.0,
            Surface::Rastrigin => 5.12,
        }
    }

    pub fn value(self, x: f64, y: f64) -> f64 {
        match self {
            Surface::Bowl => -((x - 1.5).powi(2) + (y + 2.0).powi(2)),
            Surface::Himmelblau => -((x * x + y - 11.0).powi(2) + (x + y * y - 7.0).powi(2)),
            Surface::Rastrigin => {
                let tau = std::f64::consts::TAU;
                -(20.0 + x * x - 10.0 * (tau * x).cos() + y * y - 10.0 * (tau * y).cos())
            }
        }
    }
}

/// Every evaluation of a DE run as flat rows of
/// `generation, slot, x, y, score`.
pub fn de_trace_rows(
    surface: Surface,
    seed: u64,
    population_factor: usize,
    max_generations: usize,
    f: f64,
    p1: f64,
) -> Result<Vec<f64>, String> {
    let w = surface.half_width();
    let space = ParamSpace::new(vec![
        ParamDef::continuous("x", -w, w, 0.0).map_err(|e| e.to_string())?,
        ParamDef::continuous("y", -w, w, 0.0).map_err(|e| e.to_string())?,
    ])
    .map_err(|e| e.to_string())?;
    let cfg = DeConfig {
        population_factor,
        max_generations,
        f,
        p1,
        seed,
        early_stop: true,
    };
    let mut objective = |c: &Candidate| -> easytune::Result<f64> { Ok(surface.value(c.real(0), c.real(1))) };
    let outcome = despace::tune(&space, &mut objective, &cfg).map_err(|e| e.to_string())?;
    let mut rows = Vec::with_capacity(outcome.trace.len() * 5);
    for row in &outcome.trace {
        let c = Candidate::new(row.values.clone());
        rows.extend([row.generation as f64, row.candidate_id as f64, c.real(0), c.real(1), row.score]);
    }
    Ok(rows)
}

/// Surface values on a `resolution²` grid over the domain, row-major with
/// y increasing down the rows.
pub fn surface_grid(surface: Surface, resolution: usize) -> Vec<f64> {
    let w = surface.half_width();
    let step = |i: usize| -w + 2.0 * w * i as f64 / (resolution.max(2) - 1) as f64;
    (0..resolution)
        .flat_map(|r| (0..resolution).map(move |c| surface.value(step(c), step(r))))
        .collect()
}

fn svm_params(kernel: &str, c: f64, gamma: f64, coef0: f64, degree: u32) -> Result<SvmParams, String> {
    let params = SvmParams {
        c,
        kernel: kernel.parse::<KernelKind>().map_err(|e| e.to_string())?,
        gamma,
        coef0,
        degree,
    };
    params.validate().map_err(|e| e.to_string())?;
    Ok(params)
}

/// A binary SVM fitted to clicked points.
#[wasm_bindgen]
pub struct BoundaryFit {
    values: Vec<f64>,
    support: Vec<u32>,
    accuracy: f64,
}

#[wasm_bindgen]
impl BoundaryFit {
    /// Decision values on the requested grid, row-major.
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Indices of the points that became support vectors.
    pub fn support(&self) -> Vec<u32> {
        self.support.clone()
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }
}

/// Fits on `points` given as flat `x, y, label` triples (label > 0 is the
/// positive class) and evaluates the decision function on a
/// `resolution²` grid over `[lo, hi]²`.
#[allow(clippy::too_many_arguments)]
pub fn fit_boundary(
    points: &[f64],
    kernel: &str,
    c: f64,
    gamma: f64,
    coef0: f64,
    degree: u32,
    resolution: usize,
    lo: f64,
    hi: f64,
) -> Result<BoundaryFit, String> {
    if !points.len().is_multiple_of(3) {
        return Err("points must be x, y, label triples".into());
    }
    let n = points.len() / 3;
    let x = Array2::from_shape_fn((n, 2), |(i, j)| points[3 * i + j]);
    let y: Vec<i8> = (0..n).map(|i| if points[3 * i + 2] > 0.0 { 1 } else { -1 }).collect();
    let params = svm_params(kernel, c, gamma, coef0, degree)?;
    let sol = svmcore::solve_dual(x.view(), &y, &params, &SmoConfig::default()).map_err(|e| e.to_string())?;
    let support: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    let decision = |p: ArrayView1<f64>| -> f64 {
        support
            .iter()
            .map(|&i| sol.alpha[i] * y[i] as f64 * svmcore::kernel_eval(&params, x.row(i), p).unwrap_or(0.0))
            .sum::<f64>()
            - sol.rho
    };

    let step = |i: usize| lo + (hi - lo) * i as f64 / (resolution.max(2) - 1) as f64;
    let mut values = Vec::with_capacity(resolution * resolution);
    for r in 0..resolution {
        for col in 0..resolution {
            let p = [step(col), step(r)];
            values.push(decision(ArrayView1::from(&p[..])));
        }
    }
    let correct = x
        .outer_iter()
        .zip(&y)
        .filter(|(row, &l)| (decision(*row) > 0.0) == (l == 1))
        .count();
    Ok(BoundaryFit {
        values,
        support: support.iter().map(|&i| i as u32).collect(),
        accuracy: correct as f64 / n as f64,
    })
}

/// Kernel value between `(1, 0)` and `(t, 0)` for `samples` values of `t`
/// evenly spread over `[-reach, reach]`, as flat `t, k` pairs.
pub fn kernel_profile_rows(
    kernel: &str,
    gamma: f64,
    coef0: f64,
    degree: u32,
    reach: f64,
    samples: usize,
) -> Result<Vec<f64>, String> {
    let params = svm_params(kernel, 1.0, gamma, coef0, degree)?;
    let anchor = [1.0, 0.0];
    let mut rows = Vec::with_capacity(2 * samples);
    for i in 0..samples {
        let t = -reach + 2.0 * reach * i as f64 / (samples.max(2) - 1) as f64;
        let probe = [t, 0.0];
        let k = svmcore::kernel_eval(&params, ArrayView1::from(&anchor[..]), ArrayView1::from(&probe[..]))
            .map_err(|e| e.to_string())?;
        rows.extend([t, k]);
    }
    Ok(rows)
}

#[wasm_bindgen]
pub fn de_trace(
    surface: &str,
    seed: u32,
    population_factor: usize,
    max_generations: usize,
    f: f64,
    p1: f64,
) -> Result<Vec<f64>, JsError> {
    let s = Surface::parse(surface).map_err(|e| JsError::new(&e))?;
    de_trace_rows(s, seed.into(), population_factor, max_generations, f, p1).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn surface_values(surface: &str, resolution: usize) -> Result<Vec<f64>, JsError> {
    let s = Surface::parse(surface).map_err(|e| JsError::new(&e))?;
    Ok(surface_grid(s, resolution))
}

#[wasm_bindgen]
pub fn surface_half_width(surface: &str) -> Result<f64, JsError> {
    Surface::parse(surface).map(Surface::half_width).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn svm_boundary(
    points: &[f64],
    kernel: &str,
    c: f64,
    gamma: f64,
    coef0: f64,
    degree: u32,
    resolution: usize,
    lo: f64,
    hi: f64,
) -> Result<BoundaryFit, JsError> {
    fit_boundary(points, kernel, c, gamma, coef0, degree, resolution, lo, hi).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn kernel_profile(
    kernel: &str,
    gamma: f64,
    coef0: f64,
    degree: u32,
    reach: f64,
    samples: usize,
) -> Result<Vec<f64>, JsError> {
    kernel_profile_rows(kernel, gamma, coef0, degree, reach, samples).map_err(|e| JsError::new(&e))
}
