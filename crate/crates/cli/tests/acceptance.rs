//! Acceptance criteria, one line per criterion. Runs without the libtest
//! harness so the lines always show; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use easytune::despace::{self, Candidate, DeConfig, ParamDef, ParamSpace};
use easytune::embedkit;
use easytune::metrics::{ClassScores, MetricsReport};
use easytune::runner::{self, ExperimentConfig, Metric, PublishedScores};
use easytune::statlab::{self, Magnitude, WilcoxonMethod};
use easytune::svmcore::{self, KernelKind, SmoConfig, SvmParams};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    budget_seconds: f64,
    check: fn() -> Verdict,
}

fn main() {
    let criteria = [
        Criterion { id: "1", name: "metric oracle", budget_seconds: 1.0, check: metric_oracle },
        Criterion { id: "2", name: "DE correctness", budget_seconds: 5.0, check: de_correctness },
        Criterion { id: "3", name: "DE vs grid", budget_seconds: 10.0, check: de_versus_grid },
        Criterion { id: "4", name: "SVM correctness", budget_seconds: 30.0, check: svm_correctness },
        Criterion { id: "5", name: "skip-gram gradient", budget_seconds: 5.0, check: skipgram_gradient },
        Criterion { id: "6", name: "statistics oracles", budget_seconds: 10.0, check: statistics_oracles },
        Criterion { id: "7", name: "desk-scale pipeline", budget_seconds: 600.0, check: desk_scale },
        Criterion { id: "8", name: "CLI determinism", budget_seconds: f64::INFINITY, check: cli_determinism },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == c.id) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let verdict = match verdict {
            Ok(d) if secs > c.budget_seconds => Err(format!("{d}; over the {}s budget", c.budget_seconds)),
            v => v,
        };
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {} {tag} {}: {detail} [{secs:.2}s]", c.id, c.name);
        failed += verdict.is_err() as usize;
    }
    if filter.is_empty() || filter.iter().any(|f| f == "9") {
        println!("criterion 9 SKIP full-data reproduction: optional, needs the published benchmark and a dump-trained embedding");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// 1 ------------------------------------------------------------------------

fn macro_row(scores: &PublishedScores, metric: Metric) -> f64 {
    let classes = ["duplicate", "direct", "indirect", "isolated"];
    let per_class: Vec<ClassScores> = classes
        .iter()
        .map(|c| {
            let v = scores.get(metric, c).expect("transcribed cell");
            match metric {
                Metric::Precision => ClassScores { precision: v, ..Default::default() },
                Metric::Recall => ClassScores { recall: v, ..Default::default() },
                _ => ClassScores { f1: v, ..Default::default() },
            }
        })
        .collect();
    let report = MetricsReport::from_class_scores(per_class, 0.0);
    metric.value(&report, None)
}

fn metric_oracle() -> Verdict {
    let xu = PublishedScores::bundled("xu-svm").map_err(|e| e.to_string())?;
    let tuned = PublishedScores::bundled("tuned-svm").map_err(|e| e.to_string())?;
    let recall = macro_row(&xu, Metric::Recall);
    let precision = macro_row(&xu, Metric::Precision);
    let tuned_precision = macro_row(&tuned, Metric::Precision);
    let ok = (recall - 0.669).abs() < 1e-12
        && (precision - 0.658).abs() <= 0.002
        && (precision - 0.659).abs() <= 0.002
        && (tuned_precision - 0.896).abs() <= 0.001;
    ensure(
        ok,
        format!("xu recall {recall:.6} (0.669), xu precision {precision:.6} (0.658/0.659 ± 0.002), tuned precision {tuned_precision:.6} (0.896 ± 0.001)"),
    )
}

// 2 ------------------------------------------------------------------------

fn de_correctness() -> Verdict {
    let quadratic = ParamSpace::new(vec![ParamDef::continuous("C", 1.0, 50.0, 1.0).unwrap()]).unwrap();
    let mut hits = 0;
    for seed in 0..20 {
        let cfg = DeConfig { population_factor: 20, max_generations: 10, seed, ..DeConfig::default() };
        let mut f = |c: &Candidate| -> easytune::Result<f64> { Ok(-(c.real(0) - 25.0).powi(2)) };
        let best = despace::tune(&quadratic, &mut f, &cfg).map_err(|e| e.to_string())?.best;
        hits += ((best.real(0) - 25.0).abs() <= 0.5) as usize;
    }

    let kernels = ["linear", "poly", "rbf", "sigmoid"];
    let mixed = ParamSpace::new(vec![
        ParamDef::categorical("kernel", &kernels, "linear").unwrap(),
        ParamDef::continuous("C", 1.0, 50.0, 1.0).unwrap(),
    ])
    .unwrap();
    let rbf = kernels.iter().position(|k| *k == "rbf").unwrap();
    let mut rbf_hits = 0;
    for seed in 0..20 {
        let cfg = DeConfig { population_factor: 10, max_generations: 10, seed, ..DeConfig::default() };
        let mut f = |c: &Candidate| -> easytune::Result<f64> {
            Ok(if c.choice(0) == rbf { 1.0 } else { 0.0 } - (c.real(1) - 25.0).powi(2) / 625.0)
        };
        let best = despace::tune(&mixed, &mut f, &cfg).map_err(|e| e.to_string())?.best;
        rbf_hits += (best.choice(0) == rbf) as usize;
    }
    ensure(
        hits >= 19 && rbf_hits == 20,
        format!("quadratic C within 25 ± 0.5 in {hits}/20 seeds (need 19), rbf chosen in {rbf_hits}/20 (need 20)"),
    )
}

// 3 ------------------------------------------------------------------------

type Surface = fn(f64, f64, (f64, f64)) -> f64;

fn bowl(x: f64, y: f64, (a, b): (f64, f64)) -> f64 {
    -((x - a).powi(2) + (y - b).powi(2))
}

fn himmelblau(x: f64, y: f64, (a, b): (f64, f64)) -> f64 {
    let (u, v) = (x - a, y - b);
    -((u * u + v - 11.0).powi(2) + (u + v * v - 7.0).powi(2))
}

/// Fraction of seeded trials in which DE matches or beats a grid search
/// that gets the largest square grid within DE's evaluation count.
fn de_win_rate(surface: Surface, half_width: f64, shift: f64) -> (usize, usize) {
    let space = ParamSpace::new(vec![
        ParamDef::continuous("x", -half_width, half_width, 0.0).unwrap(),
        ParamDef::continuous("y", -half_width, half_width, 0.0).unwrap(),
    ])
    .unwrap();
    let mut wins = 0;
    let mut budget = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let offset = (rng.gen_range(-shift..shift), rng.gen_range(-shift..shift));
        let mut f = |c: &Candidate| -> easytune::Result<f64> { Ok(surface(c.real(0), c.real(1), offset)) };
        let de = despace::tune(&space, &mut f, &DeConfig { seed, ..DeConfig::default() }).unwrap();
        let points = (de.evaluations as f64).sqrt().floor() as usize;
        let grid = despace::grid_search(&space, &mut f, points).unwrap();
        assert!(grid.evaluations <= de.evaluations);
        budget = budget.max(de.evaluations);
        wins += (de.best.score >= grid.best.score) as usize;
    }
    (wins, budget)
}

fn de_versus_grid() -> Verdict {
    let (bowl_wins, b1) = de_win_rate(bowl, 5.0, 5.0);
    let (multi_wins, b2) = de_win_rate(himmelblau, 6.0, 1.0);
    ensure(
        bowl_wins >= 16 && multi_wins >= 16,
        format!("DE >= grid in {bowl_wins}/20 quadratic and {multi_wins}/20 Himmelblau trials (need 16), budgets up to {}", b1.max(b2)),
    )
}

// 4 ------------------------------------------------------------------------

fn q_matrix(x: &Array2<f64>, y: &[i8], params: &SvmParams) -> Vec<Vec<f64>> {
    let n = y.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let k = svmcore::kernel_eval(params, x.row(i), x.row(j)).unwrap();
                    (y[i] * y[j]) as f64 * k
                })
                .collect()
        })
        .collect()
}

fn dual_objective(q: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let quad: f64 = (0..n).map(|i| (0..n).map(|j| alpha[i] * q[i][j] * alpha[j]).sum::<f64>()).sum();
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto `{0 <= a <= c, yᵀa = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[i8], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, &yi)| (vi - lambda * yi as f64).clamp(0.0, c)).collect() };
    let balance = |a: &[f64]| -> f64 { a.iter().zip(y).map(|(ai, &yi)| ai * yi as f64).sum() };
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Accelerated projected gradient on the dual.
fn qp_oracle(q: &[Vec<f64>], y: &[i8], c: f64) -> Vec<f64> {
    let n = y.len();
    // power iteration for the step size
    let mut v = vec![1.0; n];
    let mut lip = 1.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[i][j] * v[j]).sum()).collect();
        lip = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v = w.iter().map(|x| x / lip).collect();
    }
    let step = 1.0 / (lip * 1.01);
    let mut alpha = vec![0.0; n];
    let mut momentum = alpha.clone();
    let mut t = 1.0f64;
    for _ in 0..50_000 {
        let grad: Vec<f64> = (0..n).map(|i| 1.0 - (0..n).map(|j| q[i][j] * momentum[j]).sum::<f64>()).collect();
        let ascent: Vec<f64> = (0..n).map(|i| momentum[i] + step * grad[i]).collect();
        let next = project(&ascent, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        momentum = (0..n).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - alpha[i])).collect();
        alpha = next;
        t = t_next;
    }
    alpha
}

/// Largest violation of the pairwise optimality condition, from scratch.
fn kkt_violation(q: &[Vec<f64>], y: &[i8], alpha: &[f64], c: f64) -> f64 {
    let n = y.len();
    let mut up = f64::NEG_INFINITY;
    let mut low = f64::NEG_INFINITY;
    for i in 0..n {
        let g = (0..n).map(|j| q[i][j] * alpha[j]).sum::<f64>() - 1.0;
        let yi = y[i] as f64;
        let can_rise = if y[i] == 1 { alpha[i] < c } else { alpha[i] > 0.0 };
        let can_fall = if y[i] == 1 { alpha[i] > 0.0 } else { alpha[i] < c };
        if can_rise {
            up = up.max(-yi * g);
        }
        if can_fall {
            low = low.max(yi * g);
        }
    }
    up + low
}

fn svm_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let kernels = [KernelKind::Linear, KernelKind::Rbf, KernelKind::Poly];
    let mut worst_rel: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for instance in 0..25 {
        let x = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-2.0..2.0));
        let mut y: Vec<i8> = (0..8).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
        y[0] = 1;
        y[1] = -1;
        let params = SvmParams {
            c: rng.gen_range(0.1..10.0),
            kernel: kernels[instance % kernels.len()],
            gamma: rng.gen_range(0.1..1.0),
            coef0: rng.gen_range(0.0..1.0),
            degree: 3,
        };
        let sol = svmcore::solve_dual(x.view(), &y, &params, &SmoConfig::default()).map_err(|e| e.to_string())?;
        if !sol.converged {
            return Err(format!("instance {instance} did not converge"));
        }
        let q = q_matrix(&x, &y, &params);
        let reference = dual_objective(&q, &qp_oracle(&q, &y, params.c));
        let ours = dual_objective(&q, &sol.alpha);
        worst_rel = worst_rel.max((ours - reference).abs() / reference.abs().max(1e-12));
        worst_kkt = worst_kkt.max(kkt_violation(&q, &y, &sol.alpha, params.c));
    }

    // XOR corners with jitter
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (cx, cy, l) in [(1.0, 1.0, 1i8), (-1.0, -1.0, 1), (1.0, -1.0, -1), (-1.0, 1.0, -1)] {
        for _ in 0..10 {
            points.push([cx + rng.gen_range(-0.2..0.2), cy + rng.gen_range(-0.2..0.2)]);
            labels.push(l);
        }
    }
    let x = Array2::from_shape_fn((points.len(), 2), |(i, j)| points[i][j]);
    let params = SvmParams { c: 10.0, kernel: KernelKind::Rbf, gamma: 1.0, coef0: 0.0, degree: 3 };
    let model = svmcore::train_binary(x.view(), &labels, &params, &SmoConfig::default()).map_err(|e| e.to_string())?;
    let correct = x
        .outer_iter()
        .zip(&labels)
        .filter(|(row, &l)| (model.decision(*row) > 0.0) == (l == 1))
        .count();
    ensure(
        worst_rel < 1e-3 && worst_kkt < 1e-3 && correct == labels.len(),
        format!(
            "worst relative objective gap {worst_rel:.2e} (< 1e-3), worst KKT violation {worst_kkt:.2e} (< 1e-3), XOR training accuracy {correct}/{}",
            labels.len()
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn ns_loss(center: &[f64], outputs: &[Vec<f64>]) -> f64 {
    let negatives: Vec<&[f64]> = outputs[1..].iter().map(Vec::as_slice).collect();
    let mut gc = vec![0.0; center.len()];
    let mut go = vec![0.0; outputs.len() * center.len()];
    embedkit::ns_loss_grad(center, &outputs[0], &negatives, &mut gc, &mut go)
}

fn skipgram_gradient() -> Verdict {
    const VOCAB: usize = 5;
    const DIM: usize = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let inputs: Vec<Vec<f64>> = (0..VOCAB).map(|_| (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let output_table: Vec<Vec<f64>> = (0..VOCAB).map(|_| (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        // center, context, then the three remaining words as noise
        let mut order: Vec<usize> = (0..VOCAB).collect();
        order.shuffle(&mut rng);
        let center = inputs[order[0]].clone();
        let outputs: Vec<Vec<f64>> = order[1..].iter().map(|&w| output_table[w].clone()).collect();

        let negatives: Vec<&[f64]> = outputs[1..].iter().map(Vec::as_slice).collect();
        let mut grad_center = vec![0.0; DIM];
        let mut grad_outputs = vec![0.0; outputs.len() * DIM];
        embedkit::ns_loss_grad(&center, &outputs[0], &negatives, &mut grad_center, &mut grad_outputs);
        let analytic: Vec<f64> = grad_center.iter().chain(&grad_outputs).copied().collect();

        let mut numeric = Vec::with_capacity(analytic.len());
        for d in 0..DIM {
            let (mut plus, mut minus) = (center.clone(), center.clone());
            plus[d] += h;
            minus[d] -= h;
            numeric.push((ns_loss(&plus, &outputs) - ns_loss(&minus, &outputs)) / (2.0 * h));
        }
        for k in 0..outputs.len() {
            for d in 0..DIM {
                let (mut plus, mut minus) = (outputs.clone(), outputs.clone());
                plus[k][d] += h;
                minus[k][d] -= h;
                numeric.push((ns_loss(&center, &plus) - ns_loss(&center, &minus)) / (2.0 * h));
            }
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(diff / norm(&analytic).max(norm(&numeric)).max(1e-12));
    }
    ensure(worst < 1e-4, format!("worst relative gradient error {worst:.2e} over 100 draws (< 1e-4)"))
}

// 6 ------------------------------------------------------------------------

/// Two-sided exact p by walking every sign assignment, on doubled ranks so
/// ties stay integral.
fn wilcoxon_enumerated(x: &[f64], y: &[f64]) -> f64 {
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return 1.0;
    }
    let mut doubled = vec![0i64; n];
    for i in 0..n {
        let less = diffs.iter().filter(|d| d.abs() < diffs[i].abs()).count() as i64;
        let equal = diffs.iter().filter(|d| d.abs() == diffs[i].abs()).count() as i64;
        // average of ranks less+1 ..= less+equal, times two
        doubled[i] = 2 * less + equal + 1;
    }
    let total: i64 = doubled.iter().sum();
    let observed: i64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| doubled[i]).sum();
    let distance = |w: i64| (2 * w - total).abs();
    let mut extreme = 0u64;
    fn walk(k: usize, w: i64, doubled: &[i64], hit: &mut dyn FnMut(i64)) {
        if k == doubled.len() {
            hit(w);
            return;
        }
        walk(k + 1, w, doubled, hit);
        walk(k + 1, w + doubled[k], doubled, hit);
    }
    walk(0, 0, &doubled, &mut |w| {
        if distance(w) >= distance(observed) {
            extreme += 1;
        }
    });
    extreme as f64 / (1u64 << n) as f64
}

fn statistics_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fixtures = 0;
    for n in 1..=10 {
        for _ in 0..25 {
            // a coarse grid produces ties and zero differences
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.125).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.125).collect();
            let expected = wilcoxon_enumerated(&x, &y);
            for method in [WilcoxonMethod::Auto, WilcoxonMethod::Exact] {
                let got = statlab::wilcoxon_with(&x, &y, method).map_err(|e| e.to_string())?.p_value;
                if got != expected {
                    return Err(format!("wilcoxon {x:?} vs {y:?}: {got} != enumerated {expected}"));
                }
            }
            fixtures += 1;
        }
    }

    let bh = statlab::bh_adjust(&[0.01, 0.02, 0.03, 0.04]).map_err(|e| e.to_string())?;
    if bh.iter().any(|p| (p - 0.04).abs() > 1e-12) {
        return Err(format!("BH gave {bh:?}"));
    }

    for pair in 0..100 {
        let x: Vec<f64> = (0..rng.gen_range(1..40)).map(|_| rng.gen_range(0..15) as f64).collect();
        let y: Vec<f64> = (0..rng.gen_range(1..40)).map(|_| rng.gen_range(0..15) as f64).collect();
        let mut count = 0i64;
        for a in &x {
            for b in &y {
                count += (a > b) as i64 - (a < b) as i64;
            }
        }
        let brute = count as f64 / (x.len() * y.len()) as f64;
        let got = statlab::cliffs_delta(&x, &y).map_err(|e| e.to_string())?.delta;
        if (got - brute).abs() > 1e-12 {
            return Err(format!("cliff's delta pair {pair}: {got} != {brute}"));
        }
    }

    let bands = [
        (0.146_999, Magnitude::Negligible),
        (0.147, Magnitude::Small),
        (0.329_999, Magnitude::Small),
        (0.33, Magnitude::Medium),
        (0.473_999, Magnitude::Medium),
        (0.474, Magnitude::Large),
        (-0.474, Magnitude::Large),
        (-0.147, Magnitude::Small),
    ];
    for (d, m) in bands {
        if Magnitude::of(d) != m {
            return Err(format!("magnitude of {d} is {:?}, expected {m:?}", Magnitude::of(d)));
        }
    }
    Ok(format!("{fixtures} Wilcoxon fixtures match enumeration, BH -> 0.04 x4, 100 Cliff's delta pairs match, {} boundary bands", bands.len()))
}

// 7 ------------------------------------------------------------------------

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_scale() -> Verdict {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::load(&workspace_root().join("configs/desk.toml")).map_err(|e| e.to_string())?;
    cfg.output_dir = tmp.path().to_path_buf();
    let ingested = runner::ingest(&cfg).map_err(|e| e.to_string())?;
    let dataset = runner::prepare(&cfg).map_err(|e| e.to_string())?;
    let counts = dataset.counts();
    let (train, test) = (dataset.split(easytune::dataforge::Split::Train).len(), dataset.split(easytune::dataforge::Split::Test).len());
    let tuned = runner::run_tuned(&cfg, &dataset).map_err(|e| e.to_string())?;
    let untuned = runner::run_untuned(&cfg, &dataset).map_err(|e| e.to_string())?;
    let wall = start.elapsed().as_secs_f64();

    let worst_fold = tuned
        .records
        .iter()
        .zip(&untuned.records)
        .map(|(t, u)| t.test.f1 - u.test.f1)
        .fold(f64::INFINITY, f64::min);
    let gain = tuned.aggregate.f1 - untuned.aggregate.f1;
    ensure(
        train == 800 && test == 200 && cfg.folds == 5 && tuned.feature_dim == 16 && worst_fold >= -0.01 && gain >= 0.05 && wall < 600.0,
        format!(
            "{} documents, {train}/{test} pairs {counts:?}, dim {}, {} folds; macro-F1 tuned {:.4} vs untuned {:.4} (gain {gain:+.4}, need +0.05), worst fold {worst_fold:+.4} (need >= -0.01), wall {wall:.0}s",
            ingested.units.len(),
            tuned.feature_dim,
            tuned.records.len(),
            tuned.aggregate.f1,
            untuned.aggregate.f1,
        ),
    )
}

// 8 ------------------------------------------------------------------------

const SMALL_CONFIG: &str = r#"
seed = 7
folds = 3
output_dir = "out"

[data]
counts = [24, 24, 24, 24]

[data.synthetic]
areas = 4
topics_per_area = 3
units_per_topic = 20
duplicates_per_topic = 5

[embedding]
dim = 8
epochs = 2

[de]
population_factor = 4
max_generations = 2

[smo]
max_iter = 20000
"#;

fn snapshot(dir: &Path, files: &mut BTreeMap<String, Vec<u8>>, root: &Path) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            snapshot(&path, files, root);
        } else if !path.file_name().unwrap().to_string_lossy().starts_with("timing") {
            let rel = path.strip_prefix(root).unwrap().display().to_string();
            files.insert(rel, std::fs::read(&path).unwrap());
        }
    }
}

fn cli_session(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let out = dir.join("out");
    if out.exists() {
        std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    }
    let config = dir.join("small.toml");
    let c = config.to_str().unwrap();
    let steps: Vec<Vec<&str>> = vec![
        vec!["ingest", "-c", c],
        vec!["embed", "-c", c],
        vec!["tune", "-c", c],
        vec!["baseline", "-c", c],
        vec!["compare", "--a", "out/tuned", "--b", "out/untuned"],
        vec!["compare", "--a", "out/tuned", "--published", "xu-svm"],
        vec![
            "report",
            "--runs",
            "out/tuned",
            "out/untuned",
            "--comparisons",
            "out/comparisons/tuned_vs_untuned.json",
            "out/comparisons/tuned_vs_xu-svm.json",
            "--out",
            "out/report",
        ],
    ];
    let mut files = BTreeMap::new();
    for (k, args) in steps.iter().enumerate() {
        let result = Command::new(env!("CARGO_BIN_EXE_easytune"))
            .args(args)
            .current_dir(dir)
            .env_remove("RUST_LOG")
            .output()
            .map_err(|e| e.to_string())?;
        if !result.status.success() {
            return Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&result.stderr)));
        }
        files.insert(format!("stdout/{k}-{}", args[0]), result.stdout);
    }
    snapshot(&out, &mut files, dir);
    Ok(files)
}

fn cli_determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(tmp.path().join("small.toml"), SMALL_CONFIG).map_err(|e| e.to_string())?;
    let first = cli_session(tmp.path())?;
    let second = cli_session(tmp.path())?;
    let differing: Vec<&String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    let expected = ["out/data/pairs.jsonl", "out/embedding/model.txt", "out/tuned/run.json", "out/comparisons/tuned_vs_untuned.json"];
    let missing: Vec<&&str> = expected.iter().filter(|p| !first.contains_key(**p)).collect();
    ensure(
        differing.is_empty() && missing.is_empty(),
        format!(
            "{} outputs and captured stdouts compared across two runs of 7 subcommands; differing {differing:?}, missing {missing:?}",
            first.len()
        ),
    )
}
