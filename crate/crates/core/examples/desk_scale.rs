//! Synthetic corpus through embedding, tuned and untuned runs.
//!
//! cargo run --release -p easytune --example desk_scale

use std::path::Path;
use std::time::Instant;

use easytune::runner::{self, Baseline, ExperimentConfig};

fn main() -> easytune::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let mut cfg = ExperimentConfig::load(&path)?;
    cfg.output_dir = std::env::temp_dir().join("easytune-desk-scale");

    let start = Instant::now();
    let dataset = runner::prepare(&cfg)?;
    println!("{}", dataset.summary());
    println!("prepared in {:.1}s", start.elapsed().as_secs_f64());

    let tuned = runner::run_tuned(&cfg, &dataset)?;
    let untuned = runner::run_untuned(&cfg, &dataset)?;
    for (t, u) in tuned.records.iter().zip(&untuned.records) {
        println!(
            "fold {}: tuned {:.4} ({} C={:.2} gamma={:.4} coef0={:.3})  untuned {:.4}",
            t.fold, t.test.f1, t.params.kernel, t.params.c, t.params.gamma, t.params.coef0, u.test.f1
        );
    }
    println!("aggregate: tuned {:.4}  untuned {:.4}", tuned.aggregate.f1, untuned.aggregate.f1);
    let cmp = runner::compare(&tuned, Baseline::Run(&untuned))?;
    println!("{}", cmp.to_text());
    println!(
        "tuned {:.1}s, untuned {:.1}s, total {:.1}s",
        tuned.timing.total_seconds,
        untuned.timing.total_seconds,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
