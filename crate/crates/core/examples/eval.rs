//! Trains a verb-negative model briefly, then scores it on all three
//! benchmark tasks next to the frame-mean baseline, and compares alignment
//! costs of action tokens and raw frames.

use instract::bench::{alignment_costs, evaluate, FrameMeanScorer, ModelScorer, Scorer, Task};
use instract::curation::NegativeKind;
use instract::synthgen::{build_dataset, SynthConfig};
use instract::trainer::{OptimizerKind, TrainConfig, Trainer};

fn main() -> instract::Result<()> {
    let data = build_dataset(&SynthConfig { train_clips: 600, eval_clips: 120, ..SynthConfig::default() }, 2)?;
    let cfg = TrainConfig {
        steps: 300,
        optimizer: OptimizerKind::Adam,
        learning_rate: 3e-3,
        hn_kinds: vec![NegativeKind::VerbAltered],
        hn_per_kind: 8,
        lambda_distill: 0.0,
        lambda_mam: 0.0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, &data)?;
    trainer.fit(None, None)?;
    let model = &trainer.model;

    let scorers: [(&str, &dyn Scorer); 2] = [
        ("model", &ModelScorer { model, temperature: trainer.config.temperature }),
        ("frame-mean", &FrameMeanScorer { model }),
    ];
    println!("{:<11} {:<9} {:>5} {:>6} {:>6} {:>6} {:>6}", "scorer", "task", "n", "R@1", "R@5", "MR", "ACC");
    for (name, scorer) in scorers {
        for task in [Task::Semantic, Task::Logic, Task::Dynamics] {
            let r = evaluate(task, scorer, &data)?;
            let m = &r.metrics;
            println!(
                "{name:<11} {:<9} {:>5} {:>6.1} {:>6.1} {:>6.1} {:>6.1}",
                format!("{task:?}").to_lowercase(),
                m.n,
                m.r1,
                m.r5,
                m.mr_median,
                m.acc
            );
        }
    }

    let costs = alignment_costs(model, &data, 3)?;
    let wins = costs.iter().filter(|c| c.tokens < c.raw).count();
    let mean = |f: fn(&instract::bench::AlignmentCost) -> f64| costs.iter().map(f).sum::<f64>() / costs.len() as f64;
    println!(
        "\nnormalized DTW cost on {} clips with 3+ steps: tokens {:.3}, raw frames {:.3}; tokens lower on {wins}",
        costs.len(),
        mean(|c| c.tokens),
        mean(|c| c.raw)
    );
    Ok(())
}
