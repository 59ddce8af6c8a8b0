//! Trains on a small synthetic dataset with every loss switched on, saves a
//! checkpoint and reloads it.

use instract::synthgen::{build_dataset, SynthConfig};
use instract::trainer::{Checkpoint, Model, OptimizerKind, TrainConfig, Trainer};

fn main() -> instract::Result<()> {
    let data = build_dataset(&SynthConfig { train_clips: 300, eval_clips: 60, ..SynthConfig::default() }, 5)?;
    let cfg = TrainConfig {
        steps: 200,
        optimizer: OptimizerKind::Adam,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, &data)?;
    println!("{:>5} {:>8} {:>8} {:>8} {:>8} {:>8}", "step", "vtc", "distill", "dtw", "mam", "total");
    for _ in 0..trainer.config.steps {
        let r = trainer.train_step()?;
        if r.step % 40 == 0 || r.step + 1 == trainer.config.steps {
            println!("{:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", r.step, r.l_vtc, r.l_distill, r.l_dtw, r.l_mam, r.total);
        }
    }

    let dir = std::env::temp_dir().join(format!("instract-train-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    trainer.checkpoint().save(&path)?;
    let back = Model::from_checkpoint(&Checkpoint::load(&path)?)?;
    let same = back.action_tokens(&data.frames(0))? == trainer.model.action_tokens(&data.frames(0))?;
    println!("saved {} ({} bytes), reload identical: {same}", path.display(), std::fs::metadata(&path)?.len());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
