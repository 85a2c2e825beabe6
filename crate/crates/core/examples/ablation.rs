//! Compares the 6-channel segmenter with the single-image baseline on camouflaged
//! sprites, reporting held-out F for each seed.
//!
//! `cargo run --release -p bgseg --example ablation -- [seeds]`

use std::time::Instant;

use bgseg::data::cdnet::split_samples;
use bgseg::data::{synth_sequence, Normalization, SyntheticSceneSpec};
use bgseg::pipeline::{overall_f_measure, reconstruction_mse, run_training_schedule, ModelConfig, TrainingConfig, TwoStageModel};

fn main() -> bgseg::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let start = Instant::now();
    let mut wins = 0;
    for seed in 0..seeds {
        let frames = synth_sequence(&SyntheticSceneSpec::camouflage(seed))?;
        let (train, test) = split_samples(&frames)?;
        let norm = Normalization::from_samples(&train)?;
        let config = TrainingConfig { seed, ..TrainingConfig::desk() };

        let mut six = TwoStageModel::initialized(ModelConfig::desk(), norm, config.init, seed)?;
        run_training_schedule(&mut six, &config, &train, |_| Ok(()))?;

        let mut single = config.clone();
        single.steps[0].iterations = 0;
        single.steps[2].iterations = 0;
        let mut three = TwoStageModel::initialized(ModelConfig::desk().single_image(), norm, config.init, seed)?;
        run_training_schedule(&mut three, &single, &train, |_| Ok(()))?;

        println!(
            "  recon mse train {:.2e} test {:.2e}",
            reconstruction_mse(&six, &train)?,
            reconstruction_mse(&six, &test)?
        );
        let f6 = overall_f_measure(&six, &test)?;
        let f3 = overall_f_measure(&three, &test)?;
        wins += (f6 > f3) as usize;
        println!(
            "seed {seed}: 6ch {f6:.4} (train {:.4})  3ch {f3:.4} (train {:.4})  {:.0}s",
            overall_f_measure(&six, &train)?,
            overall_f_measure(&three, &train)?,
            start.elapsed().as_secs_f64()
        );
    }
    println!("6-channel wins {wins}/{seeds}");
    Ok(())
}
