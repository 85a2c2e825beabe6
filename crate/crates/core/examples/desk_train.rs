//! Trains the desk model on the synthetic moving-square scene and prints scores.
//!
//! `cargo run --release -p bgseg --example desk_train -- [seed]`

use std::time::Instant;

use bgseg::data::cdnet::split_samples;
use bgseg::data::{synth_sequence, Normalization, SyntheticSceneSpec};
use bgseg::pipeline::{
    overall_f_measure, reconstruction_mse, run_training_schedule, ModelConfig, TrainingConfig, TrainingEvent,
    TwoStageModel,
};

fn main() -> bgseg::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let frames = synth_sequence(&SyntheticSceneSpec::moving_square(seed))?;
    let (train, test) = split_samples(&frames)?;
    let mut config = TrainingConfig { seed, ..TrainingConfig::desk() };
    for (k, step) in config.steps.iter_mut().enumerate() {
        if let Ok(v) = std::env::var(format!("LR{}", k + 1)) {
            step.learning_rate = v.parse().expect("learning rate");
        }
        if let Ok(v) = std::env::var(format!("IT{}", k + 1)) {
            step.iterations = v.parse().expect("iterations");
        }
    }
    let norm = Normalization::from_samples(&train)?;
    let mut model = TwoStageModel::initialized(ModelConfig::desk(), norm, config.init, seed)?;
    let start = Instant::now();
    let history = run_training_schedule(&mut model, &config, &train, |e| {
        match e {
            TrainingEvent::Iteration(r) if r.iteration % 100 == 0 || r.iteration <= 10 => println!(
                "step {} it {:5} rec {:?} seg {:?} joint {:.5} ({:.1}s)",
                r.step,
                r.iteration,
                r.l_rec,
                r.l_seg,
                r.joint,
                start.elapsed().as_secs_f64()
            ),
            TrainingEvent::StepFinished { step, .. } => println!("step {step} done"),
            _ => {}
        }
        Ok(())
    })?;
    println!("iterations: {}", history.len());
    println!("train F {:.4}", overall_f_measure(&model, &train)?);
    println!("test  F {:.4}", overall_f_measure(&model, &test)?);
    println!("train MSE {:.2e}", reconstruction_mse(&model, &train)?);
    println!("test  MSE {:.2e}", reconstruction_mse(&model, &test)?);
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
