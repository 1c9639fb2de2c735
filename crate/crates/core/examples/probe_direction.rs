// Dev probe: per-speaker SI vs DANN-unsup on the desk corpus, with timing.
use std::time::Instant;

use wavdann::corpus::split::{ScenarioKind, SplitOptions};
use wavdann::corpus::synth::{synth_corpus, SynthGeometry};
use wavdann::experiment::{run_scenario, RunOptions, TableScenario, TrainConfig};
use wavdann::model::ModelConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let speakers: Vec<String> = if args.len() > 1 {
        args[1].split(',').map(|s| s.to_string()).collect()
    } else {
        vec!["D06".to_string(), "D10".to_string()]
    };
    let corpus_seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1u64);

    let geom = SynthGeometry::default();
    let t0 = Instant::now();
    let corpus = synth_corpus(&geom, corpus_seed).unwrap();
    println!("corpus generated in {:.2}s", t0.elapsed().as_secs_f64());

    let model_cfg = ModelConfig::desk_scale();
    let train_cfg = TrainConfig { seed: corpus_seed, ..TrainConfig::default() };

    for speaker in &speakers {
        let t = Instant::now();
        let si = run_scenario(
            &corpus,
            TableScenario { kind: ScenarioKind::Si, supervised: false },
            speaker,
            &model_cfg,
            &train_cfg,
            &RunOptions {
                split: SplitOptions { test_on_all_batches: true },
                ..Default::default()
            },
        )
        .unwrap();
        let si_time = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let dann = run_scenario(
            &corpus,
            TableScenario { kind: ScenarioKind::Dann, supervised: false },
            speaker,
            &model_cfg,
            &train_cfg,
            &RunOptions::default(),
        )
        .unwrap();
        let dann_time = t.elapsed().as_secs_f64();

        println!(
            "{speaker}: SI {:+6.2} (rot {:?}, epochs {:?}, {:.1}s)  DANN-unsup {:+6.2} (rot {:?}, epochs {:?}, {:.1}s)",
            si.mean_wrr(),
            si.per_rotation_wrr().iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
            si.rotations.iter().map(|r| r.history.len()).collect::<Vec<_>>(),
            si_time,
            dann.mean_wrr(),
            dann.per_rotation_wrr().iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
            dann.rotations.iter().map(|r| r.history.len()).collect::<Vec<_>>(),
            dann_time,
        );
    }
}
