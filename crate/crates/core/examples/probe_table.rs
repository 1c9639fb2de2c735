// Dev probe: several scenarios on selected speakers, one corpus seed.
use std::time::Instant;

use wavdann::corpus::split::SplitOptions;
use wavdann::corpus::synth::{synth_corpus, SynthGeometry};
use wavdann::experiment::{run_scenario, RunOptions, TableScenario, TrainConfig};
use wavdann::model::ModelConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let speakers: Vec<String> = args
        .get(1)
        .map(|s| s.split(',').map(|x| x.to_string()).collect())
        .unwrap_or_else(|| vec!["D06".to_string()]);
    let labels: Vec<String> = args
        .get(2)
        .map(|s| s.split(',').map(|x| x.to_string()).collect())
        .unwrap_or_else(|| vec!["si".to_string(), "dann-sup".to_string()]);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1u64);

    let corpus = synth_corpus(&SynthGeometry::default(), seed).unwrap();
    let model_cfg = ModelConfig::desk_scale();
    let train_cfg = TrainConfig { seed, ..TrainConfig::default() };

    for speaker in &speakers {
        for label in &labels {
            let scenario = TableScenario::parse_label(label).expect("scenario label");
            let t = Instant::now();
            let opts = RunOptions {
                split: SplitOptions { test_on_all_batches: label == "si-all" },
                ..Default::default()
            };
            let run = run_scenario(&corpus, scenario, speaker, &model_cfg, &train_cfg, &opts).unwrap();
            println!(
                "{speaker} {label:<10} mean {:6.2}  rot {:?}  epochs {:?}  ({:.1}s)",
                run.mean_wrr(),
                run.per_rotation_wrr().iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
                run.rotations.iter().map(|r| r.history.len()).collect::<Vec<_>>(),
                t.elapsed().as_secs_f64()
            );
        }
    }
}
