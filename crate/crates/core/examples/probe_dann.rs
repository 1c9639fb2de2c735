// Dev probe: adversarial training dynamics at various lambda / lr.
use wavdann::corpus::split::{scenario_split, ScenarioKind, ScenarioSpec, SplitOptions};
use wavdann::corpus::synth::{synth_corpus, SynthGeometry};
use wavdann::experiment::{train_dann, TrainConfig};
use wavdann::model::{build_dann, ModelConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let hidden: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32);
    let optimizer = match args.get(4).map(|s| s.as_str()) {
        Some("sgd") => wavdann::experiment::Optimizer::Sgd,
        _ => wavdann::experiment::Optimizer::Adam,
    };

    let corpus = synth_corpus(&SynthGeometry::default(), 1).unwrap();
    let mut model_cfg = ModelConfig::desk_scale();
    model_cfg.hidden_dim = hidden;
    let cfg = TrainConfig { seed: 1, learning_rate: lr, epochs: 30, patience: 30, optimizer, ..TrainConfig::default() };

    let spec = ScenarioSpec {
        kind: ScenarioKind::Dann,
        supervised_target: false,
        test_speaker: "D06".to_string(),
        rotation: 1,
    };
    let split = scenario_split(&corpus, &spec, &SplitOptions::default()).unwrap();
    let mut model = build_dann(&model_cfg, lambda, false, cfg.seed).unwrap();
    let outcome = train_dann(
        &mut model,
        &split.train_source,
        &split.train_target,
        &split.validation,
        &corpus,
        &cfg,
    )
    .unwrap();
    println!("lambda {lambda}, lr {lr}, hidden {hidden}");
    for e in &outcome.history {
        println!(
            "epoch {:2}: E {:+.4}  L_ys {:.4}  L_ds {:.4}  L_dt {:.4}  val {:.2}",
            e.epoch,
            e.train_loss,
            e.label_source,
            e.domain_source.unwrap(),
            e.domain_target.unwrap(),
            e.val_wrr
        );
    }
}
