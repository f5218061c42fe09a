use funcvi::fvi::{predict, train, LikelihoodKind, Prediction, TrainConfig};
use funcvi::tasks::{evaluate, median, TaskSetup};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(40);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-4);
    let hidden: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);
    let rank: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(12);
    let n_train: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(160);
    let clip: Option<f64> = args.get(6).map(|s| s.parse().unwrap());
    let setup = TaskSetup {
        task: "miniseg".into(),
        n_train,
        hidden,
        rank,
        prior_mean: 1.0,
        data_seed: 42,
        init_seed: 7,
        ..TaskSetup::default()
    };
    let data = setup.dataset().unwrap();
    let mut model = setup
        .build_model(setup.default_arch().unwrap(), 1e-3)
        .unwrap();
    let cfg = TrainConfig {
        epochs,
        batch_size: 3,
        lr,
        mc_samples: 8,
        cls_samples: 32,
        likelihood: LikelihoodKind::Boltzmann,
        grad_clip: clip,
        seed: 3,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let log = train(&mut model, &data.train_x, &data.train_y, &cfg).unwrap();
    println!(
        "train {:?}; obj {:.1} -> {:.1}; kl {:.2} -> {:.2}",
        t0.elapsed(),
        log.rows[0].objective,
        log.rows.last().unwrap().objective,
        log.rows[0].kl,
        log.rows.last().unwrap().kl
    );
    let report = evaluate(&model, &data, &cfg).unwrap();
    for (k, v) in &report.metrics {
        println!("  {k} = {v:.4}");
    }
    // entropy on corrupted vs clean pixels of the test split
    let masks = data.test_noisy.as_ref().unwrap();
    let mut corrupted = Vec::new();
    let mut clean = Vec::new();
    for (i, x) in data.test_x.iter().enumerate() {
        let Prediction::Classification { entropy, .. } =
            predict(&model, x, cfg.cls_samples, cfg.seed.wrapping_add(i as u64)).unwrap()
        else {
            unreachable!()
        };
        let labels = match &data.test_y[i] {
            funcvi::fvi::Target::Labels(l) => l,
            _ => unreachable!(),
        };
        for (px, e) in entropy.iter().enumerate() {
            if labels[px].is_none() {
                continue;
            }
            if masks[i][px] {
                corrupted.push(*e);
            } else {
                clean.push(*e);
            }
        }
    }
    println!(
        "  entropy: corrupted median {:.4} ({} px), clean median {:.4} ({} px)",
        median(&corrupted),
        corrupted.len(),
        median(&clean),
        clean.len()
    );
}
