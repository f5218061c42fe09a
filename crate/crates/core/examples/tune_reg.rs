use funcvi::fvi::{predict, train, Prediction, TrainConfig};
use funcvi::tasks::{evaluate, median, TaskSetup};
use funcvi::toytasks::{regression1d_input, regression1d_noise_std};
use std::time::Instant;

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, i) in idx.iter().enumerate() {
            r[*i] = pos as f64;
        }
        r
    };
    let ra = rank(a);
    let rb = rank(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma).powi(2);
        db += (rb[i] - mb).powi(2);
    }
    num / (da * db).sqrt()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let hidden: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(12);
    let batch: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8);
    let setup = TaskSetup {
        task: "regression1d".into(),
        n_train: 512,
        hidden,
        rank: 20,
        data_seed: 42,
        init_seed: 7,
        ..TaskSetup::default()
    };
    let data = setup.dataset().unwrap();
    let mut model = setup.build_model(setup.default_arch().unwrap(), 1e-3).unwrap();
    let clip: Option<f64> = args.get(5).map(|s| s.parse().unwrap());
    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        lr,
        mc_samples: 10,
        seed: 3,
        grad_clip: clip,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let log = train(&mut model, &data.train_x, &data.train_y, &cfg).unwrap();
    let train_time = t0.elapsed();
    let first = &log.rows[0];
    let last = &log.rows[log.rows.len() - 1];
    println!(
        "train {train_time:?}; obj {:.1} -> {:.1}; kl {:.2} -> {:.2}",
        first.objective, last.objective, first.kl, last.kl
    );
    let report = evaluate(&model, &data, &cfg).unwrap();
    for (k, v) in &report.metrics {
        println!("  {k} = {v:.4}");
    }
    // criterion 7b: epistemic at OOD vs train
    let epi_at = |xs: &[funcvi::tensor::Tensor3]| -> Vec<f64> {
        xs.iter()
            .map(|x| match predict(&model, x, 8, 0).unwrap() {
                Prediction::Regression(m) => {
                    m.iter().map(|mm| mm.epistemic_var).sum::<f64>() / m.len() as f64
                }
                _ => unreachable!(),
            })
            .collect()
    };
    let epi_train = epi_at(&data.train_x);
    let epi_ood = epi_at(&data.ood_x);
    println!(
        "  epistemic: train median {:.5}, ood median {:.5}, ratio {:.2}",
        median(&epi_train),
        median(&epi_ood),
        median(&epi_ood) / median(&epi_train)
    );
    // criterion 7c: sigma(x) vs true noise on a grid
    let grid: Vec<f64> = (0..41).map(|i| -3.0 + 6.0 * i as f64 / 40.0).collect();
    let sig: Vec<f64> = grid
        .iter()
        .map(|x| match predict(&model, &regression1d_input(*x), 8, 0).unwrap() {
            Prediction::Regression(m) => {
                m.iter().map(|mm| mm.aleatoric_var.sqrt()).sum::<f64>() / m.len() as f64
            }
            _ => unreachable!(),
        })
        .collect();
    let truth: Vec<f64> = grid.iter().map(|x| regression1d_noise_std(*x)).collect();
    println!("  spearman(sigma, true) = {:.3}", spearman(&sig, &truth));
    println!(
        "  sigma at x=0: {:.3} (true 0.05); at x=3: {:.3} (true 0.5)",
        sig[20], sig[40]
    );
}
