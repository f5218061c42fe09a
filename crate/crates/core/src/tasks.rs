//! Task wiring: default architectures, models and evaluation for the shipped
//! toy tasks. Shared by the CLI and the acceptance suite.

use crate::cnngp::ArchSpec;
use crate::error::{FvError, Result};
use crate::fvi::{predict, FviModel, LikelihoodKind, Prediction, Target, TaskKind, TrainConfig};
use crate::gradnet::{LayerSpec, Net};
use crate::likelihood::PredictiveMoments;
use crate::metrics::{
    classification_calibration, regression_calibration, regression_errors, seg_scores,
    CalibrationCurve,
};
use crate::tensor::Tensor3;
use crate::toytasks::{
    gen_minidepth, gen_miniseg, gen_regression_1d, ToyDataset, REG1D_WIDTH, SEG_CLASSES, SEG_RES,
};
use crate::varfam::{HeadLayout, VarModel};

/// Everything needed to instantiate one named task.
#[derive(Clone, Debug)]
pub struct TaskSetup {
    pub task: String,
    pub n_train: usize,
    pub hidden: usize,
    pub rank: usize,
    pub prior_mean: f64,
    pub noise_var: f64,
    pub weight_var: f64,
    pub bias_var: f64,
    pub data_seed: u64,
    pub init_seed: u64,
}

impl Default for TaskSetup {
    fn default() -> Self {
        TaskSetup {
            task: "regression1d".into(),
            n_train: 128,
            hidden: 12,
            rank: 20,
            prior_mean: 0.5,
            noise_var: 0.1,
            weight_var: 0.2,
            bias_var: 0.08,
            data_seed: 1,
            init_seed: 1,
        }
    }
}

impl TaskSetup {
    pub fn input_shape(&self) -> Result<(usize, usize, usize)> {
        match self.task.as_str() {
            "regression1d" => Ok((1, 1, REG1D_WIDTH)),
            "minidepth" => Ok((1, SEG_RES, SEG_RES)),
            "miniseg" => Ok((1, SEG_RES, SEG_RES)),
            t => Err(FvError::Parse(format!("unknown task {t}"))),
        }
    }

    pub fn task_kind(&self) -> Result<TaskKind> {
        match self.task.as_str() {
            "regression1d" | "minidepth" => Ok(TaskKind::Regression),
            "miniseg" => Ok(TaskKind::Classification {
                classes: SEG_CLASSES,
            }),
            t => Err(FvError::Parse(format!("unknown task {t}"))),
        }
    }

    pub fn dataset(&self) -> Result<ToyDataset> {
        match self.task.as_str() {
            "regression1d" => gen_regression_1d(self.n_train, self.data_seed),
            "minidepth" => gen_minidepth(self.n_train, self.data_seed),
            "miniseg" => gen_miniseg(self.n_train, self.data_seed),
            t => Err(FvError::Parse(format!("unknown task {t}"))),
        }
    }

    /// Interpolation-stack prior at the task's resolution.
    pub fn default_arch(&self) -> Result<ArchSpec> {
        let (c, h, w) = self.input_shape()?;
        ArchSpec::interp_stack(
            c,
            h,
            w,
            h,
            w,
            self.weight_var,
            self.bias_var,
            self.prior_mean,
            self.noise_var,
        )
    }

    /// Stride-1 conv trunk ending in the (L+3)·C head block at the task
    /// resolution.
    pub fn build_model(&self, arch: ArchSpec, jitter: f64) -> Result<FviModel> {
        let (c_in, h, w) = self.input_shape()?;
        let kind = self.task_kind()?;
        let channels = match kind {
            TaskKind::Regression => 1,
            TaskKind::Classification { classes } => classes,
        };
        let layout = HeadLayout {
            res_h: h,
            res_w: w,
            channels,
            rank: self.rank,
        };
        let layers = vec![
            LayerSpec::Conv3 { cin: c_in, cout: self.hidden, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv3 { cin: self.hidden, cout: self.hidden, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv3 {
                cin: self.hidden,
                cout: layout.net_out_channels(),
                stride: 1,
            },
        ];
        let net = Net::new((c_in, h, w), layers, self.init_seed)?;
        let mut var = VarModel::new(net, layout, jitter, 1e-4)?;
        let sigma0 = match kind {
            TaskKind::Regression => 0.5,
            TaskKind::Classification { .. } => 1.0,
        };
        var.init_head_biases(0.1, sigma0)?;
        let likelihood = match kind {
            TaskKind::Regression => LikelihoodKind::Gaussian,
            TaskKind::Classification { .. } => LikelihoodKind::Boltzmann,
        };
        FviModel::new(var, arch, kind, likelihood)
    }
}

/// Evaluation artifacts for one trained model on one dataset.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub metrics: Vec<(String, f64)>,
    pub curve: CalibrationCurve,
    /// Per-pixel prediction dump in the per-task CSV schema.
    pub predictions_csv: String,
}

fn regression_predictions(
    model: &FviModel,
    xs: &[Tensor3],
    cls_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<PredictiveMoments>>> {
    let mut out = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        match predict(model, x, cls_samples, seed.wrapping_add(i as u64))? {
            Prediction::Regression(m) => out.push(m),
            _ => return Err(FvError::ShapeMismatch("expected regression predictions".into())),
        }
    }
    Ok(out)
}

/// Median of a sample (empty input yields NaN).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Evaluates a trained model on a dataset's test split. Scalar regression
/// pools the whole test set into one calibration group (the task has no image
/// structure); image tasks calibrate per image and average.
pub fn evaluate(
    model: &FviModel,
    data: &ToyDataset,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    match model.task {
        TaskKind::Regression => {
            let preds = regression_predictions(model, &data.test_x, cfg.cls_samples, cfg.seed)?;
            let truths: Vec<Vec<f64>> = data
                .test_y
                .iter()
                .map(|t| match t {
                    Target::Dense(v) => Ok(v.clone()),
                    _ => Err(FvError::ShapeMismatch("dense targets expected".into())),
                })
                .collect::<Result<_>>()?;
            let pooled = data.name == "regression1d";
            let (curve, score) = if pooled {
                let flat_p: Vec<PredictiveMoments> =
                    preds.iter().flat_map(|v| v.iter().cloned()).collect();
                let flat_t: Vec<f64> = truths.iter().flat_map(|v| v.iter().copied()).collect();
                regression_calibration(&[(&flat_p, &flat_t)])?
            } else {
                let groups: Vec<(&[PredictiveMoments], &[f64])> = preds
                    .iter()
                    .zip(&truths)
                    .map(|(p, t)| (p.as_slice(), t.as_slice()))
                    .collect();
                regression_calibration(&groups)?
            };
            let flat_means: Vec<f64> = preds
                .iter()
                .flat_map(|v| v.iter().map(|m| m.mean))
                .collect();
            let flat_truth: Vec<f64> = truths.iter().flat_map(|v| v.iter().copied()).collect();
            let errs = regression_errors(&flat_means, &flat_truth);
            let epi: Vec<f64> = preds
                .iter()
                .flat_map(|v| v.iter().map(|m| m.epistemic_var))
                .collect();
            let ale: Vec<f64> = preds
                .iter()
                .flat_map(|v| v.iter().map(|m| m.aleatoric_var))
                .collect();
            let mut csv = String::from("index,mean,epistemic_var,aleatoric_var\n");
            let mut idx = 0usize;
            for img in &preds {
                for m in img {
                    csv.push_str(&format!(
                        "{},{},{},{}\n",
                        idx, m.mean, m.epistemic_var, m.aleatoric_var
                    ));
                    idx += 1;
                }
            }
            let mut metrics = vec![
                ("calibration_score".to_string(), score),
                ("rms".to_string(), errs.rms),
                ("median_epistemic_var".to_string(), median(&epi)),
                ("median_aleatoric_var".to_string(), median(&ale)),
            ];
            if errs.rel.is_finite() {
                metrics.push(("rel".to_string(), errs.rel));
            }
            if errs.log10.is_finite() {
                metrics.push(("log10".to_string(), errs.log10));
            }
            Ok(EvalReport {
                metrics,
                curve,
                predictions_csv: csv,
            })
        }
        TaskKind::Classification { classes } => {
            let mut all_probs: Vec<Vec<Vec<f64>>> = Vec::new();
            let mut all_entropy: Vec<Vec<f64>> = Vec::new();
            for (i, x) in data.test_x.iter().enumerate() {
                match predict(model, x, cfg.cls_samples, cfg.seed.wrapping_add(i as u64))? {
                    Prediction::Classification { probs, entropy } => {
                        all_probs.push(probs);
                        all_entropy.push(entropy);
                    }
                    _ => {
                        return Err(FvError::ShapeMismatch(
                            "expected classification predictions".into(),
                        ))
                    }
                }
            }
            let labels: Vec<&Vec<Option<usize>>> = data
                .test_y
                .iter()
                .map(|t| match t {
                    Target::Labels(l) => Ok(l),
                    _ => Err(FvError::ShapeMismatch("label targets expected".into())),
                })
                .collect::<Result<_>>()?;
            let groups: Vec<(&[Vec<f64>], &[Option<usize>])> = all_probs
                .iter()
                .zip(&labels)
                .map(|(p, l)| (p.as_slice(), l.as_slice()))
                .collect();
            let (curve, score) = classification_calibration(&groups)?;
            let mut correct_scores = Vec::new();
            for (probs, labs) in all_probs.iter().zip(&labels) {
                let pred: Vec<usize> = probs
                    .iter()
                    .map(|p| {
                        p.iter()
                            .enumerate()
                            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
                            .map(|(i, _)| i)
                            .unwrap_or(0)
                    })
                    .collect();
                correct_scores.push(seg_scores(&pred, labs, classes));
            }
            let acc =
                correct_scores.iter().map(|s| s.accuracy).sum::<f64>() / correct_scores.len() as f64;
            let iou = correct_scores.iter().map(|s| s.mean_iou).sum::<f64>()
                / correct_scores.len() as f64;
            let mut csv = String::from("index,class,prob,entropy\n");
            let mut idx = 0usize;
            for (probs, ents) in all_probs.iter().zip(&all_entropy) {
                for (p, e) in probs.iter().zip(ents) {
                    for (k, pk) in p.iter().enumerate() {
                        csv.push_str(&format!("{idx},{k},{pk},{e}\n"));
                    }
                    idx += 1;
                }
            }
            let ent_flat: Vec<f64> = all_entropy.iter().flatten().copied().collect();
            Ok(EvalReport {
                metrics: vec![
                    ("calibration_score".to_string(), score),
                    ("accuracy".to_string(), acc),
                    ("mean_iou".to_string(), iou),
                    ("median_entropy".to_string(), median(&ent_flat)),
                ],
                curve,
                predictions_csv: csv,
            })
        }
    }
}
