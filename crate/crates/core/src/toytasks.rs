//! Synthetic desk-scale datasets: 1D heteroscedastic regression, procedural
//! mini-depth, and three-class mini-segmentation. Every generator is a pure
//! function of (n, seed); inputs live in [0,1] so the prior means 0.5
//! (regression) and 1.0 (segmentation) sit in range.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FvError, Result};
use crate::fvi::Target;
use crate::tensor::Tensor3;

/// A generated dataset with train/test splits and out-of-distribution probes.
#[derive(Clone, Debug)]
pub struct ToyDataset {
    pub name: String,
    pub seed: u64,
    pub train_x: Vec<Tensor3>,
    pub train_y: Vec<Target>,
    pub test_x: Vec<Tensor3>,
    pub test_y: Vec<Target>,
    /// Probe inputs disjoint from the training support.
    pub ood_x: Vec<Tensor3>,
    /// For regression tasks: the latent x of each train/test/ood input.
    pub latent: Option<DatasetLatent>,
    /// For the segmentation task: per-image masks of pixels whose labels were
    /// corrupted by edge noise (train and test splits).
    pub train_noisy: Option<Vec<Vec<bool>>>,
    pub test_noisy: Option<Vec<Vec<bool>>>,
}

/// Latent generator state useful for evaluation.
#[derive(Clone, Debug)]
pub struct DatasetLatent {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
    pub ood: Vec<f64>,
}

/// Width of the tiled 1D input encoding.
pub const REG1D_WIDTH: usize = 8;

/// Encodes a scalar x ∈ [−3, 3] as a 1×1×8 tiled input scaled to [0,1]
/// (out-of-range x simply lands outside [0,1]).
pub fn regression1d_input(x: f64) -> Tensor3 {
    let v = (x + 3.0) / 6.0;
    Tensor3::from_vec(1, 1, REG1D_WIDTH, vec![v; REG1D_WIDTH]).expect("fixed shape")
}

/// True noise standard deviation of the 1D task at x.
pub fn regression1d_noise_std(x: f64) -> f64 {
    0.05 * (1.0 + x * x)
}

/// True mean of the 1D task at x.
pub fn regression1d_mean(x: f64) -> f64 {
    (2.0 * x).sin()
}

/// 1D heteroscedastic regression: x ~ U[−3,3], each of the 8 output pixels an
/// independent draw of sin(2x) + 0.05(1+x²)ε. OOD probes sit at |x| ∈ [5,6].
pub fn gen_regression_1d(n: usize, seed: u64) -> Result<ToyDataset> {
    if n == 0 {
        return Err(FvError::EmptyInput("dataset size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_test = (n / 4).max(8);
    let n_ood = 32usize;
    let make = |rng: &mut ChaCha8Rng, x: f64| -> (Tensor3, Target) {
        let target: Vec<f64> = (0..REG1D_WIDTH)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                regression1d_mean(x) + regression1d_noise_std(x) * e
            })
            .collect();
        (regression1d_input(x), Target::Dense(target))
    };
    let mut train_x = Vec::with_capacity(n);
    let mut train_y = Vec::with_capacity(n);
    let mut lat_train = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random_range(-3.0..3.0);
        let (t, y) = make(&mut rng, x);
        train_x.push(t);
        train_y.push(y);
        lat_train.push(x);
    }
    let mut test_x = Vec::with_capacity(n_test);
    let mut test_y = Vec::with_capacity(n_test);
    let mut lat_test = Vec::with_capacity(n_test);
    for _ in 0..n_test {
        let x = rng.random_range(-3.0..3.0);
        let (t, y) = make(&mut rng, x);
        test_x.push(t);
        test_y.push(y);
        lat_test.push(x);
    }
    let mut ood_x = Vec::with_capacity(n_ood);
    let mut lat_ood = Vec::with_capacity(n_ood);
    for i in 0..n_ood {
        let mag = rng.random_range(5.0..6.0);
        let x = if i % 2 == 0 { mag } else { -mag };
        ood_x.push(regression1d_input(x));
        lat_ood.push(x);
    }
    Ok(ToyDataset {
        name: "regression1d".into(),
        seed,
        train_x,
        train_y,
        test_x,
        test_y,
        ood_x,
        latent: Some(DatasetLatent {
            train: lat_train,
            test: lat_test,
            ood: lat_ood,
        }),
        train_noisy: None,
        test_noisy: None,
    })
}

pub const DEPTH_RES: usize = 8;

fn render_depth_scene(rng: &mut ChaCha8Rng) -> (Tensor3, Vec<f64>) {
    let base = rng.random_range(0.55..0.75);
    let mut depth = vec![base; DEPTH_RES * DEPTH_RES];
    let n_rects = rng.random_range(2..=3usize);
    // draw far-to-near so closer rectangles occlude
    let mut rects: Vec<(usize, usize, usize, usize, f64)> = (0..n_rects)
        .map(|_| {
            let w = rng.random_range(2..=5usize);
            let h = rng.random_range(2..=5usize);
            let x0 = rng.random_range(0..=DEPTH_RES - w);
            let y0 = rng.random_range(0..=DEPTH_RES - h);
            let d = base + rng.random_range(-0.35..-0.1);
            (x0, y0, w, h, d)
        })
        .collect();
    rects.sort_by(|a, b| b.4.partial_cmp(&a.4).expect("finite depths"));
    for (x0, y0, w, h, d) in rects {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                depth[y * DEPTH_RES + x] = d;
            }
        }
    }
    let intensity: Vec<f64> = depth.iter().map(|d| 1.0 - d).collect();
    let img = Tensor3::from_vec(1, DEPTH_RES, DEPTH_RES, intensity).expect("fixed shape");
    (img, depth)
}

/// Procedural mini-depth: a base plane plus occluding rectangles at offset
/// depths, rendered as intensity = 1 − depth. Targets are 8×8 depth maps in
/// (0, 1).
pub fn gen_minidepth(n: usize, seed: u64) -> Result<ToyDataset> {
    if n == 0 {
        return Err(FvError::EmptyInput("dataset size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_test = (n / 4).max(4);
    let gen_split = |count: usize, rng: &mut ChaCha8Rng| {
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for _ in 0..count {
            let (img, depth) = render_depth_scene(rng);
            xs.push(img);
            ys.push(Target::Dense(depth));
        }
        (xs, ys)
    };
    let (train_x, train_y) = gen_split(n, &mut rng);
    let (test_x, test_y) = gen_split(n_test, &mut rng);
    // probes: uniform noise images, far from any rendered scene
    let ood_x: Vec<Tensor3> = (0..8)
        .map(|_| Tensor3::from_fn(1, DEPTH_RES, DEPTH_RES, |_, _, _| rng.random::<f64>()))
        .collect();
    Ok(ToyDataset {
        name: "minidepth".into(),
        seed,
        train_x,
        train_y,
        test_x,
        test_y,
        ood_x,
        latent: None,
        train_noisy: None,
        test_noisy: None,
    })
}

pub const SEG_RES: usize = 8;
pub const SEG_CLASSES: usize = 3;

fn render_seg_scene(rng: &mut ChaCha8Rng) -> (Tensor3, Vec<Option<usize>>, Vec<bool>) {
    let hw = SEG_RES * SEG_RES;
    let mut labels = vec![0usize; hw];
    // class 1: rectangle, class 2: disc; both within the 6x6 interior, with
    // random z-order so overlap steals evenly from both blobs
    let rw = rng.random_range(4..=5usize);
    let rh = rng.random_range(4..=5usize);
    let rx = rng.random_range(1..=SEG_RES - 1 - rw);
    let ry = rng.random_range(1..=SEG_RES - 1 - rh);
    let r = rng.random_range(2.3..2.7f64);
    let cx = rng.random_range(3.0..(SEG_RES as f64 - 3.0));
    let cy = rng.random_range(3.0..(SEG_RES as f64 - 3.0));
    let circle_on_top = rng.random::<f64>() < 0.5;
    let paint_rect = |labels: &mut Vec<usize>| {
        for y in ry..ry + rh {
            for x in rx..rx + rw {
                labels[y * SEG_RES + x] = 1;
            }
        }
    };
    let paint_circle = |labels: &mut Vec<usize>| {
        for y in 1..SEG_RES - 1 {
            for x in 1..SEG_RES - 1 {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= r * r {
                    labels[y * SEG_RES + x] = 2;
                }
            }
        }
    };
    if circle_on_top {
        paint_rect(&mut labels);
        paint_circle(&mut labels);
    } else {
        paint_circle(&mut labels);
        paint_rect(&mut labels);
    }
    // intensity encodes the class with mild observation noise
    let base = [0.15, 0.5, 0.85];
    let img = Tensor3::from_fn(1, SEG_RES, SEG_RES, |_, y, x| {
        let e: f64 = StandardNormal.sample(rng);
        (base[labels[y * SEG_RES + x]] + 0.05 * e).clamp(0.0, 1.0)
    });
    // edge-noise: blob pixels sitting on a class boundary flip to the
    // neighboring class with probability 1/10; the mask records the flips
    let mut noisy = vec![false; hw];
    let mut final_labels: Vec<Option<usize>> = vec![None; hw];
    for y in 0..SEG_RES {
        for x in 0..SEG_RES {
            let idx = y * SEG_RES + x;
            let border = y == 0 || x == 0 || y == SEG_RES - 1 || x == SEG_RES - 1;
            if border {
                continue; // ignore ring
            }
            let own = labels[idx];
            let mut other: Option<usize> = None;
            if own != 0 {
                for (ny, nx) in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
                    let n = labels[ny * SEG_RES + nx];
                    if n != own {
                        other = Some(n);
                        break;
                    }
                }
            }
            let mut lab = own;
            if let Some(o) = other {
                if rng.random::<f64>() < 0.1 {
                    lab = o;
                    noisy[idx] = true;
                }
            }
            final_labels[idx] = Some(lab);
        }
    }
    (img, final_labels, noisy)
}

/// Three-class blob segmentation with an ignored border ring and edge-noise
/// labels: pixels adjacent to a class transition flip to the neighboring
/// class with probability one half (the per-image mask records the flips).
pub fn gen_miniseg(n: usize, seed: u64) -> Result<ToyDataset> {
    if n == 0 {
        return Err(FvError::EmptyInput("dataset size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_test = (n / 4).max(4);
    let gen_split = |count: usize, rng: &mut ChaCha8Rng| {
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        let mut masks = Vec::with_capacity(count);
        for _ in 0..count {
            let (img, labels, noisy) = render_seg_scene(rng);
            xs.push(img);
            ys.push(Target::Labels(labels));
            masks.push(noisy);
        }
        (xs, ys, masks)
    };
    let (train_x, train_y, train_noisy) = gen_split(n, &mut rng);
    let (test_x, test_y, test_noisy) = gen_split(n_test, &mut rng);
    let ood_x: Vec<Tensor3> = (0..8)
        .map(|_| Tensor3::from_fn(1, SEG_RES, SEG_RES, |_, _, _| rng.random::<f64>()))
        .collect();
    Ok(ToyDataset {
        name: "miniseg".into(),
        seed,
        train_x,
        train_y,
        test_x,
        test_y,
        ood_x,
        latent: None,
        train_noisy: Some(train_noisy),
        test_noisy: Some(test_noisy),
    })
}

/// Writes a single-channel tensor as an ASCII portable graymap (P2), mapping
/// [0,1] to 0..255.
pub fn write_pgm<W: std::io::Write>(t: &Tensor3, w: &mut W) -> Result<()> {
    writeln!(w, "P2")?;
    writeln!(w, "{} {}", t.w, t.h)?;
    writeln!(w, "255")?;
    for y in 0..t.h {
        let row: Vec<String> = (0..t.w)
            .map(|x| {
                let v = (t.get(0, y, x).clamp(0.0, 1.0) * 255.0).round() as u32;
                v.to_string()
            })
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

fn tensor_csv_row(split: &str, idx: usize, t: &Tensor3) -> String {
    let vals: Vec<String> = t.data.iter().map(|v| v.to_string()).collect();
    format!("{split},{idx},{},{},{},{}\n", t.c, t.h, t.w, vals.join(","))
}

fn target_csv_row(split: &str, idx: usize, t: &Target) -> String {
    match t {
        Target::Dense(v) => {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            format!("{split},{idx},dense,{}\n", vals.join(","))
        }
        Target::Labels(l) => {
            let vals: Vec<String> = l
                .iter()
                .map(|x| match x {
                    Some(c) => c.to_string(),
                    None => "-1".into(),
                })
                .collect();
            format!("{split},{idx},labels,{}\n", vals.join(","))
        }
    }
}

impl ToyDataset {
    /// Dumps the dataset as a manifest plus CSV files under `dir`, with a few
    /// PGM previews of train inputs.
    pub fn dump(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        manifest.push_str(&format!("task = {}\n", self.name));
        manifest.push_str(&format!("seed = {}\n", self.seed));
        manifest.push_str(&format!("n_train = {}\n", self.train_x.len()));
        manifest.push_str(&format!("n_test = {}\n", self.test_x.len()));
        manifest.push_str(&format!("n_ood = {}\n", self.ood_x.len()));
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        let mut inputs = String::from("split,index,c,h,w,values...\n");
        let mut targets = String::from("split,index,kind,values...\n");
        for (i, (x, y)) in self.train_x.iter().zip(&self.train_y).enumerate() {
            inputs.push_str(&tensor_csv_row("train", i, x));
            targets.push_str(&target_csv_row("train", i, y));
        }
        for (i, (x, y)) in self.test_x.iter().zip(&self.test_y).enumerate() {
            inputs.push_str(&tensor_csv_row("test", i, x));
            targets.push_str(&target_csv_row("test", i, y));
        }
        for (i, x) in self.ood_x.iter().enumerate() {
            inputs.push_str(&tensor_csv_row("ood", i, x));
        }
        std::fs::write(dir.join("inputs.csv"), inputs)?;
        std::fs::write(dir.join("targets.csv"), targets)?;
        for (i, x) in self.train_x.iter().take(4).enumerate() {
            let mut buf = Vec::new();
            write_pgm(x, &mut buf)?;
            std::fs::write(dir.join(format!("train_{i}.pgm")), buf)?;
        }
        Ok(())
    }

    /// Reloads inputs and targets dumped by [`ToyDataset::dump`]; latent
    /// values and noise masks are not part of the dump.
    pub fn load(dir: &std::path::Path) -> Result<ToyDataset> {
        let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let mut name = String::new();
        let mut seed = 0u64;
        for line in manifest.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            match k.trim() {
                "task" => name = v.trim().to_string(),
                "seed" => {
                    seed = v
                        .trim()
                        .parse()
                        .map_err(|_| FvError::Parse("bad seed".into()))?
                }
                _ => {}
            }
        }
        let mut train_x = Vec::new();
        let mut test_x = Vec::new();
        let mut ood_x = Vec::new();
        let inputs = std::fs::read_to_string(dir.join("inputs.csv"))?;
        for line in inputs.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() < 6 {
                return Err(FvError::Parse(format!("bad input row: {line}")));
            }
            let c: usize = parts[2].parse().map_err(|_| FvError::Parse("bad c".into()))?;
            let h: usize = parts[3].parse().map_err(|_| FvError::Parse("bad h".into()))?;
            let w: usize = parts[4].parse().map_err(|_| FvError::Parse("bad w".into()))?;
            let vals: Vec<f64> = parts[5..]
                .iter()
                .map(|s| s.parse().map_err(|_| FvError::Parse(format!("bad value {s}"))))
                .collect::<Result<_>>()?;
            let t = Tensor3::from_vec(c, h, w, vals)?;
            match parts[0] {
                "train" => train_x.push(t),
                "test" => test_x.push(t),
                "ood" => ood_x.push(t),
                s => return Err(FvError::Parse(format!("unknown split {s}"))),
            }
        }
        let mut train_y = Vec::new();
        let mut test_y = Vec::new();
        let targets = std::fs::read_to_string(dir.join("targets.csv"))?;
        for line in targets.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() < 4 {
                return Err(FvError::Parse(format!("bad target row: {line}")));
            }
            let target = match parts[2] {
                "dense" => Target::Dense(
                    parts[3..]
                        .iter()
                        .map(|s| s.parse().map_err(|_| FvError::Parse(format!("bad value {s}"))))
                        .collect::<Result<_>>()?,
                ),
                "labels" => Target::Labels(
                    parts[3..]
                        .iter()
                        .map(|s| {
                            let v: i64 =
                                s.parse().map_err(|_| FvError::Parse(format!("bad label {s}")))?;
                            Ok(if v < 0 { None } else { Some(v as usize) })
                        })
                        .collect::<Result<_>>()?,
                ),
                k => return Err(FvError::Parse(format!("unknown target kind {k}"))),
            };
            match parts[0] {
                "train" => train_y.push(target),
                "test" => test_y.push(target),
                s => return Err(FvError::Parse(format!("unknown split {s}"))),
            }
        }
        Ok(ToyDataset {
            name,
            seed,
            train_x,
            train_y,
            test_x,
            test_y,
            ood_x,
            latent: None,
            train_noisy: None,
            test_noisy: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression1d_reproducible_and_finite() {
        let a = gen_regression_1d(32, 9).unwrap();
        let b = gen_regression_1d(32, 9).unwrap();
        assert_eq!(a.train_x, b.train_x);
        assert_eq!(a.train_y, b.train_y);
        for y in &a.train_y {
            match y {
                Target::Dense(v) => assert!(v.iter().all(|t| t.is_finite())),
                _ => panic!("dense targets expected"),
            }
        }
        let c = gen_regression_1d(32, 10).unwrap();
        assert_ne!(a.train_x, c.train_x);
    }

    #[test]
    fn regression1d_noise_variance_at_origin() {
        // variance of y at x=0 is 0.05^2 = 0.0025
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let y = regression1d_mean(0.0) + regression1d_noise_std(0.0) * e;
            acc += y * y;
        }
        let var = acc / n as f64;
        let se = 3.0 * (2.0f64 / n as f64).sqrt() * 0.0025;
        assert!((var - 0.0025).abs() < se, "var {var}");
    }

    #[test]
    fn regression1d_ood_outside_train_support() {
        let d = gen_regression_1d(16, 1).unwrap();
        for x in &d.ood_x {
            let v = x.data[0];
            assert!(!(0.0..=1.0).contains(&v), "probe {v} inside [0,1]");
        }
    }

    #[test]
    fn minidepth_targets_in_unit_interval() {
        let d = gen_minidepth(24, 3).unwrap();
        for y in d.train_y.iter().chain(&d.test_y) {
            match y {
                Target::Dense(v) => assert!(v.iter().all(|t| *t > 0.0 && *t < 1.0)),
                _ => panic!("dense targets expected"),
            }
        }
        let d2 = gen_minidepth(24, 3).unwrap();
        assert_eq!(d.train_x, d2.train_x);
    }

    #[test]
    fn minidepth_occlusion_consistent_with_intensity() {
        let d = gen_minidepth(16, 5).unwrap();
        for (x, y) in d.train_x.iter().zip(&d.train_y) {
            let Target::Dense(depth) = y else { panic!() };
            for (px, dv) in depth.iter().enumerate() {
                // intensity = 1 - depth: nearer is strictly brighter
                assert!((x.data[px] - (1.0 - dv)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn miniseg_classes_and_reproducibility() {
        let d = gen_miniseg(16, 7).unwrap();
        for y in &d.train_y {
            let Target::Labels(l) = y else { panic!() };
            for lab in l.iter().flatten() {
                assert!(*lab < SEG_CLASSES);
            }
            // border ring is ignored
            for x in 0..SEG_RES {
                assert!(l[x].is_none());
                assert!(l[(SEG_RES - 1) * SEG_RES + x].is_none());
            }
        }
        let d2 = gen_miniseg(16, 7).unwrap();
        assert_eq!(d.train_y, d2.train_y);
    }

    #[test]
    fn miniseg_class_balance_near_parity() {
        let d = gen_miniseg(1000, 11).unwrap();
        let mut counts = [0usize; SEG_CLASSES];
        let mut total = 0usize;
        for y in &d.train_y {
            let Target::Labels(l) = y else { panic!() };
            for lab in l.iter().flatten() {
                counts[*lab] += 1;
                total += 1;
            }
        }
        for (c, n) in counts.iter().enumerate() {
            let share = *n as f64 / total as f64;
            assert!(
                (share - 1.0 / 3.0).abs() <= 0.2 / 3.0,
                "class {c} share {share}"
            );
        }
    }

    #[test]
    fn miniseg_noise_mask_marks_flips() {
        let d = gen_miniseg(64, 13).unwrap();
        let masks = d.train_noisy.as_ref().unwrap();
        let any_noisy = masks.iter().flatten().any(|m| *m);
        assert!(any_noisy);
        for (mask, y) in masks.iter().zip(&d.train_y) {
            let Target::Labels(l) = y else { panic!() };
            for (m, lab) in mask.iter().zip(l) {
                if *m {
                    assert!(lab.is_some(), "flipped pixels are labelled");
                }
            }
        }
    }

    #[test]
    fn dataset_dump_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_regression_1d(12, 21).unwrap();
        d.dump(dir.path()).unwrap();
        let back = ToyDataset::load(dir.path()).unwrap();
        assert_eq!(back.name, d.name);
        assert_eq!(back.train_x, d.train_x);
        assert_eq!(back.train_y, d.train_y);
        assert_eq!(back.test_y, d.test_y);
        assert_eq!(back.ood_x, d.ood_x);

        let s = gen_miniseg(6, 2).unwrap();
        s.dump(dir.path()).unwrap();
        let back = ToyDataset::load(dir.path()).unwrap();
        assert_eq!(back.train_y, s.train_y);
    }

    #[test]
    fn pgm_header_and_range() {
        let t = Tensor3::from_fn(1, 2, 3, |_, y, x| (y * 3 + x) as f64 / 5.0);
        let mut buf = Vec::new();
        write_pgm(&t, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("3 2"));
        assert_eq!(lines.next(), Some("255"));
    }
}
