use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{backward, forward, pixel_loss, Layout, PixelLossWeights, PixelOutput, Scratch};
use super::{draw_mask, init_params, FeaturePlanes, LossWeights, PredictorConfig, PredictorWeights};
use crate::error::{Error, Result};
use crate::material::{ImageGrid, MapStack};
use crate::math::mix_seed;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One supervised example: a scan and its ground-truth stack.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPair<'a> {
    pub input: &'a ImageGrid,
    pub target: &'a MapStack,
}

/// `l_n * mean|d normal components| + l_s * mean|d spec| + l_r * mean|d rough|`.
pub fn loss_pixel(pred: &MapStack, gt: &MapStack, weights: &LossWeights) -> Result<f64> {
    gt.check_size(pred.width(), pred.height(), "prediction")?;
    let n = gt.pixel_count().max(1) as f64;
    let normals: f64 = pred
        .normals
        .vectors()
        .iter()
        .zip(gt.normals.vectors())
        .map(|(a, b)| {
            let d = *a - *b;
            d.x.abs() + d.y.abs() + d.z.abs()
        })
        .sum::<f64>()
        / (3.0 * n);
    let l1 = |a: &ImageGrid, b: &ImageGrid| {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
    };
    Ok(weights.normals * normals
        + weights.specular * l1(&pred.specular, &gt.specular)
        + weights.roughness * l1(&pred.roughness, &gt.roughness))
}

fn target_at(m: &MapStack, i: usize) -> PixelOutput {
    PixelOutput {
        normal: m.normals.vectors()[i],
        specular: m.specular.data()[i],
        roughness: m.roughness.data()[i],
    }
}

fn check_dataset(dataset: &[TrainingPair<'_>]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for pair in dataset {
        pair.target.check_size(pair.input.width(), pair.input.height(), "input")?;
    }
    Ok(())
}

/// Reusable per-pixel buffers for loss and gradient accumulation.
struct Accumulator {
    scratch: Scratch,
    delta: Vec<Vec<f64>>,
}

impl Accumulator {
    fn new(layout: &Layout) -> Self {
        Self { scratch: Scratch::new(layout), delta: Vec::new() }
    }

    #[allow(clippy::too_many_arguments)]
    fn add(
        &mut self,
        layout: &Layout,
        p: &[f64],
        x: &[f64],
        mask: &[f64],
        gt: &PixelOutput,
        w: PixelLossWeights,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let out = forward(layout, p, x, mask, &mut self.scratch);
        let loss = pixel_loss(&out, gt, w);
        if let Some(grad) = grad {
            backward(layout, p, x, mask, &self.scratch, &out, gt, w, grad, &mut self.delta);
        }
        loss
    }
}

fn batch_weights(w: &LossWeights, batch: usize) -> PixelLossWeights {
    let b = batch as f64;
    PixelLossWeights { normals: w.normals / b, specular: w.specular / b, roughness: w.roughness / b }
}

/// Trains from scratch with mini-batch Adam over pixels sampled uniformly
/// across materials. Returns the weights and the mean training loss of each
/// epoch. Single-threaded and deterministic for a fixed `cfg.seed`.
pub fn train(dataset: &[TrainingPair<'_>], cfg: &PredictorConfig) -> Result<(PredictorWeights, Vec<f64>)> {
    cfg.validate()?;
    check_dataset(dataset)?;
    let layout = cfg.layout();
    let planes: Vec<FeaturePlanes> = dataset.iter().map(|d| FeaturePlanes::new(d.input)).collect();
    let mut p = init_params(cfg, cfg.seed);
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    let mut grad = vec![0.0; p.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let mut acc = Accumulator::new(&layout);
    let mut features = vec![0.0; layout.input];
    let mut mask = vec![1.0; layout.boundary_width()];
    let w = batch_weights(&cfg.map_loss_weights, cfg.batch_pixels);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for batch in 0..cfg.batches_per_epoch {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for _ in 0..cfg.batch_pixels {
                let k = rng.random_range(0..dataset.len());
                let target = dataset[k].target;
                let x = rng.random_range(0..target.width());
                let y = rng.random_range(0..target.height());
                planes[k].gather(x, y, cfg.patch_radius, &mut features);
                draw_mask(&mut rng, cfg.dropout_rate, &mut mask);
                let gt = target_at(target, y * target.width() + x);
                loss += acc.add(&layout, &p, &features, &mask, &gt, w, Some(&mut grad));
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step);
            let bc2 = 1.0 - ADAM_BETA2.powi(step);
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                p[i] -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
            }
            epoch_loss += loss;
        }
        curve.push(epoch_loss / cfg.batches_per_epoch as f64);
    }
    let params = p.into_iter().map(|v| v as f32).collect();
    Ok((PredictorWeights::from_params(cfg.clone(), params)?, curve))
}

/// Fixed batch of pixels (features, targets and dropout masks frozen) on
/// which the training loss and its analytic gradient can be evaluated at
/// arbitrary parameters, for finite-difference checks.
pub struct GradientProbe {
    config: PredictorConfig,
    layout: Layout,
    pixels: Vec<(Vec<f64>, PixelOutput, Vec<f64>)>,
}

impl GradientProbe {
    pub fn new(dataset: &[TrainingPair<'_>], cfg: &PredictorConfig, pixels: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        check_dataset(dataset)?;
        let layout = cfg.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes: Vec<FeaturePlanes> = dataset.iter().map(|d| FeaturePlanes::new(d.input)).collect();
        let pixels = (0..pixels)
            .map(|_| {
                let k = rng.random_range(0..dataset.len());
                let target = dataset[k].target;
                let x = rng.random_range(0..target.width());
                let y = rng.random_range(0..target.height());
                let mut features = vec![0.0; layout.input];
                planes[k].gather(x, y, cfg.patch_radius, &mut features);
                let mut mask = vec![0.0; layout.boundary_width()];
                draw_mask(&mut rng, cfg.dropout_rate, &mut mask);
                (features, target_at(target, y * target.width() + x), mask)
            })
            .collect();
        Ok(Self { config: cfg.clone(), layout, pixels })
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count
    }

    pub fn initial_params(&self) -> Vec<f64> {
        init_params(&self.config, self.config.seed)
    }

    pub fn tensor_of(&self, index: usize) -> Option<String> {
        self.layout
            .tensors
            .iter()
            .find(|t| (t.offset..t.offset + t.len()).contains(&index))
            .map(|t| t.name.clone())
    }

    pub fn loss(&self, p: &[f64]) -> f64 {
        self.eval(p, None)
    }

    pub fn loss_and_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; p.len()];
        let loss = self.eval(p, Some(&mut grad));
        (loss, grad)
    }

    fn eval(&self, p: &[f64], mut grad: Option<&mut Vec<f64>>) -> f64 {
        let w = batch_weights(&self.config.map_loss_weights, self.pixels.len());
        let mut acc = Accumulator::new(&self.layout);
        let mut loss = 0.0;
        for (x, gt, mask) in &self.pixels {
            loss += acc.add(&self.layout, p, x, mask, gt, w, grad.as_deref_mut().map(|g| g.as_mut_slice()));
        }
        loss
    }
}
