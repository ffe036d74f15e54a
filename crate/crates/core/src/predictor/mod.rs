//! A small trainable stochastic predictor from a scan image to a map stack.
//!
//! Every pixel is predicted independently from a square luminance/gradient
//! neighborhood by a shared MLP trunk followed by one linear head per map.
//! Dropout sits between the trunk and the heads: training and stochastic
//! inference draw Bernoulli masks, deterministic inference scales the
//! boundary activations by `1 - p`.

mod network;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use network::TensorSpec;
pub use train::{loss_pixel, train, GradientProbe, TrainingPair};

use crate::error::{Error, Result};
use crate::material::{ImageGrid, MapStack, NormalMap};
use crate::uncertainty::StochasticPredictor;
use network::{decode_heads, heads_forward, trunk_forward, Layout, Scratch};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"UMTK";
pub const WEIGHTS_VERSION: u32 = 1;
/// Gradients are small next to luminance; this brings them to a similar range.
const GRADIENT_SCALE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub normals: f64,
    pub specular: f64,
    pub roughness: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { normals: 1.0, specular: 1.0, roughness: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Half-width of the square input neighborhood.
    pub patch_radius: usize,
    pub hidden_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub map_loss_weights: LossWeights,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_pixels: usize,
    pub batches_per_epoch: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            patch_radius: 2,
            hidden_widths: vec![64, 64, 64],
            dropout_rate: crate::uncertainty::DEFAULT_DROPOUT_RATE,
            map_loss_weights: LossWeights::default(),
            learning_rate: 3e-3,
            epochs: 100,
            batch_pixels: 64,
            batches_per_epoch: 200,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidValue("hidden widths must be nonempty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidValue(format!("dropout rate {}", self.dropout_rate)));
        }
        let w = self.map_loss_weights;
        if !(w.normals > 0.0 && w.specular > 0.0 && w.roughness > 0.0) {
            return Err(Error::InvalidValue("loss weights must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_pixels == 0 || self.batches_per_epoch == 0 {
            return Err(Error::InvalidValue("learning rate and batch sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        let side = 2 * self.patch_radius + 1;
        3 * side * side
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self.feature_count(), &self.hidden_widths)
    }
}

/// Luminance and central-difference gradient planes of an input image.
#[derive(Debug, Clone)]
pub(crate) struct FeaturePlanes {
    width: usize,
    height: usize,
    lum: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl FeaturePlanes {
    pub fn new(input: &ImageGrid) -> Self {
        let lum = input.luminance().into_data();
        let (w, h) = (input.width(), input.height());
        let at = |x: isize, y: isize| lum[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                gx[i] = 0.5 * (at(x + 1, y) - at(x - 1, y));
                gy[i] = 0.5 * (at(x, y + 1) - at(x, y - 1));
            }
        }
        Self { width: w, height: h, lum, gx, gy }
    }

    /// Writes the features of pixel (x, y) into `out` (replicate padding).
    pub fn gather(&self, x: usize, y: usize, radius: usize, out: &mut [f64]) {
        let r = radius as isize;
        let mut k = 0;
        for dy in -r..=r {
            let yy = (y as isize + dy).clamp(0, self.height as isize - 1) as usize;
            for dx in -r..=r {
                let xx = (x as isize + dx).clamp(0, self.width as isize - 1) as usize;
                let i = yy * self.width + xx;
                out[k] = 2.0 * (self.lum[i] - 0.5);
                out[k + 1] = GRADIENT_SCALE * self.gx[i];
                out[k + 2] = GRADIENT_SCALE * self.gy[i];
                k += 3;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Deterministic,
    Stochastic(u64),
}

/// Dropout mask stream for one image row under `seed`.
fn row_mask_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

#[inline]
fn draw_mask(rng: &mut ChaCha8Rng, rate: f64, mask: &mut [f64]) {
    for m in mask.iter_mut() {
        *m = if rng.random::<f64>() < rate { 0.0 } else { 1.0 };
    }
}

/// Trained (or freshly initialized) predictor parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWeights {
    config: PredictorConfig,
    params: Vec<f32>,
}

impl PredictorWeights {
    /// Glorot-uniform initialization from `config.seed`; biases start at zero.
    pub fn init(config: &PredictorConfig) -> Result<Self> {
        config.validate()?;
        let params = init_params(config, config.seed).into_iter().map(|v| v as f32).collect();
        Ok(Self { config: config.clone(), params })
    }

    pub fn from_params(config: PredictorConfig, params: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let expected = config.layout().param_count;
        if params.len() != expected {
            return Err(Error::ShapeMismatch(format!("{} parameters, config needs {expected}", params.len())));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite parameter".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn tensors(&self) -> Vec<TensorSpec> {
        self.config.layout().tensors
    }

    fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&v| v as f64).collect()
    }

    pub fn predict(&self, input: &ImageGrid, mode: Mode) -> Result<MapStack> {
        match mode {
            Mode::Deterministic => self.predict_many(input, None).map(|mut v| v.remove(0)),
            Mode::Stochastic(seed) => self.predict_many(input, Some(&[seed])).map(|mut v| v.remove(0)),
        }
    }

    /// Shared trunk evaluation, one head pass per seed (or one deterministic
    /// pass when `seeds` is `None`).
    fn predict_many(&self, input: &ImageGrid, seeds: Option<&[u64]>) -> Result<Vec<MapStack>> {
        let layout = self.config.layout();
        if layout.param_count != self.params.len() {
            return Err(Error::ShapeMismatch("parameter count does not match config".into()));
        }
        let p = self.params_f64();
        let planes = FeaturePlanes::new(input);
        let (w, h) = (input.width(), input.height());
        let rate = self.config.dropout_rate;
        let radius = self.config.patch_radius;
        let passes = seeds.map(|s| s.len()).unwrap_or(1);
        let width = layout.boundary_width();

        // rows[y][pass] = decoded outputs for that row
        let rows: Vec<Vec<Vec<network::PixelOutput>>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut scratch = Scratch::new(&layout);
                let mut features = vec![0.0; layout.input];
                let mut rngs: Vec<ChaCha8Rng> =
                    seeds.map(|s| s.iter().map(|&seed| row_mask_rng(seed, y)).collect()).unwrap_or_default();
                let mut mask = vec![1.0 - rate; width];
                let mut dropped = vec![0.0; width];
                let mut out = vec![Vec::with_capacity(w); passes];
                for x in 0..w {
                    planes.gather(x, y, radius, &mut features);
                    trunk_forward(&layout, &p, &features, &mut scratch);
                    for (pass, row_out) in out.iter_mut().enumerate() {
                        if let Some(rng) = rngs.get_mut(pass) {
                            draw_mask(rng, rate, &mut mask);
                        }
                        for ((d, a), m) in dropped.iter_mut().zip(scratch.boundary()).zip(&mask) {
                            *d = a * m;
                        }
                        let mut raw = [0.0; 4];
                        heads_forward(&layout, &p, &dropped, &mut raw);
                        row_out.push(decode_heads(&raw));
                    }
                }
                out
            })
            .collect();

        (0..passes)
            .map(|pass| {
                let mut normals = Vec::with_capacity(w * h);
                let mut spec = Vec::with_capacity(w * h);
                let mut rough = Vec::with_capacity(w * h);
                for row in &rows {
                    for o in &row[pass] {
                        normals.push(o.normal);
                        spec.push(o.specular);
                        rough.push(o.roughness);
                    }
                }
                MapStack::new(
                    NormalMap::new_unchecked(w, h, normals)?,
                    ImageGrid::new(w, h, 1, spec, input.ppi())?,
                    ImageGrid::new(w, h, 1, rough, input.ppi())?,
                )
            })
            .collect()
    }

    /// Little-endian: magic, version (u32), config JSON length (u32), config
    /// JSON, then every tensor as raw f32 in declaration order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::with_capacity(12 + cfg.len() + 4 * self.params.len());
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptPayload(m.to_string());
        if bytes.len() < 12 {
            return Err(corrupt("header truncated"));
        }
        if &bytes[0..4] != WEIGHTS_MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != WEIGHTS_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: WEIGHTS_VERSION });
        }
        let cfg_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let cfg_end = 12usize.checked_add(cfg_len).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("config truncated"))?;
        let config: PredictorConfig =
            serde_json::from_slice(&bytes[12..cfg_end]).map_err(|e| Error::CorruptPayload(format!("config: {e}")))?;
        config.validate().map_err(|e| Error::CorruptPayload(format!("config: {e}")))?;
        let count = config.layout().param_count;
        let body = &bytes[cfg_end..];
        if body.len() != 4 * count {
            return Err(Error::CorruptPayload(format!(
                "expected {} tensor bytes, found {}",
                4 * count,
                body.len()
            )));
        }
        let params = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::from_params(config, params).map_err(|e| Error::CorruptPayload(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl StochasticPredictor for PredictorWeights {
    fn predict_deterministic(&self, input: &ImageGrid) -> Result<MapStack> {
        self.predict(input, Mode::Deterministic)
    }

    fn dropout_rate(&self) -> Option<f64> {
        Some(self.config.dropout_rate)
    }

    fn predict_stochastic(&self, input: &ImageGrid, seed: u64) -> Result<MapStack> {
        self.predict(input, Mode::Stochastic(seed))
    }

    fn predict_samples(&self, input: &ImageGrid, seeds: &[u64]) -> Result<Vec<MapStack>> {
        self.predict_many(input, Some(seeds))
    }
}

pub(crate) fn init_params(config: &PredictorConfig, seed: u64) -> Vec<f64> {
    let layout = config.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0; layout.param_count];
    let mut fill = |layer: &network::Layer, gain: f64| {
        let bound = gain * (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for v in &mut p[layer.w..layer.w + layer.fan_in * layer.fan_out] {
            *v = rng.random_range(-bound..bound);
        }
    };
    for layer in &layout.trunk {
        fill(layer, 1.0);
    }
    for head in &layout.heads {
        fill(head, 0.5);
    }
    p
}

#[cfg(test)]
fn forward_pixel(config: &PredictorConfig, p: &[f64], features: &[f64], mask: &[f64]) -> (crate::math::Vec3, f64, f64) {
    let layout = config.layout();
    let mut s = Scratch::new(&layout);
    let o = network::forward(&layout, p, features, mask, &mut s);
    (o.normal, o.specular, o.roughness)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> PredictorConfig {
        PredictorConfig { patch_radius: 1, hidden_widths: vec![6, 5], ..Default::default() }
    }

    fn textured(w: usize, h: usize) -> ImageGrid {
        let data = (0..w * h * 3)
            .map(|i| (((i * 7919) % 1009) as f64 / 1009.0) * 0.8 + 0.1)
            .collect();
        ImageGrid::new(w, h, 3, data, 200.0).unwrap()
    }

    #[test]
    fn constant_input_gives_constant_stack() {
        let w = PredictorWeights::init(&PredictorConfig { seed: 0, ..Default::default() }).unwrap();
        let input = ImageGrid::constant(9, 7, 3, 0.4, 200.0).unwrap();
        let m = w.predict(&input, Mode::Deterministic).unwrap();
        assert!(m.specular.data().iter().all(|&v| v == m.specular.data()[0]));
        assert!(m.roughness.data().iter().all(|&v| v == m.roughness.data()[0]));
        assert!(m.normals.vectors().iter().all(|&v| v == m.normals.vectors()[0]));
    }

    #[test]
    fn deterministic_is_repeatable_and_zero_dropout_matches() {
        let cfg = PredictorConfig { dropout_rate: 0.0, ..small_config() };
        let w = PredictorWeights::init(&cfg).unwrap();
        let input = textured(12, 10);
        let a = w.predict(&input, Mode::Deterministic).unwrap();
        assert_eq!(a, w.predict(&input, Mode::Deterministic).unwrap());
        assert_eq!(a, w.predict(&input, Mode::Stochastic(99)).unwrap());
    }

    #[test]
    fn batched_samples_match_single_passes() {
        let w = PredictorWeights::init(&small_config()).unwrap();
        let input = textured(8, 6);
        let many = w.predict_samples(&input, &[3, 4]).unwrap();
        assert_eq!(many[0], w.predict(&input, Mode::Stochastic(3)).unwrap());
        assert_eq!(many[1], w.predict(&input, Mode::Stochastic(4)).unwrap());
        assert_ne!(many[0], many[1]);
    }

    #[test]
    fn outputs_respect_ranges() {
        let w = PredictorWeights::init(&small_config()).unwrap();
        let m = w.predict(&textured(8, 8), Mode::Stochastic(1)).unwrap();
        assert!(crate::material::validate_stack(&m).is_empty());
    }

    #[test]
    fn weights_roundtrip_bitwise() {
        let w = PredictorWeights::init(&small_config()).unwrap();
        let back = PredictorWeights::from_bytes(&w.to_bytes()).unwrap();
        assert_eq!(w, back);
        let bits: Vec<u32> = w.params().iter().map(|v| v.to_bits()).collect();
        let back_bits: Vec<u32> = back.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, back_bits);
    }

    #[test]
    fn truncated_or_foreign_payloads_are_rejected() {
        let bytes = PredictorWeights::init(&small_config()).unwrap().to_bytes();
        assert!(matches!(
            PredictorWeights::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::CorruptPayload(_))
        ));
        assert!(matches!(PredictorWeights::from_bytes(&bytes[..6]), Err(Error::CorruptPayload(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(PredictorWeights::from_bytes(&bad), Err(Error::CorruptPayload(_))));
        let mut old = bytes;
        old[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            PredictorWeights::from_bytes(&old),
            Err(Error::VersionMismatch { found: 0, expected: WEIGHTS_VERSION })
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = small_config();
        assert!(matches!(
            PredictorWeights::from_params(cfg, vec![0.0; 3]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(PredictorConfig { hidden_widths: vec![], ..Default::default() }.validate().is_err());
        assert!(PredictorConfig { dropout_rate: 1.0, ..Default::default() }.validate().is_err());
        let mut c = PredictorConfig::default();
        c.map_loss_weights.specular = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn features_use_replicate_padding() {
        let img = ImageGrid::from_fn(3, 3, 1.0, |x, y| (x + 3 * y) as f64 / 8.0).unwrap();
        let planes = FeaturePlanes::new(&img);
        let mut f = vec![0.0; 27];
        planes.gather(0, 0, 1, &mut f);
        // Top-left neighbor clamps to pixel (0, 0).
        assert_eq!(f[0], 2.0 * (0.0 - 0.5));
        assert_eq!(f[3 * 4], 2.0 * (0.0 - 0.5));
        assert!((forward_pixel(&small_config(), &init_params(&small_config(), 0), &f, &[0.8; 5]).1 - 0.5).abs() < 0.5);
    }
}
