//! Pixel-wise MLP: a shared trunk of SiLU layers, a dropout boundary, then
//! three linear heads (normals xy, specular logit, roughness logit).
//!
//! Parameters live in one flat buffer; tensors are laid out in declaration
//! order (trunk layers, then the normals, specular and roughness heads, each
//! as weight then bias). Weights are row-major `out x in`.

use crate::material::DECODE_MIN_Z;
use crate::math::Vec3;

pub(crate) const HEAD_OUTPUTS: [(&str, usize); 3] = [("normals", 2), ("specular", 1), ("roughness", 1)];

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub input: usize,
    pub trunk: Vec<Layer>,
    /// Normals, specular, roughness.
    pub heads: [Layer; 3],
    pub tensors: Vec<TensorSpec>,
    pub param_count: usize,
}

impl Layout {
    pub fn new(input: usize, hidden: &[usize]) -> Self {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            let t = TensorSpec { name, rows, cols, offset };
            offset += rows * cols;
            let o = t.offset;
            tensors.push(t);
            o
        };
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut fan_in = input;
        for (i, &width) in hidden.iter().enumerate() {
            let w = push(format!("trunk.{i}.weight"), width, fan_in);
            let b = push(format!("trunk.{i}.bias"), width, 1);
            trunk.push(Layer { w, b, fan_in, fan_out: width });
            fan_in = width;
        }
        let heads = HEAD_OUTPUTS.map(|(name, out)| {
            let w = push(format!("head.{name}.weight"), out, fan_in);
            let b = push(format!("head.{name}.bias"), out, 1);
            Layer { w, b, fan_in, fan_out: out }
        });
        let param_count = tensors.last().map(|t| t.offset + t.len()).unwrap_or(0);
        Self { input, trunk, heads, tensors, param_count }
    }

    pub fn boundary_width(&self) -> usize {
        self.trunk.last().map(|l| l.fan_out).unwrap_or(self.input)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[inline]
fn dense(p: &[f64], layer: &Layer, x: &[f64], out: &mut [f64]) {
    for (o, z) in out.iter_mut().enumerate().take(layer.fan_out) {
        let row = &p[layer.w + o * layer.fan_in..layer.w + (o + 1) * layer.fan_in];
        *z = p[layer.b + o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

/// Decoded per-pixel prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PixelOutput {
    pub normal: Vec3,
    pub specular: f64,
    pub roughness: f64,
}

/// Maps raw head outputs to map values: `(x, y, sqrt(max(0, 1 - x^2 - y^2)))`
/// with z floored then renormalized, and sigmoids for the scalar maps.
#[inline]
pub(crate) fn decode_heads(raw: &[f64; 4]) -> PixelOutput {
    let (x, y) = (raw[0], raw[1]);
    let z = (1.0 - x * x - y * y).max(0.0).sqrt().max(DECODE_MIN_Z);
    let u = Vec3::new(x, y, z);
    PixelOutput { normal: u * (1.0 / u.norm()), specular: sigmoid(raw[2]), roughness: sigmoid(raw[3]) }
}

/// Reusable buffers for one pixel.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    /// Pre-activations per trunk layer.
    pub pre: Vec<Vec<f64>>,
    /// Activations per trunk layer.
    pub act: Vec<Vec<f64>>,
    /// Boundary activations after masking.
    pub dropped: Vec<f64>,
    pub raw: [f64; 4],
}

impl Scratch {
    pub fn new(layout: &Layout) -> Self {
        let pre: Vec<Vec<f64>> = layout.trunk.iter().map(|l| vec![0.0; l.fan_out]).collect();
        Self {
            act: pre.clone(),
            pre,
            dropped: vec![0.0; layout.boundary_width()],
            raw: [0.0; 4],
        }
    }

    pub fn boundary(&self) -> &[f64] {
        self.act.last().map(|a| a.as_slice()).unwrap_or(&[])
    }
}

/// Runs the trunk; the boundary activations end up in `s.act.last()`.
pub(crate) fn trunk_forward(layout: &Layout, p: &[f64], x: &[f64], s: &mut Scratch) {
    for (i, layer) in layout.trunk.iter().enumerate() {
        let (prev, rest) = s.act.split_at_mut(i);
        let input: &[f64] = if i == 0 { x } else { &prev[i - 1] };
        dense(p, layer, input, &mut s.pre[i]);
        for (a, &z) in rest[0].iter_mut().zip(&s.pre[i]) {
            *a = silu(z);
        }
    }
}

/// Applies the heads to already-masked boundary activations.
#[inline]
pub(crate) fn heads_forward(layout: &Layout, p: &[f64], dropped: &[f64], raw: &mut [f64; 4]) {
    let [hn, hs, hr] = &layout.heads;
    dense(p, hn, dropped, &mut raw[0..2]);
    dense(p, hs, dropped, &mut raw[2..3]);
    dense(p, hr, dropped, &mut raw[3..4]);
}

/// Full forward pass with a per-unit multiplier at the boundary
/// (Bernoulli 0/1 in stochastic mode, `1 - p` in deterministic mode).
pub(crate) fn forward(layout: &Layout, p: &[f64], x: &[f64], mask: &[f64], s: &mut Scratch) -> PixelOutput {
    trunk_forward(layout, p, x, s);
    let boundary = s.act.last().expect("trunk has at least one layer");
    for ((d, a), m) in s.dropped.iter_mut().zip(boundary).zip(mask) {
        *d = a * m;
    }
    let mut raw = [0.0; 4];
    heads_forward(layout, p, &s.dropped, &mut raw);
    s.raw = raw;
    decode_heads(&raw)
}

/// Per-map loss weights, already divided by the batch size where needed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelLossWeights {
    pub normals: f64,
    pub specular: f64,
    pub roughness: f64,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weighted L1 loss of one pixel: `wn * mean_c |dn_c| + ws |ds| + wr |dr|`.
pub(crate) fn pixel_loss(out: &PixelOutput, gt: &PixelOutput, w: PixelLossWeights) -> f64 {
    let dn = out.normal - gt.normal;
    w.normals * (dn.x.abs() + dn.y.abs() + dn.z.abs()) / 3.0
        + w.specular * (out.specular - gt.specular).abs()
        + w.roughness * (out.roughness - gt.roughness).abs()
}

/// Backpropagates the pixel loss of the last [`forward`] call and adds the
/// parameter gradient into `grad`. `mask` must be the one used forward.
pub(crate) fn backward(
    layout: &Layout,
    p: &[f64],
    x: &[f64],
    mask: &[f64],
    s: &Scratch,
    out: &PixelOutput,
    gt: &PixelOutput,
    w: PixelLossWeights,
    grad: &mut [f64],
    delta: &mut Vec<Vec<f64>>,
) {
    let raw = &s.raw;
    // Normals: n = u / |u|, u = (x, y, z(x, y)).
    let dn = out.normal - gt.normal;
    let g_n = Vec3::new(sign(dn.x), sign(dn.y), sign(dn.z)) * (w.normals / 3.0);
    let (ax, ay) = (raw[0], raw[1]);
    let zz = 1.0 - ax * ax - ay * ay;
    let z = zz.max(0.0).sqrt().max(DECODE_MIN_Z);
    let u = Vec3::new(ax, ay, z);
    let inv_norm = 1.0 / u.norm();
    let g_u = (g_n - out.normal * out.normal.dot(g_n)) * inv_norm;
    let (dz_dx, dz_dy) = if zz.max(0.0).sqrt() > DECODE_MIN_Z { (-ax / z, -ay / z) } else { (0.0, 0.0) };
    let d_raw = [
        g_u.x + g_u.z * dz_dx,
        g_u.y + g_u.z * dz_dy,
        w.specular * sign(out.specular - gt.specular) * out.specular * (1.0 - out.specular),
        w.roughness * sign(out.roughness - gt.roughness) * out.roughness * (1.0 - out.roughness),
    ];

    let width = layout.boundary_width();
    let mut d_dropped = vec![0.0; width];
    let mut k = 0;
    for head in &layout.heads {
        for o in 0..head.fan_out {
            let g = d_raw[k];
            k += 1;
            grad[head.b + o] += g;
            let row = head.w + o * head.fan_in;
            for i in 0..head.fan_in {
                grad[row + i] += g * s.dropped[i];
                d_dropped[i] += g * p[row + i];
            }
        }
    }

    let n_layers = layout.trunk.len();
    if n_layers == 0 {
        return;
    }
    // delta[l] = dL/d(pre-activation of layer l)
    delta.resize(n_layers, Vec::new());
    for (l, layer) in layout.trunk.iter().enumerate() {
        delta[l].resize(layer.fan_out, 0.0);
    }
    for i in 0..width {
        delta[n_layers - 1][i] = d_dropped[i] * mask[i] * silu_grad(s.pre[n_layers - 1][i]);
    }
    for l in (0..n_layers).rev() {
        let layer = &layout.trunk[l];
        let input: &[f64] = if l == 0 { x } else { &s.act[l - 1] };
        for o in 0..layer.fan_out {
            let g = delta[l][o];
            grad[layer.b + o] += g;
            let row = layer.w + o * layer.fan_in;
            for (gw, &v) in grad[row..row + layer.fan_in].iter_mut().zip(input) {
                *gw += g * v;
            }
        }
        if l > 0 {
            let (lower, upper) = delta.split_at_mut(l);
            let below = &mut lower[l - 1];
            below.iter_mut().for_each(|d| *d = 0.0);
            for o in 0..layer.fan_out {
                let g = upper[0][o];
                let row = layer.w + o * layer.fan_in;
                for (d, &wv) in below.iter_mut().zip(&p[row..row + layer.fan_in]) {
                    *d += g * wv;
                }
            }
            for (d, &z) in below.iter_mut().zip(&s.pre[l - 1]) {
                *d *= silu_grad(z);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts() {
        let l = Layout::new(10, &[8, 6]);
        // 10*8+8 + 8*6+6 + (6*2+2) + (6+1) + (6+1)
        assert_eq!(l.param_count, 88 + 54 + 14 + 7 + 7);
        assert_eq!(l.tensors.len(), 10);
        assert_eq!(l.tensors[4].name, "head.normals.weight");
        assert_eq!(l.boundary_width(), 6);
    }

    #[test]
    fn decoded_normals_are_unit_with_positive_z() {
        for raw in [[0.0, 0.0, 0.0, 0.0], [0.6, 0.8, 1.0, -1.0], [3.0, -2.0, 0.0, 0.0]] {
            let o = decode_heads(&raw);
            assert!((o.normal.norm() - 1.0).abs() < 1e-12);
            assert!(o.normal.z > 0.0);
            assert!((0.0..=1.0).contains(&o.specular));
        }
        assert_eq!(decode_heads(&[0.0; 4]).normal, Vec3::Z);
    }
}
