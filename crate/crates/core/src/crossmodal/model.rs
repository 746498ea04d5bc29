use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::attention::{DirectionCache, DirectionParams};
use super::tokens::{positional_encoding, EmbedParams, Patches};
use super::Mat;
use crate::geometry::{UnitQuaternion, Vec3, QUAT_EPS};
use crate::{Error, Result};

/// Shapes of the toy model. Token counts follow from the raster shapes and
/// the patch size; the logit-bias matrices are sized from them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossModalConfig {
    pub d: usize,
    pub patch: usize,
    pub layers: usize,
    /// `(rows, cols)` of the image-side raster.
    pub image_shape: (usize, usize),
    /// `(rows, cols)` of the radar-side raster.
    pub radar_shape: (usize, usize),
}

impl CrossModalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || !self.d.is_multiple_of(4) {
            return Err(Error::invalid(format!("d = {} must be a positive multiple of 4", self.d)));
        }
        if self.patch == 0 {
            return Err(Error::invalid("patch must be >= 1"));
        }
        if self.layers == 0 {
            return Err(Error::invalid("at least one layer is required"));
        }
        if self.image_tokens() == 0 || self.radar_tokens() == 0 {
            return Err(Error::invalid("empty raster"));
        }
        Ok(())
    }

    fn tokens(&self, shape: (usize, usize)) -> usize {
        shape.0.div_ceil(self.patch) * shape.1.div_ceil(self.patch)
    }

    pub fn image_tokens(&self) -> usize {
        self.tokens(self.image_shape)
    }

    pub fn radar_tokens(&self) -> usize {
        self.tokens(self.radar_shape)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// Radar queries attending to image keys.
    pub r2i: DirectionParams,
    /// Image queries attending to radar keys.
    pub i2r: DirectionParams,
}

impl LayerParams {
    /// One bi-directional layer; both directions read the same input streams.
    pub fn forward(&self, radar: &Mat, image: &Mat) -> (Mat, Mat) {
        let (yr, _) = self.r2i.forward(radar, image);
        let (yi, _) = self.i2r.forward(image, radar);
        (radar + yr, image + yi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossModalParams {
    pub config: CrossModalConfig,
    pub radar_embed: EmbedParams,
    pub image_embed: EmbedParams,
    pub layers: Vec<LayerParams>,
    /// `d x 8`: quaternion logits, translation, confidence logit.
    pub head_w: Mat,
    pub head_b: Mat,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinementOutput {
    pub q: UnitQuaternion,
    pub t: Vec3,
    pub rho: f64,
}

/// Upstream gradient of a scalar w.r.t. the head outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeadGrad {
    pub dq: [f64; 4],
    pub dt: [f64; 3],
    pub drho: f64,
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub radar_in: Mat,
    pub image_in: Mat,
    pub r2i: DirectionCache,
    pub i2r: DirectionCache,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    radar_patches: Mat,
    image_patches: Mat,
    pub layers: Vec<LayerTrace>,
    pub radar_out: Mat,
    pub image_out: Mat,
    pub pooled: Mat,
    pub head_raw: Mat,
    pub output: RefinementOutput,
}

impl ForwardTrace {
    /// `(radar->image, image->radar)` attention matrices per layer.
    pub fn attention(&self) -> impl Iterator<Item = (&Mat, &Mat)> {
        self.layers.iter().map(|l| (&l.r2i.attn, &l.i2r.attn))
    }
}

impl CrossModalParams {
    /// Zero attention/MLP weights, unit LN gain and a head bias that encodes
    /// the identity quaternion. The forward pass then yields the identity
    /// refinement with `rho = 0.5`.
    pub fn zeros(config: CrossModalConfig) -> Result<Self> {
        config.validate()?;
        let (d, nr, ni) = (config.d, config.radar_tokens(), config.image_tokens());
        let mut head_b = Mat::zeros(1, 8);
        head_b[(0, 0)] = 1.0;
        Ok(Self {
            config,
            radar_embed: EmbedParams::zeros(config.patch, d),
            image_embed: EmbedParams::zeros(config.patch, d),
            layers: (0..config.layers)
                .map(|_| LayerParams {
                    r2i: DirectionParams::zeros(d, nr, ni),
                    i2r: DirectionParams::zeros(d, ni, nr),
                })
                .collect(),
            head_w: Mat::zeros(d, 8),
            head_b,
        })
    }

    pub fn random(config: CrossModalConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let (d, nr, ni) = (config.d, config.radar_tokens(), config.image_tokens());
        let pp = config.patch * config.patch;
        let s = 1.0 / (pp as f64).sqrt();
        p.radar_embed.w = Mat::from_fn(pp, d, |_, _| s * rng.sample::<f64, _>(StandardNormal));
        p.image_embed.w = Mat::from_fn(pp, d, |_, _| s * rng.sample::<f64, _>(StandardNormal));
        for l in &mut p.layers {
            l.r2i = DirectionParams::random(d, nr, ni, rng);
            l.i2r = DirectionParams::random(d, ni, nr, rng);
        }
        let s = 0.1 / (d as f64).sqrt();
        p.head_w = Mat::from_fn(d, 8, |_, _| s * rng.sample::<f64, _>(StandardNormal));
        Ok(p)
    }

    /// Adds `scale * N(0,1)` to every entry, including biases and LN terms.
    pub fn jitter(&mut self, scale: f64, rng: &mut impl Rng) {
        for (_, m) in self.named_tensors_mut() {
            m.apply(|x| *x += scale * rng.sample::<f64, _>(StandardNormal));
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![
            ("radar_embed.w".to_string(), &self.radar_embed.w),
            ("radar_embed.b".to_string(), &self.radar_embed.b),
            ("image_embed.w".to_string(), &self.image_embed.w),
            ("image_embed.b".to_string(), &self.image_embed.b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (dir, p) in [("r2i", &l.r2i), ("i2r", &l.i2r)] {
                for (name, m) in p.named() {
                    out.push((format!("layers.{i}.{dir}.{name}"), m));
                }
            }
        }
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = vec![
            ("radar_embed.w".to_string(), &mut self.radar_embed.w),
            ("radar_embed.b".to_string(), &mut self.radar_embed.b),
            ("image_embed.w".to_string(), &mut self.image_embed.w),
            ("image_embed.b".to_string(), &mut self.image_embed.b),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (dir, p) in [("r2i", &mut l.r2i), ("i2r", &mut l.i2r)] {
                for (name, m) in p.named_mut() {
                    out.push((format!("layers.{i}.{dir}.{name}"), m));
                }
            }
        }
        out.push(("head.w".to_string(), &mut self.head_w));
        out.push(("head.b".to_string(), &mut self.head_b));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, m)| m.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, image_map: &Array2<f64>, radar_map: &Array2<f64>) -> Result<ForwardTrace> {
        let cfg = &self.config;
        if image_map.dim() != cfg.image_shape || radar_map.dim() != cfg.radar_shape {
            return Err(Error::invalid(format!(
                "raster shapes {:?}/{:?} do not match configured {:?}/{:?}",
                image_map.dim(),
                radar_map.dim(),
                cfg.image_shape,
                cfg.radar_shape
            )));
        }
        let embed = |map: &Array2<f64>, e: &EmbedParams| -> Result<(Mat, Mat)> {
            let p = Patches::extract(map, cfg.patch)?;
            let mut x = &p.rows * &e.w + positional_encoding(p.grid_shape, cfg.d)?;
            for mut row in x.row_iter_mut() {
                row += &e.b;
            }
            Ok((p.rows, x))
        };
        let (radar_patches, mut xr) = embed(radar_map, &self.radar_embed)?;
        let (image_patches, mut xi) = embed(image_map, &self.image_embed)?;

        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (yr, r2i) = l.r2i.forward(&xr, &xi);
            let (yi, i2r) = l.i2r.forward(&xi, &xr);
            let (nr, ni) = (&xr + yr, &xi + yi);
            layers.push(LayerTrace { radar_in: xr, image_in: xi, r2i, i2r });
            xr = nr;
            xi = ni;
        }
        let pooled = pool_tokens(&xr, &xi)?;
        let (output, head_raw) = head_forward(&pooled, &self.head_w, &self.head_b);
        Ok(ForwardTrace {
            radar_patches,
            image_patches,
            layers,
            radar_out: xr,
            image_out: xi,
            pooled,
            head_raw,
            output,
        })
    }

    /// Gradient of a scalar w.r.t. every parameter, laid out as a parameter
    /// set of the same shape.
    pub fn backward(&self, trace: &ForwardTrace, g: &HeadGrad) -> CrossModalParams {
        let d_raw = head_raw_grad(&trace.head_raw, &trace.output, g);
        let mut grad = self.clone();
        grad.head_w = trace.pooled.transpose() * &d_raw;
        grad.head_b = d_raw.clone();
        let dz = &d_raw * self.head_w.transpose();

        let n = (trace.radar_out.nrows() + trace.image_out.nrows()) as f64;
        let spread = |rows: usize| {
            let mut m = Mat::zeros(rows, dz.ncols());
            for mut r in m.row_iter_mut() {
                r.copy_from(&(&dz / n));
            }
            m
        };
        let mut dxr = spread(trace.radar_out.nrows());
        let mut dxi = spread(trace.image_out.nrows());

        for (li, (lp, lt)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            let gr = lp.r2i.backward(&lt.radar_in, &lt.image_in, &lt.r2i, &dxr);
            let gi = lp.i2r.backward(&lt.image_in, &lt.radar_in, &lt.i2r, &dxi);
            dxr = &dxr + &gr.d_query_stream + &gi.d_kv_stream;
            dxi = &dxi + &gi.d_query_stream + &gr.d_kv_stream;
            grad.layers[li] = LayerParams { r2i: gr.params, i2r: gi.params };
        }
        grad.radar_embed = EmbedParams { w: trace.radar_patches.transpose() * &dxr, b: col_sum(&dxr) };
        grad.image_embed = EmbedParams { w: trace.image_patches.transpose() * &dxi, b: col_sum(&dxi) };
        grad
    }
}

fn col_sum(m: &Mat) -> Mat {
    let mut s = Mat::zeros(1, m.ncols());
    for row in m.row_iter() {
        s += row;
    }
    s
}

/// Mean over the concatenated sequence `[radar; image]`, as a `1 x d` row.
pub fn pool_tokens(radar: &Mat, image: &Mat) -> Result<Mat> {
    if radar.ncols() != image.ncols() {
        return Err(Error::invalid("token widths differ"));
    }
    let n = radar.nrows() + image.nrows();
    if n == 0 {
        return Err(Error::invalid("cannot pool empty token sets"));
    }
    Ok((col_sum(radar) + col_sum(image)) / n as f64)
}

fn head_forward(z: &Mat, w: &Mat, b: &Mat) -> (RefinementOutput, Mat) {
    let raw = z * w + b;
    let qn = (0..4).map(|i| raw[(0, i)].powi(2)).sum::<f64>().sqrt() + QUAT_EPS;
    let q = UnitQuaternion::new(raw[(0, 0)] / qn, raw[(0, 1)] / qn, raw[(0, 2)] / qn, raw[(0, 3)] / qn);
    let t = Vec3::new(raw[(0, 4)], raw[(0, 5)], raw[(0, 6)]);
    let rho = 1.0 / (1.0 + (-raw[(0, 7)]).exp());
    (RefinementOutput { q, t, rho }, raw)
}

/// Linear `d -> 8` head followed by quaternion normalization and a logistic
/// confidence.
pub fn refinement_head(z: &[f64], w: &Mat, b: &Mat) -> Result<RefinementOutput> {
    if w.nrows() != z.len() || w.ncols() != 8 || b.shape() != (1, 8) {
        return Err(Error::invalid("head shape mismatch"));
    }
    Ok(head_forward(&Mat::from_row_slice(1, z.len(), z), w, b).0)
}

fn head_raw_grad(raw: &Mat, out: &RefinementOutput, g: &HeadGrad) -> Mat {
    let mut d = Mat::zeros(1, 8);
    let qr = [raw[(0, 0)], raw[(0, 1)], raw[(0, 2)], raw[(0, 3)]];
    let n = qr.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = 1.0 / (n + QUAT_EPS);
    let proj = qr.iter().zip(&g.dq).map(|(a, b)| a * b).sum::<f64>();
    let k = if n > 0.0 { proj / (n * (n + QUAT_EPS).powi(2)) } else { 0.0 };
    for i in 0..4 {
        d[(0, i)] = s * g.dq[i] - k * qr[i];
    }
    for i in 0..3 {
        d[(0, 4 + i)] = g.dt[i];
    }
    d[(0, 7)] = g.drho * out.rho * (1.0 - out.rho);
    d
}

/// Tokenize both rasters, run the attention stack, pool and apply the head.
pub fn forward_refine(
    image_map: &Array2<f64>,
    radar_map: &Array2<f64>,
    params: &CrossModalParams,
) -> Result<RefinementOutput> {
    Ok(params.forward(image_map, radar_map)?.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, layers: usize) -> CrossModalConfig {
        CrossModalConfig { d, patch: 4, layers, image_shape: (8, 12), radar_shape: (12, 8) }
    }

    fn rand_map(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| rng.random::<f64>())
    }

    #[test]
    fn zero_params_give_identity_refinement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = CrossModalParams::zeros(cfg(16, 1)).unwrap();
        let out = forward_refine(&rand_map((8, 12), &mut rng), &rand_map((12, 8), &mut rng), &p).unwrap();
        assert_eq!(out.q.as_array(), [1.0 / (1.0 + QUAT_EPS), 0.0, 0.0, 0.0]);
        assert_eq!(out.t, Vec3::zeros());
        assert_eq!(out.rho, 0.5);
    }

    #[test]
    fn head_outputs_unit_quaternion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let w = Mat::from_fn(16, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = Mat::from_fn(1, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
            let out = refinement_head(&z, &w, &b).unwrap();
            assert!((out.q.norm() - 1.0).abs() < 1e-9);
            assert!(out.rho > 0.0 && out.rho < 1.0);
        }
        let mut b = Mat::zeros(1, 8);
        b[(0, 0)] = 1.0;
        b[(0, 7)] = -800.0;
        let out = refinement_head(&[0.0; 4], &Mat::zeros(4, 8), &b).unwrap();
        assert_eq!(out.rho, 0.0);
    }

    #[test]
    fn pooling_matches_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = Mat::from_fn(3, 8, |_, _| rng.random::<f64>());
        let i = Mat::from_fn(5, 8, |_, _| rng.random::<f64>());
        let z = pool_tokens(&r, &i).unwrap();
        for c in 0..8 {
            let s: f64 = (0..3).map(|k| r[(k, c)]).sum::<f64>() + (0..5).map(|k| i[(k, c)]).sum::<f64>();
            assert!((z[(0, c)] - s / 8.0).abs() < 1e-12);
        }
        let one = Mat::from_element(1, 4, 2.0);
        let two = Mat::from_element(1, 4, 4.0);
        assert_eq!(pool_tokens(&one, &two).unwrap(), Mat::from_element(1, 4, 3.0));
        assert!(pool_tokens(&Mat::zeros(0, 4), &Mat::zeros(0, 4)).is_err());
    }

    #[test]
    fn doubled_inputs_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = CrossModalParams::random(cfg(16, 2), &mut rng).unwrap();
        let im = rand_map((8, 12), &mut rng);
        let ra = rand_map((12, 8), &mut rng);
        let a = forward_refine(&im, &ra, &p).unwrap();
        let b = forward_refine(&(&im * 2.0), &(&ra * 2.0), &p).unwrap();
        assert!((b.q.norm() - 1.0).abs() < 1e-9 && b.t.iter().all(|x| x.is_finite()));
        assert_ne!(a.t, b.t);
    }

    #[test]
    fn attention_rows_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = CrossModalParams::random(cfg(16, 2), &mut rng).unwrap();
        p.jitter(0.3, &mut rng);
        let tr = p.forward(&rand_map((8, 12), &mut rng), &rand_map((12, 8), &mut rng)).unwrap();
        for (a, b) in tr.attention() {
            for row in a.row_iter().chain(b.row_iter()) {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let p = CrossModalParams::zeros(cfg(16, 1)).unwrap();
        assert!(p.forward(&Array2::zeros((8, 8)), &Array2::zeros((12, 8))).is_err());
        assert!(CrossModalParams::zeros(CrossModalConfig { layers: 0, ..cfg(16, 1) }).is_err());
    }
}
