use rand::Rng;
use rand_distr::StandardNormal;

use super::Mat;

pub const LN_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(s: &Mat) -> Mat {
    let mut a = s.clone();
    for mut row in a.row_iter_mut() {
        let m = row.max();
        row.apply(|x| *x = (*x - m).exp());
        let z = row.sum();
        row /= z;
    }
    a
}

/// Per-row layer normalization without affine part; returns `(x_hat, rstd)`.
pub fn layer_norm(x: &Mat) -> (Mat, Vec<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.nrows());
    for mut row in xhat.row_iter_mut() {
        let mean = row.sum() / d;
        row.add_scalar_mut(-mean);
        let var = row.norm_squared() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row *= r;
        rstd.push(r);
    }
    (xhat, rstd)
}

fn add_row(m: &mut Mat, b: &Mat) {
    for mut row in m.row_iter_mut() {
        row += b;
    }
}

fn col_sum(m: &Mat) -> Mat {
    let mut s = Mat::zeros(1, m.ncols());
    for row in m.row_iter() {
        s += row;
    }
    s
}

/// One attention direction: queries from one stream, keys and values from
/// the other, followed by `MLP(LN(Z))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionParams {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    /// Additive logit bias, `n_query x n_key`.
    pub bias: Mat,
    pub ln_gain: Mat,
    pub ln_bias: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

#[derive(Clone, Debug)]
pub struct DirectionCache {
    q: Mat,
    k: Mat,
    v: Mat,
    /// Attention weights, rows sum to 1.
    pub attn: Mat,
    h: Mat,
    xhat: Mat,
    rstd: Vec<f64>,
    n: Mat,
    u: Mat,
    g: Mat,
}

#[derive(Clone, Debug)]
pub struct DirectionGrad {
    pub params: DirectionParams,
    pub d_query_stream: Mat,
    pub d_kv_stream: Mat,
}

impl DirectionParams {
    pub fn zeros(d: usize, n_q: usize, n_k: usize) -> Self {
        Self {
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
            bias: Mat::zeros(n_q, n_k),
            ln_gain: Mat::from_element(1, d, 1.0),
            ln_bias: Mat::zeros(1, d),
            w1: Mat::zeros(d, 4 * d),
            b1: Mat::zeros(1, 4 * d),
            w2: Mat::zeros(4 * d, d),
            b2: Mat::zeros(1, d),
        }
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`; biases and logit bias
    /// start at zero, LN gain at one.
    pub fn random(d: usize, n_q: usize, n_k: usize, rng: &mut impl Rng) -> Self {
        let mut gauss = |r: usize, c: usize| {
            let s = 1.0 / (r as f64).sqrt();
            Mat::from_fn(r, c, |_, _| s * rng.sample::<f64, _>(StandardNormal))
        };
        Self {
            wq: gauss(d, d),
            wk: gauss(d, d),
            wv: gauss(d, d),
            wo: gauss(d, d),
            w1: gauss(d, 4 * d),
            w2: gauss(4 * d, d),
            ..Self::zeros(d, n_q, n_k)
        }
    }

    pub fn named(&self) -> [(&'static str, &Mat); 11] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("bias", &self.bias),
            ("ln_gain", &self.ln_gain),
            ("ln_bias", &self.ln_bias),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Mat); 11] {
        [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("bias", &mut self.bias),
            ("ln_gain", &mut self.ln_gain),
            ("ln_bias", &mut self.ln_bias),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }

    /// Returns the residual increment `MLP(LN(Z))` for the query stream.
    pub fn forward(&self, xq: &Mat, xkv: &Mat) -> (Mat, DirectionCache) {
        let d = xq.ncols() as f64;
        let q = xq * &self.wq;
        let k = xkv * &self.wk;
        let v = xkv * &self.wv;
        let s = (&q * k.transpose()) / d.sqrt() + &self.bias;
        let attn = softmax_rows(&s);
        let h = &attn * &v;
        let z = &h * &self.wo;
        let (xhat, rstd) = layer_norm(&z);
        let mut n = xhat.clone();
        for mut row in n.row_iter_mut() {
            row.component_mul_assign(&self.ln_gain);
            row += &self.ln_bias;
        }
        let mut u = &n * &self.w1;
        add_row(&mut u, &self.b1);
        let g = u.map(gelu);
        let mut y = &g * &self.w2;
        add_row(&mut y, &self.b2);
        (y, DirectionCache { q, k, v, attn, h, xhat, rstd, n, u, g })
    }

    pub fn backward(&self, xq: &Mat, xkv: &Mat, cache: &DirectionCache, dy: &Mat) -> DirectionGrad {
        let d = xq.ncols() as f64;
        let c = cache;
        let dw2 = c.g.transpose() * dy;
        let db2 = col_sum(dy);
        let dg = dy * self.w2.transpose();
        let du = dg.zip_map(&c.u, |a, u| a * gelu_grad(u));
        let dw1 = c.n.transpose() * &du;
        let db1 = col_sum(&du);
        let dn = &du * self.w1.transpose();

        let d_ln_gain = col_sum(&dn.component_mul(&c.xhat));
        let d_ln_bias = col_sum(&dn);
        let mut dz = dn.clone();
        for (i, mut row) in dz.row_iter_mut().enumerate() {
            row.component_mul_assign(&self.ln_gain);
            let xh = c.xhat.row(i);
            let m1 = row.sum() / d;
            let m2 = row.dot(&xh) / d;
            let r = c.rstd[i];
            for j in 0..row.len() {
                row[j] = r * (row[j] - m1 - xh[j] * m2);
            }
        }

        let dwo = c.h.transpose() * &dz;
        let dh = &dz * self.wo.transpose();
        let da = &dh * c.v.transpose();
        let dv = c.attn.transpose() * &dh;
        let mut ds = da.component_mul(&c.attn);
        for (i, mut row) in ds.row_iter_mut().enumerate() {
            let dot = da.row(i).dot(&c.attn.row(i));
            for j in 0..row.len() {
                row[j] -= c.attn[(i, j)] * dot;
            }
        }
        let dbias = ds.clone();
        let dq = &ds * &c.k / d.sqrt();
        let dk = ds.transpose() * &c.q / d.sqrt();
        let dwq = xq.transpose() * &dq;
        let dwk = xkv.transpose() * &dk;
        let dwv = xkv.transpose() * &dv;
        let d_query_stream = &dq * self.wq.transpose();
        let d_kv_stream = &dk * self.wk.transpose() + &dv * self.wv.transpose();
        DirectionGrad {
            params: DirectionParams {
                wq: dwq,
                wk: dwk,
                wv: dwv,
                wo: dwo,
                bias: dbias,
                ln_gain: d_ln_gain,
                ln_bias: d_ln_bias,
                w1: dw1,
                b1: db1,
                w2: dw2,
                b2: db2,
            },
            d_query_stream,
            d_kv_stream,
        }
    }
}
