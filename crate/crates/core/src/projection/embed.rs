use crate::radar_density::{doppler_weight, intensity_weight, detection_weight, DensityParams, RadarDetection};

/// Per-detection feature map `psi`.
pub trait FeatureEmbedding: Sync {
    fn channels(&self) -> usize;
    fn embed(&self, det: &RadarDetection) -> Vec<f64>;
}

/// Four hand-crafted channels, all in [0, 1]:
/// intensity weight, Doppler gate, normalized range, normalized Doppler.
#[derive(Clone, Copy, Debug)]
pub struct DefaultEmbedding {
    pub params: DensityParams,
    pub r_max: f64,
    pub v_max: f64,
}

impl DefaultEmbedding {
    pub fn new(params: DensityParams, r_max: f64) -> Self {
        Self { params, r_max, v_max: 10.0 }
    }
}

impl FeatureEmbedding for DefaultEmbedding {
    fn channels(&self) -> usize {
        4
    }

    fn embed(&self, det: &RadarDetection) -> Vec<f64> {
        embed_feature(det, &self.params, self.r_max, self.v_max).to_vec()
    }
}

pub fn embed_feature(det: &RadarDetection, params: &DensityParams, r_max: f64, v_max: f64) -> [f64; 4] {
    [
        intensity_weight(det.intensity, params),
        doppler_weight(det.doppler, params),
        (det.range / r_max).clamp(0.0, 1.0),
        ((det.doppler / v_max + 1.0) * 0.5).clamp(0.0, 1.0),
    ]
}

/// Default channels prefixed by the full detection weight `w_s * w_v`, so
/// channel 0 carries the Doppler-gated evidence used for alignment.
#[derive(Clone, Copy, Debug)]
pub struct WeightEmbedding(pub DefaultEmbedding);

impl FeatureEmbedding for WeightEmbedding {
    fn channels(&self) -> usize {
        5
    }

    fn embed(&self, det: &RadarDetection) -> Vec<f64> {
        let mut f = Vec::with_capacity(5);
        f.push(detection_weight(det, &self.0.params));
        f.extend(self.0.embed(det));
        f
    }
}
