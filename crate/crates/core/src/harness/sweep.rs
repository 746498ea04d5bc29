use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::HarnessConfig;
use super::evaluate::{evaluate, inject_miscalibration, mean_std, Axis, Metrics};
use super::refine::{refine_descent, StageTrace};
use super::scene::generate_scene;
use crate::geometry::TwistVector;
use crate::{par, Error, Result};

/// Stated in every report.
pub const SURROGATE_NOTE: &str = "task gradient: negative NCC between the splatted radar weight map and the \
target occupancy raster (surrogate for a detection loss; no trained detector)";

/// Joint perturbation box; directions are drawn in box-normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBox {
    pub name: String,
    pub rot_deg: f64,
    pub trans_m: f64,
    /// Scales of the box at which directions are evaluated.
    pub fractions: Vec<f64>,
    pub random_directions: usize,
}

impl PerturbationBox {
    pub fn r1() -> Self {
        Self { name: "R1".into(), rot_deg: 10.0, trans_m: 0.25, fractions: vec![1.0], random_directions: 8 }
    }

    pub fn r2() -> Self {
        Self { name: "R2".into(), rot_deg: 20.0, trans_m: 1.5, fractions: vec![1.0], random_directions: 8 }
    }

    /// Six axis-aligned unit directions followed by random unit 6-vectors.
    pub fn directions(&self, seed: u64) -> Vec<[f64; 6]> {
        let mut out: Vec<[f64; 6]> = (0..6)
            .map(|i| {
                let mut d = [0.0; 6];
                d[i] = 1.0;
                d
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while out.len() < 6 + self.random_directions {
            let v: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                out.push(v.map(|x| x / n));
            }
        }
        out
    }

    pub fn twist(&self, unit: &[f64; 6], fraction: f64) -> TwistVector {
        let r = self.rot_deg.to_radians() * fraction;
        let t = self.trans_m * fraction;
        TwistVector::from_slice(&[unit[0] * t, unit[1] * t, unit[2] * t, unit[3] * r, unit[4] * r, unit[5] * r])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub axes: Vec<Axis>,
    pub rotation_magnitudes_deg: Vec<f64>,
    pub translation_magnitudes_m: Vec<f64>,
    /// Evaluate `+m` and `-m` (direction ids 0 and 1), else `+m` only.
    pub signed: bool,
    /// Seeds per point: `seed, seed + 1, ...`.
    pub seeds: usize,
    pub boxes: Vec<PerturbationBox>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axes: Axis::ALL.to_vec(),
            rotation_magnitudes_deg: vec![2.0, 5.0, 10.0],
            translation_magnitudes_m: vec![0.05, 0.1, 0.25],
            signed: true,
            seeds: 3,
            boxes: vec![PerturbationBox::r1()],
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let mags = self.rotation_magnitudes_deg.iter().chain(&self.translation_magnitudes_m);
        if mags.clone().any(|m| !m.is_finite()) {
            return Err(Error::invalid("sweep magnitudes must be finite"));
        }
        for b in &self.boxes {
            if !(b.rot_deg >= 0.0 && b.trans_m >= 0.0) || b.fractions.iter().any(|f| !f.is_finite()) {
                return Err(Error::invalid(format!("box {}: extents must be >= 0 and fractions finite", b.name)));
            }
        }
        Ok(())
    }
}

/// One refinement run of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Axis name or box name.
    pub label: String,
    /// Degrees or meters for axis points, box fraction for box points.
    pub magnitude: f64,
    pub direction_id: usize,
    pub seed: u64,
    pub delta: [f64; 6],
}

pub fn sweep_points(cfg: &HarnessConfig) -> Vec<SweepPoint> {
    let sw = &cfg.sweep;
    let seeds: Vec<u64> = (0..sw.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut out = Vec::new();
    for &axis in &sw.axes {
        let mags = if axis.is_rotation() { &sw.rotation_magnitudes_deg } else { &sw.translation_magnitudes_m };
        for &m in mags {
            let signs: &[f64] = if sw.signed { &[1.0, -1.0] } else { &[1.0] };
            for (dir, s) in signs.iter().enumerate() {
                for &seed in &seeds {
                    out.push(SweepPoint {
                        label: axis.name().into(),
                        magnitude: m,
                        direction_id: dir,
                        seed,
                        delta: axis.twist(s * m).as_array(),
                    });
                }
            }
        }
    }
    for (bi, b) in sw.boxes.iter().enumerate() {
        let dirs = b.directions(cfg.seed.wrapping_add(0x5EED_0000 + bi as u64));
        for &f in &b.fractions {
            for (di, d) in dirs.iter().enumerate() {
                for &seed in &seeds {
                    out.push(SweepPoint {
                        label: b.name.clone(),
                        magnitude: f,
                        direction_id: di,
                        seed,
                        delta: b.twist(d, f).as_array(),
                    });
                }
            }
        }
    }
    out
}

/// CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub magnitude: f64,
    pub direction_id: usize,
    pub seed: u64,
    pub rot_before_deg: f64,
    pub rot_after_deg: f64,
    pub trans_before_cm: f64,
    pub trans_after_cm: f64,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub point: SweepPoint,
    pub metrics: Metrics,
    pub iters: usize,
    pub converged: bool,
    pub final_loss: Option<f64>,
    pub loss_trace: Vec<StageTrace>,
    pub diagnostic: Option<String>,
}

impl SweepRecord {
    pub fn row(&self) -> SweepRow {
        SweepRow {
            axis: self.point.label.clone(),
            magnitude: self.point.magnitude,
            direction_id: self.point.direction_id,
            seed: self.point.seed,
            rot_before_deg: self.metrics.rot_before_deg,
            rot_after_deg: self.metrics.rot_after_deg,
            trans_before_cm: self.metrics.trans_before_m * 100.0,
            trans_after_cm: self.metrics.trans_after_m * 100.0,
            iters: self.iters,
            converged: self.converged,
        }
    }
}

/// Runs of one axis (or box), in sweep order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub magnitudes: Vec<f64>,
    pub records: Vec<SweepRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis: String,
    pub magnitude: f64,
    pub runs: usize,
    pub converged: usize,
    pub rot_before_deg: (f64, f64),
    pub rot_after_deg: (f64, f64),
    pub trans_before_cm: (f64, f64),
    pub trans_after_cm: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub note: String,
    pub seed: u64,
    pub results: Vec<SweepResult>,
    pub summary: Vec<SummaryRow>,
}

/// Inject, refine and evaluate one point. Refinement failures are recorded,
/// not propagated.
pub fn run_point(cfg: &HarnessConfig, p: &SweepPoint) -> Result<SweepRecord> {
    let scene = generate_scene(&cfg.scene, p.seed)?;
    let perturbed = inject_miscalibration(&scene.t_true, &TwistVector::from_slice(&p.delta))?;
    let (refined, iters, converged, final_loss, loss_trace, diagnostic) =
        match refine_descent(&scene, &perturbed, &cfg.density, &cfg.descent) {
            Ok(o) => {
                let fl = o.final_loss();
                (o.transform, o.iterations, o.converged, fl, o.stages, o.diagnostic)
            }
            Err(e) => (perturbed, 0, false, None, Vec::new(), Some(e.to_string())),
        };
    Ok(SweepRecord {
        point: p.clone(),
        metrics: evaluate(&refined, &scene.t_true, &perturbed),
        iters,
        converged,
        final_loss,
        loss_trace,
        diagnostic,
    })
}

pub fn run_sweep(cfg: &HarnessConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let points = sweep_points(cfg);
    let records = par::map(&points, |p| run_point(cfg, p)).into_iter().collect::<Result<Vec<_>>>()?;

    let mut results: Vec<SweepResult> = Vec::new();
    for r in records {
        match results.iter_mut().find(|g| g.axis == r.point.label) {
            Some(g) => {
                if !g.magnitudes.contains(&r.point.magnitude) {
                    g.magnitudes.push(r.point.magnitude);
                }
                g.records.push(r);
            }
            None => results.push(SweepResult {
                axis: r.point.label.clone(),
                magnitudes: vec![r.point.magnitude],
                records: vec![r],
            }),
        }
    }
    let mut summary = Vec::new();
    for g in &results {
        for &m in &g.magnitudes {
            let rows: Vec<SweepRow> =
                g.records.iter().filter(|r| r.point.magnitude == m).map(SweepRecord::row).collect();
            let col = |f: fn(&SweepRow) -> f64| mean_std(&rows.iter().map(f).collect::<Vec<_>>());
            summary.push(SummaryRow {
                axis: g.axis.clone(),
                magnitude: m,
                runs: rows.len(),
                converged: rows.iter().filter(|r| r.converged).count(),
                rot_before_deg: col(|r| r.rot_before_deg),
                rot_after_deg: col(|r| r.rot_after_deg),
                trans_before_cm: col(|r| r.trans_before_cm),
                trans_after_cm: col(|r| r.trans_after_cm),
            });
        }
    }
    Ok(SweepReport { note: SURROGATE_NOTE.into(), seed: cfg.seed, results, summary })
}

impl SweepReport {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.results.iter().flat_map(|g| g.records.iter().map(SweepRecord::row)).collect()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in self.rows() {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Fixed-width table of mean ± std per axis and magnitude.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.note);
        let _ = writeln!(
            s,
            "{:<6} {:>9} {:>5} {:>5} {:>17} {:>17} {:>17} {:>17}",
            "axis", "magnitude", "runs", "conv", "rot before (deg)", "rot after (deg)", "trans before (cm)", "trans after (cm)"
        );
        let pm = |(m, sd): (f64, f64)| format!("{m:.3} ± {sd:.3}");
        for r in &self.summary {
            let _ = writeln!(
                s,
                "{:<6} {:>9.3} {:>5} {:>5} {:>17} {:>17} {:>17} {:>17}",
                r.axis,
                r.magnitude,
                r.runs,
                r.converged,
                pm(r.rot_before_deg),
                pm(r.rot_after_deg),
                pm(r.trans_before_cm),
                pm(r.trans_after_cm)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HarnessConfig {
        let mut cfg = HarnessConfig::default();
        cfg.scene.reflector_count = 12;
        cfg.scene.clutter_count = 0;
        cfg.scene.jitter = 0.0;
        cfg.descent.max_iters = 150;
        cfg.descent.sigmas = vec![4.0, 2.0, 1.0];
        cfg.descent.rotation_only_stages = 1;
        cfg.sweep = SweepSpec {
            axes: vec![Axis::Ry, Axis::Tx],
            rotation_magnitudes_deg: vec![0.0, 3.0],
            translation_magnitudes_m: vec![0.1],
            signed: true,
            seeds: 1,
            boxes: vec![PerturbationBox { random_directions: 1, ..PerturbationBox::r1() }],
        };
        cfg
    }

    #[test]
    fn point_enumeration() {
        let cfg = tiny();
        let pts = sweep_points(&cfg);
        assert_eq!(pts.len(), 2 * 2 + 2 + 7);
        let b = &pts[6..];
        assert!(b.iter().all(|p| p.label == "R1"));
        for p in b {
            let d = p.delta;
            assert!(d[..3].iter().all(|x| x.abs() <= 0.25 + 1e-12));
            assert!(d[3..].iter().all(|x| x.abs() <= 10f64.to_radians() + 1e-12));
        }
    }

    #[test]
    fn csv_is_deterministic() {
        let cfg = tiny();
        let mut a = Vec::new();
        let mut b = Vec::new();
        let ra = run_sweep(&cfg).unwrap();
        ra.write_csv(&mut a).unwrap();
        run_sweep(&cfg).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with(
            "axis,magnitude,direction_id,seed,rot_before_deg,rot_after_deg,trans_before_cm,trans_after_cm,iters,converged\n"
        ));
        assert!(ra.summary_table().contains("NCC"));
        for r in ra.results.iter().flat_map(|g| &g.records) {
            assert!(r.loss_trace.iter().all(|s| s.is_non_increasing()));
            if r.point.magnitude == 0.0 && r.point.label == "ry" {
                assert_eq!(r.metrics.rot_before_deg, 0.0);
                assert!(r.metrics.rot_after_deg < 0.3, "{:?}", r.metrics);
            }
        }
    }
}
