use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use radcam::floatgrid::{write_density_grid, write_feature_map, write_pgm};
use radcam::geometry::{parse_transform_record, transform_to_matrix_record, transform_to_quat_record, TwistVector};
use radcam::harness::{
    crossmodal_gradient_suite, evaluate, generate_scene, inject_miscalibration, refine_descent, run_sweep,
    splat_gradient_suite, splat_scene, Axis, HarnessConfig, Metrics, RefineOutcome,
};
use radcam::projection::MapSource;
use radcam::radar_density::{build_density, group_by_frame, read_detections, IntensityStats};

#[derive(Parser)]
#[command(name = "radcam", version, about = "Radar-camera extrinsic alignment harness")]
struct Cli {
    /// JSON config; omitted fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Radar detection file -> persistence density grid.
    Density(DensityArgs),
    /// Synthetic scene + transform -> splatted feature map.
    Splat(SplatArgs),
    /// Synthetic scene + injected perturbation -> refined transform and trace.
    Refine(RefineArgs),
    /// Axis-wise perturbation sweep -> CSV, JSON and a summary table.
    Sweep(SweepArgs),
    /// Finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DensityArgs {
    /// Detections as CSV (`frame,r,theta_deg,v,s`) or JSON lines.
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the density as an 8-bit PGM.
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Keep mu_s and sigma_s from the config instead of the file statistics.
    #[arg(long)]
    keep_stats: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MapKind {
    Accumulated,
    Normalized,
    Mass,
}

#[derive(Args)]
struct SplatArgs {
    #[arg(short, long)]
    output: PathBuf,
    /// Transform record (4x4 rows or `qw qx qy qz tx ty tz`); defaults to the true extrinsic.
    #[arg(long)]
    transform: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "accumulated")]
    map: MapKind,
    /// Also write channel 0 as an 8-bit PGM.
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Write the target raster as an 8-bit PGM.
    #[arg(long)]
    target_pgm: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    /// Single-axis perturbation.
    #[arg(long, requires = "magnitude", conflicts_with = "delta")]
    axis: Option<Axis>,
    /// Degrees for rotation axes, meters for translation axes.
    #[arg(long, allow_hyphen_values = true)]
    magnitude: Option<f64>,
    /// Full perturbation `tx,ty,tz,rx,ry,rz` (meters, degrees).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta: Option<Vec<f64>>,
    /// Refined transform record.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Write the `qw qx qy qz tx ty tz` form instead of the 4x4 rows.
    #[arg(long)]
    quat: bool,
    /// Loss trace and metrics as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the summary table here instead of stdout.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    scenes: usize,
    /// Sampled entries per cross-modal tensor.
    #[arg(long, default_value_t = 16)]
    per_tensor: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_config(cli: &Cli) -> Result<HarnessConfig> {
    let mut cfg = match &cli.config {
        Some(p) => HarnessConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => HarnessConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_density(cfg: &HarnessConfig, a: &DensityArgs) -> Result<()> {
    let dets = read_detections(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if dets.is_empty() {
        bail!("{} has no detections", a.input.display());
    }
    let mut params = cfg.density;
    if !a.keep_stats {
        params = params.with_stats(IntensityStats::from_detections(&dets));
    }
    let frames: Vec<_> = group_by_frame(&dets).into_iter().map(|(_, f)| f).collect();
    let out = build_density(&frames, None, &cfg.grid, &params, cfg.scene.h0)?;
    info!(
        "{} detections in {} frames, {} outside the grid",
        dets.len(),
        frames.len(),
        out.out_of_bounds
    );
    let mut w = create(&a.output)?;
    write_density_grid(&mut w, &out.density)?;
    w.flush()?;
    if let Some(p) = &a.pgm {
        let mut w = create(p)?;
        write_pgm(&mut w, &out.density.values)?;
        w.flush()?;
    }
    println!(
        "density {}x{}: min {:.4} max {:.4} sum {:.4}",
        cfg.grid.n_range,
        cfg.grid.n_azimuth,
        out.density.min(),
        out.density.max(),
        out.density.sum()
    );
    Ok(())
}

fn cmd_splat(cfg: &HarnessConfig, a: &SplatArgs) -> Result<()> {
    let scene = generate_scene(&cfg.scene, cfg.seed)?;
    let t = match &a.transform {
        Some(p) => parse_transform_record(&std::fs::read_to_string(p)?)?,
        None => scene.t_true,
    };
    let map = splat_scene(&scene, &t, &cfg.density, cfg.descent.z_min)?;
    let data = match a.map {
        MapKind::Accumulated => map.accum.clone(),
        MapKind::Normalized => map.normalized.clone(),
        MapKind::Mass => map.mass.clone().insert_axis(ndarray::Axis(0)),
    };
    let mut w = create(&a.output)?;
    write_feature_map(&mut w, &data)?;
    w.flush()?;
    if let Some(p) = &a.pgm {
        let mut w = create(p)?;
        write_pgm(&mut w, &data.index_axis(ndarray::Axis(0), 0).to_owned())?;
        w.flush()?;
    }
    if let Some(p) = &a.target_pgm {
        let mut w = create(p)?;
        write_pgm(&mut w, &scene.target_raster)?;
        w.flush()?;
    }
    let (c, h, wd) = data.dim();
    println!("feature map {c}x{h}x{wd}, total mass {:.4}", map.mass.sum());
    Ok(())
}

fn perturbation(a: &RefineArgs) -> Result<TwistVector> {
    if let (Some(axis), Some(m)) = (a.axis, a.magnitude) {
        return Ok(axis.twist(m));
    }
    match &a.delta {
        Some(d) => {
            if d.len() != 6 {
                bail!("--delta needs 6 comma-separated values, got {}", d.len());
            }
            let mut v = [0.0; 6];
            for (i, x) in d.iter().enumerate() {
                v[i] = if i >= 3 { x.to_radians() } else { *x };
            }
            Ok(TwistVector::from_slice(&v))
        }
        None => bail!("give --axis with --magnitude, or --delta"),
    }
}

#[derive(serde::Serialize)]
struct RefineReport<'a> {
    seed: u64,
    delta: [f64; 6],
    metrics: Metrics,
    outcome: &'a RefineOutcome,
}

fn cmd_refine(cfg: &HarnessConfig, a: &RefineArgs) -> Result<()> {
    let delta = perturbation(a)?;
    let scene = generate_scene(&cfg.scene, cfg.seed)?;
    let perturbed = inject_miscalibration(&scene.t_true, &delta)?;
    let out = refine_descent(&scene, &perturbed, &cfg.density, &cfg.descent)?;
    let m = evaluate(&out.transform, &scene.t_true, &perturbed);
    println!(
        "rotation {:.4} -> {:.4} deg, translation {:.2} -> {:.2} cm, {} evaluations{}",
        m.rot_before_deg,
        m.rot_after_deg,
        100.0 * m.trans_before_m,
        100.0 * m.trans_after_m,
        out.iterations,
        if out.converged { "" } else { " (not converged)" }
    );
    if let Some(d) = &out.diagnostic {
        println!("note: {d}");
    }
    let record = if a.quat {
        transform_to_quat_record(&out.transform)
    } else {
        transform_to_matrix_record(&out.transform)
    };
    match &a.output {
        Some(p) => std::fs::write(p, record)?,
        None => print!("{record}"),
    }
    if let Some(p) = &a.trace {
        let report = RefineReport { seed: cfg.seed, delta: delta.as_array(), metrics: m, outcome: &out };
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_sweep(cfg: &HarnessConfig, a: &SweepArgs) -> Result<()> {
    let report = run_sweep(cfg)?;
    if let Some(p) = &a.csv {
        report.write_csv(create(p)?)?;
    }
    if let Some(p) = &a.json {
        let mut w = create(p)?;
        report.write_json(&mut w)?;
        w.flush()?;
    }
    let table = report.summary_table();
    match &a.summary {
        Some(p) => std::fs::write(p, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &HarnessConfig, a: &GradcheckArgs) -> Result<()> {
    for (name, source) in [("normalized", MapSource::Normalized), ("accumulated", MapSource::Accumulated)] {
        let r = splat_gradient_suite(a.scenes, cfg.seed, source)?;
        println!(
            "splat {name}: {} scenes, {} components checked, {} excluded, max rel error {:.3e}",
            r.scenes, r.components_checked, r.components_excluded, r.max_rel_error
        );
    }
    for e in crossmodal_gradient_suite(cfg.seed, a.per_tensor)? {
        println!(
            "crossmodal d={} L={}: {} tensors, max rel error {:.3e}, attention row-sum error {:.1e}",
            e.d, e.layers, e.tensors, e.max_rel_error, e.max_row_sum_error
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Density(a) => cmd_density(&cfg, a),
        Command::Splat(a) => cmd_splat(&cfg, a),
        Command::Refine(a) => cmd_refine(&cfg, a),
        Command::Sweep(a) => cmd_sweep(&cfg, a),
        Command::Gradcheck(a) => cmd_gradcheck(&cfg, a),
    }
}
