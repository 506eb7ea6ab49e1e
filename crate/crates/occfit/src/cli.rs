//! The `occfit` command line: `reconstruct`, `mesh`, `evaluate`, `synth` and `defaults`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use occfit_core::cloud::{self, PointCloud};
use occfit_core::field::OccupancyField;
use occfit_core::mesher::{self, GridSpec};
use occfit_core::metrics::{self, MetricReport};
use occfit_core::objective::LossBreakdown;
use occfit_core::trainer::{self, FitOutput, TrainObserver, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::io::{self, CloudFormat, MeshFormat};
use crate::synth::{self, Shape};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "occfit", version, about = "Surface reconstruction from point clouds with occupancy fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an occupancy field to a point cloud and save a checkpoint (and optionally a mesh).
    Reconstruct(ReconstructArgs),
    /// Extract a triangle mesh from a checkpoint.
    Mesh(MeshArgs),
    /// Compare a predicted mesh against a ground-truth mesh.
    Evaluate(EvaluateArgs),
    /// Sample a noisy point cloud from an analytic shape, with its exact mesh.
    Synth(SynthArgs),
    /// Print the full default configuration.
    Defaults,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Input point cloud (.xyz or ASCII .ply).
    #[arg(long, short)]
    pub input: PathBuf,
    /// key = value configuration file; unspecified keys keep their defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output checkpoint, also rewritten every `checkpoint_every` iterations.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output mesh (.obj or .ply) in the input's coordinates.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Loss log (CSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from this checkpoint instead of starting from the initialization.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Suppress progress lines on standard error.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output mesh (.obj or .ply).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Marching-cubes cells per axis.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    #[arg(long, value_enum)]
    pub format: Option<MeshFormat>,
    /// Keep normalized coordinates instead of mapping back to the input's.
    #[arg(long)]
    pub normalized: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Reconstructed mesh (.obj or .ply).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth mesh (.obj or .ply).
    #[arg(long)]
    pub gt: PathBuf,
    /// Surface samples drawn from each mesh.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// F-score distance threshold.
    #[arg(long, default_value_t = metrics::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Carry face normals with the samples (required for normal consistency).
    #[arg(long)]
    pub with_normals: bool,
    /// Metrics to report, comma separated: cd1, cd2, hd, fs, nc.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// Also write the report as CSV to this file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub shape: Shape,
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    /// Standard deviation of the isotropic Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output point cloud (.xyz).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Output ground-truth mesh (.obj or .ply).
    #[arg(long)]
    pub gt_mesh: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.render().to_string().trim_end().to_string())),
    };
    match cli.command {
        Command::Reconstruct(a) => reconstruct(&a),
        Command::Mesh(a) => mesh(&a),
        Command::Evaluate(a) => evaluate(&a).map(|_| ()),
        Command::Synth(a) => synth(&a),
        Command::Defaults => {
            print!("{}", RunConfig::default().to_canonical());
            Ok(())
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("input file not found: {}", path.display())))
    }
}

/// Streams loss rows to CSV and rewrites the checkpoint periodically.
struct Recorder<'a> {
    csv: Option<BufWriter<fs::File>>,
    csv_path: Option<&'a Path>,
    checkpoint_path: &'a Path,
    template: Checkpoint,
    quiet: bool,
    report_every: u64,
}

impl Recorder<'_> {
    fn write_row(&mut self, iteration: u64, l: &LossBreakdown) -> Result<()> {
        if let (Some(w), Some(path)) = (self.csv.as_mut(), self.csv_path) {
            writeln!(
                w,
                "{iteration},{},{},{},{},{}",
                l.l_samp, l.l_entr, l.lambda, l.total, l.skipped_degenerate
            )
            .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

impl TrainObserver for Recorder<'_> {
    fn on_log(&mut self, iteration: u64, loss: &LossBreakdown) -> occfit_core::Result<()> {
        self.write_row(iteration, loss)
            .map_err(|e| occfit_core::Error::External(e.to_string()))?;
        if !self.quiet && iteration.is_multiple_of(self.report_every) {
            eprintln!(
                "iter {iteration:>7}  l_samp {:.4e}  l_entr {:+.4e}  lambda {:.4}  skipped {}",
                loss.l_samp, loss.l_entr, loss.lambda, loss.skipped_degenerate
            );
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> occfit_core::Result<()> {
        let ck = Checkpoint {
            state: state.clone(),
            ..self.template.clone()
        };
        checkpoint::save(&ck, self.checkpoint_path).map_err(|e| occfit_core::Error::External(e.to_string()))
    }
}

pub const LOSS_CSV_HEADER: &str = "iteration,l_samp,l_entr,lambda,total,skipped_degenerate";

fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    require_file(&a.input)?;
    let config = match &a.config {
        Some(path) => {
            require_file(path)?;
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    let format = CloudFormat::from_path(&a.input)?;
    let mesh_format = a.mesh.as_deref().map(MeshFormat::from_path).transpose()?;
    let raw = io::load_cloud(&a.input, format)?;
    let cloud = PointCloud::from_points(raw)?.normalize()?;
    config.fit.validate(cloud.len())?;
    let bounds = cloud::pool_bounds(&cloud, config.fit.trainer.padding_fraction)?;

    let resumed = match &a.resume {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            if ck.network != config.fit.network || ck.seed != config.fit.trainer.seed {
                return Err(Error::Config(format!(
                    "{} was written with a different network or seed than the configuration",
                    path.display()
                )));
            }
            Some(ck.state)
        }
        None => None,
    };

    let csv = match &a.log {
        Some(path) => {
            let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
            writeln!(w, "{LOSS_CSV_HEADER}").map_err(|e| Error::io(path, e))?;
            Some(w)
        }
        None => None,
    };
    let template = Checkpoint {
        network: config.fit.network.clone(),
        normalization: cloud.normalization,
        bounds,
        seed: config.fit.trainer.seed,
        state: TrainState::new(
            occfit_core::diffnet::ParamVector::zeros(&config.fit.network),
            config.fit.trainer.seed,
        ),
    };
    let mut recorder = Recorder {
        csv,
        csv_path: a.log.as_deref(),
        checkpoint_path: &a.checkpoint,
        template,
        quiet: a.quiet,
        report_every: (config.fit.trainer.log_every * 10).max(1),
    };
    let started = std::time::Instant::now();
    let result = match resumed {
        Some(state) => trainer::resume(&cloud, &config.fit, state, &mut recorder),
        None => trainer::fit(&cloud, &config.fit, &mut recorder),
    };
    if let (Some(w), Some(path)) = (recorder.csv.as_mut(), a.log.as_deref()) {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let FitOutput { field, state, .. } = result?;
    if !a.quiet {
        eprintln!(
            "trained {} iterations in {:.1} s",
            state.iteration,
            started.elapsed().as_secs_f64()
        );
    }
    let ck = Checkpoint {
        state,
        ..recorder.template.clone()
    };
    checkpoint::save(&ck, &a.checkpoint)?;

    if let (Some(path), Some(format)) = (&a.mesh, mesh_format) {
        let grid = GridSpec {
            resolution: config.grid_resolution,
            bounds,
        };
        write_field_mesh(&field, &grid, &ck, path, format, false)?;
    }
    Ok(())
}

fn write_field_mesh(
    field: &OccupancyField,
    grid: &GridSpec,
    ck: &Checkpoint,
    path: &Path,
    format: MeshFormat,
    normalized: bool,
) -> Result<()> {
    let mesh = mesher::extract(field, grid)?;
    if mesh.is_empty() {
        eprintln!("warning: the zero level set does not cross the grid; writing an empty mesh");
    }
    let normalization = (!normalized).then_some(&ck.normalization);
    io::write_mesh(&mesh, normalization, path, format)
}

fn mesh(a: &MeshArgs) -> Result<()> {
    require_file(&a.checkpoint)?;
    let format = match a.format {
        Some(f) => f,
        None => MeshFormat::from_path(&a.out)?,
    };
    let ck = checkpoint::load(&a.checkpoint)?;
    let field = OccupancyField::new(ck.network.clone(), ck.state.params.clone())?;
    let grid = GridSpec {
        resolution: a.resolution,
        bounds: ck.bounds,
    };
    grid.validate()?;
    write_field_mesh(&field, &grid, &ck, &a.out, format, a.normalized)
}

const METRIC_NAMES: [&str; 5] = ["cd1", "cd2", "hd", "fs", "nc"];

/// Header and row of the report, Chamfer distances ×10².
pub fn report_csv(r: &MetricReport, selected: &[&str]) -> (String, String) {
    let mut header = Vec::new();
    let mut row = Vec::new();
    for name in selected {
        let (column, value) = match *name {
            "cd1" => ("cd1_x100", format!("{}", r.cd1 * 100.0)),
            "cd2" => ("cd2_x100", format!("{}", r.cd2 * 100.0)),
            "hd" => ("hd", format!("{}", r.hd)),
            "fs" => ("fs", format!("{}", r.fs)),
            _ => ("nc", r.nc.map_or(String::new(), |v| format!("{v}"))),
        };
        header.push(column.to_string());
        row.push(value);
    }
    header.extend(["samples".to_string(), "tau".to_string()]);
    row.extend([r.sample_count.to_string(), format!("{}", r.tau)]);
    (header.join(","), row.join(","))
}

pub fn report_table(r: &MetricReport, selected: &[&str]) -> String {
    let mut out = String::new();
    for name in selected {
        let (label, value) = match *name {
            "cd1" => ("CD1 (x100)", r.cd1 * 100.0),
            "cd2" => ("CD2 (x100)", r.cd2 * 100.0),
            "hd" => ("HD", r.hd),
            "fs" => ("FS", r.fs),
            _ => ("NC", r.nc.unwrap_or(f64::NAN)),
        };
        let _ = writeln!(out, "{label:<12}{value:>12.6}");
    }
    let _ = writeln!(out, "{:<12}{:>12}", "samples", r.sample_count);
    let _ = writeln!(out, "{:<12}{:>12}", "tau", r.tau);
    out
}

fn selected_metrics(a: &EvaluateArgs) -> Result<Vec<&'static str>> {
    let Some(list) = &a.metrics else {
        let n = if a.with_normals { 5 } else { 4 };
        return Ok(METRIC_NAMES[..n].to_vec());
    };
    let mut out = Vec::new();
    for m in list {
        let name = METRIC_NAMES
            .iter()
            .find(|n| n.eq_ignore_ascii_case(m.trim()))
            .ok_or_else(|| Error::Usage(format!("unknown metric {m:?}; expected cd1, cd2, hd, fs or nc")))?;
        if *name == "nc" && !a.with_normals {
            return Err(Error::Usage("normal consistency requested without --with-normals".into()));
        }
        out.push(*name);
    }
    Ok(out)
}

/// Runs `evaluate` and returns the report that was printed.
pub fn evaluate(a: &EvaluateArgs) -> Result<MetricReport> {
    let selected = selected_metrics(a)?;
    require_file(&a.pred)?;
    require_file(&a.gt)?;
    if a.samples == 0 {
        return Err(Error::Usage("--samples must be at least 1".into()));
    }
    let pred = io::read_mesh(&a.pred, MeshFormat::from_path(&a.pred)?)?;
    let gt = io::read_mesh(&a.gt, MeshFormat::from_path(&a.gt)?)?;
    let report = metrics::evaluate_meshes(&gt, &pred, a.samples, a.tau, a.with_normals, a.seed)?;
    print!("{}", report_table(&report, &selected));
    if let Some(path) = &a.csv {
        let (header, row) = report_csv(&report, &selected);
        fs::write(path, format!("{header}\n{row}\n")).map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

fn synth(a: &SynthArgs) -> Result<()> {
    if a.points == 0 {
        return Err(Error::Usage("--points must be at least 1".into()));
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(Error::Usage("--noise must be a non-negative number".into()));
    }
    let gt_format = a.gt_mesh.as_deref().map(MeshFormat::from_path).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let points = synth::sample(a.shape, a.points, a.noise, &mut rng);
    io::write_xyz(&a.out, &points)?;
    if let (Some(path), Some(format)) = (&a.gt_mesh, gt_format) {
        io::write_mesh(&synth::ground_truth(a.shape), None, path, format)?;
    }
    Ok(())
}
