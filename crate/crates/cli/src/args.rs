use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Pipeline driver for part flattening, VDM fitting and rendering.
///
/// Every command writes a JSON run-record (inputs and outputs with SHA-256
/// hashes, configuration, timings) next to its main output unless `--record`
/// says otherwise. Exit codes: 0 success, 2 usage, 3 data error, 4 numerical
/// failure (or failed self-test criteria).
#[derive(Debug, Parser)]
#[command(name = "vdmforge", version)]
pub struct Cli {
    /// Worker threads; falls back to VDMFORGE_THREADS, then to the number of CPUs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Where to write the run-record.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut a part out of a mesh with a voxel lasso described by a keypoint file.
    ExtractPart(ExtractPartArgs),
    /// Keep the points of a cloud that lie outside a closed mesh.
    FilterInterior(FilterInteriorArgs),
    /// Flatten a part's boundary onto its best-fit plane and move it into the tile frame.
    Flatten(FlattenArgs),
    /// Place a flattened part onto a square tile mesh.
    Stitch(StitchArgs),
    /// Random or explicit in-plane similarity of a flattened part.
    Augment(AugmentArgs),
    /// Fit a deformation field to a target and write its VDM.
    FitVdm(FitVdmArgs),
    /// Displace a plane or a UV-mapped mesh by a VDM.
    ApplyVdm(ApplyVdmArgs),
    /// Render normal maps and gray shading at fixed poses.
    Render(RenderArgs),
    /// Area-uniform oriented surface samples.
    Sample(SampleArgs),
    /// Run the acceptance criteria.
    Selftest(SelftestArgs),
    /// Run extract, flatten, stitch, fit, VDM and render over a manifest of inputs.
    Manifest(ManifestArgs),
}

#[derive(Debug, Args)]
pub struct ExtractPartArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// JSON with `resolution`, `keypoints` (voxel triples, in loop order), `seed` (voxel) and optional `dilation`.
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterInteriorArgs {
    /// Oriented point cloud (PLY with normals).
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    /// Points with |winding number| below this are kept.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlattenArgs {
    #[arg(long)]
    pub part: PathBuf,
    /// Larger in-plane extent of the flattened boundary, in tile units.
    #[arg(long, default_value_t = 0.8)]
    pub footprint: f64,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the model-to-tile frame as JSON.
    #[arg(long)]
    pub frame: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    #[arg(long)]
    pub part: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub tile_resolution: usize,
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    /// Rings around the seam to smooth afterwards (0 disables smoothing).
    #[arg(long, default_value_t = 2)]
    pub smooth_rings: usize,
    #[arg(long, default_value_t = 3)]
    pub smooth_iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    pub smooth_lambda: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub part: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// In-plane offset `x,y`; drawn from [-0.05, 0.05]^2 when absent.
    #[arg(long, value_parser = parse_vec2)]
    pub translation: Option<[f64; 2]>,
    /// Drawn from [0.9, 1.1] when absent.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Radians; drawn from [-pi, pi] when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub rotation: Option<f64>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitVdmArgs {
    /// Mesh (OBJ, PLY with faces) or oriented point cloud (PLY without faces), in the tile frame.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Output `.vdmf`.
    #[arg(long)]
    pub output: PathBuf,
    /// Fit report JSON; defaults to the output path with `.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// JSON fit configuration; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub boundary_weight: Option<f64>,
    #[arg(long)]
    pub grid_samples: Option<usize>,
    #[arg(long)]
    pub target_samples: Option<usize>,
    #[arg(long)]
    pub boundary_samples: Option<usize>,
    #[arg(long)]
    pub init_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ApplyVdmArgs {
    #[arg(long)]
    pub vdm: PathBuf,
    /// UV-mapped base mesh; when absent a plane with `--subdivision` vertices per side is displaced.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub subdivision: usize,
    /// UV rectangle `umin,vmin,umax,vmax` the VDM is stamped into.
    #[arg(long, value_parser = parse_vec4)]
    pub region: Option<[f64; 4]>,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoseSet {
    Generation,
    Evaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShadingKind {
    Normals,
    Gray,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalSource {
    Face,
    Interpolated,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, value_enum, default_value_t = PoseSet::Generation)]
    pub poses: PoseSet,
    /// Explicit poses `el:az` separated by commas; replaces `--poses`.
    #[arg(long, allow_hyphen_values = true)]
    pub pose: Option<String>,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = vdmforge::render::DEFAULT_RESOLUTION)]
    pub resolution: usize,
    #[arg(long, default_value_t = vdmforge::render::DEFAULT_FRAME_WIDTH)]
    pub frame_width: f64,
    /// Look-at point `x,y,z`.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0.5,0.5,0")]
    pub target: [f64; 3],
    #[arg(long, value_enum, default_value_t = ShadingKind::Normals)]
    pub shading: ShadingKind,
    #[arg(long, value_enum, default_value_t = NormalSource::Face)]
    pub normals: NormalSource,
    /// Direction towards the light `x,y,z`; defaults to the camera direction of each pose.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub light: Option<[f64; 3]>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Criteria to run, e.g. `1,3,8`; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u32>,
    /// Hidden width of the networks in the fitting criteria.
    #[arg(long, default_value_t = crate::selftest::FIT_WIDTH)]
    pub fit_width: usize,
    /// JSON summary of the results.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_vec2(s: &str) -> Result<[f64; 2], String> {
    parse_floats(s)
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    parse_floats(s)
}

fn parse_vec4(s: &str) -> Result<[f64; 4], String> {
    parse_floats(s)
}
