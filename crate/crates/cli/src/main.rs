//! `worldmotion`: batch editing, rendering, motion-bank management and the
//! edit service.
//!
//! Exit codes: 0 success, 2 validation or usage error, 3 degenerate
//! geometry, 4 I/O error.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde_json::{json, Value};

use worldmotion::bank::{loop_clip, MotionBank, MotionClip};
use worldmotion::body::load_asset;
use worldmotion::body::mannequin::mannequin;
use worldmotion::body::BodyModelAsset;
use worldmotion::camera::CameraTrack;
use worldmotion::config::{Config, HeadingMode};
use worldmotion::ingest::parse_bundle;
use worldmotion::motion::MotionSequence;
use worldmotion::pipeline::{edit_scene, render_motion, write_edit_outputs, ClipChoice, Scene};
use worldmotion::render::RenderOptions;
use worldmotion::synthetic::{
    arc_trajectory, side_camera, walking_motion, write_walking_scene, SceneParams, WalkParams,
};
use worldmotion::trajectory::{Norm, OrientationRemoval, Trajectory2D};
use worldmotion::{Error, Result};

#[derive(Parser)]
#[command(
    name = "worldmotion",
    version,
    about = "World-space motion editing and guidance rendering"
)]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// TOML config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Re-route the bundle's motion (or a bank clip) along a drawn trajectory.
    Edit(EditArgs),
    /// Render guidance maps for a motion sequence.
    Render(RenderArgs),
    /// Manage a motion bank.
    Bank {
        #[command(subcommand)]
        command: BankCommand,
    },
    /// Run the HTTP edit service.
    Serve(ServeArgs),
    /// Write a synthetic walking scene, a quarter-circle trajectory and a one-cycle clip.
    Synth(SynthArgs),
}

#[derive(Args)]
struct AssetArg {
    /// Body model asset (binary container or `.json`); defaults to the built-in mannequin.
    #[arg(long)]
    asset: Option<PathBuf>,
}

impl AssetArg {
    fn load(&self) -> Result<BodyModelAsset> {
        match &self.asset {
            Some(p) => load_asset(p),
            None => Ok(mannequin()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L1,
    L2,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadingArg {
    Facing,
    Literal,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// JSON list of keypoints `{u, v, frame?}`.
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Bank clip to perform instead of the captured motion.
    #[arg(long, requires = "bank")]
    clip: Option<String>,
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Looped clip length; defaults to the bundle's frame count.
    #[arg(long, requires = "clip")]
    frames: Option<usize>,
    /// Seam blend window in frames.
    #[arg(long)]
    blend: Option<usize>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    /// Keep the drawn path's own scale instead of matching the original distance.
    #[arg(long)]
    no_rescale: bool,
    #[arg(long)]
    heading_window: Option<usize>,
    #[arg(long, value_enum)]
    heading_mode: Option<HeadingArg>,
    /// Remove only the yaw of the source orientation.
    #[arg(long)]
    yaw_only: bool,
    #[arg(long)]
    no_ground: bool,
    #[arg(long)]
    ground_window: Option<usize>,
    /// Ignore bundle depth maps and lift onto the ground plane.
    #[arg(long)]
    no_depth: bool,
    #[command(flatten)]
    asset: AssetArg,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    sequence: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Also write float depth as PFM.
    #[arg(long)]
    depth_pfm: bool,
    #[command(flatten)]
    asset: AssetArg,
}

#[derive(Subcommand)]
enum BankCommand {
    /// Store a motion sequence as a clip.
    Add {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long = "tag")]
        tags: Vec<String>,
        #[arg(long)]
        not_loopable: bool,
        #[arg(long, default_value = "")]
        meta: String,
        /// Overwrite an existing clip with the same id.
        #[arg(long)]
        replace: bool,
    },
    /// List clips, optionally only those carrying every given tag.
    List {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long = "tag")]
        tags: Vec<String>,
    },
    /// Loop a clip to a target length and write the sequence.
    Loop {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        blend: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Mirror sessions here and restore them on start.
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
    /// Allowed browser origin; any origin when omitted.
    #[arg(long)]
    cors_origin: Option<String>,
    #[command(flatten)]
    asset: AssetArg,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 120)]
    frames: usize,
    /// Frames in the written clip, one gait cycle.
    #[arg(long, default_value_t = 40)]
    clip_frames: usize,
    #[arg(long, default_value_t = 512)]
    width: u32,
    #[arg(long, default_value_t = 512)]
    height: u32,
    /// Arc radius of the drawn trajectory, meters.
    #[arg(long, default_value_t = 3.0)]
    radius: f64,
    /// Turn of the drawn trajectory, degrees; positive turns left.
    #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
    turn_deg: f64,
    #[arg(long, default_value_t = 5)]
    keypoints: usize,
    /// Include a ground depth map in the bundle.
    #[arg(long)]
    depth: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::read(p)?,
        None => Config::default(),
    };
    let out = match &cli.command {
        Command::Edit(a) => edit(a, cfg)?,
        Command::Render(a) => render(a, &cfg)?,
        Command::Bank { command } => bank(command, &cfg)?,
        Command::Serve(a) => return serve(a),
        Command::Synth(a) => synth(a)?,
    };
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&out.json).expect("json serializes"));
    } else {
        for line in out.lines {
            println!("{line}");
        }
    }
    Ok(())
}

struct Output {
    json: Value,
    lines: Vec<String>,
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::validation(format!("{what} {} does not exist", p.display())))
    }
}

fn apply_overrides(a: &EditArgs, mut cfg: Config) -> Result<Config> {
    let t = &mut cfg.trajectory;
    if let Some(n) = a.norm {
        t.norm = match n {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
        };
    }
    if a.no_rescale {
        t.rescale = false;
    }
    if let Some(w) = a.heading_window {
        t.heading_window = w;
    }
    if let Some(m) = a.heading_mode {
        t.heading_mode = match m {
            HeadingArg::Facing => HeadingMode::Facing,
            HeadingArg::Literal => HeadingMode::Literal,
        };
    }
    if a.yaw_only {
        t.orientation_removal = OrientationRemoval::YawOnly;
    }
    if a.no_ground {
        t.ground = false;
    }
    if let Some(w) = a.ground_window {
        t.ground_window = w;
    }
    if a.no_depth {
        t.use_depth = false;
    }
    if let Some(b) = a.blend {
        cfg.looping.blend_window = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn edit(a: &EditArgs, cfg: Config) -> Result<Output> {
    require_file(&a.trajectory, "trajectory file")?;
    let cfg = apply_overrides(a, cfg)?;
    let asset = a.asset.load()?;
    let bundle = parse_bundle(&a.bundle).map_err(|e| e.context("ingest"))?;
    let traj = Trajectory2D::read(&a.trajectory)?;
    let clip = match (&a.clip, &a.bank) {
        (Some(id), Some(root)) => Some(MotionBank::open(root)?.load(id)?),
        _ => None,
    };
    let choice = clip.as_ref().map(|c| ClipChoice {
        clip: c,
        frames: a.frames,
        blend_window: a.blend,
    });
    let scene = Scene::new(&asset, &bundle, &cfg)?;
    let outcome = edit_scene(&asset, &scene, &traj, choice, &cfg)?;
    let [seq, report, camera] = write_edit_outputs(&outcome, &scene.camera, &a.out_dir)?;
    let r = &outcome.report;
    let t = &r.trajectory;
    Ok(Output {
        json: json!({
            "sequence": seq,
            "report": report,
            "camera": camera,
            "summary": r,
        }),
        lines: vec![
            format!("wrote {}", seq.display()),
            format!("wrote {}", report.display()),
            format!("wrote {}", camera.display()),
            format!(
                "{} frames from {}, rescale {:.4}, {} depth / {} ground-lifted frames, {} degenerate",
                r.frame_count,
                r.motion_source,
                t.rescale_factor,
                t.depth_frames.len(),
                t.ground_frames.len(),
                r.degenerate_frames.len()
            ),
        ],
    })
}

fn render(a: &RenderArgs, cfg: &Config) -> Result<Output> {
    let asset = a.asset.load()?;
    let seq = MotionSequence::read(&a.sequence)?;
    let cams = CameraTrack::read(&a.camera)?;
    let opts = RenderOptions {
        width: a.width.unwrap_or(cfg.render.width),
        height: a.height.unwrap_or(cfg.render.height),
        depth_pfm: a.depth_pfm || cfg.render.depth_pfm,
    };
    let manifest = render_motion(&asset, &seq, &cams, &opts, &a.out)?;
    let path = a.out.join("manifest.json");
    Ok(Output {
        json: json!({ "manifest": path, "frame_count": manifest.frame_count, "resolution": manifest.resolution }),
        lines: vec![format!(
            "rendered {} frames at {}x{} into {}",
            manifest.frame_count,
            opts.width,
            opts.height,
            a.out.display()
        )],
    })
}

fn bank(cmd: &BankCommand, cfg: &Config) -> Result<Output> {
    match cmd {
        BankCommand::Add {
            bank,
            id,
            sequence,
            tags,
            not_loopable,
            meta,
            replace,
        } => {
            let mut b = MotionBank::open(bank)?;
            let clip = MotionClip {
                id: id.clone(),
                tags: tags.clone(),
                sequence: MotionSequence::read(sequence)?,
                loopable: !not_loopable,
                source_meta: meta.clone(),
            };
            b.add(&clip, *replace)?;
            let info = clip.info();
            Ok(Output {
                lines: vec![format!("added {} ({} frames)", info.id, info.frame_count)],
                json: json!(info),
            })
        }
        BankCommand::List { bank, tags } => {
            let b = MotionBank::open(bank)?;
            let clips = b.query(tags);
            Ok(Output {
                lines: clips
                    .iter()
                    .map(|c| format!("{}\t{} frames\t{}", c.id, c.frame_count, c.tags.join(",")))
                    .collect(),
                json: json!(clips),
            })
        }
        BankCommand::Loop {
            bank,
            id,
            frames,
            blend,
            out,
        } => {
            let clip = MotionBank::open(bank)?.load(id)?;
            let looped = loop_clip(&clip.sequence, *frames, blend.unwrap_or(cfg.looping.blend_window))?;
            looped.write(out)?;
            Ok(Output {
                json: json!({ "sequence": out, "frame_count": looped.len() }),
                lines: vec![format!("wrote {} ({} frames)", out.display(), looped.len())],
            })
        }
    }
}

fn serve(a: &ServeArgs) -> Result<()> {
    let cfg = worldmotion_service::ServiceConfig {
        asset: a.asset.load()?,
        bank: a.bank.clone(),
        snapshot_dir: a.snapshot_dir.clone(),
        cors_origin: a.cors_origin.clone(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(worldmotion_service::serve(a.addr, cfg))
        .map_err(|e| Error::io(a.addr.to_string(), e))
}

fn synth(a: &SynthArgs) -> Result<Output> {
    let asset = mannequin();
    let params = SceneParams {
        walk: WalkParams {
            frames: a.frames,
            ..WalkParams::default()
        },
        width: a.width,
        height: a.height,
        depth: a.depth,
        ..SceneParams::default()
    };
    let bundle_dir = a.out_dir.join("bundle");
    write_walking_scene(&asset, &params, &bundle_dir)?;
    let cam = side_camera(
        &params.walk,
        params.focal,
        a.width,
        a.height,
        params.distance,
        params.ahead,
    )?;
    let (traj, _) = arc_trajectory(
        &cam,
        params.walk.start,
        params.walk.yaw,
        a.radius,
        a.turn_deg.to_radians(),
        a.keypoints,
        a.frames,
    )?;
    let traj_path = a.out_dir.join("trajectory.json");
    traj.write(&traj_path)?;
    let clip = walking_motion(
        &asset,
        &WalkParams {
            frames: a.clip_frames,
            cycle_frames: a.clip_frames,
            start: Vector3::new(2.0, 0.0, -1.0),
            yaw: 0.6,
            ..WalkParams::default()
        },
    )?;
    let clip_path = a.out_dir.join("walk.motion.json");
    clip.write(&clip_path)?;
    Ok(Output {
        json: json!({ "bundle": bundle_dir, "trajectory": traj_path, "clip": clip_path }),
        lines: vec![
            format!("wrote {}", bundle_dir.display()),
            format!("wrote {}", traj_path.display()),
            format!("wrote {}", clip_path.display()),
        ],
    })
}
