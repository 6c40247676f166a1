use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use scenefill::augmentation::{augment_scene, ObjectLayer};
use scenefill::cloud::io::{load_cloud, save_cloud};
use scenefill::cloud::{ClassId, Point3, PointCloud};
use scenefill::costmap::{load_map, merge_grids, project_objects, save_map, GridFrame};
use scenefill::evalkit::{evaluate, BACKGROUND, render_partial, synthesize_scene, Camera, EvalReport, GroundTruth, RenderParams, SceneSpec};
use scenefill::modeldb::{build_database, load_database, read_match_report, save_database, write_match_report, IngestParams, ModelDatabase};
use scenefill::pipeline::{complete, detections, match_kept, segment_scene, target_classes, PipelineConfig};
use scenefill::registration::Grounding;
use scenefill::segmentation::{read_segmentation, write_segmentation};

/// Object-level scene completion for labeled indoor point clouds.
#[derive(Parser, Debug)]
#[command(name = "scenefill", version, about)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model database directory.
    #[arg(long, global = true)]
    db: Option<PathBuf>,
    /// Labeled scene cloud (.ply or .pcd).
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Removal radius around placed models, meters.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long = "lambda-min", global = true)]
    lambda_min: Option<f64>,
    #[arg(long = "lambda-max", global = true)]
    lambda_max: Option<f64>,
    #[arg(long, global = true)]
    zmin: Option<f64>,
    /// Robot height for costmap projection, meters.
    #[arg(long, global = true)]
    zmax: Option<f64>,
    /// Costmap cell size, meters.
    #[arg(long, global = true)]
    resolution: Option<f64>,
    #[arg(long = "yaw-samples", global = true)]
    yaw_samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Share one coarse yaw across all models of a search.
    #[arg(long = "paper-coarse", global = true)]
    paper_coarse: bool,
    /// `partial` or `floor`.
    #[arg(long, global = true)]
    grounding: Option<Grounding>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Model database management.
    Db {
        #[command(subcommand)]
        action: DbAction,
    },
    /// Extract and filter object clusters from --scene into the --out directory.
    Segment,
    /// Match the kept clusters of a segmentation directory; writes a JSONL report to --out.
    Match { segments: PathBuf },
    /// Segment, match, place and augment --scene; writes everything into --out.
    Complete,
    /// Place the models of a match report and merge them into --scene.
    Augment { report: PathBuf },
    /// Project placed models into an occupancy map (--out map.yaml), optionally merged with an existing map.
    Costmap { report: PathBuf, base_map: Option<PathBuf> },
    /// Synthesize a scene from a JSON spec into the --out directory.
    Scene { spec: PathBuf },
    /// Render the part of a cloud visible from a camera.
    Scan {
        cloud: PathBuf,
        /// Camera position and look-at point, then an optional range noise
        /// standard deviation in meters: px py pz lx ly lz [sigma].
        #[arg(num_args = 6..=7, allow_negative_numbers = true, required = true)]
        camera: Vec<f64>,
    },
    /// Precision, recall and F1 from a counts file, or from truth and a match report.
    Eval { input: PathBuf, report: Option<PathBuf> },
}

#[derive(Subcommand, Debug)]
enum DbAction {
    /// Ingest every .obj/.ply mesh under a directory as one class.
    Build {
        meshes: PathBuf,
        #[arg(default_value_t = 1)]
        class_id: ClassId,
    },
}

/// Bad invocation, as opposed to bad data.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| usage(format!("--{flag} is required for this command")))
}

fn effective_config(opts: &Opts) -> Result<PipelineConfig> {
    let mut c = match &opts.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &opts.db {
        c.db = Some(v.clone());
    }
    if let Some(v) = opts.epsilon {
        c.epsilon = v;
    }
    if let Some(v) = opts.lambda_min {
        c.segmentation.lambda_range[0] = v;
    }
    if let Some(v) = opts.lambda_max {
        c.segmentation.lambda_range[1] = v;
    }
    if let Some(v) = opts.zmin {
        c.projection.z_min = v;
    }
    if let Some(v) = opts.zmax {
        c.projection.z_max = v;
    }
    if let Some(v) = opts.resolution {
        c.projection.resolution = v;
    }
    if let Some(v) = opts.yaw_samples {
        c.registration.yaw_samples = v;
    }
    if let Some(v) = opts.seed {
        c.seed = v;
    }
    if let Some(v) = opts.workers {
        c.workers = v;
    }
    if opts.paper_coarse {
        c.paper_coarse = true;
    }
    if let Some(v) = opts.grounding {
        c.registration.grounding = v;
    }
    c.validate().map_err(|e| usage(format!("invalid configuration: {e}")))?;
    Ok(c)
}

fn open_db(config: &PipelineConfig) -> Result<ModelDatabase> {
    let dir = config.db.as_ref().ok_or_else(|| usage("--db (or `db` in the config) is required for this command"))?;
    Ok(load_database(dir)?)
}

/// Classes to segment: configured, else the database's, else every
/// non-background label in the scene.
fn classes_for(config: &PipelineConfig, scene: &PointCloud) -> Result<Vec<ClassId>> {
    if config.classes.is_empty() && config.db.is_none() {
        let labels = scene.labels().context("scene has no class labels")?;
        let mut classes: Vec<ClassId> = labels.iter().copied().filter(|&l| l != BACKGROUND).collect();
        classes.sort_unstable();
        classes.dedup();
        return Ok(classes);
    }
    let db = match &config.db {
        Some(dir) => load_database(dir)?,
        None => ModelDatabase::new(IngestParams::default()),
    };
    Ok(target_classes(config, &db))
}

fn write_augmented(dir: &Path, scene: &PointCloud, layer: &ObjectLayer, epsilon: f64) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let augmented = augment_scene(scene, layer, epsilon)?;
    augmented.save(dir.join("augmented.ply"))?;
    layer.save(dir.join("objects"))?;
    eprintln!(
        "kept {} of {} scene points, added {} objects",
        scene.len() - augmented.removed.len(),
        scene.len(),
        layer.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = effective_config(&cli.opts)?;
    eprintln!("# effective config\n{config}");
    let opts = &cli.opts;
    match cli.command {
        Command::Db {
            action: DbAction::Build { meshes, class_id },
        } => {
            let out = required(&opts.out, "out")?;
            let params = IngestParams {
                seed: config.seed,
                ..IngestParams::default()
            };
            let outcome = build_database(&meshes, class_id, &params)?;
            for (file, err) in &outcome.failures {
                eprintln!("skipped {file}: {err}");
            }
            save_database(&outcome.database, out)?;
            eprintln!("stored {} models in {}", outcome.database.len(), out.display());
        }
        Command::Segment => {
            let scene = load_cloud(required(&opts.scene, "scene")?)?;
            let out = required(&opts.out, "out")?;
            let classes = classes_for(&config, &scene)?;
            let (clusters, reports) = segment_scene(&scene, &classes, &config.segmentation)?;
            write_segmentation(out, &clusters, &reports)?;
            for r in &reports {
                eprintln!("cluster {} class {}: {:?}, {} points, lambda {:.3}", r.cluster_id, r.class_id, r.verdict, r.points, r.lambda);
            }
        }
        Command::Match { segments } => {
            let out = required(&opts.out, "out")?;
            let db = open_db(&config)?;
            let (clusters, reports) = read_segmentation(&segments)?;
            let matches = match_kept(&clusters, &reports, &db, &config.match_options())?;
            write_match_report(out, &matches)?;
            for m in &matches {
                eprintln!("cluster {} -> {} (delta {:.4} m)", m.cluster_id, m.model_id, m.delta);
            }
        }
        Command::Complete => {
            let scene = load_cloud(required(&opts.scene, "scene")?)?;
            let out = required(&opts.out, "out")?;
            let db = open_db(&config)?;
            let result = complete(&scene, &db, &config)?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            write_segmentation(out.join("segments"), &result.clusters, &result.reports)?;
            write_match_report(out.join("matches.jsonl"), &result.matches)?;
            result.augmented.save(out.join("augmented.ply"))?;
            result.layer.save(out.join("objects"))?;
            for m in &result.matches {
                eprintln!("cluster {} -> {} (delta {:.4} m)", m.cluster_id, m.model_id, m.delta);
            }
        }
        Command::Augment { report } => {
            let scene = load_cloud(required(&opts.scene, "scene")?)?;
            let out = required(&opts.out, "out")?;
            let db = open_db(&config)?;
            let layer = ObjectLayer::build(&read_match_report(&report)?, &db, config.registration.grounding)?;
            write_augmented(out, &scene, &layer, config.epsilon)?;
        }
        Command::Costmap { report, base_map } => {
            let out = required(&opts.out, "out")?;
            let db = open_db(&config)?;
            let layer = ObjectLayer::build(&read_match_report(&report)?, &db, config.registration.grounding)?;
            let params = &config.projection;
            let grid = match base_map {
                None => project_objects(&layer, params, None)?,
                Some(path) => {
                    let base = load_map(&path)?;
                    if (base.resolution() - params.resolution).abs() > 1e-9 {
                        bail!(usage(format!(
                            "--resolution {} differs from the base map's {}",
                            params.resolution,
                            base.resolution()
                        )));
                    }
                    // Project onto the base map's lattice so the two grids merge cell for cell.
                    let frame = GridFrame::covering(layer.objects.iter().map(|o| &o.cloud), params.resolution, params.padding)
                        .map(|f| {
                            let [bx, by, _] = base.origin();
                            let snap = |o: f64, b: f64| b + ((o - b) / params.resolution).floor() * params.resolution;
                            GridFrame {
                                origin: [snap(f.origin[0], bx), snap(f.origin[1], by)],
                                width: f.width + 1,
                                height: f.height + 1,
                            }
                        });
                    match frame {
                        Some(frame) => merge_grids(&base, &project_objects(&layer, params, Some(frame))?)?,
                        None => base,
                    }
                }
            };
            save_map(&grid, out)?;
            eprintln!("{}x{} cells, {} occupied", grid.width(), grid.height(), grid.occupied_cells().len());
        }
        Command::Scene { spec } => {
            let out = required(&opts.out, "out")?;
            let db = open_db(&config)?;
            let mut spec = SceneSpec::load(&spec)?;
            if let Some(seed) = opts.seed {
                spec.seed = seed;
            }
            eprintln!("scene seed {}", spec.seed);
            let scene = synthesize_scene(&spec, &db)?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            save_cloud(&scene.geometry, out.join("geometry.ply"))?;
            save_cloud(&scene.semantic, out.join("semantic.ply"))?;
            scene.truth.save(out.join("truth.json"))?;
            eprintln!("{} points, {} objects", scene.semantic.len(), scene.truth.objects.len());
        }
        Command::Scan { cloud, camera } => {
            let noise = camera.get(6).copied().unwrap_or(0.0);
            let out = required(&opts.out, "out")?;
            let input = load_cloud(&cloud)?;
            let cam = Camera::new(Point3::new(camera[0], camera[1], camera[2]), Point3::new(camera[3], camera[4], camera[5]));
            let params = RenderParams {
                noise_sigma: noise,
                seed: config.seed,
                ..RenderParams::default()
            };
            let view = render_partial(&input, &cam, &params)?;
            save_cloud(&view, out)?;
            eprintln!("{} of {} points visible", view.len(), input.len());
        }
        Command::Eval { input, report } => {
            let result = match report {
                None => {
                    let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
                    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
                    let count = |k: &str| -> Result<usize> {
                        v.get(k)
                            .and_then(Value::as_u64)
                            .map(|n| n as usize)
                            .with_context(|| format!("{} lacks a count `{k}`", input.display()))
                    };
                    EvalReport::from_counts(count("tp")?, count("fp")?, count("fn")?)
                }
                Some(report) => {
                    let db = open_db(&config)?;
                    let truth = GroundTruth::load(&input)?;
                    let layer = ObjectLayer::build(&read_match_report(&report)?, &db, config.registration.grounding)?;
                    evaluate(&detections(&layer), &truth, config.d_match)?
                }
            };
            print!("{}", result.table());
            if let Some(out) = &opts.out {
                let mut text = serde_json::to_string_pretty(&result)?;
                text.push('\n');
                std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their cause; print each message once.
            let mut msg = String::new();
            for cause in e.chain().map(ToString::to_string) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
