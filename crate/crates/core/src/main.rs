use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use proxycull_core::cluster::build_clusters;
use proxycull_core::densify::{plan_anchors, select_patches, DensificationPlan, ErrorImage, ProxyGrid};
use proxycull_core::io::{self, PlyEncoding};
use proxycull_core::oracle::{oracle_suite_with, small_scene_spec, DepthFault, OracleOptions};
use proxycull_core::pipeline::{bench, run_pipeline};
use proxycull_core::scene::{load_scene, write_scene, SceneBundle, SceneConfig};
use proxycull_core::simplify::{simplify, SimplifyError, SimplifyParams};
use proxycull_core::synth::{generate_synthetic_scene, SyntheticSpec};
use proxycull_core::visibility::cull_anchors_diagnostic;

#[derive(Parser)]
#[command(name = "proxycull", version, about = "Proxy-mesh depth rendering, anchor culling and densification planning")]
struct Cli {
    /// Print results as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// JSON file of config keys; overrides the scene's own config.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(flatten)]
    overrides: ConfigFlags,
    #[command(subcommand)]
    command: Command,
}

/// One flag per config key; set flags override the config file.
#[derive(Args, Serialize, Default)]
struct ConfigFlags {
    /// Depth margin (view units) before an anchor counts as occluded
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    /// Smallest clip w treated as in front of the camera
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_near: Option<f64>,
    /// Added to w before the perspective divide
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    /// Cluster screen-rect padding in pixels
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<i64>,
    /// Hi-Z level bias for the cluster test
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    level_bias: Option<u32>,
    /// Densification patch edge in pixels
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patch_size: Option<usize>,
    /// Anchors allowed per proxy-grid cell
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    capacity: Option<u32>,
    /// Proxy-grid cell size (default: mesh diagonal / 512)
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cell_size: Option<f64>,
    /// Weight of boundary and feature constraint quadrics
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    boundary_weight: Option<f64>,
    /// Dihedral angle above which an edge is a feature
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    feature_angle_deg: Option<f64>,
    /// Smallest cluster size in triangles
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_min: Option<usize>,
    /// Largest cluster size in triangles
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_max: Option<usize>,
    /// Rasterizer tile edge in pixels
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tile_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// QEM-simplify a mesh (OBJ or PLY) to a target face count.
    Simplify {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        target_faces: usize,
    },
    /// Build the cluster sidecar for a mesh.
    Cluster {
        mesh: PathBuf,
        /// Defaults to the mesh path with a `.clusters` extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Render a depth map for one camera of a scene.
    Depth {
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        /// `.pfm`, or raw f32 with a JSON sidecar.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Classify every anchor of a scene for one camera.
    CullAnchors {
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        /// One verdict byte per anchor.
        #[arg(short, long)]
        output: PathBuf,
        /// Also write per-anchor depth operands as JSON.
        #[arg(long, value_name = "PATH")]
        diagnostic: Option<PathBuf>,
    },
    /// Plan new anchors from per-pixel error images; cameras share one grid.
    DensifyPlan {
        scene: PathBuf,
        /// Repeatable; defaults to camera 0.
        #[arg(long)]
        camera: Vec<usize>,
        /// Error image per camera, in `--camera` order (`.pfm` or raw f32).
        #[arg(long, value_name = "PATH")]
        error: Vec<PathBuf>,
        /// Use seeded synthetic error images instead of `--error`.
        #[arg(long, conflicts_with = "error")]
        error_seed: Option<u64>,
        /// Count the scene's existing anchors against cell capacity.
        #[arg(long)]
        count_existing: bool,
        /// Packed little-endian 3 x f32 positions.
        #[arg(short, long)]
        output: PathBuf,
        /// Per-anchor sources; defaults to the output path with `.json`.
        #[arg(long)]
        provenance: Option<PathBuf>,
    },
    /// Median per-stage timings over warm frames.
    Bench {
        /// Scene manifest; a synthetic street is generated when omitted.
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[command(flatten)]
        synthetic: SynthFlags,
    },
    /// Write a seeded synthetic street scene.
    GenScene {
        #[arg(short, long)]
        out_dir: PathBuf,
        #[command(flatten)]
        synthetic: SynthFlags,
    },
    /// Check the fast paths against brute-force references.
    Oracle {
        /// Scene manifest; seeded small scenes are used when omitted.
        scene: Option<PathBuf>,
        /// Camera to check; all cameras when omitted.
        #[arg(long)]
        camera: Option<usize>,
        /// Comma-separated seeds for generated scenes.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Fill the depth map handed to the anchor filter with this value.
        #[arg(long, value_name = "Z")]
        corrupt_depth: Option<f32>,
        #[arg(long, default_value_t = 50)]
        qem_trials: usize,
    },
}

#[derive(Args, Clone)]
struct SynthFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum mesh face count; picks the box subdivision.
    #[arg(long, default_value_t = 100_000)]
    triangles: usize,
    #[arg(long, default_value_t = 100_000)]
    anchors: usize,
    #[arg(long, default_value_t = 50)]
    boxes: usize,
    #[arg(long, default_value_t = 4)]
    cameras: usize,
    #[arg(long, default_value_t = 200.0)]
    extent: f64,
    #[arg(long, default_value_t = 1000)]
    width: usize,
    #[arg(long, default_value_t = 1000)]
    height: usize,
}

impl SynthFlags {
    fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            extent: self.extent,
            box_count: self.boxes,
            anchor_count: self.anchors,
            camera_count: self.cameras,
            width: self.width,
            height: self.height,
            ..Default::default()
        }
        .with_triangle_target(self.triangles)
    }
}

struct Ctx {
    layers: Vec<Value>,
}

impl Ctx {
    fn new(cli: &Cli) -> anyhow::Result<Self> {
        let mut layers = Vec::new();
        if let Some(path) = &cli.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| proxycull_core::Error::Parse { path: path.clone(), message: e.to_string() })?;
            layers.push(v);
        }
        layers.push(serde_json::to_value(&cli.overrides)?);
        Ok(Self { layers })
    }

    fn config(&self) -> anyhow::Result<SceneConfig> {
        Ok(SceneConfig::layered(&self.layers)?)
    }

    fn scene(&self, path: &Path) -> anyhow::Result<SceneBundle> {
        Ok(load_scene(path, &self.layers)?)
    }

    fn synthetic(&self, flags: &SynthFlags) -> anyhow::Result<SceneBundle> {
        let mut bundle = generate_synthetic_scene(flags.seed, &flags.spec())?;
        let config = self.config()?;
        if (config.tau_min, config.tau_max) != (bundle.config.tau_min, bundle.config.tau_max) {
            bundle.clusters = build_clusters(&bundle.mesh, config.tau_min, config.tau_max)?;
        }
        bundle.config = config;
        Ok(bundle)
    }
}

fn camera_in_range(bundle: &SceneBundle, camera: usize) -> anyhow::Result<()> {
    if camera >= bundle.cameras.len() {
        bail!(proxycull_core::Error::InvalidParameter(format!(
            "camera index {camera} out of range ({} cameras)",
            bundle.cameras.len()
        )));
    }
    Ok(())
}

/// Failure that still produced a report worth printing.
struct Reported {
    value: Value,
    kind: &'static str,
    message: String,
}

enum Outcome {
    Done(Value),
    Failed(Reported),
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let ctx = Ctx::new(cli)?;
    let value = match &cli.command {
        Command::Simplify { input, output, target_faces } => {
            let config = ctx.config()?;
            let mesh = io::read_mesh(input)?;
            let params = SimplifyParams {
                target_faces: *target_faces,
                boundary_weight: config.boundary_weight,
                feature_angle_deg: config.feature_angle_deg,
            };
            let t = Instant::now();
            let (result, exhausted) = match simplify(&mesh, &params) {
                Ok(s) => (s, false),
                Err(SimplifyError::Exhausted { partial, .. }) => (*partial, true),
                Err(e) => return Err(proxycull_core::Error::InvalidParameter(e.to_string()).into()),
            };
            let elapsed_ms = t.elapsed().as_secs_f64() * 1e3;
            io::write_mesh(output, &result.mesh, PlyEncoding::BinaryLittleEndian)?;
            let value = json!({
                "input_faces": mesh.face_count(),
                "output_faces": result.mesh.face_count(),
                "target_faces": target_faces,
                "collapses": result.collapses,
                "total_cost": result.total_cost,
                "manifold": result.mesh.is_manifold(),
                "elapsed_ms": elapsed_ms,
                "output": output,
            });
            if exhausted {
                return Ok(Outcome::Failed(Reported {
                    value,
                    kind: "simplify_exhausted",
                    message: format!(
                        "no valid collapse left at {} faces (target {target_faces}); partial mesh written to {}",
                        result.mesh.face_count(),
                        output.display()
                    ),
                }));
            }
            value
        }
        Command::Cluster { mesh, output } => {
            let config = ctx.config()?;
            let m = io::read_mesh(mesh)?;
            let clusters = build_clusters(&m, config.tau_min, config.tau_max)?;
            let output = output.clone().unwrap_or_else(|| mesh.with_extension("clusters"));
            io::write_clusters(&output, &clusters, m.face_count())?;
            let sizes: Vec<usize> = clusters.iter().map(|c| c.len()).collect();
            json!({
                "faces": m.face_count(),
                "clusters": clusters.len(),
                "min_size": sizes.iter().min(),
                "max_size": sizes.iter().max(),
                "mean_size": m.face_count() as f64 / clusters.len().max(1) as f64,
                "output": output,
            })
        }
        Command::Depth { scene, camera, output } => {
            let bundle = ctx.scene(scene)?;
            camera_in_range(&bundle, *camera)?;
            let frame = run_pipeline(&bundle, *camera)?;
            io::write_float_map(output, &frame.depth)?;
            json!({
                "camera": camera,
                "width": frame.depth.width,
                "height": frame.depth.height,
                "covered_pixels": frame.depth.covered_pixels(),
                "hiz_levels": frame.pyramid.level_count(),
                "stats": frame.stats,
                "output": output,
            })
        }
        Command::CullAnchors { scene, camera, output, diagnostic } => {
            let bundle = ctx.scene(scene)?;
            camera_in_range(&bundle, *camera)?;
            let frame = run_pipeline(&bundle, *camera)?;
            io::write_cull_mask(output, &frame.mask)?;
            if let Some(path) = diagnostic {
                let cam = &bundle.cameras[*camera];
                let (_, diags) =
                    cull_anchors_diagnostic(&bundle.anchors, cam, &frame.depth, &bundle.config.cull_params())?;
                let disagree = diags.iter().filter(|d| d.verdict != d.clip_z_verdict).count();
                io::write_json(path, &json!({ "clip_z_disagreements": disagree, "anchors": diags }))?;
            }
            json!({
                "camera": camera,
                "gamma": bundle.config.gamma,
                "counts": frame.mask.counts(),
                "kept_ratio": frame.mask.kept_count as f64 / bundle.anchors.len().max(1) as f64,
                "stats": frame.stats,
                "output": output,
            })
        }
        Command::DensifyPlan { scene, camera, error, error_seed, count_existing, output, provenance } => {
            let bundle = ctx.scene(scene)?;
            let cameras = if camera.is_empty() { vec![0] } else { camera.clone() };
            if error_seed.is_none() && error.len() != cameras.len() {
                bail!(proxycull_core::Error::InvalidParameter(format!(
                    "{} cameras but {} error images (or pass --error-seed)",
                    cameras.len(),
                    error.len()
                )));
            }
            let cfg = &bundle.config;
            let mut grid = ProxyGrid::for_mesh(&bundle.mesh, cfg.cell_size, cfg.capacity)?;
            if *count_existing {
                for &p in &bundle.anchors.positions {
                    grid.insert(p);
                }
            }
            let mut plan = DensificationPlan::default();
            let mut frames = Vec::new();
            for (k, &cam) in cameras.iter().enumerate() {
                camera_in_range(&bundle, cam)?;
                let c = &bundle.cameras[cam];
                let image = match error_seed {
                    Some(seed) => proxycull_core::oracle::synthetic_error_image(c.width, c.height, seed ^ cam as u64),
                    None => {
                        let map = io::read_float_map(&error[k])?;
                        ErrorImage::new(map.width, map.height, map.values)?
                    }
                };
                let patches = select_patches(&image, cfg.patch_size)?;
                let frame = run_pipeline(&bundle, cam)?;
                let p = plan_anchors(&patches, &frame.depth, c, &mut grid, cam as u32)?;
                frames.push(json!({
                    "camera": cam,
                    "patches": patches.means.len(),
                    "selected": patches.selected_count(),
                    "frame_mean": patches.frame_mean,
                    "threshold": patches.threshold,
                    "planned": p.len(),
                    "rejected": p.rejected_count,
                    "background_skipped": p.background_skipped,
                }));
                plan.extend(p);
            }
            std::fs::write(output, io::encode_points_f32(&plan.positions))
                .with_context(|| format!("writing {}", output.display()))?;
            let provenance = provenance.clone().unwrap_or_else(|| output.with_extension("json"));
            io::write_json(
                &provenance,
                &json!({
                    "patch_size": cfg.patch_size,
                    "capacity": cfg.capacity,
                    "cell_size": grid.cell_size,
                    "frames": frames,
                    "positions": plan.positions,
                    "sources": plan.sources,
                }),
            )?;
            json!({
                "planned": plan.len(),
                "rejected": plan.rejected_count,
                "background_skipped": plan.background_skipped,
                "frames": frames,
                "output": output,
                "provenance": provenance,
            })
        }
        Command::Bench { scene, camera, frames, warmup, synthetic } => {
            let bundle = match scene {
                Some(path) => ctx.scene(path)?,
                None => ctx.synthetic(synthetic)?,
            };
            camera_in_range(&bundle, *camera)?;
            serde_json::to_value(bench(&bundle, *camera, *frames, *warmup)?)?
        }
        Command::GenScene { out_dir, synthetic } => {
            let bundle = ctx.synthetic(synthetic)?;
            let manifest = write_scene(out_dir, &bundle)?;
            json!({
                "seed": synthetic.seed,
                "faces": bundle.mesh.face_count(),
                "vertices": bundle.mesh.vertex_count(),
                "clusters": bundle.clusters.len(),
                "cameras": bundle.cameras.len(),
                "anchors": bundle.anchors.len(),
                "manifest": manifest,
            })
        }
        Command::Oracle { scene, camera, seeds, corrupt_depth, qem_trials } => {
            if let Some(z) = corrupt_depth {
                if !(0.0..=1.0).contains(z) {
                    bail!(proxycull_core::Error::InvalidParameter(format!(
                        "--corrupt-depth must be in [0, 1] (got {z})"
                    )));
                }
            }
            let suite = |bundle: &SceneBundle, seed: u64| -> anyhow::Result<Vec<Value>> {
                let cams: Vec<usize> = match camera {
                    Some(c) => {
                        camera_in_range(bundle, *c)?;
                        vec![*c]
                    }
                    None => (0..bundle.cameras.len()).collect(),
                };
                let mut out = Vec::new();
                for c in cams {
                    let cam = &bundle.cameras[c];
                    let fault = corrupt_depth.map(|z| DepthFault {
                        x0: 0,
                        y0: 0,
                        x1: cam.width - 1,
                        y1: cam.height - 1,
                        value: z,
                    });
                    let opts = OracleOptions { seed, qem_trials: *qem_trials, depth_fault: fault };
                    let mut v = serde_json::to_value(oracle_suite_with(bundle, c, &opts)?)?;
                    v["seed"] = json!(seed);
                    out.push(v);
                }
                Ok(out)
            };
            let reports = match scene {
                Some(path) => suite(&ctx.scene(path)?, seeds[0])?,
                None => {
                    let mut all = Vec::new();
                    for &seed in seeds {
                        let mut bundle = proxycull_core::oracle::oracle_scene(seed, &small_scene_spec())?;
                        let cfg = ctx.config()?;
                        bundle.config =
                            SceneConfig { tau_min: bundle.config.tau_min, tau_max: bundle.config.tau_max, ..cfg };
                        all.extend(suite(&bundle, seed)?);
                    }
                    all
                }
            };
            let violations: u64 = reports
                .iter()
                .flat_map(|r| r["checks"].as_array().cloned().unwrap_or_default())
                .map(|c| c["violations"].as_u64().unwrap_or(0))
                .sum();
            let passed = reports.iter().all(|r| r["passed"] == json!(true));
            let value = json!({ "passed": passed, "violations": violations, "reports": reports });
            if !passed {
                let first = reports
                    .iter()
                    .flat_map(|r| r["checks"].as_array().cloned().unwrap_or_default())
                    .find(|c| c["status"] == json!("fail"))
                    .map(|c| {
                        format!(
                            "{}: {}",
                            c["name"].as_str().unwrap_or("?"),
                            c["first_counterexample"].as_str().unwrap_or("")
                        )
                    })
                    .unwrap_or_default();
                return Ok(Outcome::Failed(Reported {
                    value,
                    kind: "oracle_violation",
                    message: format!("{violations} violations; first {first}"),
                }));
            }
            value
        }
    };
    Ok(Outcome::Done(value))
}

fn render(value: &Value, as_json: bool) -> String {
    if as_json {
        return serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    }
    fn walk(out: &mut String, prefix: &str, v: &Value) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(out, &key, v);
                }
            }
            Value::Array(a) if a.len() <= 8 && !a.is_empty() && a.iter().all(|x| x.is_object()) => {
                for (i, x) in a.iter().enumerate() {
                    walk(out, &format!("{prefix}[{i}]"), x);
                }
            }
            Value::Array(a) if a.len() > 8 || a.iter().any(|x| x.is_object()) => {
                out.push_str(&format!("{prefix}: [{} items]\n", a.len()));
            }
            Value::String(s) => out.push_str(&format!("{prefix}: {s}\n")),
            other => out.push_str(&format!("{prefix}: {other}\n")),
        }
    }
    let mut out = String::new();
    walk(&mut out, "", value);
    out
}

/// A closed stdout (e.g. piped into `head`) is not an error worth reporting.
fn print_value(value: &Value, as_json: bool) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(render(value, as_json).as_bytes());
}

fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", error_json("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", error_json("threads", &e.to_string()));
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(Outcome::Done(value)) => {
            print_value(&value, cli.json);
            ExitCode::SUCCESS
        }
        Ok(Outcome::Failed(r)) => {
            print_value(&r.value, cli.json);
            eprintln!("{}", error_json(r.kind, &r.message));
            ExitCode::FAILURE
        }
        Err(e) => {
            // Library errors already carry their cause in the message.
            let (kind, message) = match e.downcast_ref::<proxycull_core::Error>() {
                Some(inner) if e.chain().count() == 2 && matches!(inner, proxycull_core::Error::Io { .. }) => {
                    (inner.kind(), inner.to_string())
                }
                Some(inner) => (inner.kind(), format!("{e:#}")),
                None => ("error", format!("{e:#}")),
            };
            eprintln!("{}", error_json(kind, &message));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unset_flags_add_no_keys() {
        assert_eq!(serde_json::to_value(ConfigFlags::default()).unwrap(), json!({}));
        let cli = Cli::try_parse_from(["proxycull", "--gamma", "0.5", "cluster", "m.obj"]).unwrap();
        assert_eq!(serde_json::to_value(&cli.overrides).unwrap(), json!({"gamma": 0.5}));
        let cli = Cli::try_parse_from(["proxycull", "cluster", "m.obj", "--tau-min", "8"]).unwrap();
        assert_eq!(serde_json::to_value(&cli.overrides).unwrap(), json!({"tau_min": 8}));
    }
}
