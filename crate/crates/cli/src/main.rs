use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use distgrid::config::RunConfig;
use distgrid::data::{generate_dataset, write_pgm16, write_ppm, Dataset, SceneSpec, Split};
use distgrid::dist::{MessageKind, Precision, TransportKind};
use distgrid::field::MEAN_APPEARANCE;
use distgrid::partition::{read_poses, CameraPose};
use distgrid::trainer::{evaluate_cluster, Trainer};
use distgrid::{checkpoint, Error, Result};

#[derive(Parser)]
#[command(name = "distgrid", version, about = "Spatially partitioned hash-grid radiance fields")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); for gen-scene, the scene spec
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Partition grid
    #[arg(long, global = true, num_args = 2, value_names = ["KX", "KY"])]
    partitions: Option<Vec<usize>>,
    #[arg(long, global = true, value_enum)]
    transport: Option<TransportArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["32", "64"])]
    precision: Option<String>,
    /// Output directory (or file for eval)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Local,
    Tcp,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into a dataset directory
    GenScene {
        /// Built-in scene (blob4, textured, empty) when no --config is given
        #[arg(long, default_value = "blob4")]
        preset: String,
        /// Override the quadrature sample count
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train on a dataset directory
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Named run configuration (desk, quick) when no --config is given
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from the checkpoint in --out
        #[arg(long)]
        resume: bool,
    },
    /// Render images from a trained run
    Render {
        /// Run directory written by train
        #[arg(long)]
        run: PathBuf,
        /// Dataset whose cameras are rendered
        #[arg(long, required_unless_present = "poses")]
        data: Option<PathBuf>,
        /// Pose file (one camera per line, as in a dataset's poses.txt) instead of --data
        #[arg(long, conflicts_with = "data")]
        poses: Option<PathBuf>,
        /// Image ids (default: every validation image, or every pose in --poses)
        #[arg(long)]
        image: Vec<u32>,
    },
    /// Score a trained run on a split
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Time training steps and evaluation
    Bench {
        /// Dataset directory; a small synthetic scene is generated when absent
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "quick")]
        preset: String,
        #[arg(long, default_value_t = 20)]
        steps: u64,
    },
}

impl Common {
    fn overrides(&self, cfg: &mut RunConfig) -> Result<()> {
        let partitions = match &self.partitions {
            Some(p) => Some([p[0], p[1]]),
            None => None,
        };
        let transport = self.transport.map(|t| match t {
            TransportArg::Local => TransportKind::Local,
            TransportArg::Tcp => TransportKind::Tcp,
        });
        let precision = match self.precision.as_deref() {
            Some("32") => Some(Precision::F32),
            Some("64") => Some(Precision::F64),
            _ => None,
        };
        cfg.apply_overrides(partitions, transport, self.seed, precision)
    }

    fn run_config(&self, preset: &str) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::preset(preset)?,
        };
        self.overrides(&mut cfg)?;
        Ok(cfg)
    }
}

/// Ground altitude recorded next to a generated dataset, zero otherwise.
fn ground_of(data: &Path) -> Result<f64> {
    let p = data.join("scene.toml");
    if !p.exists() {
        return Ok(0.0);
    }
    Ok(SceneSpec::load(&p)?.resolve()?.0.ground_altitude)
}

fn gen_scene(common: &Common, preset: &str, samples: Option<usize>) -> Result<()> {
    let mut spec = match &common.config {
        Some(p) => SceneSpec::load(p)?,
        None => SceneSpec::from_preset(preset),
    };
    if let Some(n) = samples {
        spec.render_samples = n;
    }
    let (scene, rig) = spec.resolve()?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(preset));
    let t = Instant::now();
    let ds = generate_dataset(&scene, &rig, spec.render_samples)?;
    ds.save(&out)?;
    let resolved = SceneSpec {
        preset: None,
        scene: Some(scene),
        rig: Some(rig),
        render_samples: spec.render_samples,
    };
    std::fs::write(out.join("scene.toml"), resolved.to_toml()?)?;
    println!("wrote {} images to {} in {:.1?}", ds.len(), out.display(), t.elapsed());
    println!("dataset hash {}", ds.content_hash()?);
    Ok(())
}

fn train(common: &Common, data: &Path, preset: &str, steps: Option<u64>, resume: bool) -> Result<()> {
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    let mut cfg = if resume && common.config.is_none() {
        let mut c = checkpoint::stored_config(&out)?;
        common.overrides(&mut c)?;
        c
    } else {
        common.run_config(preset)?
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    let ds = Dataset::load(data)?;
    let mut trainer = if resume {
        Trainer::resume(cfg, &ds, &out)?
    } else {
        Trainer::new(cfg, &ds, ground_of(data)?)?
    };
    std::fs::create_dir_all(&out)?;
    let mut log = BufWriter::new(File::options().create(true).append(resume).write(true).truncate(!resume).open(out.join("metrics.tsv"))?);
    let t = Instant::now();
    trainer.run(&ds, Some(&mut log), Some(&out))?;
    log.flush()?;
    println!("trained to step {} in {:.1?}", trainer.cluster.step, t.elapsed());
    let summary = trainer.evaluate(&ds, Split::Val, trainer.config.eval_images)?;
    let mut report = String::from("image\tpsnr\tssim\n");
    for s in &summary.images {
        report.push_str(&format!("{}\t{:.4}\t{:.5}\n", s.image, s.psnr, s.ssim));
    }
    std::fs::write(out.join("eval.tsv"), report)?;
    println!("validation PSNR {:.2} dB, SSIM {:.4}", summary.mean_psnr, summary.mean_ssim);
    Ok(())
}

fn load_run(common: &Common, run: &Path) -> Result<distgrid::dist::Cluster> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => checkpoint::stored_config(run)?,
    };
    common.overrides(&mut cfg)?;
    checkpoint::load(run, &cfg)
}

fn render(common: &Common, run: &Path, data: Option<&Path>, poses: Option<&Path>, images: &[u32]) -> Result<()> {
    let mut cluster = load_run(common, run)?;
    let cameras = match (poses, data) {
        (Some(p), _) => read_poses(p)?,
        (None, Some(d)) => {
            let ds = Dataset::load(d)?;
            let val: Vec<CameraPose> = ds.ids(Split::Val).iter().map(|&i| ds.poses[i as usize].clone()).collect();
            if images.is_empty() { val } else { ds.poses }
        }
        (None, None) => return Err(Error::config("render needs --data or --poses")),
    };
    let selected: Vec<&CameraPose> = if images.is_empty() {
        cameras.iter().collect()
    } else {
        images
            .iter()
            .map(|&id| {
                cameras.iter().find(|p| p.image_id == id).ok_or(Error::OutOfRange {
                    index: id as usize,
                    len: cameras.len(),
                })
            })
            .collect::<Result<_>>()?
    };
    let out = common.out.clone().unwrap_or_else(|| run.join("renders"));
    std::fs::create_dir_all(&out)?;
    for pose in selected {
        let id = pose.image_id;
        let img = cluster.evaluate_image(pose, MEAN_APPEARANCE)?;
        write_ppm(&out.join(format!("{id:04}_rgb.ppm")), &img.rgb)?;
        write_ppm(&out.join(format!("{id:04}_attribution.ppm")), &img.attribution)?;
        write_pgm16(&out.join(format!("{id:04}_transmittance.pgm")), pose.width, pose.height, &img.transmittance)?;
        let far = img.depth.iter().cloned().fold(0.0, f64::max).max(1e-9);
        let depth: Vec<f64> = img.depth.iter().map(|d| d / far).collect();
        write_pgm16(&out.join(format!("{id:04}_depth.pgm")), pose.width, pose.height, &depth)?;
        println!("rendered image {id}");
    }
    Ok(())
}

fn eval(common: &Common, run: &Path, data: &Path, split: &str) -> Result<()> {
    let ds = Dataset::load(data)?;
    let mut cluster = load_run(common, run)?;
    let summary = evaluate_cluster(&mut cluster, &ds, split.parse()?, 0)?;
    let mut report = String::from("image\tpsnr\tssim\n");
    for s in &summary.images {
        report.push_str(&format!("{}\t{:.4}\t{:.5}\n", s.image, s.psnr, s.ssim));
    }
    report.push_str(&format!("mean\t{:.4}\t{:.5}\n", summary.mean_psnr, summary.mean_ssim));
    match &common.out {
        Some(p) => std::fs::write(p, &report)?,
        None => print!("{report}"),
    }
    Ok(())
}

fn bench(common: &Common, data: Option<&Path>, preset: &str, steps: u64) -> Result<()> {
    let ds = match data {
        Some(d) => Dataset::load(d)?,
        None => {
            let (scene, mut rig) = distgrid::data::preset("blob4")?;
            rig.width = 32;
            rig.height = 32;
            generate_dataset(&scene, &rig, 256)?
        }
    };
    let mut cfg = common.run_config(preset)?;
    cfg.steps = steps;
    let ground = data.map(ground_of).transpose()?.unwrap_or(0.0);
    let mut trainer = Trainer::new(cfg, &ds, ground)?;
    trainer.cluster.reset_counters();
    let t = Instant::now();
    let mut samples = 0;
    for _ in 0..steps {
        samples += trainer.step(&ds)?.samples;
    }
    let dt = t.elapsed();
    let counters = trainer.cluster.byte_counters();
    println!("workers {}", trainer.cluster.world());
    println!("step time {:.2} ms", dt.as_secs_f64() * 1e3 / steps.max(1) as f64);
    println!("samples per step {:.0}", samples as f64 / steps.max(1) as f64);
    for kind in MessageKind::ALL {
        let b: u64 = counters.iter().map(|c| c.sent_of(kind)).sum();
        if b > 0 {
            println!("{} bytes per step {:.0}", kind.name(), b as f64 / steps.max(1) as f64);
        }
    }
    let id = ds.ids(Split::Val).first().copied().unwrap_or(0);
    let t = Instant::now();
    trainer.cluster.evaluate_image(&ds.poses[id as usize], MEAN_APPEARANCE)?;
    println!("render time {:.1} ms per image", t.elapsed().as_secs_f64() * 1e3);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::GenScene { preset, samples } => gen_scene(c, preset, *samples),
        Command::Train { data, preset, steps, resume } => train(c, data, preset, *steps, *resume),
        Command::Render { run, data, poses, image } => render(c, run, data.as_deref(), poses.as_deref(), image),
        Command::Eval { run, data, split } => eval(c, run, data, split),
        Command::Bench { data, preset, steps } => bench(c, data.as_deref(), preset, *steps),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DISTGRID_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
