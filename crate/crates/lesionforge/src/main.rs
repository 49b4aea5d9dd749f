use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lesionforge::error::{Error, Result};
use lesionforge::io::{self, nifti, rawjson};
use lesionforge::latent::{self, LatentModel};
use lesionforge::mask::{gen_lesion_mask, MaskSynthParams};
use lesionforge::pipeline::{augment_batch, PipelineConfig};
use lesionforge::placement::{select_center, PlacementParams};
use lesionforge::proto::{prototype_consistency, FeatureMap, ProtoConfig};
use lesionforge::rng::Stream;
use lesionforge::slices::{export_slices, Axis};
use lesionforge::spb::{blend_detailed, BlendMode, SolveMethod, SolverConfig};
use lesionforge::texture::{gen_lesion_pair, PerturbParams};

#[derive(Parser)]
#[command(name = "lesionforge", version, about = "Synthetic brain-lesion generation and seamless 3D composition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct MaskArgs {
    /// Cubic mask grid edge length in voxels
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value_t = 1)]
    n_min: u32,
    #[arg(long, default_value_t = 5)]
    n_max: u32,
    #[arg(long, default_value_t = 5.0)]
    ax_min: f64,
    #[arg(long, default_value_t = 15.0)]
    ax_max: f64,
    #[arg(long, default_value_t = 3.0)]
    sigma_min: f64,
    #[arg(long, default_value_t = 6.0)]
    sigma_max: f64,
    /// Peak elastic displacement in voxels
    #[arg(long, default_value_t = 8.0)]
    alpha: f64,
    #[arg(long, default_value_t = 8.0)]
    perlin_cell: f64,
    #[arg(long, default_value_t = 1.5)]
    perlin_amp: f64,
}

impl MaskArgs {
    fn params(&self, seed: u64) -> MaskSynthParams {
        MaskSynthParams {
            grid_dims: [self.grid, self.grid, self.grid],
            n_ellipsoids: (self.n_min, self.n_max),
            half_axis: (self.ax_min, self.ax_max),
            elastic_sigma: (self.sigma_min, self.sigma_max),
            elastic_alpha: self.alpha,
            perlin_cell: self.perlin_cell,
            perlin_amplitude: self.perlin_amp,
            seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural lesion mask
    GenMask {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        mask: MaskArgs,
    },
    /// Generate a paired lesion image and mask from a host brain
    GenPair {
        #[arg(long)]
        host: PathBuf,
        #[arg(long)]
        brain_mask: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_img: PathBuf,
        #[arg(long)]
        out_mask: PathBuf,
        #[command(flatten)]
        mask: MaskArgs,
        #[arg(long, default_value_t = 0.7)]
        gamma_min: f64,
        #[arg(long, default_value_t = 1.3)]
        gamma_max: f64,
        #[arg(long, default_value_t = 0.05)]
        noise_std: f64,
    },
    /// Select a lesion center inside an eroded white-matter mask
    Place {
        #[arg(long)]
        wm_mask: PathBuf,
        #[arg(long)]
        lesion_mask: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Per-axis erosion radius X,Y,Z (defaults to auto from the mask)
        #[arg(long, value_parser = parse_triple)]
        erosion_radius: Option<[usize; 3]>,
    },
    /// Blend a lesion into a host volume
    Blend {
        #[arg(long)]
        host: PathBuf,
        #[arg(long)]
        lesion: PathBuf,
        #[arg(long)]
        lesion_mask: PathBuf,
        /// Patch origin X,Y,Z in host voxels
        #[arg(long, value_parser = parse_triple)]
        origin: [usize; 3],
        #[arg(long, default_value = "spb")]
        mode: BlendMode,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value = "cg")]
        method: String,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long, default_value_t = false)]
        jacobi: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
    },
    /// PCA fitting and constrained sampling of latent vectors
    #[command(subcommand)]
    Latent(LatentCommand),
    /// Prototype-consistency loss of a feature map against labels
    ProtoLoss {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        features_meta: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda1: f64,
        #[arg(long, default_value_t = 50.0)]
        lambda2: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Batch augmentation driven by a JSON config
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<BlendMode>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Export one slice as PGM (and PPM when labels are given)
    Slice {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        axis: Axis,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum LatentCommand {
    /// Fit a PCA model to an embedding matrix
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long, default_value_t = 0.90)]
        target: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw constrained samples from a fitted model
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z but got '{s}'"));
    }
    let mut out = [0usize; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .trim()
            .parse()
            .map_err(|e| format!("bad component '{p}': {e}"))?;
    }
    Ok(out)
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenMask { seed, out, mask } => {
            let params = mask.params(seed);
            let m = gen_lesion_mask(&params)?;
            nifti::save_labels(&m, &out)?;
            eprintln!("mask: {} voxels -> {}", m.count_foreground(), out.display());
            Ok(0)
        }
        Command::GenPair {
            host,
            brain_mask,
            seed,
            out_img,
            out_mask,
            mask,
            gamma_min,
            gamma_max,
            noise_std,
        } => {
            let host_v = io::load_volume(&host, io::format_for_path(&host))?;
            let brain = nifti::load_labels(&brain_mask)?;
            let mask_params = mask.params(Stream::new(seed).child(1).seed());
            let perturb = PerturbParams {
                gamma_range: (gamma_min, gamma_max),
                noise_std,
                seed: Stream::new(seed).child(2).seed(),
            };
            let (img, m) = gen_lesion_pair(&host_v, &brain, &mask_params, &perturb)?;
            io::save_volume(&img, &out_img, io::format_for_path(&out_img))?;
            nifti::save_labels(&m, &out_mask)?;
            eprintln!(
                "pair: {} foreground voxels -> {}, {}",
                m.count_foreground(),
                out_img.display(),
                out_mask.display()
            );
            Ok(0)
        }
        Command::Place {
            wm_mask,
            lesion_mask,
            seed,
            erosion_radius,
        } => {
            let wm = nifti::load_labels(&wm_mask)?;
            let lesion = nifti::load_labels(&lesion_mask)?;
            let params = PlacementParams {
                erosion_radius,
                ..Default::default()
            };
            let mut rng = Stream::new(seed);
            let c = select_center(&wm, &lesion, &params, &mut rng)?;
            println!("{},{},{}", c[0], c[1], c[2]);
            Ok(0)
        }
        Command::Blend {
            host,
            lesion,
            lesion_mask,
            origin,
            mode,
            tol,
            method,
            max_iter,
            jacobi,
            out,
            out_labels,
        } => {
            let host_v = io::load_volume(&host, io::format_for_path(&host))?;
            let lesion_v = io::load_volume(&lesion, io::format_for_path(&lesion))?;
            let mask = nifti::load_labels(&lesion_mask)?;
            let cfg = SolverConfig {
                method: match method.as_str() {
                    "cg" => SolveMethod::Cg,
                    "dense" => SolveMethod::Dense,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown method '{other}' (expected cg or dense)"
                        )))
                    }
                },
                rel_tol: tol,
                max_iter,
                jacobi,
            };
            let outcome = blend_detailed(&host_v, &lesion_v, &mask, origin, mode, &cfg)?;
            nifti::save(&outcome.volume, &out)?;
            nifti::save_labels(&outcome.labels, &out_labels)?;
            eprintln!(
                "blend: {} voxels, residual {:.3e} after {} iterations",
                outcome.omega_indices.len(),
                outcome.residual,
                outcome.iterations
            );
            Ok(0)
        }
        Command::Latent(cmd) => match cmd {
            LatentCommand::Fit {
                input,
                meta,
                target,
                out,
            } => {
                let t = rawjson::load_tensor(&input, &meta)?;
                if t.shape.len() != 2 {
                    return Err(Error::DimensionMismatch(format!(
                        "embedding matrix must have shape [N,d], got {:?}",
                        t.shape
                    )));
                }
                let rows: Vec<f64> = t.data.iter().map(|&v| v as f64).collect();
                let ls = latent::pca_fit(&rows, t.shape[0], t.shape[1], target)?;
                let model = LatentModel::from_latent_set(&ls);
                std::fs::write(&out, serde_json::to_vec_pretty(&model)?)?;
                eprintln!(
                    "latent fit: {} components keep {:.3} of the variance -> {}",
                    ls.k(),
                    ls.explained_ratio().iter().sum::<f64>(),
                    out.display()
                );
                Ok(0)
            }
            LatentCommand::Sample {
                model,
                n,
                seed,
                out,
            } => {
                let m = LatentModel::from_json_slice(&std::fs::read(&model)?)?;
                let d = m.mean.len();
                let mut rng = Stream::new(seed);
                let mut data = Vec::with_capacity(n * d);
                for _ in 0..n {
                    data.extend(m.sample(&mut rng).into_iter().map(|v| v as f32));
                }
                let tensor = rawjson::RawTensor::new(vec![n, d], data)?;
                let (bin, json) = rawjson::sibling_paths(&out);
                rawjson::save_tensor(&tensor, &bin, &json)?;
                eprintln!("latent sample: {n} x {d} -> {}", bin.display());
                Ok(0)
            }
        },
        Command::ProtoLoss {
            features,
            features_meta,
            labels,
            k,
            lambda1,
            lambda2,
            seed,
        } => {
            let tensor = rawjson::load_tensor(&features, &features_meta)?;
            let fmap = FeatureMap::from_raw_tensor(&tensor)?;
            let label_map = nifti::load_labels(&labels)?;
            let batch = vec![label_map; fmap.batch()];
            let cfg = ProtoConfig {
                k,
                lambda1,
                lambda2,
                seed,
            };
            let loss = prototype_consistency(&fmap, &batch, &cfg)?;
            println!(
                "{}",
                serde_json::json!({
                    "L_pd": loss.pd,
                    "L_prd": loss.prd,
                    "L_pc": loss.pc,
                })
            );
            Ok(0)
        }
        Command::Pipeline {
            config,
            seed,
            count,
            out,
            mode,
            workers,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = count {
                cfg.count = c;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let summary = augment_batch(&cfg)?;
            eprintln!(
                "pipeline: {} ok, {} failed -> {}",
                summary.succeeded,
                summary.failed,
                summary.manifest_path.display()
            );
            if summary.succeeded == 0 {
                Ok(3)
            } else {
                Ok(0)
            }
        }
        Command::Slice {
            input,
            labels,
            axis,
            index,
            out,
        } => {
            let v = io::load_volume(&input, io::format_for_path(&input))?;
            let l = match labels {
                Some(p) => Some(nifti::load_labels(&p)?),
                None => None,
            };
            export_slices(&v, l.as_ref(), axis, index, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) | Error::Json(_) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
