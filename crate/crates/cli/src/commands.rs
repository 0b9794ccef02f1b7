use std::path::{Path, PathBuf};

use dss_core::crf::{mean_field_infer, CrfParams};
use dss_core::data::sample::{crop, gray_tensor, image_tensor, map_to_raster, pad_to_multiple};
use dss_core::data::{netpbm, synth_rasters, write_atomic, DatasetManifest, ManifestEntry, Split};
use dss_core::metrics::{evaluate, MaxFMode};
use dss_core::net::{ablate as run_ablation, train as run_training, AblationRow, NetworkConfig, Pattern};
use dss_core::{Error, Network, Result, Tensor};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{AblateArgs, CrfArgs, EvalArgs, GenDataArgs, InferArgs, TrainArgs};

pub const THREADS_ENV: &str = "DSS_THREADS";
pub const CHECKPOINT_FILE: &str = "model.dssp";
pub const MODEL_CONFIG_FILE: &str = "model.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn init_threads() -> Result<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Input(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let split: Split = args.split.parse()?;
    if args.count == 0 {
        return Err(Error::Input("--count must be at least 1".into()));
    }
    // Validates the size before touching the filesystem.
    synth_rasters(args.seed, args.start as u64, args.size)?;
    let manifest_path = args.out.join(MANIFEST_FILE);
    refuse_existing(&manifest_path, args.force)?;
    let (images, gts) = (args.out.join("images"), args.out.join("gt"));
    create_dir(&images)?;
    create_dir(&gts)?;
    let mut manifest = DatasetManifest {
        split,
        entries: Vec::with_capacity(args.count),
    };
    for index in args.start..args.start + args.count {
        let id = dss_core::data::synth::sample_id(index);
        let (img, gt) = synth_rasters(args.seed, index as u64, args.size)?;
        let entry = ManifestEntry {
            image: images.join(format!("{id}.ppm")),
            gt: gts.join(format!("{id}.pgm")),
            id,
        };
        netpbm::save(&entry.image, &img)?;
        netpbm::save(&entry.gt, &gt)?;
        manifest.entries.push(entry);
    }
    write_text(&manifest_path, &manifest.render(&args.out))?;
    log::info!("wrote {} samples to {}", args.count, args.out.display());
    Ok(())
}

fn required_manifest(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| Error::Config(format!("no {what} manifest given in flags or config")))
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = &args.pattern {
        cfg.network.pattern = p.parse()?;
        cfg.network.edges = None;
    }
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let manifest_path = required_manifest(&args.manifest, &cfg.paths.train_manifest, "training")?;
    let samples = DatasetManifest::load(&manifest_path)?.load_samples(cfg.means)?;
    let checkpoint = args.out.join(CHECKPOINT_FILE);
    refuse_existing(&checkpoint, args.force)?;
    create_dir(&args.out)?;
    write_text(&args.out.join(MODEL_CONFIG_FILE), &cfg.to_json())?;

    let mut net = Network::build(&cfg.network, cfg.seed)?;
    net.params().save(&checkpoint)?;
    let report = run_training(&mut net, &samples, &train_cfg, |epoch, net| {
        log::info!("checkpoint after epoch {}", epoch + 1);
        net.params().save(&checkpoint)
    })?;
    write_text(&args.out.join(LOSS_FILE), &report.trace_csv())
}

/// Network and normalization for a checkpoint.
fn load_model(checkpoint: &Path, config: Option<&Path>) -> Result<(Network, RunConfig)> {
    let sidecar = checkpoint.with_extension("json");
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None if sidecar.is_file() => RunConfig::load(&sidecar)?,
        None => RunConfig::default(),
    };
    let mut net = Network::build(&cfg.network, cfg.seed)?;
    net.params_mut().load(checkpoint)?;
    Ok((net, cfg))
}

fn save_map(path: &Path, map: &Tensor) -> Result<()> {
    netpbm::save(path, &map_to_raster(map)?)
}

fn infer_one(net: &Network, cfg: &RunConfig, image: &Path, out: &Path, dump_sides: bool) -> Result<()> {
    let raster = netpbm::load_ppm(image)?;
    let (h, w) = (raster.height, raster.width);
    let input = pad_to_multiple(&image_tensor(&raster, cfg.means)?);
    let acts = net.forward(&input)?;
    save_map(out, &crop(&acts.z_final, h, w))?;
    if dump_sides {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
        for (m, z) in acts.z_side.iter().enumerate() {
            save_map(&out.with_file_name(format!("{stem}_side{}.pgm", m + 1)), &crop(z, h, w))?;
        }
        save_map(&out.with_file_name(format!("{stem}_fuse.pgm")), &crop(&acts.z_fuse, h, w))?;
    }
    Ok(())
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let (net, cfg) = load_model(&args.checkpoint, args.config.as_deref())?;
    match (&args.image, &args.manifest) {
        (Some(image), _) => {
            refuse_existing(&args.out, args.force)?;
            infer_one(&net, &cfg, image, &args.out, args.dump_sides)
        }
        (None, Some(manifest)) => {
            let manifest = DatasetManifest::load(manifest)?;
            create_dir(&args.out)?;
            let outs: Vec<_> = manifest
                .entries
                .iter()
                .map(|e| args.out.join(format!("{}.pgm", e.id)))
                .collect();
            for o in &outs {
                refuse_existing(o, args.force)?;
            }
            manifest
                .entries
                .par_iter()
                .zip(&outs)
                .try_for_each(|(e, o)| infer_one(&net, &cfg, &e.image, o, args.dump_sides))
        }
        (None, None) => Err(Error::Input("give --image or --manifest".into())),
    }
}

fn crf_params(args: &CrfArgs) -> Result<CrfParams> {
    let mut p = match &args.params {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => CrfParams::default(),
    };
    let overrides = [
        (&mut p.w1, args.w1),
        (&mut p.w2, args.w2),
        (&mut p.sigma_alpha, args.sigma_alpha),
        (&mut p.sigma_beta, args.sigma_beta),
        (&mut p.sigma_gamma, args.sigma_gamma),
        (&mut p.tau, args.tau),
    ];
    for (field, flag) in overrides {
        if let Some(v) = flag {
            *field = v;
        }
    }
    if let Some(n) = args.iterations {
        p.iterations = n;
    }
    p.validate()?;
    Ok(p)
}

fn refine_one(saliency: &Path, image: &Path, out: &Path, params: &CrfParams) -> Result<()> {
    let s = gray_tensor(&netpbm::load_pgm(saliency)?)?;
    let img = netpbm::load_ppm(image)?;
    save_map(out, &mean_field_infer(&s, &img, params)?)
}

pub fn crf(args: &CrfArgs) -> Result<()> {
    let params = crf_params(args)?;
    match (&args.saliency, &args.image, &args.pred_dir, &args.manifest) {
        (Some(s), Some(img), _, _) => {
            refuse_existing(&args.out, args.force)?;
            refine_one(s, img, &args.out, &params)
        }
        (None, _, Some(dir), Some(manifest)) => {
            let manifest = DatasetManifest::load(manifest)?;
            create_dir(&args.out)?;
            let jobs: Vec<_> = manifest
                .entries
                .iter()
                .map(|e| {
                    let name = format!("{}.pgm", e.id);
                    (dir.join(&name), &e.image, args.out.join(name))
                })
                .collect();
            for (_, _, o) in &jobs {
                refuse_existing(o, args.force)?;
            }
            jobs.par_iter()
                .try_for_each(|(s, img, o)| refine_one(s, img, o, &params))
        }
        _ => Err(Error::Input("give --saliency with --image, or --pred-dir with --manifest".into())),
    }
}

fn parse_mode(s: &str) -> Result<MaxFMode> {
    match s {
        "dataset-mean" => Ok(MaxFMode::DatasetMean),
        "per-image" => Ok(MaxFMode::PerImage),
        other => Err(Error::Config(format!(
            "unknown max-F mode {other:?}; expected dataset-mean or per-image"
        ))),
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mode = parse_mode(&args.mode)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let report_path = args.out.join("report.json");
    refuse_existing(&report_path, args.force)?;
    let pred_paths: Vec<_> = manifest
        .entries
        .iter()
        .map(|e| args.pred_dir.join(format!("{}.pgm", e.id)))
        .collect();
    let missing: Vec<_> = manifest
        .entries
        .iter()
        .zip(&pred_paths)
        .filter(|(_, p)| !p.is_file())
        .map(|(e, _)| e.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "missing predictions in {} for: {}",
            args.pred_dir.display(),
            missing.join(", ")
        )));
    }
    let loaded: Vec<(Tensor, Tensor)> = manifest
        .entries
        .par_iter()
        .zip(&pred_paths)
        .map(|(e, p)| Ok((gray_tensor(&netpbm::load_pgm(p)?)?, gray_tensor(&netpbm::load_pgm(&e.gt)?)?)))
        .collect::<Result<_>>()?;
    let (preds, gts): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    let ids: Vec<_> = manifest.entries.iter().map(|e| e.id.clone()).collect();
    let report = evaluate(&ids, &preds, &gts, mode)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("pr.csv"), &report.curve.to_csv())?;
    write_text(&report_path, &report.to_json())?;
    println!("max-F {:.4}  MAE {:.4}", report.max_f, report.mae);
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let patterns = args
        .patterns
        .split(',')
        .map(|p| p.trim().parse::<Pattern>())
        .collect::<Result<Vec<_>>>()?;
    if patterns.contains(&Pattern::Custom) {
        return Err(Error::Config("ablation takes named patterns only".into()));
    }
    refuse_existing(&args.out, args.force)?;
    let train_path = required_manifest(&args.train_manifest, &cfg.paths.train_manifest, "training")?;
    let eval_path = required_manifest(&args.eval_manifest, &cfg.paths.eval_manifest, "evaluation")?;
    let train_set = DatasetManifest::load(&train_path)?.load_samples(cfg.means)?;
    let eval_set = DatasetManifest::load(&eval_path)?.load_samples(cfg.means)?;
    let base = NetworkConfig {
        edges: None,
        ..cfg.network.clone()
    };
    let rows = run_ablation(&patterns, &base, &cfg.train_config(), &train_set, &eval_set)?;
    let mut csv = format!("{}\n", AblationRow::csv_header());
    for row in &rows {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    write_text(&args.out, &csv)?;
    print!("{csv}");
    Ok(())
}
