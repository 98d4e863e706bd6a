//! Command-line front end: `wsi-mil <synth|preprocess|train|eval|heatmap|gradcheck>`.
//!
//! Settings come from an optional TOML file (`--config`), with command-line
//! flags taking precedence. `--describe` prints the effective configuration,
//! which with no file is the full set of defaults. The worker count for
//! parallel folds, slides, and tiles is read from `WSI_MIL_WORKERS`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bags::{
    generate_planted, generate_synthetic, load_dataset, split_train_test, write_dataset_manifest, Bag, ManifestRow,
    PlantedConfig, SynthConfig,
};
use crate::diff::{GradCheckOptions, Tensor2D};
use crate::error::{Error, Result};
use crate::heatmap::{heatmap_file_name, render_attention, render_contributions, write_image, PatchScoreMap};
use crate::metrics::{roc_auc, write_metrics_report, write_roc_points, MetricsRow};
use crate::mil::{
    model_grad_check, predict, read_checkpoint, repeat_protocol, train_model, write_checkpoint, Architecture, MilModel,
    ModelDims, TrainConfig,
};
use crate::wsi::{
    run_pipeline, store_write, synth_corpus, DirPyramid, EmbeddingStore, HandcraftedExtractor, Magnification,
    PipelineConfig, PyramidSynthConfig, SlideRecord, SlideSource, TileCoord, TILE_SIZE,
};

pub const WORKERS_ENV: &str = "WSI_MIL_WORKERS";
/// Gradient checks fail above this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Attention hidden width (L). The embedding width comes from the data.
    pub attn_dim: usize,
    pub head_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            attn_dim: 128,
            head_hidden: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form task tag written to reports.
    pub task: String,
    /// Magnification tag written to reports and used as the pipeline target.
    pub magnification: Magnification,
    pub architectures: Vec<Architecture>,
    /// Independent protocol runs for `eval`.
    pub runs: usize,
    /// Train on augmented tile embeddings as extra instances.
    pub include_augmented: bool,
    /// Seed of the fixed feature projection.
    pub extractor_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub planted: PlantedConfig,
    pub pyramid: PyramidSynthConfig,
    pub pipeline: PipelineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: "synthetic".into(),
            magnification: Magnification::X10,
            architectures: Architecture::ALL.to_vec(),
            runs: 5,
            include_augmented: true,
            extractor_seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            planted: PlantedConfig::default(),
            pyramid: PyramidSynthConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.architectures.is_empty() {
            return Err(Error::Config("no architectures selected".into()));
        }
        self.train.validate()?;
        self.pipeline.validate()
    }

    /// Applies one seed to every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.synth.seed = seed;
        self.planted.seed = seed;
        self.pyramid.seed = seed;
        self.pipeline.seed = seed;
    }

    fn dims(&self, embed_dim: usize) -> ModelDims {
        ModelDims {
            embed_dim,
            attn_dim: self.model.attn_dim,
            head_hidden: self.model.head_hidden.clone(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wsi-mil", version, about = "Attention-based MIL for whole-slide images")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub describe: bool,
    /// Seed applied to every component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Feature-space bags.
    Bags,
    /// Grid bags whose positive instances form one region.
    Planted,
    /// Image pyramids for the preprocessing pipeline.
    Pyramid,
}

#[derive(Debug, Clone, clap::Args)]
pub struct TrainFlags {
    /// Architectures to train (repeatable).
    #[arg(long = "arch")]
    pub arch: Vec<Architecture>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub attn_dim: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long, value_enum, default_value = "bags")]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        class_separation: Option<f64>,
        #[arg(long)]
        num_bags: Option<usize>,
        #[arg(long)]
        slides: Option<usize>,
    },
    /// Run the tile pipeline over a slide manifest.
    Preprocess {
        /// Slide manifest (slide_id,label,path,mpp).
        #[arg(long)]
        slides: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target: Option<Magnification>,
    },
    /// Cross-validate on the training split and save fold checkpoints.
    Train {
        /// Dataset manifest (source_id,label,store_path).
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Repeated protocol runs, or a saved checkpoint scored on the test split.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Render attention and contribution maps for one slide.
    Heatmap {
        /// Model checkpoints (repeatable).
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        slide: String,
        /// Slide pyramid directory; without it the map is drawn on a blank canvas.
        #[arg(long)]
        slide_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of the bag loss.
    Gradcheck {
        #[arg(long = "arch")]
        arch: Vec<Architecture>,
    },
}

/// Parses the process arguments, runs the command, and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{WORKERS_ENV}={raw} is not a positive integer")))?;
    // A second initialisation (tests calling in-process) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let Some(command) = cli.command else {
        if cli.describe {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        return Err(Error::Config("no command given; see --help".into()));
    };
    apply_overrides(&mut cfg, &command);
    if cli.describe {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    cfg.validate()?;
    match command {
        Command::Synth { kind, out, .. } => cmd_synth(&cfg, kind, &out),
        Command::Preprocess { slides, out, .. } => cmd_preprocess(&cfg, &slides, &out),
        Command::Train { dataset, out, .. } => cmd_train(&cfg, &dataset, &out),
        Command::Eval {
            dataset,
            out,
            checkpoint,
            ..
        } => cmd_eval(&cfg, &dataset, &out, checkpoint.as_deref()),
        Command::Heatmap {
            checkpoints,
            store,
            slide,
            slide_dir,
            out,
        } => cmd_heatmap(&cfg, &checkpoints, &store, &slide, slide_dir.as_deref(), &out),
        Command::Gradcheck { arch } => cmd_gradcheck(&arch, cfg.train.seed),
    }
}

fn apply_train_flags(cfg: &mut ExperimentConfig, flags: &TrainFlags) {
    if !flags.arch.is_empty() {
        cfg.architectures = flags.arch.clone();
    }
    if let Some(e) = flags.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = flags.lr0 {
        cfg.train.lr0 = lr;
        cfg.train.lr_min = cfg.train.lr_min.min(lr);
    }
    if let Some(l) = flags.attn_dim {
        cfg.model.attn_dim = l;
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, command: &Command) {
    match command {
        Command::Synth {
            class_separation,
            num_bags,
            slides,
            ..
        } => {
            if let Some(s) = class_separation {
                cfg.synth.class_separation = *s;
                cfg.planted.class_separation = *s;
            }
            if let Some(n) = num_bags {
                cfg.synth.num_bags = *n;
                cfg.planted.num_bags = *n;
            }
            if let Some(n) = slides {
                cfg.pyramid.slides = *n;
            }
        }
        Command::Preprocess { target, .. } => {
            if let Some(t) = target {
                cfg.pipeline.target = *t;
                cfg.magnification = *t;
            }
        }
        Command::Train { flags, .. } => apply_train_flags(cfg, flags),
        Command::Eval { flags, runs, .. } => {
            apply_train_flags(cfg, flags);
            if let Some(r) = runs {
                cfg.runs = *r;
            }
        }
        Command::Heatmap { .. } | Command::Gradcheck { .. } => {}
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Bags as store records; bags without tile coordinates get a row-major grid at 5x.
pub fn bags_to_store(bags: &[Bag]) -> Result<EmbeddingStore> {
    let dim = bags.first().map_or(0, Bag::embed_dim);
    let mut store = EmbeddingStore::new(dim);
    for bag in bags {
        let coords = match &bag.tile_coords {
            Some(c) => c.clone(),
            None => {
                let side = (bag.len() as f64).sqrt().ceil().max(1.0) as u32;
                (0..bag.len() as u32)
                    .map(|i| TileCoord::new(Magnification::X5, i % side, i / side))
                    .collect()
            }
        };
        store.push(SlideRecord::new(
            bag.source_id.clone(),
            bag.label,
            bag.instances.clone(),
            coords,
            vec![0; bag.len()],
        )?)?;
    }
    Ok(store)
}

fn write_bag_dataset(bags: &[Bag], out: &Path) -> Result<()> {
    create_dir(out)?;
    let store_name = "bags.milstore";
    store_write(&out.join(store_name), &bags_to_store(bags)?)?;
    let rows: Vec<ManifestRow> = bags
        .iter()
        .map(|b| ManifestRow {
            source_id: b.source_id.clone(),
            label: b.label,
            store_path: PathBuf::from(store_name),
        })
        .collect();
    write_dataset_manifest(&out.join("dataset.csv"), &rows)?;
    let positives = bags.iter().filter(|b| b.label == 1).count();
    println!("wrote {} bags ({positives} positive) to {}", bags.len(), out.display());
    Ok(())
}

pub fn cmd_synth(cfg: &ExperimentConfig, kind: SynthKind, out: &Path) -> Result<()> {
    match kind {
        SynthKind::Bags => write_bag_dataset(&generate_synthetic(&cfg.synth)?, out),
        SynthKind::Planted => write_bag_dataset(&generate_planted(&cfg.planted)?, out),
        SynthKind::Pyramid => {
            let manifest = synth_corpus(&cfg.pyramid, out)?;
            println!("wrote {} slides; manifest {}", cfg.pyramid.slides, manifest.display());
            Ok(())
        }
    }
}

pub fn cmd_preprocess(cfg: &ExperimentConfig, slides: &Path, out: &Path) -> Result<()> {
    create_dir(out)?;
    let extractor = HandcraftedExtractor::new(cfg.extractor_seed);
    let store_name = "embeddings.milstore";
    let (store, reports) = run_pipeline(slides, &cfg.pipeline, &extractor, &out.join(store_name))?;
    println!("slide\tthreshold\tgated\tkept\tdiscarded\trows");
    for r in &reports {
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.slide_id, r.otsu_threshold, r.gated, r.kept, r.discarded, r.rows
        );
    }
    let rows: Vec<ManifestRow> = store
        .slides
        .iter()
        .map(|s| ManifestRow {
            source_id: s.slide_id.clone(),
            label: s.label,
            store_path: PathBuf::from(store_name),
        })
        .collect();
    write_dataset_manifest(&out.join("dataset.csv"), &rows)
}

fn load_bags(cfg: &ExperimentConfig, dataset: &Path) -> Result<Vec<Bag>> {
    let bags = load_dataset(dataset, cfg.include_augmented)?;
    if bags.is_empty() {
        return Err(Error::DegenerateDataset(format!("{} lists no bags", dataset.display())));
    }
    Ok(bags)
}

pub fn cmd_train(cfg: &ExperimentConfig, dataset: &Path, out: &Path) -> Result<()> {
    let bags = load_bags(cfg, dataset)?;
    let split = split_train_test(&bags, cfg.train.test_frac, cfg.train.seed)?;
    let dims = cfg.dims(bags[0].embed_dim());
    for &arch in &cfg.architectures {
        let dir = out.join(arch.as_str());
        create_dir(&dir)?;
        let cv = train_model(&split.train, arch, &dims, &cfg.train)?;
        let best = cv.best()?.fold;
        let mut report = String::from("fold\tval_auc\tfinal_loss\tbest\n");
        for f in &cv.folds {
            write_checkpoint(&dir.join(format!("fold{}.ckpt", f.fold)), &f.model)?;
            let loss = f.epoch_losses.last().copied().unwrap_or(f64::NAN);
            report.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{}\n",
                f.fold,
                f.val_auc,
                loss,
                u8::from(f.fold == best)
            ));
        }
        write_checkpoint(&dir.join("best.ckpt"), &cv.folds[best].model)?;
        let path = dir.join("folds.tsv");
        fs::write(&path, &report).map_err(|e| Error::io(&path, e))?;
        println!("{arch}: best fold {best}, validation AUC {:.3}", cv.folds[best].val_auc);
    }
    Ok(())
}

pub fn cmd_eval(cfg: &ExperimentConfig, dataset: &Path, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    create_dir(out)?;
    let bags = load_bags(cfg, dataset)?;
    if let Some(ckpt) = checkpoint {
        let model = read_checkpoint(ckpt)?;
        let split = split_train_test(&bags, cfg.train.test_frac, cfg.train.seed)?;
        let scores = predict(&model, &split.test)?;
        let labels: Vec<u8> = split.test.iter().map(|b| b.label).collect();
        let (roc, auc) = roc_auc(&scores, &labels)?;
        write_roc_points(&out.join(format!("roc_{}.csv", model.arch)), &roc)?;
        println!("{}\t{}\t{}\ttest AUC {auc:.3}", model.arch, cfg.task, cfg.magnification);
        return Ok(());
    }
    let dims = cfg.dims(bags[0].embed_dim());
    let mut rows = Vec::new();
    for &arch in &cfg.architectures {
        let (summary, runs) = repeat_protocol(&bags, arch, &dims, &cfg.train, cfg.runs)?;
        write_roc_points(&out.join(format!("roc_{arch}.csv")), &runs[0].roc)?;
        let row = MetricsRow {
            model: arch.to_string(),
            task: cfg.task.clone(),
            magnification: cfg.magnification.to_string(),
            summary,
        };
        println!("{}\t{}\t{}\t{}", row.model, row.task, row.magnification, row.summary);
        rows.push(row);
    }
    write_metrics_report(&out.join("metrics.tsv"), &rows)
}

pub fn cmd_heatmap(
    cfg: &ExperimentConfig,
    checkpoints: &[PathBuf],
    store_path: &Path,
    slide_id: &str,
    slide_dir: Option<&Path>,
    out: &Path,
) -> Result<()> {
    create_dir(out)?;
    let store = crate::wsi::store_read(store_path)?;
    let record = store
        .get(slide_id)
        .ok_or_else(|| Error::Input(format!("slide {slide_id} is not in {}", store_path.display())))?;
    let bag = record.to_bag(false)?;
    let coords = bag.tile_coords.clone().unwrap_or_default();
    let level = coords.first().map_or(Magnification::X5, |c| c.level);

    let (thumb, level_dims) = match slide_dir {
        Some(dir) => {
            let slide = DirPyramid::open(dir)?;
            let info = slide
                .meta()
                .thumbnail_level(cfg.pipeline.thumb_min_side)
                .ok_or_else(|| Error::Input(format!("slide {slide_id} has no usable thumbnail")))?;
            let thumb = slide.level_image(info.tag)?.clone();
            let dims = slide
                .meta()
                .level(level)
                .ok_or_else(|| Error::Input(format!("slide {slide_id} has no {level} level")))?
                .dims();
            (thumb, dims)
        }
        None => {
            let cols = coords.iter().map(|c| c.col).max().unwrap_or(0) + 1;
            let rows = coords.iter().map(|c| c.row).max().unwrap_or(0) + 1;
            let cell = 16;
            let thumb = image::RgbImage::from_pixel(cols * cell, rows * cell, image::Rgb([255, 255, 255]));
            (thumb, (cols * TILE_SIZE, rows * TILE_SIZE))
        }
    };

    for ckpt in checkpoints {
        let model = read_checkpoint(ckpt)?;
        if model.dims.embed_dim != bag.embed_dim() {
            return Err(Error::Config(format!(
                "{} expects width {}, store has {}",
                ckpt.display(),
                model.dims.embed_dim,
                bag.embed_dim()
            )));
        }
        let output = model.forward(&bag.instances)?;
        let map = PatchScoreMap::from_output(coords.clone(), &output, thumb.dimensions(), level_dims)?;
        let name = model.arch.as_str();
        let path = out.join(heatmap_file_name(slide_id, name, "attention"));
        write_image(&render_attention(&map, &thumb)?, &path)?;
        println!("{}", path.display());
        if model.arch.is_additive() {
            let path = out.join(heatmap_file_name(slide_id, name, "contrib"));
            write_image(&render_contributions(&map, &thumb)?, &path)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// Gradient check on a random 3-instance bag with M = 8, L = 4.
pub fn gradcheck_architecture(arch: Architecture, seed: u64) -> Result<f64> {
    let model = MilModel::new(arch, ModelDims::new(8, 4), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let values = (0..3 * 8).map(|_| StandardNormal.sample(&mut rng)).collect();
    let instances = Tensor2D::from_vec(3, 8, values)?;
    let opts = GradCheckOptions {
        coords_per_param: usize::MAX,
        seed,
        ..GradCheckOptions::default()
    };
    Ok(model_grad_check(&model, &instances, 1.0, opts)?.max_rel_error)
}

pub fn cmd_gradcheck(archs: &[Architecture], seed: u64) -> Result<()> {
    let archs = if archs.is_empty() {
        Architecture::ALL.to_vec()
    } else {
        archs.to_vec()
    };
    let mut worst: f64 = 0.0;
    for arch in archs {
        let err = gradcheck_architecture(arch, seed)?;
        println!("{arch}\tmax_rel_error\t{err:.3e}");
        worst = worst.max(err);
    }
    if worst > GRADCHECK_TOLERANCE {
        return Err(Error::Verification(format!(
            "max relative gradient error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_keeps_other_defaults() {
        let cfg: ExperimentConfig = toml::from_str("runs = 2\n[train]\nepochs = 7\n").unwrap();
        assert_eq!(cfg.runs, 2);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.lr0, 1e-4);
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }

    #[test]
    fn grid_coords_for_plain_bags() {
        let bags = generate_synthetic(&SynthConfig {
            num_bags: 2,
            min_instances: 5,
            max_instances: 5,
            ..Default::default()
        })
        .unwrap();
        let store = bags_to_store(&bags).unwrap();
        assert_eq!(store.slides[0].coords[4], TileCoord::new(Magnification::X5, 1, 1));
    }
}
