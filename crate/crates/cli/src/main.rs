//! Command-line driver: corpus generation, domain statistics, reference
//! pretraining, training in all four modes, evaluation, translation,
//! ablations, and report assembly.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hylda_core::config::{apply_seed_override, load_pipeline, Config, Mode, PipelineConfig};
use hylda_core::datasets::{load_index, load_set, LoadedSet};
use hylda_core::domainstats::{precompute_stats, stats_mae, DomainStats};
use hylda_core::evaluate::{
    evaluate_set, write_miou_svg, write_stats_csv, write_summary_csv, RunSummary, StatsRow,
};
use hylda_core::formats::{sha256_file, write_hyl1, write_hyls, write_norm_stats};
use hylda_core::nn::ParamStore;
use hylda_core::rangeview::{compute_norm_stats, NormStats, RangeImage};
use hylda_core::segmentation::load_segnet;
use hylda_core::synthlidar::{build_domain_pair, DomainSpec};
use hylda_core::tensor::Tensor;
use hylda_core::trainer::{load_run_data, pretrain_ref_source, run, run_ablation_suite, RunData};
use hylda_core::translation::{load_engine, translate_batch, Direction, Engine};
use hylda_core::{HyldaError, PipelineScalar, Result};

type S = PipelineScalar;

#[derive(Parser)]
#[command(name = "hylda", version, about = "Hybrid LiDAR domain adaptation pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic two-domain corpus
    GenSynth(GenSynthArgs),
    /// Compute normalization bounds and per-domain statistics
    PrecomputeStats(StatsArgs),
    /// Pretrain the source-only reference network
    PretrainRef(PretrainArgs),
    /// Train a segmentation network in one of the four modes
    Train(TrainArgs),
    /// Evaluate a segmentation checkpoint on a split
    Eval(EvalArgs),
    /// Translate frames through a trained engine
    Translate(TranslateArgs),
    /// Run the leave-one-out ablation suite
    Ablate(AblateArgs),
    /// Assemble summary tables and charts from finished runs
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// INI-style configuration file; shipped defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one value as section.key=value; wins over file and HYLDA_SEED
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// File values, then the HYLDA_SEED environment override, then --set
    /// flags, in increasing precedence.
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::from_file(p)?,
            None => Config::empty(),
        };
        apply_seed_override(&mut cfg, std::env::var("HYLDA_SEED").ok().as_deref())?;
        for spec in &self.overrides {
            cfg.apply_override(spec)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenSynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory for the corpus
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus root holding source/ and target/
    #[arg(long)]
    data: PathBuf,
    /// Output directory; defaults to the corpus root
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus root holding source/ and target/
    #[arg(long)]
    data: PathBuf,
    /// Output directory for ref.hylc and metrics.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus root holding source/ and target/
    #[arg(long)]
    data: PathBuf,
    /// Pretrained reference checkpoint from pretrain-ref
    #[arg(long = "ref", value_name = "PATH")]
    reference: Option<PathBuf>,
    /// Training mode, overriding the config file
    #[arg(long)]
    mode: Option<String>,
    /// Labeled subset size, overriding the config file
    #[arg(long)]
    subset: Option<usize>,
    /// Output directory for checkpoints and metrics
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus root holding source/ and target/
    #[arg(long)]
    data: PathBuf,
    /// Segmentation checkpoint (best.hylc from train)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split to score: source-train, source-val, target-train or target-val
    #[arg(long, default_value = "target-val")]
    split: String,
    /// Optional directory for summary.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TranslateArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus root holding source/ and target/
    #[arg(long)]
    data: PathBuf,
    /// Engine checkpoint (engine.hylc from a hylda run)
    #[arg(long)]
    engine: PathBuf,
    /// to-target reads source frames, to-source reads target frames
    #[arg(long, default_value = "to-target")]
    direction: String,
    /// Split to translate: train or val
    #[arg(long, default_value = "train")]
    split: String,
    /// Output directory for translated frames
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus root holding source/ and target/
    #[arg(long)]
    data: PathBuf,
    /// Pretrained reference checkpoint from pretrain-ref
    #[arg(long = "ref", value_name = "PATH")]
    reference: PathBuf,
    /// Comma-separated seeds; the whole suite runs once per seed
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Output directory for per-variant runs and ablation.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Run directories (each holding metrics.csv) or metrics.csv files
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Corpus root; together with --engine adds the domain-statistics table
    #[arg(long)]
    data: Option<PathBuf>,
    /// Engine checkpoint for the domain-statistics table
    #[arg(long)]
    engine: Option<PathBuf>,
    /// Output directory for summary.csv, miou.svg and stats.csv
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenSynth(a) => cmd_gen(a),
        Cmd::PrecomputeStats(a) => cmd_stats(a),
        Cmd::PretrainRef(a) => cmd_pretrain(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Translate(a) => cmd_translate(a),
        Cmd::Ablate(a) => cmd_ablate(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

fn cmd_gen(a: GenSynthArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let p = load_pipeline(&cfg)?;
    let summary = build_domain_pair(&p.source, &p.target, &p.gen_config(), &a.out)?;
    write_run_records(&a.out, &p, &run_inputs(&a.common, &[]))?;
    println!(
        "generated {} source and {} target frames under {}",
        summary.source_frames,
        summary.target_frames,
        a.out.display()
    );
    for (size, n) in &summary.subsets {
        println!("  labeled subset {size}: {n} frames");
    }
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let p = load_pipeline(&cfg)?;
    let out = a.out.clone().unwrap_or_else(|| a.data.clone());
    let src_idx = load_index(&a.data.join("source"), "train")?;
    let norm = norm_from_index(&src_idx)?;
    let src = load_set::<S>(&src_idx, Some(&norm))?;
    let trg = load_set(&load_index(&a.data.join("target"), "train")?, Some(&norm))?;
    let src_stats = domain_stats(&src)?;
    let trg_stats = domain_stats(&trg)?;
    create_dir(&out)?;
    write_norm_stats(&out.join("norm.stats"), &norm)?;
    write_hyls(&out.join("stats_source.hyls"), &src_stats)?;
    write_hyls(&out.join("stats_target.hyls"), &trg_stats)?;
    write_run_records(&out, &p, &run_inputs(&a.common, &data_manifests(&a.data)))?;
    let (mean_mae, cov_mae) = stats_mae(&src_stats, &trg_stats)?;
    println!(
        "domain gap on train splits: mean MAE {:.6}, covariance MAE {:.6}",
        f64::from(mean_mae),
        f64::from(cov_mae)
    );
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let p = load_pipeline(&cfg)?;
    let data: RunData<S> = load_run_data(&a.data, None)?;
    create_dir(&a.out)?;
    let ckpt = a.out.join("ref.hylc");
    let res = pretrain_ref_source(&p.train, &data.source_train, &data.source_val, &ckpt)?;
    let metrics = a.out.join("metrics.csv");
    std::fs::write(&metrics, &res.metrics_csv).map_err(|e| HyldaError::io(&metrics, e))?;
    write_run_records(&a.out, &p, &run_inputs(&a.common, &data_manifests(&a.data)))?;
    println!(
        "pretrained reference: source val mIoU {:.4}, checkpoint {}",
        res.final_miou,
        ckpt.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(m) = &a.mode {
        cfg.set("train", "mode", m);
    }
    if let Some(s) = a.subset {
        cfg.set("train", "labeled_subset_size", &s.to_string());
    }
    let p = load_pipeline(&cfg)?;
    let tc = &p.train;
    let reference = check_reference(tc.mode, a.reference.as_deref())?;
    let subset = matches!(tc.mode, Mode::Finetune | Mode::Hylda).then_some(tc.labeled_subset_size);
    let data: RunData<S> = load_run_data(&a.data, subset)?;
    let result = run(tc, &data, reference, &a.out)?;
    let mut inputs = data_manifests(&a.data).to_vec();
    if let Some(r) = reference {
        inputs.push(r.to_path_buf());
    }
    write_run_records(&a.out, &p, &run_inputs(&a.common, &inputs))?;
    println!(
        "{} run done: best epoch {}, target val mIoU {:.4}, checkpoint {}",
        result.mode.as_str(),
        result.best_epoch,
        result.best_miou,
        result.checkpoint.display()
    );
    Ok(())
}

/// Modes that consume the reference checkpoint fail fast, naming the missing
/// file, before any data is loaded.
fn check_reference(mode: Mode, reference: Option<&Path>) -> Result<Option<&Path>> {
    if !matches!(mode, Mode::Finetune | Mode::Hylda) {
        return Ok(None);
    }
    let Some(path) = reference else {
        return Err(HyldaError::Config(format!(
            "{} mode requires the pretrained reference checkpoint: pass --ref (see pretrain-ref)",
            mode.as_str()
        )));
    };
    if !path.is_file() {
        return Err(HyldaError::Config(format!(
            "reference checkpoint not found: {}",
            path.display()
        )));
    }
    Ok(Some(path))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let p = load_pipeline(&cfg)?;
    let data: RunData<S> = load_run_data(&a.data, None)?;
    let set = match a.split.as_str() {
        "source-train" => &data.source_train,
        "source-val" => &data.source_val,
        "target-train" => &data.target_train,
        "target-val" => &data.target_val,
        other => {
            return Err(HyldaError::Config(format!(
                "unknown split '{other}', expected source-train|source-val|target-train|target-val"
            )))
        }
    };
    let mut store = ParamStore::new();
    let net = load_segnet(&a.checkpoint, &mut store, "fenc", "fdec")?;
    let eval = evaluate_set(&store, &net, set)?;
    for (i, iou) in eval.per_class.iter().enumerate() {
        match iou {
            Some(v) => println!("class {}: IoU {:.4}", i + 1, v),
            None => println!("class {}: absent", i + 1),
        }
    }
    println!("mIoU {:.4} on {} ({} frames)", eval.miou, a.split, set.frames.len());
    if let Some(out) = &a.out {
        create_dir(out)?;
        let names: Vec<String> = (1..=net.n_classes()).map(|i| i.to_string()).collect();
        let row = RunSummary {
            mode: "eval".into(),
            subset: 0,
            seed: p.seed,
            per_class: eval.per_class.clone(),
            miou: eval.miou,
        };
        write_summary_csv(&out.join("summary.csv"), &names, &[row])?;
        let mut inputs = data_manifests(&a.data).to_vec();
        inputs.push(a.checkpoint.clone());
        write_run_records(out, &p, &run_inputs(&a.common, &inputs))?;
    }
    Ok(())
}

fn cmd_translate(a: TranslateArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let p = load_pipeline(&cfg)?;
    let dir: Direction = a.direction.parse()?;
    if !matches!(a.split.as_str(), "train" | "val") {
        return Err(HyldaError::Config(format!(
            "unknown split '{}', expected train|val",
            a.split
        )));
    }
    let domain = match dir {
        Direction::SourceToTarget => "source",
        Direction::TargetToSource => "target",
    };
    // Bounds always come from the source train split.
    let norm = norm_from_index(&load_index(&a.data.join("source"), "train")?)?;
    let set = load_set(&load_index(&a.data.join(domain), &a.split)?, Some(&norm))?;
    let mut store = ParamStore::new();
    let engine = load_engine(&a.engine, &mut store)?;
    create_dir(&a.out)?;
    let fakes = translate_set(&engine, &store, &set, dir)?;
    for (frame, fake) in set.frames.iter().zip(&fakes) {
        write_hyl1(&a.out.join(format!("{}.hyl1", frame.frame_id)), fake)?;
    }
    let mut inputs = data_manifests(&a.data).to_vec();
    inputs.push(a.engine.clone());
    write_run_records(&a.out, &p, &run_inputs(&a.common, &inputs))?;
    println!(
        "translated {} {domain} {} frames into {} (normalized space)",
        set.frames.len(),
        a.split,
        a.out.display()
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    cfg.set("train", "mode", "hylda");
    let p = load_pipeline(&cfg)?;
    if !a.reference.is_file() {
        return Err(HyldaError::Config(format!(
            "reference checkpoint not found: {}",
            a.reference.display()
        )));
    }
    let data: RunData<S> = load_run_data(&a.data, Some(p.train.labeled_subset_size))?;
    let rows = run_ablation_suite(&p.train, &data, &a.reference, &a.seeds, &a.out)?;
    let mut inputs = data_manifests(&a.data).to_vec();
    inputs.push(a.reference.clone());
    write_run_records(&a.out, &p, &run_inputs(&a.common, &inputs))?;
    for r in &rows {
        println!("{} seed {}: mIoU {:.4}", r.variant, r.seed, r.miou);
    }
    println!("ablation table written to {}", a.out.join("ablation.csv").display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let p = load_pipeline(&cfg)?;
    create_dir(&a.out)?;
    let mut rows = Vec::new();
    let mut class_names: Option<Vec<String>> = None;
    let mut inputs = Vec::new();
    for r in &a.runs {
        let path = if r.is_dir() { r.join("metrics.csv") } else { r.clone() };
        let (names, row) = best_row(&path)?;
        match &class_names {
            None => class_names = Some(names),
            Some(have) if *have != names => {
                return Err(HyldaError::Config(format!(
                    "{} reports different classes than the first run",
                    path.display()
                )))
            }
            _ => {}
        }
        rows.push(row);
        inputs.push(path);
    }
    let names = class_names.expect("at least one run");
    write_summary_csv(&a.out.join("summary.csv"), &names, &rows)?;
    write_miou_svg(&a.out.join("miou.svg"), &rows)?;
    if let (Some(data), Some(engine)) = (&a.data, &a.engine) {
        let table = fake_stats_table(data, engine)?;
        write_stats_csv(&a.out.join("stats.csv"), &table)?;
        inputs.extend(data_manifests(data));
        inputs.push(engine.clone());
    }
    write_run_records(&a.out, &p, &run_inputs(&a.common, &inputs))?;
    println!("report over {} runs written to {}", rows.len(), a.out.display());
    Ok(())
}

/// Extracts the best-epoch row of a run's metrics file, mirroring checkpoint
/// selection: highest validation mIoU, earliest epoch on ties.
fn best_row(path: &Path) -> Result<(Vec<String>, RunSummary)> {
    let text = std::fs::read_to_string(path).map_err(|e| HyldaError::io(path, e))?;
    let bad = |why: &str| HyldaError::format(path, why);
    let mut lines = text.lines();
    let header: Vec<&str> =
        lines.next().ok_or_else(|| bad("empty metrics file"))?.split(',').collect();
    let miou_col =
        header.iter().position(|h| *h == "miou").ok_or_else(|| bad("no miou column"))?;
    if miou_col < 5 || header[..4] != ["epoch", "mode", "subset", "seed"] {
        return Err(bad("unexpected column layout"));
    }
    let names: Vec<String> = header[4..miou_col]
        .iter()
        .map(|h| {
            h.strip_prefix("iou_").map(str::to_string).ok_or_else(|| bad("unexpected column layout"))
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, RunSummary)> = None;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() <= miou_col {
            return Err(bad("short metrics row"));
        }
        let miou: f64 = cells[miou_col].parse().map_err(|_| bad("bad miou value"))?;
        if best.as_ref().is_some_and(|(b, _)| miou <= *b) {
            continue;
        }
        let per_class = cells[4..miou_col]
            .iter()
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| bad("bad iou value"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let row = RunSummary {
            mode: cells[1].to_string(),
            subset: cells[2].parse().map_err(|_| bad("bad subset value"))?,
            seed: cells[3].parse().map_err(|_| bad("bad seed value"))?,
            per_class,
            miou,
        };
        best = Some((miou, row));
    }
    best.map(|(_, r)| (names, r)).ok_or_else(|| bad("no data rows"))
}

/// Domain-statistics table: the raw source/target gap next to the gap after
/// translation, in both directions.
fn fake_stats_table(data: &Path, engine_path: &Path) -> Result<Vec<StatsRow>> {
    let src_idx = load_index(&data.join("source"), "train")?;
    let norm = norm_from_index(&src_idx)?;
    let src = load_set::<S>(&src_idx, Some(&norm))?;
    let trg = load_set(&load_index(&data.join("target"), "train")?, Some(&norm))?;
    let mut store = ParamStore::new();
    let engine = load_engine(engine_path, &mut store)?;
    let src_stats = domain_stats(&src)?;
    let trg_stats = domain_stats(&trg)?;
    let fake_trg =
        precompute_stats(&translate_set(&engine, &store, &src, Direction::SourceToTarget)?)?;
    let fake_src =
        precompute_stats(&translate_set(&engine, &store, &trg, Direction::TargetToSource)?)?;
    let row = |population: &str, (mean_mae, cov_mae): (S, S)| StatsRow {
        population: population.to_string(),
        mean_mae: f64::from(mean_mae),
        cov_mae: f64::from(cov_mae),
    };
    Ok(vec![
        row("source_vs_target", stats_mae(&src_stats, &trg_stats)?),
        row("fake_target_vs_target", stats_mae(&fake_trg, &trg_stats)?),
        row("fake_source_vs_source", stats_mae(&fake_src, &src_stats)?),
    ])
}

/// Runs every frame of `set` through the engine one at a time; outputs stay
/// in normalized space and keep the input's valid mask.
fn translate_set(
    engine: &Engine,
    store: &ParamStore<S>,
    set: &LoadedSet<S>,
    dir: Direction,
) -> Result<Vec<RangeImage<S>>> {
    let mut out = Vec::with_capacity(set.frames.len());
    for f in &set.frames {
        let batch = Tensor::stack(&[&f.image.channels])?;
        let fake = translate_batch(engine, store, &batch, dir);
        let shape = f.image.channels.shape().to_vec();
        out.push(RangeImage {
            channels: Tensor::from_vec(&shape, fake.data().to_vec())?,
            valid: f.image.valid.clone(),
            normalized: true,
        });
    }
    Ok(out)
}

fn norm_from_index(src_train: &hylda_core::datasets::DatasetIndex) -> Result<NormStats<S>> {
    let raw = load_set::<S>(src_train, None)?;
    let images: Vec<RangeImage<S>> = raw.frames.iter().map(|f| f.image.clone()).collect();
    compute_norm_stats(&images)
}

fn domain_stats(set: &LoadedSet<S>) -> Result<DomainStats<S>> {
    let images: Vec<RangeImage<S>> = set.frames.iter().map(|f| f.image.clone()).collect();
    precompute_stats(&images)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HyldaError::io(path, e))
}

fn data_manifests(data: &Path) -> [PathBuf; 2] {
    [data.join("source").join("manifest.tsv"), data.join("target").join("manifest.tsv")]
}

fn run_inputs(common: &Common, extra: &[PathBuf]) -> Vec<PathBuf> {
    let mut v = Vec::new();
    if let Some(p) = &common.config {
        v.push(p.clone());
    }
    v.extend(extra.iter().cloned());
    v
}

/// Every artifact-producing command leaves the fully resolved configuration
/// and a content-hash manifest of its inputs next to its outputs, enough to
/// replay the run.
fn write_run_records(out: &Path, p: &PipelineConfig, inputs: &[PathBuf]) -> Result<()> {
    create_dir(out)?;
    let resolved = out.join("resolved.cfg");
    std::fs::write(&resolved, resolved_config(p).to_ini())
        .map_err(|e| HyldaError::io(&resolved, e))?;
    let mut text = String::from("path\tsha256\n");
    for p in inputs {
        text.push_str(&format!("{}\t{}\n", p.display(), sha256_file(p)?));
    }
    let manifest = out.join("inputs.tsv");
    std::fs::write(&manifest, text).map_err(|e| HyldaError::io(&manifest, e))
}

/// Serializes every effective value, defaults included, so the run can be
/// replayed from this file alone.
fn resolved_config(p: &PipelineConfig) -> Config {
    let mut c = Config::empty();
    c.set("pipeline", "grid_h", &p.grid_h.to_string());
    c.set("pipeline", "grid_w", &p.grid_w.to_string());
    c.set("pipeline", "classes", &p.classes.to_string());
    c.set("pipeline", "seed", &p.seed.to_string());
    c.set("pipeline", "subset_sizes", &join_list(&p.subset_sizes));
    set_domain(&mut c, "source", &p.source);
    set_domain(&mut c, "target", &p.target);
    let t = &p.train;
    c.set("train", "mode", t.mode.as_str());
    c.set("train", "beta", &t.beta.to_string());
    c.set("train", "gamma", &t.gamma.to_string());
    c.set("train", "lr_seg", &t.lr_seg.to_string());
    c.set("train", "lr_i2i", &t.lr_i2i.to_string());
    c.set("train", "epochs", &t.epochs.to_string());
    c.set("train", "batch_size", &t.batch_size.to_string());
    c.set("train", "labeled_subset_size", &t.labeled_subset_size.to_string());
    c.set("train", "widths", &join_list(&t.widths));
    c.set("train", "use_hylda_i2i", &t.use_hylda_i2i.to_string());
    c.set("train", "use_aux_selfsup", &t.use_aux_selfsup.to_string());
    c.set("train", "use_unsup_step", &t.use_unsup_step.to_string());
    c.set("train", "use_stats_loss", &t.use_stats_loss.to_string());
    c.set("train", "dual_head_disc", &t.dual_head_disc.to_string());
    c.set("train", "update_disc_in_step6", &t.update_disc_in_step6.to_string());
    c.set("train", "augment", &t.augment.to_string());
    c
}

fn set_domain(c: &mut Config, section: &str, d: &DomainSpec) {
    c.set(section, "beams", &d.sensor.beams.to_string());
    c.set(section, "width", &d.sensor.width.to_string());
    c.set(section, "fov_up", &d.sensor.fov_up_deg.to_string());
    c.set(section, "fov_down", &d.sensor.fov_down_deg.to_string());
    c.set(section, "max_range", &d.sensor.max_range.to_string());
    c.set(section, "noise_sigma", &d.sensor.noise_sigma.to_string());
    c.set(section, "dropout_prob", &d.sensor.dropout_prob.to_string());
    c.set(section, "remission_gain", &d.remission_gain.to_string());
    c.set(section, "extent", &d.scene.extent.to_string());
    c.set(section, "ground", &d.scene.n_ground.to_string());
    c.set(section, "vehicles", &d.scene.n_vehicles.to_string());
    c.set(section, "pedestrians", &d.scene.n_pedestrians.to_string());
    c.set(section, "buildings", &d.scene.n_buildings.to_string());
    c.set(section, "poles", &d.scene.n_poles.to_string());
    c.set(section, "vegetation", &d.scene.n_vegetation.to_string());
    c.set(section, "scene_seed", &d.scene.seed.to_string());
    c.set(section, "n_train", &d.n_train.to_string());
    c.set(section, "n_val", &d.n_val.to_string());
}

fn join_list(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
