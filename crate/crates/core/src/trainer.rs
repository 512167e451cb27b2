//! Training orchestration: reference-network pretraining, the supervised
//! baseline modes, the six-step per-batch procedure, and the ablation suite.
//! Every epoch logs target-val metrics and the best-mIoU checkpoint is kept.

use std::path::{Path, PathBuf};

use crate::config::{Mode, TrainConfig};
use crate::datasets::{
    augment_batch, load_index, load_set, make_batch, plan_epoch, plan_supervised_epoch,
    subset_indices, Batch, LoadedSet,
};
use crate::domainstats::{precompute_stats, DomainStats};
use crate::evaluate::{evaluate_set, EvalResult};
use crate::nn::{ParamId, ParamStore};
use crate::optim::{Adam, Sgd};
use crate::rangeview::{compute_norm_stats, RangeImage, CHANNELS, CH_RANGE};
use crate::rng::Stream;
use crate::segmentation::{
    aux_reconstruction_loss, class_frequencies, class_weights, combined_unsupervised_loss,
    load_segnet, save_segnet, semantic_consistency_loss, weighted_cross_entropy, AuxDecoder,
    SegNet,
};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::translation::{
    lsgan_discriminator_loss, lsgan_generator_loss, reconstruction_loss, route_forward,
    save_engine, Engine, EngineConfig, ImagePool, Route,
};
use crate::{scalar, HyldaError, Result, Scalar};

/// Everything one run reads. `labeled` indexes the labeled subset within the
/// target train split.
pub struct RunData<S: Scalar> {
    pub source_train: LoadedSet<S>,
    pub source_val: LoadedSet<S>,
    pub target_train: LoadedSet<S>,
    pub target_val: LoadedSet<S>,
    pub labeled: Vec<usize>,
}

/// Loads a generated domain pair. Normalization bounds come from the source
/// train split and are shared by every split of both domains. `subset_size`
/// of `None` skips the labeled-subset file (naive and oracle runs).
pub fn load_run_data<S: Scalar>(root: &Path, subset_size: Option<usize>) -> Result<RunData<S>> {
    let src_dir = root.join("source");
    let trg_dir = root.join("target");
    let src_train_idx = load_index(&src_dir, "train")?;
    let raw = load_set::<S>(&src_train_idx, None)?;
    let images: Vec<RangeImage<S>> = raw.frames.iter().map(|f| f.image.clone()).collect();
    let norm = compute_norm_stats(&images)?;
    let source_train = load_set(&src_train_idx, Some(&norm))?;
    let source_val = load_set(&load_index(&src_dir, "val")?, Some(&norm))?;
    let target_train = load_set(&load_index(&trg_dir, "train")?, Some(&norm))?;
    let target_val = load_set(&load_index(&trg_dir, "val")?, Some(&norm))?;
    let labeled = match subset_size {
        Some(size) => {
            let path = trg_dir.join("subsets").join(format!("subset_{size:03}.txt"));
            subset_indices(&target_train, &path)?
        }
        None => Vec::new(),
    };
    Ok(RunData { source_train, source_val, target_train, target_val, labeled })
}

fn check_finite<S: Scalar>(step: &str, v: S) -> Result<f64> {
    let f = v.to_f64().unwrap_or(f64::NAN);
    if !f.is_finite() {
        return Err(HyldaError::NonFinite { step: step.to_string(), value: f });
    }
    Ok(f)
}

fn set_stats<S: Scalar>(set: &LoadedSet<S>) -> Result<DomainStats<S>> {
    let images: Vec<RangeImage<S>> = set.frames.iter().map(|f| f.image.clone()).collect();
    precompute_stats(&images)
}

fn alphas_of<'a, S: Scalar>(
    maps: impl IntoIterator<Item = &'a crate::LabelMap>,
    n_out: usize,
) -> Result<Vec<S>> {
    Ok(class_weights(&class_frequencies(maps, n_out)?))
}

/// Loss readings and parameter-group updates from one six-step pass.
/// `None` marks a sub-step its switch turned off.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub l_xself: Option<f64>,
    pub l_gan: Option<f64>,
    pub l_stats: Option<f64>,
    pub l_i2i: Option<f64>,
    pub l_disc: Option<f64>,
    pub l_aux: Option<f64>,
    pub l_wce: Option<f64>,
    pub l_uwce: Option<f64>,
    pub l_sem: Option<f64>,
    pub l_unsup: Option<f64>,
    /// Parameter groups stepped, in execution order.
    pub updated: Vec<&'static str>,
}

const GEN: usize = 0;
const DISC: usize = 1;
const FENC: usize = 2;
const FDEC: usize = 3;
const DECAUX: usize = 4;
const GROUP_NAMES: [&str; 6] =
    ["engine generators", "engine discriminators", "f_enc", "f_dec", "dec_aux", "reference network"];

/// Mutable state of the six-step procedure: one parameter store holding the
/// translation engine, f_target, the frozen reference network, and Dec_aux.
pub struct HyldaState<S: Scalar> {
    pub store: ParamStore<S>,
    pub engine: Engine,
    pub net: SegNet,
    pub refsrc: SegNet,
    pub aux: AuxDecoder,
    cfg: TrainConfig,
    src_stats: Option<DomainStats<S>>,
    trg_stats: Option<DomainStats<S>>,
    alphas_subset: Vec<S>,
    alphas_source: Vec<S>,
    opt_engine: Sgd,
    opt_seg: Adam,
    pool_src: ImagePool<S>,
    pool_trg: ImagePool<S>,
    pool_stream: Stream,
    ref_hash: String,
}

impl<S: Scalar> HyldaState<S> {
    pub fn new(cfg: &TrainConfig, data: &RunData<S>, ref_checkpoint: &Path) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = load_segnet(ref_checkpoint, &mut store, "fenc", "fdec")?;
        if net.n_classes() != cfg.n_classes {
            return Err(HyldaError::Config(format!(
                "reference checkpoint has {} classes, run wants {}",
                net.n_classes(),
                cfg.n_classes
            )));
        }
        let refsrc = load_segnet(ref_checkpoint, &mut store, "refsrc_enc", "refsrc_dec")?;
        let mut rng = Stream::new(cfg.seed, "hylda-init");
        let aux = AuxDecoder::new(&mut store, &mut rng, "decaux", net.in_ch(), net.widths());
        let engine = Engine::new(
            &mut store,
            &mut rng,
            EngineConfig { in_ch: net.in_ch(), widths: cfg.widths, dual_head: cfg.dual_head_disc },
        );
        let n_out = cfg.n_classes + 1;
        let alphas_subset =
            alphas_of(data.labeled.iter().map(|&i| &data.target_train.frames[i].labels), n_out)?;
        let alphas_source = alphas_of(data.source_train.frames.iter().map(|f| &f.labels), n_out)?;
        let (src_stats, trg_stats) = if cfg.use_hylda_i2i && cfg.use_stats_loss {
            (Some(set_stats(&data.source_train)?), Some(set_stats(&data.target_train)?))
        } else {
            (None, None)
        };
        let ref_hash = store.group_hash(refsrc.ids());
        Ok(HyldaState {
            store,
            engine,
            net,
            refsrc,
            aux,
            cfg: cfg.clone(),
            src_stats,
            trg_stats,
            alphas_subset,
            alphas_source,
            opt_engine: Sgd::new(cfg.lr_i2i),
            opt_seg: Adam::new(cfg.lr_seg),
            pool_src: ImagePool::new(16),
            pool_trg: ImagePool::new(16),
            pool_stream: Stream::new(cfg.seed, "pool"),
            ref_hash,
        })
    }

    pub fn verify_reference_frozen(&self) -> Result<()> {
        if self.store.group_hash(self.refsrc.ids()) != self.ref_hash {
            return Err(HyldaError::Other(
                "reference network parameters drifted during training".into(),
            ));
        }
        Ok(())
    }

    fn group_ids(&self) -> [Vec<ParamId>; 6] {
        [
            self.engine.generator_ids(),
            self.engine.discriminator_ids(),
            self.net.enc_ids().to_vec(),
            self.net.dec_ids().to_vec(),
            self.aux.ids().to_vec(),
            self.refsrc.ids().to_vec(),
        ]
    }

    fn hash_groups(&self) -> [String; 6] {
        let ids = self.group_ids();
        std::array::from_fn(|i| self.store.group_hash(&ids[i]))
    }

    /// Runs one sub-step, and in checking mode verifies that exactly the
    /// groups in `may_change` moved.
    fn guard<T>(
        &mut self,
        step: &'static str,
        may_change: &[usize],
        f: impl FnOnce(&mut Self) -> Result<T>,
    ) -> Result<T> {
        let before = if self.cfg.check_isolation { Some(self.hash_groups()) } else { None };
        let out = f(self)?;
        if let Some(before) = before {
            let ids = self.group_ids();
            for gi in 0..ids.len() {
                let after = self.store.group_hash(&ids[gi]);
                let expected = may_change.contains(&gi);
                if expected && after == before[gi] {
                    return Err(HyldaError::Other(format!(
                        "{step}: expected {} to update and they did not",
                        GROUP_NAMES[gi]
                    )));
                }
                if !expected && after != before[gi] {
                    return Err(HyldaError::Other(format!(
                        "{step}: {} changed",
                        GROUP_NAMES[gi]
                    )));
                }
            }
        }
        Ok(out)
    }

    /// Backward from `loss`, then rewrite the store's gradient slots so the
    /// following optimizer step sees exactly this sub-step's gradients.
    fn apply(&mut self, tape: &Tape<S>, loss: NodeId) {
        let grads = tape.backward(loss);
        let all = self.store.all_ids();
        self.store.zero_grads(&all);
        tape.apply_param_grads(&grads, &mut self.store);
    }

    fn step1_identity(&mut self, src: &Tensor<S>, trg: &Tensor<S>) -> Result<f64> {
        let mut tape = Tape::new();
        let s = tape.leaf(src.clone());
        let t = tape.leaf(trg.clone());
        let (out_s, out_t) =
            route_forward(&self.engine, &mut tape, &self.store, s, t, Route::Identity);
        let loss = reconstruction_loss(&mut tape, out_s, s, out_t, t);
        let v = check_finite("step 1 (identity reconstruction)", tape.scalar_value(loss))?;
        self.apply(&tape, loss);
        self.opt_engine.step(&mut self.store, &self.engine.generator_ids());
        Ok(v)
    }

    /// Adversarial + statistics objective, generator halves only. Returns the
    /// detached fakes for the discriminator step.
    #[allow(clippy::type_complexity)]
    fn step2_generators(
        &mut self,
        src: &Tensor<S>,
        trg: &Tensor<S>,
    ) -> Result<(f64, Option<f64>, f64, Tensor<S>, Tensor<S>)> {
        let mut tape = Tape::new();
        let s = tape.leaf(src.clone());
        let t = tape.leaf(trg.clone());
        let (fake_t, fake_s) =
            route_forward(&self.engine, &mut tape, &self.store, s, t, Route::Translation);
        let heads_t = self.engine.disc_trg.forward(&mut tape, &self.store, fake_t);
        let heads_s = self.engine.disc_src.forward(&mut tape, &self.store, fake_s);
        let gan_t = lsgan_generator_loss(&mut tape, &heads_t);
        let gan_s = lsgan_generator_loss(&mut tape, &heads_s);
        let gan = tape.add(gan_t, gan_s);
        let gan_v = check_finite("step 2 (translation, adversarial)", tape.scalar_value(gan))?;
        let mut total = gan;
        let mut stats_v = None;
        if let (Some(ss), Some(ts)) = (&self.src_stats, &self.trg_stats) {
            let st_t = tape.stats_loss(fake_t, CH_RANGE, &ts.mean_image, &ts.cov);
            let st_s = tape.stats_loss(fake_s, CH_RANGE, &ss.mean_image, &ss.cov);
            let st = tape.add(st_t, st_s);
            stats_v =
                Some(check_finite("step 2 (translation, statistics)", tape.scalar_value(st))?);
            let scaled = tape.scale(st, scalar::<S>(self.cfg.beta));
            total = tape.add(total, scaled);
        }
        let i2i_v = check_finite("step 2 (translation)", tape.scalar_value(total))?;
        let fake_t_val = tape.value(fake_t).clone();
        let fake_s_val = tape.value(fake_s).clone();
        self.apply(&tape, total);
        self.opt_engine.step(&mut self.store, &self.engine.generator_ids());
        Ok((gan_v, stats_v, i2i_v, fake_t_val, fake_s_val))
    }

    fn step3_discriminators(
        &mut self,
        src: &Tensor<S>,
        trg: &Tensor<S>,
        fake_t: &Tensor<S>,
        fake_s: &Tensor<S>,
    ) -> Result<f64> {
        let pooled_t = self.pool_trg.query(fake_t, &mut self.pool_stream);
        let pooled_s = self.pool_src.query(fake_s, &mut self.pool_stream);
        let mut tape = Tape::new();
        let real_t = tape.leaf(trg.clone());
        let real_s = tape.leaf(src.clone());
        let fk_t = tape.leaf(pooled_t);
        let fk_s = tape.leaf(pooled_s);
        let rt = self.engine.disc_trg.forward(&mut tape, &self.store, real_t);
        let ft = self.engine.disc_trg.forward(&mut tape, &self.store, fk_t);
        let rs = self.engine.disc_src.forward(&mut tape, &self.store, real_s);
        let fs = self.engine.disc_src.forward(&mut tape, &self.store, fk_s);
        let d_t = lsgan_discriminator_loss(&mut tape, &rt, &ft);
        let d_s = lsgan_discriminator_loss(&mut tape, &rs, &fs);
        let loss = tape.add(d_t, d_s);
        let v = check_finite("step 3 (discriminators)", tape.scalar_value(loss))?;
        self.apply(&tape, loss);
        self.opt_engine.step(&mut self.store, &self.engine.discriminator_ids());
        Ok(v)
    }

    fn step4_aux(&mut self, trg: &Tensor<S>) -> Result<f64> {
        let mut tape = Tape::new();
        let t = tape.leaf(trg.clone());
        let taps = self.net.enc.forward(&mut tape, &self.store, t);
        let recon = self.aux.forward(&mut tape, &self.store, &taps);
        let loss = aux_reconstruction_loss(&mut tape, recon, t);
        let v = check_finite("step 4 (auxiliary reconstruction)", tape.scalar_value(loss))?;
        self.apply(&tape, loss);
        let mut ids = self.net.enc_ids().to_vec();
        ids.extend_from_slice(self.aux.ids());
        self.opt_seg.step(&mut self.store, &ids);
        Ok(v)
    }

    fn step5_supervised(&mut self, labeled: &Batch<S>) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(labeled.images.clone());
        let scores = self.net.forward(&mut tape, &self.store, x);
        let loss = weighted_cross_entropy(&mut tape, scores, &labeled.labels, &self.alphas_subset);
        let v = check_finite("step 5 (weighted cross-entropy)", tape.scalar_value(loss))?;
        self.apply(&tape, loss);
        let ids = self.net.ids().to_vec();
        self.opt_seg.step(&mut self.store, &ids);
        Ok(v)
    }

    /// Eq-(9) pass through the engine: f_target and the reference only score
    /// the fakes here; their parameters are left alone.
    fn step6_engine(&mut self, src: &Batch<S>, trg: &Tensor<S>) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let y = tape.leaf(src.images.clone());
        let taps = self.engine.enc_src.forward(&mut tape, &self.store, y);
        let fake_t = self.engine.dec_trg.forward(&mut tape, &self.store, &taps);
        let tgt_scores = self.net.forward(&mut tape, &self.store, fake_t);
        let ref_scores = self.refsrc.forward(&mut tape, &self.store, y);
        let uwce = weighted_cross_entropy(&mut tape, tgt_scores, &src.labels, &self.alphas_source);
        let sem = semantic_consistency_loss(&mut tape, ref_scores, tgt_scores);
        let unsup = combined_unsupervised_loss(&mut tape, uwce, sem, self.cfg.gamma);
        let uwce_v = check_finite("step 6 (unsupervised cross-entropy)", tape.scalar_value(uwce))?;
        let sem_v = check_finite("step 6 (semantic consistency)", tape.scalar_value(sem))?;
        let unsup_v = check_finite("step 6 (unsupervised)", tape.scalar_value(unsup))?;
        let fake_t_val = tape.value(fake_t).clone();
        self.apply(&tape, unsup);
        self.opt_engine.step(&mut self.store, &self.engine.generator_ids());
        if self.cfg.update_disc_in_step6 {
            let mut dtape = Tape::new();
            let real = dtape.leaf(trg.clone());
            let fake = dtape.leaf(fake_t_val);
            let rt = self.engine.disc_trg.forward(&mut dtape, &self.store, real);
            let ft = self.engine.disc_trg.forward(&mut dtape, &self.store, fake);
            let d = lsgan_discriminator_loss(&mut dtape, &rt, &ft);
            check_finite("step 6 (discriminator)", dtape.scalar_value(d))?;
            self.apply(&dtape, d);
            self.opt_engine.step(&mut self.store, &self.engine.discriminator_ids());
        }
        Ok((uwce_v, sem_v, unsup_v))
    }

    /// Fresh fakes from the just-updated engine, detached, train f_target.
    fn step6_segmentation(&mut self, src: &Batch<S>) -> Result<f64> {
        let mut tape = Tape::new();
        let y = tape.leaf(src.images.clone());
        let taps = self.engine.enc_src.forward(&mut tape, &self.store, y);
        let fake_t = self.engine.dec_trg.forward(&mut tape, &self.store, &taps);
        let fake_t = tape.detach(fake_t);
        let tgt_scores = self.net.forward(&mut tape, &self.store, fake_t);
        let ref_scores = self.refsrc.forward(&mut tape, &self.store, y);
        let uwce = weighted_cross_entropy(&mut tape, tgt_scores, &src.labels, &self.alphas_source);
        let sem = semantic_consistency_loss(&mut tape, ref_scores, tgt_scores);
        let unsup = combined_unsupervised_loss(&mut tape, uwce, sem, self.cfg.gamma);
        let v = check_finite("step 6 (segmentation refresh)", tape.scalar_value(unsup))?;
        self.apply(&tape, unsup);
        let ids = self.net.ids().to_vec();
        self.opt_seg.step(&mut self.store, &ids);
        Ok(v)
    }

    /// One full pass of the per-batch procedure. The labeled batch arrives
    /// already augmented.
    pub fn step(&mut self, src: &Batch<S>, trg: &Batch<S>, labeled: &Batch<S>) -> Result<StepReport> {
        let mut r = StepReport::default();
        if self.cfg.use_hylda_i2i {
            r.l_xself = Some(self.guard("step 1 (identity reconstruction)", &[GEN], |s| {
                s.step1_identity(&src.images, &trg.images)
            })?);
            r.updated.push("engine_gen");
            let (gan, stats, i2i, fake_t, fake_s) = self
                .guard("step 2 (translation)", &[GEN], |s| {
                    s.step2_generators(&src.images, &trg.images)
                })?;
            r.l_gan = Some(gan);
            r.l_stats = stats;
            r.l_i2i = Some(i2i);
            r.updated.push("engine_gen");
            r.l_disc = Some(self.guard("step 3 (discriminators)", &[DISC], |s| {
                s.step3_discriminators(&src.images, &trg.images, &fake_t, &fake_s)
            })?);
            r.updated.push("engine_disc");
        }
        if self.cfg.use_aux_selfsup {
            r.l_aux = Some(self.guard("step 4 (auxiliary reconstruction)", &[FENC, DECAUX], |s| {
                s.step4_aux(&trg.images)
            })?);
            r.updated.push("f_enc");
            r.updated.push("dec_aux");
        }
        r.l_wce = Some(self.guard("step 5 (weighted cross-entropy)", &[FENC, FDEC], |s| {
            s.step5_supervised(labeled)
        })?);
        r.updated.push("f_enc");
        r.updated.push("f_dec");
        if self.cfg.use_unsup_step {
            let may: &[usize] =
                if self.cfg.update_disc_in_step6 { &[GEN, DISC] } else { &[GEN] };
            let (uwce, sem, unsup) =
                self.guard("step 6 (engine)", may, |s| s.step6_engine(src, &trg.images))?;
            r.l_uwce = Some(uwce);
            r.l_sem = Some(sem);
            r.l_unsup = Some(unsup);
            r.updated.push("engine_gen");
            if self.cfg.update_disc_in_step6 {
                r.updated.push("engine_disc");
            }
            self.guard("step 6 (segmentation)", &[FENC, FDEC], |s| s.step6_segmentation(src))?;
            r.updated.push("f_enc");
            r.updated.push("f_dec");
        }
        Ok(r)
    }
}

const LOSS_NAMES: [&str; 10] = [
    "loss_xself",
    "loss_gan",
    "loss_stats",
    "loss_i2i",
    "loss_disc",
    "loss_aux",
    "loss_wce",
    "loss_uwce",
    "loss_sem",
    "loss_unsup",
];

#[derive(Default)]
struct LossAcc {
    sums: [f64; 10],
    counts: [usize; 10],
}

impl LossAcc {
    fn add(&mut self, r: &StepReport) {
        let fields = [
            r.l_xself, r.l_gan, r.l_stats, r.l_i2i, r.l_disc, r.l_aux, r.l_wce, r.l_uwce,
            r.l_sem, r.l_unsup,
        ];
        for (i, v) in fields.iter().enumerate() {
            if let Some(v) = v {
                self.sums[i] += v;
                self.counts[i] += 1;
            }
        }
    }

    fn add_wce(&mut self, v: f64) {
        self.sums[6] += v;
        self.counts[6] += 1;
    }

    fn means(&self) -> [Option<f64>; 10] {
        std::array::from_fn(|i| {
            (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64)
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

struct MetricsLog {
    text: String,
}

impl MetricsLog {
    fn new(n_classes: usize) -> Self {
        let mut text = String::from("epoch,mode,subset,seed");
        for c in 1..=n_classes {
            text.push_str(&format!(",iou_{c}"));
        }
        text.push_str(",miou");
        for name in LOSS_NAMES {
            text.push_str(&format!(",{name}"));
        }
        text.push('\n');
        MetricsLog { text }
    }

    fn push(
        &mut self,
        epoch: usize,
        mode: &str,
        subset: usize,
        seed: u64,
        eval: &EvalResult,
        losses: &[Option<f64>; 10],
    ) {
        self.text.push_str(&format!("{epoch},{mode},{subset},{seed}"));
        for &iou in &eval.per_class {
            self.text.push(',');
            self.text.push_str(&fmt_opt(iou));
        }
        self.text.push_str(&format!(",{:.6}", eval.miou));
        for &l in losses {
            self.text.push(',');
            self.text.push_str(&fmt_opt(l));
        }
        self.text.push('\n');
    }
}

struct BestSnap<S: Scalar> {
    epoch: usize,
    eval: EvalResult,
    values: Vec<(ParamId, Tensor<S>)>,
}

fn update_best<S: Scalar>(
    best: &mut Option<BestSnap<S>>,
    epoch: usize,
    eval: EvalResult,
    net: &SegNet,
    store: &ParamStore<S>,
) {
    let better = best.as_ref().map_or(true, |b| eval.miou > b.eval.miou);
    if better {
        let values = net.ids().iter().map(|&id| (id, store.value(id).clone())).collect();
        *best = Some(BestSnap { epoch, eval, values });
    }
}

/// Outcome of one training run: the metrics log plus where the best-epoch
/// checkpoint landed.
#[derive(Debug)]
pub struct RunResult {
    pub mode: Mode,
    pub subset: usize,
    pub seed: u64,
    pub metrics_csv: String,
    pub best_epoch: usize,
    pub best_miou: f64,
    pub best_per_class: Vec<Option<f64>>,
    pub checkpoint: PathBuf,
    pub engine_checkpoint: Option<PathBuf>,
}

fn finish_run<S: Scalar>(
    cfg: &TrainConfig,
    subset: usize,
    out_dir: &Path,
    log: MetricsLog,
    best: Option<BestSnap<S>>,
    net: &SegNet,
    store: &mut ParamStore<S>,
    engine_checkpoint: Option<PathBuf>,
) -> Result<RunResult> {
    let best = best.expect("validate() guarantees at least one epoch");
    for (id, t) in &best.values {
        *store.value_mut(*id) = t.clone();
    }
    let checkpoint = out_dir.join("best.hylc");
    save_segnet(&checkpoint, net, store)?;
    let csv_path = out_dir.join("metrics.csv");
    std::fs::write(&csv_path, &log.text).map_err(|e| HyldaError::io(&csv_path, e))?;
    Ok(RunResult {
        mode: cfg.mode,
        subset,
        seed: cfg.seed,
        metrics_csv: log.text,
        best_epoch: best.epoch,
        best_miou: best.eval.miou,
        best_per_class: best.eval.per_class,
        checkpoint,
        engine_checkpoint,
    })
}

/// One supervised epoch over `indices` of `set`; returns the mean loss.
fn supervised_epoch<S: Scalar>(
    net: &SegNet,
    store: &mut ParamStore<S>,
    opt: &mut Adam,
    set: &LoadedSet<S>,
    indices: &[usize],
    alphas: &[S],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let plan = plan_supervised_epoch(indices.len(), cfg.batch_size, cfg.seed, epoch)?;
    let mut aug = Stream::new(cfg.seed, &format!("augment-{epoch}"));
    let mut sum = 0.0;
    let mut n = 0usize;
    for step in plan {
        let picked: Vec<usize> = step.iter().map(|&i| indices[i]).collect();
        let mut batch = make_batch(set, &picked)?;
        if cfg.augment {
            batch = augment_batch(&batch, &mut aug);
        }
        let mut tape = Tape::new();
        let x = tape.leaf(batch.images.clone());
        let scores = net.forward(&mut tape, store, x);
        let loss = weighted_cross_entropy(&mut tape, scores, &batch.labels, alphas);
        let v = check_finite("supervised step (weighted cross-entropy)", tape.scalar_value(loss))?;
        let grads = tape.backward(loss);
        let all = store.all_ids();
        store.zero_grads(&all);
        tape.apply_param_grads(&grads, store);
        opt.step(store, net.ids());
        sum += v;
        n += 1;
    }
    Ok(sum / n as f64)
}

/// Supervised pretraining of the reference network on the fully-labeled
/// source train split; the final-epoch parameters are saved as the frozen
/// reference checkpoint.
pub struct PretrainResult {
    pub metrics_csv: String,
    pub final_miou: f64,
    pub checkpoint: PathBuf,
}

pub fn pretrain_ref_source<S: Scalar>(
    cfg: &TrainConfig,
    source_train: &LoadedSet<S>,
    source_val: &LoadedSet<S>,
    out_path: &Path,
) -> Result<PretrainResult> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = Stream::new(cfg.seed, "refsrc-init");
    let net =
        SegNet::new(&mut store, &mut rng, "fenc", "fdec", CHANNELS, cfg.n_classes, cfg.widths);
    let alphas: Vec<S> =
        alphas_of(source_train.frames.iter().map(|f| &f.labels), cfg.n_classes + 1)?;
    let indices: Vec<usize> = (0..source_train.frames.len()).collect();
    let mut opt = Adam::new(cfg.lr_seg);
    let mut log = MetricsLog::new(cfg.n_classes);
    let mut final_miou = 0.0;
    for epoch in 0..cfg.epochs {
        let mut acc = LossAcc::default();
        let mean =
            supervised_epoch(&net, &mut store, &mut opt, source_train, &indices, &alphas, cfg, epoch)?;
        acc.add_wce(mean);
        let eval = evaluate_set(&store, &net, source_val)?;
        final_miou = eval.miou;
        log.push(epoch, "pretrain", 0, cfg.seed, &eval, &acc.means());
    }
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HyldaError::io(parent, e))?;
    }
    save_segnet(out_path, &net, &store)?;
    Ok(PretrainResult { metrics_csv: log.text, final_miou, checkpoint: out_path.to_path_buf() })
}

fn run_supervised<S: Scalar>(
    cfg: &TrainConfig,
    data: &RunData<S>,
    ref_checkpoint: Option<&Path>,
    out_dir: &Path,
) -> Result<RunResult> {
    std::fs::create_dir_all(out_dir).map_err(|e| HyldaError::io(out_dir, e))?;
    let mut store = ParamStore::new();
    let net = match cfg.mode {
        Mode::Finetune => {
            let p = ref_checkpoint.ok_or_else(|| {
                HyldaError::Config("finetune mode requires the pretrained reference checkpoint".into())
            })?;
            load_segnet(p, &mut store, "fenc", "fdec")?
        }
        _ => SegNet::new(
            &mut store,
            &mut Stream::new(cfg.seed, "seg-init"),
            "fenc",
            "fdec",
            CHANNELS,
            cfg.n_classes,
            cfg.widths,
        ),
    };
    if net.n_classes() != cfg.n_classes {
        return Err(HyldaError::Config(format!(
            "reference checkpoint has {} classes, run wants {}",
            net.n_classes(),
            cfg.n_classes
        )));
    }
    let (set, indices, subset) = match cfg.mode {
        Mode::Naive => {
            let all: Vec<usize> = (0..data.source_train.frames.len()).collect();
            (&data.source_train, all, 0)
        }
        Mode::Oracle => {
            let all: Vec<usize> = (0..data.target_train.frames.len()).collect();
            (&data.target_train, all, 0)
        }
        Mode::Finetune => {
            if data.labeled.is_empty() {
                return Err(HyldaError::Config("finetune mode needs a labeled target subset".into()));
            }
            (&data.target_train, data.labeled.clone(), data.labeled.len())
        }
        Mode::Hylda => unreachable!("hylda runs dispatch elsewhere"),
    };
    let alphas: Vec<S> =
        alphas_of(indices.iter().map(|&i| &set.frames[i].labels), cfg.n_classes + 1)?;
    let mut opt = Adam::new(cfg.lr_seg);
    let mut log = MetricsLog::new(cfg.n_classes);
    let mut best: Option<BestSnap<S>> = None;
    for epoch in 0..cfg.epochs {
        let mut acc = LossAcc::default();
        let mean = supervised_epoch(&net, &mut store, &mut opt, set, &indices, &alphas, cfg, epoch)?;
        acc.add_wce(mean);
        let eval = evaluate_set(&store, &net, &data.target_val)?;
        log.push(epoch, cfg.mode.as_str(), subset, cfg.seed, &eval, &acc.means());
        update_best(&mut best, epoch, eval, &net, &store);
    }
    finish_run(cfg, subset, out_dir, log, best, &net, &mut store, None)
}

fn run_hylda<S: Scalar>(
    cfg: &TrainConfig,
    data: &RunData<S>,
    ref_checkpoint: &Path,
    out_dir: &Path,
) -> Result<RunResult> {
    std::fs::create_dir_all(out_dir).map_err(|e| HyldaError::io(out_dir, e))?;
    if data.labeled.is_empty() {
        return Err(HyldaError::Config("hylda mode needs a labeled target subset".into()));
    }
    let mut state = HyldaState::new(cfg, data, ref_checkpoint)?;
    let mut log = MetricsLog::new(cfg.n_classes);
    let mut best: Option<BestSnap<S>> = None;
    for epoch in 0..cfg.epochs {
        let plans = plan_epoch(
            data.source_train.frames.len(),
            data.target_train.frames.len(),
            &data.labeled,
            cfg.batch_size,
            cfg.seed,
            epoch,
        )?;
        let mut aug = Stream::new(cfg.seed, &format!("augment-{epoch}"));
        let mut acc = LossAcc::default();
        for plan in &plans {
            let src = make_batch(&data.source_train, &plan.source)?;
            let trg = make_batch(&data.target_train, &plan.target)?;
            let mut lab = make_batch(&data.target_train, &plan.labeled)?;
            if cfg.augment {
                lab = augment_batch(&lab, &mut aug);
            }
            let report = state.step(&src, &trg, &lab)?;
            acc.add(&report);
        }
        let eval = evaluate_set(&state.store, &state.net, &data.target_val)?;
        log.push(epoch, cfg.mode.as_str(), data.labeled.len(), cfg.seed, &eval, &acc.means());
        update_best(&mut best, epoch, eval, &state.net, &state.store);
    }
    state.verify_reference_frozen()?;
    let engine_path = out_dir.join("engine.hylc");
    save_engine(&engine_path, &state.engine, &state.store)?;
    let HyldaState { mut store, net, .. } = state;
    finish_run(cfg, data.labeled.len(), out_dir, log, best, &net, &mut store, Some(engine_path))
}

/// Trains in the configured mode and returns the run artifacts. Naive and
/// oracle train from scratch; finetune and hylda start from the reference
/// checkpoint.
pub fn run<S: Scalar>(
    cfg: &TrainConfig,
    data: &RunData<S>,
    ref_checkpoint: Option<&Path>,
    out_dir: &Path,
) -> Result<RunResult> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Hylda => {
            let p = ref_checkpoint.ok_or_else(|| {
                HyldaError::Config("hylda mode requires the pretrained reference checkpoint".into())
            })?;
            run_hylda(cfg, data, p, out_dir)
        }
        _ => run_supervised(cfg, data, ref_checkpoint, out_dir),
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub miou: f64,
}

/// Leave-one-out ablations over a fixed seed set: the translation engine
/// (with its statistics loss), the auxiliary decoder, the unsupervised step,
/// and the full system. Writes `ablation.csv` (seed-averaged, bar-chart
/// ready) and `ablation_runs.csv` (one row per run).
pub fn run_ablation_suite<S: Scalar>(
    cfg: &TrainConfig,
    data: &RunData<S>,
    ref_checkpoint: &Path,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(HyldaError::Config("ablation suite needs at least one seed".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| HyldaError::io(out_dir, e))?;
    let variants: [(&str, fn(&mut TrainConfig)); 4] = [
        ("no_i2i", |c| {
            c.use_hylda_i2i = false;
            c.use_stats_loss = false;
        }),
        ("no_aux", |c| c.use_aux_selfsup = false),
        ("no_unsup", |c| c.use_unsup_step = false),
        ("full", |_| {}),
    ];
    let mut rows = Vec::new();
    let mut summary = String::from("variant,mean_miou\n");
    let mut raw = String::from("variant,seed,miou\n");
    for (name, tweak) in variants {
        let mut sum = 0.0;
        for &seed in seeds {
            let mut c = cfg.clone();
            c.mode = Mode::Hylda;
            c.seed = seed;
            tweak(&mut c);
            let run_dir = out_dir.join(format!("{name}_seed{seed}"));
            let res = run(&c, data, Some(ref_checkpoint), &run_dir)?;
            raw.push_str(&format!("{name},{seed},{:.6}\n", res.best_miou));
            sum += res.best_miou;
            rows.push(AblationRow { variant: name.to_string(), seed, miou: res.best_miou });
        }
        summary.push_str(&format!("{name},{:.6}\n", sum / seeds.len() as f64));
    }
    let summary_path = out_dir.join("ablation.csv");
    std::fs::write(&summary_path, summary).map_err(|e| HyldaError::io(&summary_path, e))?;
    let raw_path = out_dir.join("ablation_runs.csv");
    std::fs::write(&raw_path, raw).map_err(|e| HyldaError::io(&raw_path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::sha256_file;
    use crate::synthlidar::{build_domain_pair, default_source_spec, default_target_spec, GenConfig};
    use tempfile::tempdir;

    fn tiny_cfg(mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            beta: 0.1,
            gamma: 1.0,
            lr_seg: 0.01,
            lr_i2i: 0.002,
            epochs: 2,
            batch_size: 2,
            seed: 11,
            labeled_subset_size: 2,
            widths: [2, 3, 4],
            n_classes: 6,
            use_hylda_i2i: true,
            use_aux_selfsup: true,
            use_unsup_step: true,
            use_stats_loss: true,
            dual_head_disc: true,
            update_disc_in_step6: false,
            augment: true,
            check_isolation: false,
        }
    }

    fn tiny_data(dir: &Path) -> RunData<f32> {
        let mut src = default_source_spec();
        src.n_train = 4;
        src.n_val = 2;
        src.sensor.beams = 6;
        src.sensor.width = 64;
        let mut trg = default_target_spec();
        trg.n_train = 4;
        trg.n_val = 2;
        trg.sensor.beams = 4;
        trg.sensor.width = 64;
        let gen = GenConfig { grid_h: 8, grid_w: 32, seed: 5, subset_sizes: vec![2] };
        build_domain_pair(&src, &trg, &gen, dir).unwrap();
        load_run_data(dir, Some(2)).unwrap()
    }

    fn pretrain_tiny(data: &RunData<f32>, dir: &Path) -> PathBuf {
        let cfg = tiny_cfg(Mode::Naive);
        let out = dir.join("ref.hylc");
        pretrain_ref_source(&cfg, &data.source_train, &data.source_val, &out).unwrap();
        out
    }

    #[test]
    fn pretraining_is_deterministic_and_beats_chance() {
        let tmp = tempdir().unwrap();
        let mut src = default_source_spec();
        src.n_train = 8;
        src.n_val = 2;
        src.sensor.beams = 12;
        let mut trg = default_target_spec();
        trg.n_train = 2;
        trg.n_val = 2;
        let gen = GenConfig { grid_h: 16, grid_w: 64, seed: 5, subset_sizes: vec![2] };
        build_domain_pair(&src, &trg, &gen, tmp.path()).unwrap();
        let data: RunData<f32> = load_run_data(tmp.path(), Some(2)).unwrap();
        let mut cfg = tiny_cfg(Mode::Naive);
        cfg.epochs = 20;
        cfg.widths = [6, 12, 24];
        let out_a = tmp.path().join("ref_a.hylc");
        let out_b = tmp.path().join("ref_b.hylc");
        let res_a =
            pretrain_ref_source(&cfg, &data.source_train, &data.source_val, &out_a).unwrap();
        let res_b =
            pretrain_ref_source(&cfg, &data.source_train, &data.source_val, &out_b).unwrap();
        assert_eq!(sha256_file(&out_a).unwrap(), sha256_file(&out_b).unwrap());
        assert_eq!(res_a.metrics_csv, res_b.metrics_csv);

        // Chance level: mean prevalence of the object classes present in the
        // source val labels, over valid pixels.
        let mut counts = vec![0u64; 7];
        let mut total = 0u64;
        for f in &data.source_val.frames {
            for (i, &id) in f.labels.ids.iter().enumerate() {
                if f.image.valid[i] {
                    counts[id as usize] += 1;
                    total += 1;
                }
            }
        }
        let present: Vec<f64> = (1..=6)
            .filter(|&c| counts[c] > 0)
            .map(|c| counts[c] as f64 / total as f64)
            .collect();
        let chance = present.iter().sum::<f64>() / present.len() as f64;
        assert!(
            res_a.final_miou > chance,
            "pretrained miou {} not above chance {}",
            res_a.final_miou,
            chance
        );
    }

    #[test]
    fn target_net_initializes_bit_equal_to_the_reference() {
        let tmp = tempdir().unwrap();
        let data = tiny_data(tmp.path());
        let ref_path = pretrain_tiny(&data, tmp.path());
        let cfg = tiny_cfg(Mode::Hylda);
        let state = HyldaState::new(&cfg, &data, &ref_path).unwrap();
        for (&a, &b) in state.net.ids().iter().zip(state.refsrc.ids()) {
            assert_eq!(state.store.value(a).data(), state.store.value(b).data());
        }
    }

    #[test]
    fn step1_reconstruction_strictly_decreases_on_a_frozen_batch() {
        let tmp = tempdir().unwrap();
        let data = tiny_data(tmp.path());
        let ref_path = pretrain_tiny(&data, tmp.path());
        let cfg = tiny_cfg(Mode::Hylda);
        let mut state = HyldaState::new(&cfg, &data, &ref_path).unwrap();
        let src = make_batch(&data.source_train, &[0, 1, 2, 3]).unwrap();
        let trg = make_batch(&data.target_train, &[0, 1, 2, 3]).unwrap();
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let v = state.step1_identity(&src.images, &trg.images).unwrap();
            assert!(v < last, "step {i}: reconstruction loss {v} did not drop below {last}");
            last = v;
        }
    }

    #[test]
    fn six_step_report_matches_the_switches() {
        let tmp = tempdir().unwrap();
        let data = tiny_data(tmp.path());
        let ref_path = pretrain_tiny(&data, tmp.path());
        let src = make_batch(&data.source_train, &[0, 1]).unwrap();
        let trg = make_batch(&data.target_train, &[0, 1]).unwrap();
        let lab = make_batch(&data.target_train, &data.labeled).unwrap();

        let mut cfg = tiny_cfg(Mode::Hylda);
        cfg.check_isolation = true;
        let mut state = HyldaState::new(&cfg, &data, &ref_path).unwrap();
        let r = state.step(&src, &trg, &lab).unwrap();
        for v in [r.l_xself, r.l_gan, r.l_stats, r.l_i2i, r.l_disc, r.l_aux, r.l_wce, r.l_uwce, r.l_sem, r.l_unsup]
        {
            assert!(v.unwrap().is_finite());
        }
        assert_eq!(
            r.updated,
            vec![
                "engine_gen",
                "engine_gen",
                "engine_disc",
                "f_enc",
                "dec_aux",
                "f_enc",
                "f_dec",
                "engine_gen",
                "f_enc",
                "f_dec"
            ]
        );
        state.verify_reference_frozen().unwrap();

        let mut off = tiny_cfg(Mode::Hylda);
        off.use_hylda_i2i = false;
        off.use_aux_selfsup = false;
        off.use_unsup_step = false;
        off.check_isolation = true;
        let mut state = HyldaState::new(&off, &data, &ref_path).unwrap();
        let r = state.step(&src, &trg, &lab).unwrap();
        assert!(r.l_xself.is_none() && r.l_gan.is_none() && r.l_disc.is_none());
        assert!(r.l_aux.is_none() && r.l_uwce.is_none() && r.l_unsup.is_none());
        assert!(r.l_wce.unwrap().is_finite());
        assert_eq!(r.updated, vec!["f_enc", "f_dec"]);
    }

    #[test]
    fn step6_discriminator_switch_controls_their_update() {
        let tmp = tempdir().unwrap();
        let data = tiny_data(tmp.path());
        let ref_path = pretrain_tiny(&data, tmp.path());
        let src = make_batch(&data.source_train, &[0, 1]).unwrap();
        let trg = make_batch(&data.target_train, &[0, 1]).unwrap();
        let lab = make_batch(&data.target_train, &data.labeled).unwrap();
        for on in [false, true] {
            let mut cfg = tiny_cfg(Mode::Hylda);
            cfg.use_hylda_i2i = false;
            cfg.use_aux_selfsup = false;
            cfg.update_disc_in_step6 = on;
            cfg.check_isolation = true;
            let mut state = HyldaState::new(&cfg, &data, &ref_path).unwrap();
            let before = state.store.group_hash(&state.engine.discriminator_ids());
            state.step(&src, &trg, &lab).unwrap();
            let after = state.store.group_hash(&state.engine.discriminator_ids());
            assert_eq!(after != before, on, "discriminator update should track the switch");
        }
    }

    #[test]
    fn hylda_run_is_deterministic_and_writes_artifacts() {
        let tmp = tempdir().unwrap();
        let data = tiny_data(tmp.path());
        let ref_path = pretrain_tiny(&data, tmp.path());
        let cfg = tiny_cfg(Mode::Hylda);
        let a = run(&cfg, &data, Some(&ref_path), &tmp.path().join("run_a")).unwrap();
        let b = run(&cfg, &data, Some(&ref_path), &tmp.path().join("run_b")).unwrap();
        assert_eq!(a.metrics_csv, b.metrics_csv);
        assert_eq!(
            sha256_file(&a.checkpoint).unwrap(),
            sha256_file(&b.checkpoint).unwrap()
        );
        assert_eq!(
            sha256_file(a.engine_checkpoint.as_ref().unwrap()).unwrap(),
            sha256_file(b.engine_checkpoint.as_ref().unwrap()).unwrap()
        );
        assert_eq!(a.metrics_csv.lines().count(), cfg.epochs + 1);
        assert!(a.metrics_csv.starts_with("epoch,mode,subset,seed,iou_1"));
        assert!(a.best_miou >= 0.0 && a.best_miou <= 1.0);
        assert!(a.best_epoch < cfg.epochs);
        assert_eq!(
            std::fs::read_to_string(tmp.path().join("run_a/metrics.csv")).unwrap(),
            a.metrics_csv
        );
    }

    #[test]
    fn supervised_modes_train_and_gate_their_inputs() {
        let tmp = tempdir().unwrap();
        let data = tiny_data(tmp.path());
        let ref_path = pretrain_tiny(&data, tmp.path());
        for mode in [Mode::Naive, Mode::Oracle, Mode::Finetune] {
            let cfg = tiny_cfg(mode);
            let dir = tmp.path().join(format!("run_{}", mode.as_str()));
            let ref_arg = (mode == Mode::Finetune).then_some(ref_path.as_path());
            let res = run(&cfg, &data, ref_arg, &dir).unwrap();
            assert_eq!(res.mode, mode);
            assert!(res.checkpoint.is_file());
            assert!(res.engine_checkpoint.is_none());
            assert!(res.best_miou >= 0.0 && res.best_miou <= 1.0);
            let wce_col = res.metrics_csv.lines().nth(1).unwrap().split(',').count();
            assert_eq!(wce_col, 4 + 6 + 1 + 10);
        }
        let err = run(&tiny_cfg(Mode::Finetune), &data, None, &tmp.path().join("x")).unwrap_err();
        assert!(err.is_config(), "{err}");
        let err = run(&tiny_cfg(Mode::Hylda), &data, None, &tmp.path().join("y")).unwrap_err();
        assert!(err.is_config(), "{err}");
    }

    #[test]
    fn ablation_suite_emits_one_row_per_variant_deterministically() {
        let tmp = tempdir().unwrap();
        let data = tiny_data(tmp.path());
        let ref_path = pretrain_tiny(&data, tmp.path());
        let mut cfg = tiny_cfg(Mode::Hylda);
        cfg.epochs = 1;
        let rows =
            run_ablation_suite(&cfg, &data, &ref_path, &[3], &tmp.path().join("abl_a")).unwrap();
        assert_eq!(rows.len(), 4);
        let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, vec!["no_i2i", "no_aux", "no_unsup", "full"]);
        let csv_a = std::fs::read_to_string(tmp.path().join("abl_a/ablation.csv")).unwrap();
        assert_eq!(csv_a.lines().count(), 5);
        run_ablation_suite(&cfg, &data, &ref_path, &[3], &tmp.path().join("abl_b")).unwrap();
        let csv_b = std::fs::read_to_string(tmp.path().join("abl_b/ablation.csv")).unwrap();
        assert_eq!(csv_a, csv_b);
    }
}
