//! Dataset indexing, nested labeled subsets, epoch batch plans, and the
//! azimuth augmentations used by supervised steps.

use std::path::{Path, PathBuf};

use crate::formats::{read_hyl1, read_hyll, read_manifest};
use crate::rangeview::{normalize, LabelMap, NormStats, RangeImage};
use crate::rng::Stream;
use crate::tensor::Tensor;
use crate::{HyldaError, Result, Scalar};

#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_id: String,
    pub frame_path: PathBuf,
    pub label_path: PathBuf,
    pub seed: u64,
    pub labeled: bool,
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub split: String,
    pub records: Vec<FrameRecord>,
}

/// Reads `manifest.tsv` under a domain directory and keeps one split.
pub fn load_index(domain_dir: &Path, split: &str) -> Result<DatasetIndex> {
    let entries = read_manifest(&domain_dir.join("manifest.tsv"))?;
    let records: Vec<FrameRecord> = entries
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| FrameRecord {
            frame_id: e.frame_id,
            frame_path: domain_dir.join(&e.frame_path),
            label_path: domain_dir.join(&e.label_path),
            seed: e.seed,
            labeled: e.labeled,
        })
        .collect();
    if records.is_empty() {
        return Err(HyldaError::Config(format!(
            "no '{split}' frames in {}",
            domain_dir.display()
        )));
    }
    Ok(DatasetIndex { root: domain_dir.to_path_buf(), split: split.to_string(), records })
}

#[derive(Debug, Clone)]
pub struct LoadedFrame<S: Scalar> {
    pub frame_id: String,
    pub image: RangeImage<S>,
    pub labels: LabelMap,
    pub labeled: bool,
}

#[derive(Debug, Clone)]
pub struct LoadedSet<S: Scalar> {
    pub frames: Vec<LoadedFrame<S>>,
    pub h: usize,
    pub w: usize,
}

/// Loads every frame of an index into memory, normalizing if stats are given.
pub fn load_set<S: Scalar>(
    index: &DatasetIndex,
    norm: Option<&NormStats<S>>,
) -> Result<LoadedSet<S>> {
    let mut frames = Vec::with_capacity(index.records.len());
    let mut hw = None;
    for rec in &index.records {
        let mut image = read_hyl1::<S>(&rec.frame_path)?;
        if let Some(stats) = norm {
            image = normalize(&image, stats)?;
        }
        let labels = read_hyll(&rec.label_path)?;
        if labels.h != image.h() || labels.w != image.w() {
            return Err(HyldaError::Shape(format!(
                "frame {} labels {}x{} vs image {}x{}",
                rec.frame_id,
                labels.h,
                labels.w,
                image.h(),
                image.w()
            )));
        }
        match hw {
            None => hw = Some((image.h(), image.w())),
            Some(d) if d != (image.h(), image.w()) => {
                return Err(HyldaError::Shape("mixed frame shapes in one set".into()))
            }
            _ => {}
        }
        frames.push(LoadedFrame { frame_id: rec.frame_id.clone(), image, labels, labeled: rec.labeled });
    }
    let (h, w) = hw.unwrap();
    Ok(LoadedSet { frames, h, w })
}

impl<S: Scalar> LoadedSet<S> {
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].labeled).collect()
    }

    pub fn index_of(&self, frame_id: &str) -> Option<usize> {
        self.frames.iter().position(|f| f.frame_id == frame_id)
    }
}

/// Resolves a subset file's frame ids against a loaded set.
pub fn subset_indices<S: Scalar>(set: &LoadedSet<S>, path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| HyldaError::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        let idx = set
            .index_of(id)
            .ok_or_else(|| HyldaError::Config(format!("subset frame {id} not in set")))?;
        out.push(idx);
    }
    Ok(out)
}

/// Draws nested subsets: one shuffled permutation, each size a prefix of it,
/// so smaller subsets are contained in larger ones. Indices come back sorted.
pub fn nested_subset_ids(m: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    for w in sizes.windows(2) {
        if w[0] >= w[1] {
            return Err(HyldaError::Config(format!(
                "subset sizes must be strictly ascending, got {sizes:?}"
            )));
        }
    }
    if let Some(&max) = sizes.last() {
        if max > m {
            return Err(HyldaError::Config(format!("subset size {max} exceeds {m} frames")));
        }
        if sizes[0] == 0 {
            return Err(HyldaError::Config("subset size 0 is not usable".into()));
        }
    }
    let mut perm: Vec<usize> = (0..m).collect();
    let mut s = Stream::new(seed, "subset");
    s.shuffle(&mut perm);
    Ok(sizes
        .iter()
        .map(|&k| {
            let mut ids = perm[..k].to_vec();
            ids.sort_unstable();
            ids
        })
        .collect())
}

/// Maps raw label ids through a 256-entry table; unmapped ids become 0.
pub fn build_remap_table(pairs: &[(u8, u8)]) -> [u8; 256] {
    let mut table = [0u8; 256];
    for &(raw, class) in pairs {
        table[raw as usize] = class;
    }
    table
}

pub fn remap_labels(map: &LabelMap, table: &[u8; 256]) -> LabelMap {
    LabelMap {
        h: map.h,
        w: map.w,
        ids: map.ids.iter().map(|&id| table[id as usize]).collect(),
    }
}

/// One training step's frame indices for each stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub labeled: Vec<usize>,
}

/// Plans one epoch. The epoch ends when the source split is exhausted
/// (floor division; a trailing partial batch is dropped). The target pool is
/// shuffled and cycled to match, and the labeled subset is shuffled then
/// cycled with a per-epoch cursor.
pub fn plan_epoch(
    n_source: usize,
    n_target: usize,
    labeled: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<StepPlan>> {
    if batch_size == 0 {
        return Err(HyldaError::Config("batch size must be positive".into()));
    }
    let steps = n_source / batch_size;
    if steps == 0 {
        return Err(HyldaError::Config(format!(
            "source split of {n_source} frames smaller than batch size {batch_size}"
        )));
    }
    if n_target == 0 {
        return Err(HyldaError::Config("target pool is empty".into()));
    }
    let mut s = Stream::new(seed, &format!("batches/{epoch}"));
    let mut src: Vec<usize> = (0..n_source).collect();
    s.shuffle(&mut src);
    let mut trg: Vec<usize> = (0..n_target).collect();
    s.shuffle(&mut trg);
    let mut lab = labeled.to_vec();
    s.shuffle(&mut lab);

    let mut plans = Vec::with_capacity(steps);
    for step in 0..steps {
        let base = step * batch_size;
        let source = src[base..base + batch_size].to_vec();
        let target = (0..batch_size).map(|i| trg[(base + i) % n_target]).collect();
        let labeled_step = if lab.is_empty() {
            Vec::new()
        } else {
            (0..batch_size).map(|i| lab[(base + i) % lab.len()]).collect()
        };
        plans.push(StepPlan { source, target, labeled: labeled_step });
    }
    Ok(plans)
}

/// Shuffled single-set epoch plan for plain supervised training.
pub fn plan_supervised_epoch(
    n_frames: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(HyldaError::Config("batch size must be positive".into()));
    }
    let steps = n_frames / batch_size;
    if steps == 0 {
        return Err(HyldaError::Config(format!(
            "{n_frames} frames smaller than batch size {batch_size}"
        )));
    }
    let mut s = Stream::new(seed, &format!("batches/{epoch}"));
    let mut idx: Vec<usize> = (0..n_frames).collect();
    s.shuffle(&mut idx);
    Ok((0..steps).map(|k| idx[k * batch_size..(k + 1) * batch_size].to_vec()).collect())
}

/// A stacked minibatch: images [B,C,H,W], labels and validity flattened
/// per element in row-major (b,y,x) order.
#[derive(Debug, Clone)]
pub struct Batch<S: Scalar> {
    pub images: Tensor<S>,
    pub labels: Vec<u8>,
    pub valid: Vec<bool>,
    pub frame_ids: Vec<String>,
}

pub fn make_batch<S: Scalar>(set: &LoadedSet<S>, indices: &[usize]) -> Result<Batch<S>> {
    if indices.is_empty() {
        return Err(HyldaError::Config("empty batch".into()));
    }
    let channels: Vec<&Tensor<S>> = indices.iter().map(|&i| &set.frames[i].image.channels).collect();
    let images = Tensor::stack(&channels)?;
    let mut labels = Vec::with_capacity(indices.len() * set.h * set.w);
    let mut valid = Vec::with_capacity(indices.len() * set.h * set.w);
    let mut frame_ids = Vec::with_capacity(indices.len());
    for &i in indices {
        labels.extend_from_slice(&set.frames[i].labels.ids);
        valid.extend_from_slice(&set.frames[i].image.valid);
        frame_ids.push(set.frames[i].frame_id.clone());
    }
    Ok(Batch { images, labels, valid, frame_ids })
}

/// Random horizontal flip plus column roll, applied jointly to image
/// channels, labels, and validity so pixels stay aligned. Independent draws
/// per batch element.
pub fn augment_batch<S: Scalar>(batch: &Batch<S>, s: &mut Stream) -> Batch<S> {
    let shape = batch.images.shape().to_vec();
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut images = Tensor::zeros(&shape);
    let mut labels = vec![0u8; batch.labels.len()];
    let mut valid = vec![false; batch.valid.len()];
    for bi in 0..b {
        let flip = s.bool(0.5);
        let roll = (s.uniform() * w as f64) as usize % w;
        for u in 0..w {
            let flipped = if flip { w - 1 - u } else { u };
            let dest = (flipped + roll) % w;
            for ci in 0..c {
                for v in 0..h {
                    images.set4(bi, ci, v, dest, batch.images.at4(bi, ci, v, u));
                }
            }
            for v in 0..h {
                let src_i = (bi * h + v) * w + u;
                let dst_i = (bi * h + v) * w + dest;
                labels[dst_i] = batch.labels[src_i];
                valid[dst_i] = batch.valid[src_i];
            }
        }
    }
    Batch { images, labels, valid, frame_ids: batch.frame_ids.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{write_manifest, ManifestEntry};
    use crate::rangeview::CHANNELS;

    #[test]
    fn subsets_are_nested_sorted_and_bounded() {
        let subs = nested_subset_ids(20, &[2, 5, 9], 42).unwrap();
        assert_eq!(subs.len(), 3);
        for (k, expect) in subs.iter().zip([2usize, 5, 9]) {
            assert_eq!(k.len(), expect);
            assert!(k.windows(2).all(|w| w[0] < w[1]));
        }
        for i in 0..2 {
            for id in &subs[i] {
                assert!(subs[i + 1].contains(id), "subset {i} not nested");
            }
        }
        assert!(nested_subset_ids(20, &[5, 5], 1).is_err());
        assert!(nested_subset_ids(4, &[5], 1).is_err());
        assert!(nested_subset_ids(4, &[0, 2], 1).is_err());
    }

    #[test]
    fn subset_sampling_is_roughly_uniform() {
        let mut counts = [0usize; 5];
        for seed in 0..2000u64 {
            let sel = nested_subset_ids(5, &[1], seed).unwrap();
            counts[sel[0][0]] += 1;
        }
        for &c in &counts {
            assert!((300..=500).contains(&c), "counts skewed: {counts:?}");
        }
    }

    #[test]
    fn epoch_plan_has_floor_steps_and_covers_source_once() {
        let plans = plan_epoch(8, 3, &[0, 1], 2, 9, 0).unwrap();
        assert_eq!(plans.len(), 4);
        let mut seen: Vec<usize> = plans.iter().flat_map(|p| p.source.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());

        let plans9 = plan_epoch(9, 3, &[], 2, 9, 0).unwrap();
        assert_eq!(plans9.len(), 4);
    }

    #[test]
    fn target_pool_cycles_evenly() {
        let plans = plan_epoch(8, 3, &[], 2, 1, 0).unwrap();
        let mut counts = [0usize; 3];
        for p in &plans {
            for &t in &p.target {
                counts[t] += 1;
            }
        }
        assert_eq!(counts.iter().sum::<usize>(), 8);
        assert!(counts.iter().all(|&c| (2..=3).contains(&c)), "{counts:?}");
    }

    #[test]
    fn labeled_subset_cycles_through_all_members() {
        let plans = plan_epoch(4, 4, &[7, 9], 1, 3, 0).unwrap();
        assert_eq!(plans.len(), 4);
        let labs: Vec<usize> = plans.iter().flat_map(|p| p.labeled.clone()).collect();
        assert_eq!(labs.iter().filter(|&&x| x == 7).count(), 2);
        assert_eq!(labs.iter().filter(|&&x| x == 9).count(), 2);
    }

    #[test]
    fn plans_are_deterministic_per_seed_and_epoch() {
        let a = plan_epoch(8, 5, &[0, 2, 4], 2, 11, 3).unwrap();
        let b = plan_epoch(8, 5, &[0, 2, 4], 2, 11, 3).unwrap();
        assert_eq!(a, b);
        let c = plan_epoch(8, 5, &[0, 2, 4], 2, 11, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn plan_rejects_empty_or_undersized_inputs() {
        assert!(plan_epoch(1, 3, &[], 2, 0, 0).is_err());
        assert!(plan_epoch(4, 0, &[], 2, 0, 0).is_err());
        assert!(plan_epoch(4, 3, &[], 0, 0, 0).is_err());
        assert!(plan_supervised_epoch(1, 2, 0, 0).is_err());
    }

    #[test]
    fn remap_sends_unmapped_ids_to_background() {
        let table = build_remap_table(&[(10, 1), (52, 2)]);
        let raw = LabelMap { h: 1, w: 4, ids: vec![0, 10, 52, 99] };
        assert_eq!(remap_labels(&raw, &table).ids, vec![0, 1, 2, 0]);
    }

    fn tiny_set(h: usize, w: usize) -> LoadedSet<f64> {
        let mut frames = Vec::new();
        for k in 0..3 {
            let mut channels = Tensor::zeros(&[CHANNELS, h, w]);
            for c in 0..CHANNELS {
                for v in 0..h {
                    for u in 0..w {
                        channels.set3(c, v, u, (u + 10 * k) as f64);
                    }
                }
            }
            let ids: Vec<u8> = (0..h * w).map(|i| ((i % w) % 7) as u8).collect();
            frames.push(LoadedFrame {
                frame_id: format!("f{k}"),
                image: RangeImage { channels, valid: vec![true; h * w], normalized: true },
                labels: LabelMap { h, w, ids },
                labeled: k == 1,
            });
        }
        LoadedSet { frames, h, w }
    }

    #[test]
    fn batches_stack_in_plan_order() {
        let set = tiny_set(2, 4);
        let b = make_batch(&set, &[2, 0]).unwrap();
        assert_eq!(b.images.shape(), &[2, CHANNELS, 2, 4]);
        assert_eq!(b.images.at4(0, 0, 0, 1), 21.0);
        assert_eq!(b.images.at4(1, 0, 0, 1), 1.0);
        assert_eq!(b.frame_ids, vec!["f2", "f0"]);
        assert_eq!(set.labeled_indices(), vec![1]);
    }

    #[test]
    fn augmentation_keeps_labels_aligned_with_columns() {
        let set = tiny_set(2, 8);
        let batch = make_batch(&set, &[0, 1]).unwrap();
        let mut s = Stream::new(5, "augment");
        let aug = augment_batch(&batch, &mut s);
        let (h, w) = (2, 8);
        for bi in 0..2 {
            for v in 0..h {
                for u in 0..w {
                    let col = (aug.images.at4(bi, 0, v, u) as usize) % 10;
                    let lab = aug.labels[(bi * h + v) * w + u];
                    assert_eq!(lab, ((col % w) % 7) as u8, "labels drifted from columns");
                }
            }
        }
        let mut cols: Vec<i64> = (0..w).map(|u| aug.images.at4(0, 0, 0, u) as i64).collect();
        cols.sort_unstable();
        assert_eq!(cols, (0..8).collect::<Vec<_>>(), "columns must be a permutation");
    }

    #[test]
    fn index_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dom = dir.path().join("source");
        let mut img = RangeImage::<f32> {
            channels: Tensor::zeros(&[CHANNELS, 2, 2]),
            valid: vec![true; 4],
            normalized: false,
        };
        img.channels.set3(3, 0, 0, 5.0);
        crate::formats::write_hyl1(&dom.join("train/frame_000.hyl1"), &img).unwrap();
        crate::formats::write_hyll(
            &dom.join("train/frame_000.hyll"),
            &LabelMap { h: 2, w: 2, ids: vec![0, 1, 2, 3] },
        )
        .unwrap();
        write_manifest(
            &dom.join("manifest.tsv"),
            &[ManifestEntry {
                frame_id: "source_train_000".into(),
                split: "train".into(),
                frame_path: "train/frame_000.hyl1".into(),
                label_path: "train/frame_000.hyll".into(),
                seed: 1,
                labeled: true,
            }],
        )
        .unwrap();
        let idx = load_index(&dom, "train").unwrap();
        assert_eq!(idx.records.len(), 1);
        let set = load_set::<f32>(&idx, None).unwrap();
        assert_eq!(set.frames[0].image.channels.at3(3, 0, 0), 5.0);
        assert!(load_index(&dom, "val").is_err());
    }
}
