//! Domain statistics: per-pixel mean range image and beam covariance.
//!
//! The summary of a dataset or batch is the pair (mean_image, cov): the
//! per-pixel mean of the normalized range channel (H×W) and the H×H sample
//! covariance of the H-dimensional per-column range profiles, pooled over
//! every azimuth column of every frame (denominator n−1). The statistics
//! loss and the domain-gap MAE analysis both run on this pair.

use crate::rangeview::{RangeImage, CH_RANGE};
use crate::tensor::Tensor;
use crate::{scalar, HyldaError, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct DomainStats<S: Scalar> {
    pub h: usize,
    pub w: usize,
    /// Row-major H×W per-pixel mean of the range channel.
    pub mean_image: Vec<S>,
    /// Row-major H×H column covariance.
    pub cov: Vec<S>,
}

/// Batch statistics plus the column-mean vector the covariance was centred
/// on; the extra vector is what the loss backward pass needs.
pub(crate) struct RawBatchStats<S: Scalar> {
    pub mean_image: Vec<S>,
    pub col_mean: Vec<S>,
    pub cov: Vec<S>,
}

/// Exact two-pass statistics of `channel` over a [B,C,H,W] batch. Caller
/// guarantees at least two columns (B·W ≥ 2).
pub(crate) fn raw_batch_stats<S: Scalar>(batch: &Tensor<S>, channel: usize) -> RawBatchStats<S> {
    let s = batch.shape();
    assert_eq!(s.len(), 4, "stats over rank-4 batches");
    let (b, _c, h, w) = (s[0], s[1], s[2], s[3]);
    let n = b * w;
    assert!(n >= 2, "need at least two column samples");
    let nf = scalar::<S>(n as f64);
    let bf = scalar::<S>(b as f64);

    let mut mean_image = vec![S::zero(); h * w];
    let mut col_mean = vec![S::zero(); h];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let v = batch.at4(bi, channel, y, x);
                mean_image[y * w + x] += v / bf;
                col_mean[y] += v / nf;
            }
        }
    }

    let nm1 = scalar::<S>((n - 1) as f64);
    let mut cov = vec![S::zero(); h * h];
    let mut col = vec![S::zero(); h];
    for bi in 0..b {
        for x in 0..w {
            for (y, cv) in col.iter_mut().enumerate() {
                *cv = batch.at4(bi, channel, y, x) - col_mean[y];
            }
            for i in 0..h {
                for j in i..h {
                    cov[i * h + j] += col[i] * col[j] / nm1;
                }
            }
        }
    }
    for i in 0..h {
        for j in 0..i {
            cov[i * h + j] = cov[j * h + i];
        }
    }
    RawBatchStats { mean_image, col_mean, cov }
}

/// Statistics of the range channel of a normalized [B,C,H,W] batch.
pub fn batch_stats<S: Scalar>(batch: &Tensor<S>, channel: usize) -> Result<DomainStats<S>> {
    let s = batch.shape();
    if s.len() != 4 || channel >= s[1] {
        return Err(HyldaError::Shape(format!("bad stats batch shape {s:?} channel {channel}")));
    }
    if s[0] * s[3] < 2 {
        return Err(HyldaError::Shape("statistics need at least two column samples".into()));
    }
    let raw = raw_batch_stats(batch, channel);
    Ok(DomainStats { h: s[2], w: s[3], mean_image: raw.mean_image, cov: raw.cov })
}

/// Statistics of a whole dataset: per-pixel mean of the range channel plus
/// covariance pooled over all columns of all frames. All frames must be
/// normalized and share one H×W.
pub fn precompute_stats<S: Scalar>(frames: &[RangeImage<S>]) -> Result<DomainStats<S>> {
    if frames.len() < 2 {
        return Err(HyldaError::Shape("statistics need at least two frames".into()));
    }
    let (h, w) = (frames[0].h(), frames[0].w());
    for f in frames {
        if !f.normalized {
            return Err(HyldaError::Shape("statistics run on normalized frames".into()));
        }
        if f.h() != h || f.w() != w {
            return Err(HyldaError::Shape("statistics frames must share one shape".into()));
        }
    }
    // Stack just the range channel as a [B,1,H,W] batch; the statistics of
    // a batch equal the statistics of the dataset it contains by definition.
    let mut data = Vec::with_capacity(frames.len() * h * w);
    for f in frames {
        let ch = f.channels.data();
        data.extend_from_slice(&ch[CH_RANGE * h * w..(CH_RANGE + 1) * h * w]);
    }
    let batch = Tensor::from_vec(&[frames.len(), 1, h, w], data)?;
    batch_stats(&batch, 0)
}

/// Element-wise mean absolute differences: (mean_mae, cov_mae).
pub fn stats_mae<S: Scalar>(a: &DomainStats<S>, b: &DomainStats<S>) -> Result<(S, S)> {
    if a.h != b.h || a.w != b.w {
        return Err(HyldaError::Shape(format!(
            "stats shape mismatch: {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    let mut mean_mae = S::zero();
    for i in 0..a.mean_image.len() {
        mean_mae += (a.mean_image[i] - b.mean_image[i]).abs();
    }
    mean_mae = mean_mae / scalar::<S>(a.mean_image.len() as f64);
    let mut cov_mae = S::zero();
    for i in 0..a.cov.len() {
        cov_mae += (a.cov[i] - b.cov[i]).abs();
    }
    cov_mae = cov_mae / scalar::<S>(a.cov.len() as f64);
    Ok((mean_mae, cov_mae))
}

fn one_sided_loss<S: Scalar>(batch: &Tensor<S>, channel: usize, target: &DomainStats<S>) -> Result<S> {
    let est = batch_stats(batch, channel)?;
    let (mean_mae, cov_mae) = stats_mae(&est, target)?;
    Ok(mean_mae + cov_mae)
}

/// Statistics similarity loss over both translation directions: each fake
/// batch is compared against its destination domain's precomputed stats,
/// every norm realized as an element-wise mean absolute difference.
pub fn statistics_loss<S: Scalar>(
    fake_src_batch: &Tensor<S>,
    fake_trg_batch: &Tensor<S>,
    src_stats: &DomainStats<S>,
    trg_stats: &DomainStats<S>,
    channel: usize,
) -> Result<S> {
    Ok(one_sided_loss(fake_src_batch, channel, src_stats)?
        + one_sided_loss(fake_trg_batch, channel, trg_stats)?)
}
