//! Task stage: per-pixel class scorer, its frozen source-trained reference
//! twin, the auxiliary reconstruction decoder, and the task losses.

use std::path::Path;

use crate::formats::{meta_value, read_checkpoint, write_checkpoint};
use crate::nn::{collect_values, load_values, ParamId, ParamStore};
use crate::rangeview::LabelMap;
use crate::rng::Stream;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::translation::{DecoderNet, EncTaps, EncoderNet, OutAct};
use crate::{HyldaError, Result, Scalar};

pub const SEG_SLOPE: f64 = 0.1;

/// Encoder-decoder scorer over K+1 classes (0 = background). Raw logits out;
/// softmax is applied by the losses that need probabilities.
#[derive(Debug, Clone)]
pub struct SegNet {
    pub enc: EncoderNet,
    pub dec: DecoderNet,
    enc_prefix: String,
    dec_prefix: String,
    in_ch: usize,
    n_classes: usize,
    widths: [usize; 3],
    ids: Vec<ParamId>,
}

impl SegNet {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut Stream,
        enc_prefix: &str,
        dec_prefix: &str,
        in_ch: usize,
        n_classes: usize,
        widths: [usize; 3],
    ) -> Self {
        let enc = EncoderNet::new(store, rng, enc_prefix, in_ch, widths, SEG_SLOPE);
        let dec =
            DecoderNet::new(store, rng, dec_prefix, n_classes + 1, widths, SEG_SLOPE, OutAct::Linear);
        let mut ids = enc.ids().to_vec();
        ids.extend_from_slice(dec.ids());
        SegNet {
            enc,
            dec,
            enc_prefix: enc_prefix.to_string(),
            dec_prefix: dec_prefix.to_string(),
            in_ch,
            n_classes,
            widths,
            ids,
        }
    }

    /// Class score grid [B, K+1, H, W].
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        img: NodeId,
    ) -> NodeId {
        let taps = self.enc.forward(tape, store, img);
        self.dec.forward(tape, store, &taps)
    }

    /// Scores plus the encoder taps, for callers that also feed `AuxDecoder`.
    pub fn forward_with_taps<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        img: NodeId,
    ) -> (NodeId, EncTaps) {
        let taps = self.enc.forward(tape, store, img);
        (self.dec.forward(tape, store, &taps), taps)
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn enc_ids(&self) -> &[ParamId] {
        self.enc.ids()
    }

    pub fn dec_ids(&self) -> &[ParamId] {
        self.dec.ids()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn in_ch(&self) -> usize {
        self.in_ch
    }

    pub fn widths(&self) -> [usize; 3] {
        self.widths
    }
}

/// Decoder head reconstructing the input image from segmentation encoder
/// features, tanh-bounded to the normalized box.
#[derive(Debug, Clone)]
pub struct AuxDecoder {
    pub dec: DecoderNet,
}

impl AuxDecoder {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut Stream,
        prefix: &str,
        out_ch: usize,
        widths: [usize; 3],
    ) -> Self {
        AuxDecoder { dec: DecoderNet::new(store, rng, prefix, out_ch, widths, SEG_SLOPE, OutAct::Tanh) }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        taps: &EncTaps,
    ) -> NodeId {
        self.dec.forward(tape, store, taps)
    }

    pub fn ids(&self) -> &[ParamId] {
        self.dec.ids()
    }
}

/// Mean absolute error between a reconstruction and its input.
pub fn aux_reconstruction_loss<S: Scalar>(
    tape: &mut Tape<S>,
    recon: NodeId,
    input: NodeId,
) -> NodeId {
    tape.l1_mean(recon, input)
}

/// Class-weighted cross-entropy over every pixel; invalid pixels carry
/// class 0 and weigh in through its alpha.
pub fn weighted_cross_entropy<S: Scalar>(
    tape: &mut Tape<S>,
    scores: NodeId,
    labels: &[u8],
    alphas: &[S],
) -> NodeId {
    let mask = vec![true; labels.len()];
    tape.weighted_ce(scores, labels, &mask, alphas)
}

/// Mean absolute difference between two softmax probability grids; the
/// reference side is gradient-blocked.
pub fn semantic_consistency_loss<S: Scalar>(
    tape: &mut Tape<S>,
    ref_scores: NodeId,
    target_scores: NodeId,
) -> NodeId {
    let ref_probs = tape.softmax_ch(ref_scores);
    let ref_probs = tape.detach(ref_probs);
    let target_probs = tape.softmax_ch(target_scores);
    tape.l1_mean(ref_probs, target_probs)
}

/// L_uwce + gamma * L_sem.
pub fn combined_unsupervised_loss<S: Scalar>(
    tape: &mut Tape<S>,
    l_uwce: NodeId,
    l_sem: NodeId,
    gamma: f64,
) -> NodeId {
    let scaled = tape.scale(l_sem, crate::scalar::<S>(gamma));
    tape.add(l_uwce, scaled)
}

/// Pixel counts per class id over a label corpus. `n_out` is K+1.
pub fn class_frequencies<'a>(
    maps: impl IntoIterator<Item = &'a LabelMap>,
    n_out: usize,
) -> Result<Vec<u64>> {
    let mut freqs = vec![0u64; n_out];
    for map in maps {
        for &id in &map.ids {
            let id = id as usize;
            if id >= n_out {
                return Err(HyldaError::Config(format!(
                    "label id {id} exceeds class count {n_out}"
                )));
            }
            freqs[id] += 1;
        }
    }
    Ok(freqs)
}

/// alpha_i = 1/sqrt(f_i); absent classes get 0 so they cannot contribute.
pub fn class_weights<S: Scalar>(freqs: &[u64]) -> Vec<S> {
    freqs
        .iter()
        .map(|&f| if f == 0 { S::zero() } else { crate::scalar::<S>(1.0 / (f as f64).sqrt()) })
        .collect()
}

/// Argmax over the class axis, lowest index winning ties.
pub fn predict_labels<S: Scalar>(scores: &Tensor<S>) -> Vec<LabelMap> {
    let shape = scores.shape();
    assert_eq!(shape.len(), 4, "scores must be [B, K+1, H, W]");
    let (b, k, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut ids = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut best = 0usize;
                let mut best_v = scores.at4(bi, 0, y, x);
                for c in 1..k {
                    let v = scores.at4(bi, c, y, x);
                    if v > best_v {
                        best_v = v;
                        best = c;
                    }
                }
                ids[y * w + x] = best as u8;
            }
        }
        out.push(LabelMap { h, w, ids });
    }
    out
}

fn canonical_name(name: &str, prefix: &str, role: &str, path: &Path) -> Result<String> {
    match name.strip_prefix(prefix) {
        Some(rest) => Ok(format!("{role}{rest}")),
        None => Err(HyldaError::format(path, format!("parameter '{name}' not under '{prefix}'"))),
    }
}

/// Writes encoder + decoder weights under role-neutral names. The auxiliary
/// decoder is never included: saved networks are inference networks.
pub fn save_segnet<S: Scalar>(path: &Path, net: &SegNet, store: &ParamStore<S>) -> Result<()> {
    let meta = vec![
        ("kind".to_string(), "segmentation".to_string()),
        ("in_ch".to_string(), net.in_ch.to_string()),
        ("classes".to_string(), net.n_classes.to_string()),
        ("widths".to_string(), format!("{},{},{}", net.widths[0], net.widths[1], net.widths[2])),
    ];
    let mut tensors = Vec::new();
    for (name, t) in collect_values(store, net.enc.ids()) {
        tensors.push((canonical_name(&name, &net.enc_prefix, "enc", path)?, t));
    }
    for (name, t) in collect_values(store, net.dec.ids()) {
        tensors.push((canonical_name(&name, &net.dec_prefix, "dec", path)?, t));
    }
    write_checkpoint(path, &meta, &tensors)
}

/// Rebuilds a saved network under the caller's parameter prefixes, so one
/// store can hold e.g. an adapting copy and a frozen reference copy.
pub fn load_segnet<S: Scalar>(
    path: &Path,
    store: &mut ParamStore<S>,
    enc_prefix: &str,
    dec_prefix: &str,
) -> Result<SegNet> {
    let (meta, tensors) = read_checkpoint(path)?;
    if meta_value(&meta, "kind") != Some("segmentation") {
        return Err(HyldaError::format(path, "not a segmentation checkpoint"));
    }
    let parse = |key: &str| {
        meta_value(&meta, key).ok_or_else(|| HyldaError::format(path, format!("missing meta {key}")))
    };
    let in_ch: usize = parse("in_ch")?.parse().map_err(|_| HyldaError::format(path, "bad in_ch"))?;
    let n_classes: usize =
        parse("classes")?.parse().map_err(|_| HyldaError::format(path, "bad classes"))?;
    let ws: Vec<usize> = parse("widths")?
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| HyldaError::format(path, "bad widths")))
        .collect::<Result<_>>()?;
    if ws.len() != 3 {
        return Err(HyldaError::format(path, "widths must have 3 entries"));
    }

    let mut rng = Stream::new(0, "seg-load");
    let net =
        SegNet::new(store, &mut rng, enc_prefix, dec_prefix, in_ch, n_classes, [ws[0], ws[1], ws[2]]);
    if tensors.len() != net.ids().len() {
        return Err(HyldaError::format(
            path,
            format!("expected {} tensors, found {}", net.ids().len(), tensors.len()),
        ));
    }
    let mut renamed = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let actual = if let Some(rest) = name.strip_prefix("enc") {
            format!("{enc_prefix}{rest}")
        } else if let Some(rest) = name.strip_prefix("dec") {
            format!("{dec_prefix}{rest}")
        } else {
            return Err(HyldaError::format(path, format!("unexpected tensor '{name}'")));
        };
        renamed.push((actual, t));
    }
    load_values(store, &renamed)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::Adam;
    use crate::tape::{central_difference_grad, max_relative_error};

    fn random_image(b: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut s = Stream::new(seed, "img");
        let data: Vec<f64> = (0..b * c * h * w).map(|_| s.uniform_in(-1.0, 1.0)).collect();
        Tensor::from_vec(&[b, c, h, w], data).unwrap()
    }

    fn test_net(seed: u64) -> (ParamStore<f64>, SegNet) {
        let mut store = ParamStore::new();
        let mut rng = Stream::new(seed, "segtest");
        let net = SegNet::new(&mut store, &mut rng, "fenc", "fdec", 5, 6, [2, 3, 4]);
        (store, net)
    }

    #[test]
    fn score_shape_and_softmax_normalization() {
        let (store, net) = test_net(1);
        let img = random_image(2, 5, 8, 16, 2);
        let mut tape = Tape::new();
        let x = tape.leaf(img);
        let scores = net.forward(&mut tape, &store, x);
        assert_eq!(tape.value(scores).shape(), &[2, 7, 8, 16]);
        let probs = tape.softmax_ch(scores);
        let p = tape.value(probs);
        for bi in 0..2 {
            for y in 0..8 {
                for x in 0..16 {
                    let sum: f64 = (0..7).map(|c| p.at4(bi, c, y, x)).sum();
                    assert!((sum - 1.0).abs() < 1e-5, "softmax sum {sum}");
                }
            }
        }
    }

    #[test]
    fn aux_output_is_input_shaped_and_bounded() {
        let (mut store, net) = test_net(3);
        let mut rng = Stream::new(4, "aux");
        let aux = AuxDecoder::new(&mut store, &mut rng, "decaux", 5, [2, 3, 4]);
        let img = random_image(1, 5, 8, 16, 5);
        let mut tape = Tape::new();
        let x = tape.leaf(img);
        let taps = net.enc.forward(&mut tape, &store, x);
        let recon = aux.forward(&mut tape, &store, &taps);
        let r = tape.value(recon);
        assert_eq!(r.shape(), &[1, 5, 8, 16]);
        for v in r.data() {
            assert!(*v >= -1.0 && *v <= 1.0);
        }
    }

    #[test]
    fn aux_loss_matches_brute_force() {
        let a = random_image(1, 5, 2, 2, 6);
        // identical inputs
        let mut tape = Tape::new();
        let xa = tape.leaf(a.clone());
        let xb = tape.leaf(a.clone());
        let l = aux_reconstruction_loss(&mut tape, xa, xb);
        assert_eq!(tape.scalar_value(l), 0.0);
        // one channel offset by 0.2 -> 0.2 / C
        let mut b = a.clone();
        for y in 0..2 {
            for x in 0..2 {
                let v = b.at4(0, 3, y, x);
                b.set4(0, 3, y, x, v + 0.2);
            }
        }
        let mut tape = Tape::new();
        let xa = tape.leaf(a.clone());
        let xb = tape.leaf(b);
        let l = aux_reconstruction_loss(&mut tape, xa, xb);
        assert!((tape.scalar_value(l) - 0.2 / 5.0).abs() < 1e-12);
        // random pair vs direct recomputation
        let c = random_image(1, 5, 2, 2, 7);
        let expect: f64 =
            a.data().iter().zip(c.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
        let mut tape = Tape::new();
        let xa = tape.leaf(a);
        let xc = tape.leaf(c);
        let l = aux_reconstruction_loss(&mut tape, xa, xc);
        assert!((tape.scalar_value(l) - expect).abs() < 1e-12);
    }

    #[test]
    fn weighted_ce_hand_case() {
        // two pixels, two classes: p(true) = 0.5 with alpha 1, 0.25 with
        // alpha 2 -> (ln2 + 2 ln4)/2 = 2.5 ln2.
        let logits =
            Tensor::from_vec(&[1, 2, 1, 2], vec![0.0, 3.0f64.ln(), 0.0, 0.0]).unwrap();
        let labels = vec![0u8, 1];
        let alphas = vec![1.0, 2.0];
        let mut tape = Tape::new();
        let x = tape.leaf(logits);
        let l = weighted_cross_entropy(&mut tape, x, &labels, &alphas);
        let got = tape.scalar_value(l);
        assert!((got - 2.5 * 2.0f64.ln()).abs() < 1e-12, "{got}");
        assert!((got - 1.7329).abs() < 1e-4);
    }

    #[test]
    fn weighted_ce_reduces_to_mean_ce_with_unit_weights() {
        let logits = random_image(2, 4, 2, 3, 8);
        let mut s = Stream::new(9, "labels");
        let labels: Vec<u8> = (0..2 * 2 * 3).map(|_| (s.uniform() * 4.0) as u8).collect();
        let mut expect = 0.0;
        for bi in 0..2 {
            for y in 0..2 {
                for x in 0..3 {
                    let z: Vec<f64> = (0..4).map(|c| logits.at4(bi, c, y, x)).collect();
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = z.iter().map(|v| (v - m).exp()).sum();
                    let cl = labels[(bi * 2 + y) * 3 + x] as usize;
                    expect += -(z[cl] - m - denom.ln());
                }
            }
        }
        expect /= 12.0;
        let mut tape = Tape::new();
        let x = tape.leaf(logits);
        let l = weighted_cross_entropy(&mut tape, x, &labels, &[1.0; 4]);
        assert!((tape.scalar_value(l) - expect).abs() < 1e-12);
    }

    #[test]
    fn weighted_ce_perfect_prediction_is_zero() {
        let mut logits = Tensor::zeros(&[1, 3, 2, 2]);
        let labels = vec![2u8, 0, 1, 2];
        for y in 0..2 {
            for x in 0..2 {
                logits.set4(0, labels[y * 2 + x] as usize, y, x, 50.0);
            }
        }
        let mut tape = Tape::new();
        let x = tape.leaf(logits);
        let l = weighted_cross_entropy(&mut tape, x, &labels, &[1.0, 2.0, 3.0]);
        assert!(tape.scalar_value(l) < 1e-8);
    }

    #[test]
    fn weighted_ce_gradient_matches_finite_differences() {
        let logits = random_image(1, 3, 2, 2, 10);
        let labels = vec![0u8, 2, 1, 1];
        let alphas = vec![0.5, 1.0, 2.0];
        let mut tape = Tape::new();
        let x = tape.leaf(logits.clone());
        let l = weighted_cross_entropy(&mut tape, x, &labels, &alphas);
        let grads = tape.backward(l);
        let got = grads.get(x).unwrap();
        let fd = central_difference_grad(&logits, 1e-5, |t| {
            let mut tape = Tape::new();
            let x = tape.leaf(t.clone());
            let l = weighted_cross_entropy(&mut tape, x, &labels, &alphas);
            tape.scalar_value(l)
        });
        assert!(max_relative_error(got, &fd, 1e-6) < 1e-6);
    }

    #[test]
    fn class_weights_follow_inverse_sqrt_counts() {
        let maps = [
            LabelMap { h: 1, w: 4, ids: vec![0, 1, 1, 2] },
            LabelMap { h: 1, w: 4, ids: vec![1, 1, 2, 0] },
        ];
        let freqs = class_frequencies(maps.iter(), 4).unwrap();
        assert_eq!(freqs, vec![2, 4, 2, 0]);
        let w: Vec<f64> = class_weights(&freqs);
        assert!((w[0] - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
        assert_eq!(w[3], 0.0);

        let bad = [LabelMap { h: 1, w: 1, ids: vec![9] }];
        assert!(class_frequencies(bad.iter(), 4).is_err());
    }

    #[test]
    fn semantic_consistency_hand_cases() {
        // identical grids -> 0
        let logits = random_image(1, 2, 2, 2, 11);
        let mut tape = Tape::new();
        let a = tape.leaf(logits.clone());
        let b = tape.leaf(logits);
        let l = semantic_consistency_loss(&mut tape, a, b);
        assert!(tape.scalar_value(l) < 1e-12);

        // two classes swapped with probability gap 0.4 at every pixel:
        // mean |delta p| = 2 * 0.4 / 2
        let d = (0.7f64 / 0.3).ln();
        let hi = Tensor::from_vec(&[1, 2, 1, 2], vec![d, d, 0.0, 0.0]).unwrap();
        let lo = Tensor::from_vec(&[1, 2, 1, 2], vec![0.0, 0.0, d, d]).unwrap();
        let mut tape = Tape::new();
        let a = tape.leaf(hi);
        let b = tape.leaf(lo);
        let l = semantic_consistency_loss(&mut tape, a, b);
        assert!((tape.scalar_value(l) - 0.4).abs() < 1e-9);
    }

    #[test]
    fn semantic_consistency_blocks_reference_gradient() {
        let ref_logits = random_image(1, 3, 2, 2, 12);
        let tgt_logits = random_image(1, 3, 2, 2, 13);
        let mut tape = Tape::new();
        let r = tape.leaf(ref_logits);
        let t = tape.leaf(tgt_logits.clone());
        let l = semantic_consistency_loss(&mut tape, r, t);
        let grads = tape.backward(l);
        assert!(grads.get(r).is_none(), "reference side must be gradient-blocked");
        let gt = grads.get(t).unwrap().clone();
        assert!(gt.data().iter().any(|v| v.abs() > 0.0));

        let fd = central_difference_grad(&tgt_logits, 1e-5, |x| {
            let mut tape = Tape::new();
            let r = tape.leaf(random_image(1, 3, 2, 2, 12));
            let t = tape.leaf(x.clone());
            let l = semantic_consistency_loss(&mut tape, r, t);
            tape.scalar_value(l)
        });
        assert!(max_relative_error(&gt, &fd, 1e-6) < 1e-5);
    }

    #[test]
    fn combined_loss_is_weighted_sum() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(&[1], vec![0.7f64]).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[1], vec![0.3f64]).unwrap());
        let l = combined_unsupervised_loss(&mut tape, a, b, 1.0);
        assert!((tape.scalar_value(l) - 1.0).abs() < 1e-12);
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(&[1], vec![0.7f64]).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[1], vec![0.3f64]).unwrap());
        let l = combined_unsupervised_loss(&mut tape, a, b, 0.0);
        assert!((tape.scalar_value(l) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn predicted_labels_take_argmax_with_low_tie() {
        let mut scores = Tensor::zeros(&[1, 3, 1, 3]);
        scores.set4(0, 1, 0, 0, 2.0); // clear winner
        scores.set4(0, 2, 0, 1, 0.5);
        scores.set4(0, 1, 0, 1, 0.5); // tie between 1 and 2 -> 1
        let maps = predict_labels(&scores);
        assert_eq!(maps.len(), 1);
        assert_eq!(maps[0].ids, vec![1, 1, 0]);
    }

    #[test]
    fn training_target_leaves_reference_frozen() {
        let (mut store, net) = test_net(14);
        let mut rng = Stream::new(15, "ref");
        let refnet = SegNet::new(&mut store, &mut rng, "refsrc_enc", "refsrc_dec", 5, 6, [2, 3, 4]);
        let ref_hash = store.group_hash(refnet.ids());
        let tgt_hash = store.group_hash(net.ids());

        let img = random_image(1, 5, 8, 16, 16);
        let labels = vec![1u8; 8 * 16];
        let mut opt = Adam::new(0.01);
        let mut tape = Tape::new();
        let x = tape.leaf(img);
        let scores = net.forward(&mut tape, &store, x);
        let l = weighted_cross_entropy(&mut tape, scores, &labels, &[1.0; 7]);
        let grads = tape.backward(l);
        store.zero_grads(&store.all_ids());
        tape.apply_param_grads(&grads, &mut store);
        opt.step(&mut store, &net.ids().to_vec());

        assert_eq!(store.group_hash(refnet.ids()), ref_hash);
        assert_ne!(store.group_hash(net.ids()), tgt_hash);
    }

    #[test]
    fn checkpoint_roundtrip_under_new_prefixes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.hylc");
        let (store, net) = test_net(17);
        save_segnet(&path, &net, &store).unwrap();

        // saved names are role-neutral and aux-free
        let (_, tensors) = read_checkpoint(&path).unwrap();
        assert_eq!(tensors.len(), 14);
        for (name, _) in &tensors {
            assert!(name.starts_with("enc.") || name.starts_with("dec."), "{name}");
        }

        let mut store2 = ParamStore::<f64>::new();
        let net2 = load_segnet(&path, &mut store2, "refsrc_enc", "refsrc_dec").unwrap();
        assert_eq!(net2.n_classes(), 6);

        let img = random_image(1, 5, 8, 16, 18);
        let mut tape = Tape::new();
        let x = tape.leaf(img.clone());
        let sa = net.forward(&mut tape, &store, x);
        let a = tape.value(sa).clone();
        let mut tape = Tape::new();
        let x = tape.leaf(img);
        let sb = net2.forward(&mut tape, &store2, x);
        let b = tape.value(sb).clone();
        assert!(max_relative_error(&a, &b, 1e-3) < 1e-5);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.hylc");
        let (store, net) = test_net(19);
        save_segnet(&path, &net, &store).unwrap();
        let (meta, mut tensors) = read_checkpoint(&path).unwrap();
        tensors.pop();
        write_checkpoint(&path, &meta, &tensors).unwrap();
        let mut store2 = ParamStore::<f64>::new();
        assert!(load_segnet(&path, &mut store2, "fenc", "fdec").is_err());
    }
}
