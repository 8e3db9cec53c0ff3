//! Training regimes and the shared evaluation path.
//!
//! Four regimes build on each other:
//!
//! * `multi-cnn` — backbone + fully-connected sigmoid head, binary
//!   cross-entropy per label.
//! * `cnn-lstm` — backbone + whole-image region encoding + the global
//!   recurrence, trained end to end; doubles as the pretraining stage for
//!   the fused model's encoder and decoder.
//! * `rlsd` — localizer pretraining, then the global pretraining warm-started
//!   from it, then joint training of backbone + encoder + decoder over
//!   proposal regions with the localizer frozen.
//! * `rlsd-ft-rpn` — the same chain, but the final stage also fine-tunes the
//!   localizer: gradients flow through the sampled box coordinates and a
//!   localization loss on a sampled anchor minibatch is added.
//!
//! Every stage derives its RNG streams from the run seed, so a repeated run
//! reproduces parameters bit for bit.

use crate::backbone::{
    extract_features, multi_cnn_forward, multi_cnn_init, multi_cnn_loss, BackboneConfig,
};
use crate::config::{ModelKind, RunConfig};
use crate::encoder::{encode_region, EncoderConfig};
use crate::fusion::{fused_scores, fusion_loss, max_pool_fusion, PredictionGrid};
use crate::localizer::{
    cluster_merge_boxes, decode_deltas, generate_anchors, iou, localization_loss, map_index,
    nms_indices, propose, sample_minibatch, score_map, Anchor, AnchorScores, BBox, Proposal,
    RpnConfig, SampleMode,
};
use crate::metrics::EvalRecord;
use crate::optim::{sgd_step, GradStore, SgdState};
use crate::params::{bind, bind_all, bind_frozen, BoundParams, ParamSet};
use crate::rnn::{global_lstm_forward, global_lstm_steps, unroll_region, LstmConfig, RegionUnroll};
use crate::synthdata::{DatasetManifest, Sample, Split, SynthError};
use crate::tensor::{DropoutMode, Tape, TapeError, Tensor, TensorId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset: {0}")]
    Data(#[from] SynthError),
    #[error("tape: {0}")]
    Tape(#[from] TapeError),
    #[error("sample {index} of the {split} split has no object boxes; this regime needs them")]
    MissingBoxes { split: &'static str, index: usize },
    #[error("config: {0}")]
    Config(String),
}

/// A dataset loaded fully into memory (desk-scale images are small enough
/// that this is by far the simplest correct thing).
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Dataset, TrainError> {
        let manifest = DatasetManifest::load(root)?;
        let train = manifest.load_samples(root, Split::Train)?;
        let test = manifest.load_samples(root, Split::Test)?;
        Ok(Dataset { root: root.to_path_buf(), manifest, train, test })
    }

    pub fn classes(&self) -> usize {
        self.manifest.spec.classes
    }

    pub fn image_size(&self) -> (f64, f64) {
        let (w, h) = self.manifest.spec.image_size;
        (w as f64, h as f64)
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

/// 0/1 truth vector over `classes` entries.
pub fn multi_hot(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    for &l in labels {
        y[l] = 1.0;
    }
    y
}

/// The four sub-model configurations implied by one run configuration.
pub struct Assembly {
    pub backbone: BackboneConfig,
    pub rpn: RpnConfig,
    pub encoder: EncoderConfig,
    pub lstm: LstmConfig,
}

pub fn assemble(cfg: &RunConfig, classes: usize) -> Assembly {
    let backbone = cfg.dims.backbone.clone();
    let rpn = RpnConfig {
        in_channels: backbone.out_channels(),
        hidden: cfg.dims.rpn_hidden,
        k: cfg.dims.anchors_per_cell(),
    };
    let encoder = EncoderConfig {
        in_dim: backbone.out_channels() * cfg.dims.grid * cfg.dims.grid,
        widths: [cfg.dims.encoder_width, cfg.dims.encoder_width],
    };
    let lstm = LstmConfig {
        feat_dim: cfg.dims.encoder_width,
        embed: cfg.dims.embed,
        hidden: cfg.dims.hidden,
        labels: classes,
    };
    Assembly { backbone, rpn, encoder, lstm }
}

/// Ground-truth regions for one sample: object boxes merged by
/// single-linkage clustering with a cutoff of `cluster_cutoff` image
/// diagonals.
pub fn merged_regions(sample: &Sample, cutoff_frac: f64, image: (f64, f64)) -> Vec<BBox> {
    let boxes: Vec<BBox> = sample.objects.iter().map(|p| p.bbox).collect();
    let cutoff = cutoff_frac * (image.0 * image.0 + image.1 * image.1).sqrt();
    cluster_merge_boxes(&boxes, cutoff)
}

fn require_boxes(samples: &[Sample], split: &'static str) -> Result<(), TrainError> {
    for (index, s) in samples.iter().enumerate() {
        if s.objects.is_empty() {
            return Err(TrainError::MissingBoxes { split, index });
        }
    }
    Ok(())
}

// RNG derivation: every random decision in a run is keyed by
// (seed, stage, role, epoch, item) through a splitmix chain.
const STAGE_MULTI_CNN: u64 = 1;
const STAGE_LOCALIZER: u64 = 2;
const STAGE_GLOBAL_LSTM: u64 = 3;
const STAGE_FUSION: u64 = 4;

const ROLE_INIT: u64 = 1;
const ROLE_SHUFFLE: u64 = 2;
const ROLE_IMAGE: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ p))
}

fn stage_init_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stage, ROLE_INIT]))
}

/// One SGD training stage: shuffled epochs over the training split,
/// minibatch gradient averaging, momentum updates. The closure builds the
/// whole per-image graph and returns its scalar loss (or `None` to skip the
/// image, e.g. when no anchor qualifies for a localizer batch). Returns the
/// mean per-image loss of each epoch.
fn run_stage<F>(
    params: &mut ParamSet,
    n: usize,
    epochs: usize,
    lr: f64,
    cfg: &RunConfig,
    stage: u64,
    label: &str,
    mut forward: F,
) -> Result<Vec<f64>, TrainError>
where
    F: FnMut(
        &ParamSet,
        usize,
        &mut ChaCha8Rng,
    ) -> Result<Option<(Tape, BoundParams, TensorId)>, TrainError>,
{
    let t = &cfg.train;
    let mut state = SgdState::new();
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(
            t.seed,
            &[stage, ROLE_SHUFFLE, epoch as u64],
        ));
        order.shuffle(&mut shuffle_rng);

        let mut total = 0.0;
        let mut counted = 0usize;
        for chunk in order.chunks(t.batch.max(1)) {
            let mut grads = GradStore::new();
            let mut used = 0usize;
            for &idx in chunk {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    t.seed,
                    &[stage, ROLE_IMAGE, epoch as u64, idx as u64],
                ));
                let Some((mut tape, bound, loss)) = forward(&*params, idx, &mut rng)? else {
                    continue;
                };
                tape.backward(loss)?;
                grads.accumulate(&tape, &bound);
                total += tape.value(loss).data[0];
                counted += 1;
                used += 1;
            }
            if used > 0 {
                grads.scale(1.0 / used as f64);
                sgd_step(params, &grads, &mut state, lr, t.momentum, t.weight_decay);
            }
        }
        let mean = total / counted.max(1) as f64;
        log::info!("{label}: epoch {}/{} mean loss {:.6}", epoch + 1, epochs, mean);
        losses.push(mean);
    }
    Ok(losses)
}

/// Plain multi-label CNN: backbone, global average pool, sigmoid head,
/// binary cross-entropy.
pub fn train_multi_cnn(cfg: &RunConfig, ds: &Dataset) -> Result<(ParamSet, Vec<f64>), TrainError> {
    let classes = ds.classes();
    let asm = assemble(cfg, classes);
    let mut rng = stage_init_rng(cfg.train.seed, STAGE_MULTI_CNN);
    let mut params = multi_cnn_init(&asm.backbone, classes, &mut rng);
    let dropout = cfg.train.dropout;
    let losses = run_stage(
        &mut params,
        ds.train.len(),
        cfg.train.epochs,
        cfg.train.lr,
        cfg,
        STAGE_MULTI_CNN,
        "multi-cnn",
        |params, idx, rng| {
            let sample = &ds.train[idx];
            let mut tape = Tape::new();
            let bound = bind_all(params, &mut tape);
            let img = tape.leaf(sample.image.clone(), false);
            let scores =
                multi_cnn_forward(&mut tape, &asm.backbone, &bound, img, dropout, DropoutMode::Train, rng)?;
            let y = multi_hot(&sample.labels, classes);
            let loss = multi_cnn_loss(&mut tape, scores, &y)?;
            Ok(Some((tape, bound, loss)))
        },
    )?;
    Ok((params, losses))
}

/// Localizer pretraining: backbone + proposal head against cluster-merged
/// ground-truth regions, with IoU-matched anchor minibatches.
pub fn pretrain_localizer(cfg: &RunConfig, ds: &Dataset) -> Result<(ParamSet, Vec<f64>), TrainError> {
    require_boxes(&ds.train, "train")?;
    let asm = assemble(cfg, ds.classes());
    let mut rng = stage_init_rng(cfg.train.seed, STAGE_LOCALIZER);
    let mut params = ParamSet::new();
    asm.backbone.init_params(&mut params, &mut rng);
    asm.rpn.init_params(&mut params, &mut rng);

    let (img_w, img_h) = ds.image_size();
    let fh = asm.backbone.feature_side(img_h as usize);
    let fw = asm.backbone.feature_side(img_w as usize);
    let anchors = generate_anchors(
        fh,
        fw,
        asm.backbone.stride() as f64,
        &cfg.dims.anchor_scales,
        &cfg.dims.anchor_ratios,
    );
    if cfg.train.m > anchors.len() {
        return Err(TrainError::Config(format!(
            "anchor minibatch size {} exceeds the {} anchors available",
            cfg.train.m,
            anchors.len()
        )));
    }
    let gt: Vec<Vec<BBox>> = ds
        .train
        .iter()
        .map(|s| merged_regions(s, cfg.dims.cluster_cutoff, (img_w, img_h)))
        .collect();

    let (m, pos_iou, neg_iou) = (cfg.train.m, cfg.dims.pos_iou, cfg.dims.neg_iou);
    let losses = run_stage(
        &mut params,
        ds.train.len(),
        cfg.train.loc_epochs,
        cfg.train.loc_lr,
        cfg,
        STAGE_LOCALIZER,
        "localizer",
        |params, idx, rng| {
            let sample = &ds.train[idx];
            let regions = &gt[idx];
            let batch =
                sample_minibatch(&anchors, &[], regions, SampleMode::Iou, m, pos_iou, neg_iou, rng);
            if batch.is_empty() {
                return Ok(None);
            }
            let mut tape = Tape::new();
            let bound = bind_all(params, &mut tape);
            let img = tape.leaf(sample.image.clone(), false);
            let feat = extract_features(&mut tape, &asm.backbone, &bound, img)?;
            let map = score_map(&mut tape, &bound, feat)?;
            let loss = localization_loss(&mut tape, map, &anchors, &batch, regions)?;
            Ok(Some((tape, bound, loss)))
        },
    )?;
    Ok((params, losses))
}

/// Global CNN+LSTM training: the whole image is one region — sampled on the
/// full-image box, encoded, and decoded for a fixed number of steps against
/// the normalized label vector. `warm` seeds any parameters with matching
/// names (the fused chain passes the pretrained localizer so the backbone
/// starts from features the frozen proposal head understands).
pub fn pretrain_global_lstm(
    cfg: &RunConfig,
    ds: &Dataset,
    warm: Option<&ParamSet>,
) -> Result<(ParamSet, Vec<f64>), TrainError> {
    let classes = ds.classes();
    let asm = assemble(cfg, classes);
    let mut rng = stage_init_rng(cfg.train.seed, STAGE_GLOBAL_LSTM);
    let mut params = ParamSet::new();
    asm.backbone.init_params(&mut params, &mut rng);
    asm.encoder.init_params(&mut params, &mut rng);
    asm.lstm.init_params(&mut params, &mut rng);
    if let Some(w) = warm {
        let copied = params.adopt_values(w);
        log::info!("global-lstm: warm-started {copied} tensors");
    }

    let (img_w, img_h) = ds.image_size();
    let whole = vec![img_w / 2.0, img_h / 2.0, img_w, img_h];
    let (grid, t_max, dropout) = (cfg.dims.grid, cfg.train.t_max, cfg.train.dropout);
    let stride = asm.backbone.stride() as f64;
    let losses = run_stage(
        &mut params,
        ds.train.len(),
        cfg.train.lstm_epochs,
        cfg.train.lstm_lr,
        cfg,
        STAGE_GLOBAL_LSTM,
        "global-lstm",
        |params, idx, rng| {
            let sample = &ds.train[idx];
            let mut tape = Tape::new();
            let bound = bind_all(params, &mut tape);
            let img = tape.leaf(sample.image.clone(), false);
            let feat = extract_features(&mut tape, &asm.backbone, &bound, img)?;
            let box_id = tape.leaf(Tensor::from_vec(vec![4], whole.clone()), false);
            let region = tape.bilinear_sample(feat, box_id, (grid, grid), stride)?;
            let v = encode_region(&mut tape, &bound, region, dropout, DropoutMode::Train, rng)?;
            let y = multi_hot(&sample.labels, classes);
            let (_, loss) = global_lstm_forward(
                &mut tape, &bound, &asm.lstm, v, &y, t_max, dropout, DropoutMode::Train, rng,
            )?;
            Ok(Some((tape, bound, loss)))
        },
    )?;
    Ok((params, losses))
}

/// Everything the per-image fused forward needs besides the parameters.
struct FusionContext {
    backbone: BackboneConfig,
    lstm: LstmConfig,
    anchors: Vec<Anchor>,
    grid: usize,
    stride: f64,
    m: usize,
    nms_iou: f64,
    delta_clamp: f64,
    t_max: usize,
    dropout: f64,
    img_w: f64,
    img_h: f64,
}

fn fusion_context(cfg: &RunConfig, classes: usize, image: (f64, f64)) -> FusionContext {
    let asm = assemble(cfg, classes);
    let fh = asm.backbone.feature_side(image.1 as usize);
    let fw = asm.backbone.feature_side(image.0 as usize);
    let anchors = generate_anchors(
        fh,
        fw,
        asm.backbone.stride() as f64,
        &cfg.dims.anchor_scales,
        &cfg.dims.anchor_ratios,
    );
    FusionContext {
        stride: asm.backbone.stride() as f64,
        backbone: asm.backbone,
        lstm: asm.lstm,
        anchors,
        grid: cfg.dims.grid,
        m: cfg.train.m,
        nms_iou: cfg.dims.nms_iou,
        delta_clamp: cfg.dims.delta_clamp,
        t_max: cfg.train.t_max,
        dropout: cfg.train.dropout,
        img_w: image.0,
        img_h: image.1,
    }
}

/// The fused per-image forward: features, proposal scores, NMS selection,
/// per-region sampling/encoding/decoding, plus the whole-image region last.
/// With `track_boxes` the kept boxes are rebuilt on the tape (gather →
/// decode → clip) so gradients reach the proposal head; otherwise they enter
/// as constants. Returns the unrolls in selection order and the raw proposal
/// map (for an optional localization loss).
fn region_unrolls(
    tape: &mut Tape,
    bound: &BoundParams,
    ctx: &FusionContext,
    image: &Tensor,
    track_boxes: bool,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<RegionUnroll>, TensorId), TrainError> {
    let img = tape.leaf(image.clone(), false);
    let feat = extract_features(tape, &ctx.backbone, bound, img)?;
    let map = score_map(tape, bound, feat)?;
    let fshape = tape.shape(map).to_vec();
    let (fh, fw) = (fshape[1], fshape[2]);

    let scores = AnchorScores::read(tape.value(map), &ctx.anchors);
    let mut cands: Vec<Proposal> = Vec::new();
    let mut cand_anchor: Vec<usize> = Vec::new();
    for (i, a) in ctx.anchors.iter().enumerate() {
        let decoded = decode_deltas(&a.bbox, &scores.deltas[i], ctx.delta_clamp);
        let clipped = decoded.clip(ctx.img_w, ctx.img_h);
        if clipped.w > 0.0 && clipped.h > 0.0 {
            cands.push(Proposal { bbox: clipped, confidence: scores.confidences[i] });
            cand_anchor.push(i);
        }
    }
    let keep = nms_indices(&cands, ctx.m, ctx.nms_iou);

    let mut boxes: Vec<TensorId> = Vec::with_capacity(keep.len() + 1);
    for &j in &keep {
        let id = if track_boxes {
            let a = &ctx.anchors[cand_anchor[j]];
            let idx: Vec<usize> = (0..4).map(|c| map_index(a, c, fh, fw)).collect();
            let deltas = tape.gather(map, &idx)?;
            let decoded =
                tape.decode_box(deltas, [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h], ctx.delta_clamp)?;
            tape.clip_box(decoded, ctx.img_w, ctx.img_h, 1.0)?
        } else {
            let b = cands[j].bbox;
            tape.leaf(Tensor::from_vec(vec![4], vec![b.x, b.y, b.w, b.h]), false)
        };
        boxes.push(id);
    }
    boxes.push(tape.leaf(
        Tensor::from_vec(vec![4], vec![ctx.img_w / 2.0, ctx.img_h / 2.0, ctx.img_w, ctx.img_h]),
        false,
    ));

    let mut unrolls = Vec::with_capacity(boxes.len());
    for b in boxes {
        let region = tape.bilinear_sample(feat, b, (ctx.grid, ctx.grid), ctx.stride)?;
        let v = encode_region(tape, bound, region, ctx.dropout, mode, rng)?;
        unrolls.push(unroll_region(tape, bound, &ctx.lstm, v, ctx.t_max, ctx.dropout, mode, rng)?);
    }
    Ok((unrolls, map))
}

/// Joint training over proposal regions with max-pooled fusion. `params`
/// must hold backbone, proposal head, encoder and decoder tensors (the
/// chain in [`train_model`] assembles them from the pretraining stages).
/// With `finetune_rpn` the proposal head trains too: boxes stay on the tape
/// and a localization loss on an IoU-matched anchor minibatch is added;
/// otherwise the head is frozen.
pub fn train_rlsd(
    cfg: &RunConfig,
    ds: &Dataset,
    mut params: ParamSet,
    finetune_rpn: bool,
) -> Result<(ParamSet, Vec<f64>), TrainError> {
    let classes = ds.classes();
    let ctx = fusion_context(cfg, classes, ds.image_size());
    if cfg.train.m > ctx.anchors.len() {
        return Err(TrainError::Config(format!(
            "anchor minibatch size {} exceeds the {} anchors available",
            cfg.train.m,
            ctx.anchors.len()
        )));
    }
    let gt: Vec<Vec<BBox>> = if finetune_rpn {
        require_boxes(&ds.train, "train")?;
        ds.train
            .iter()
            .map(|s| merged_regions(s, cfg.dims.cluster_cutoff, (ctx.img_w, ctx.img_h)))
            .collect()
    } else {
        Vec::new()
    };

    let (m, pos_iou, neg_iou) = (cfg.train.m, cfg.dims.pos_iou, cfg.dims.neg_iou);
    let losses = run_stage(
        &mut params,
        ds.train.len(),
        cfg.train.epochs,
        cfg.train.lr,
        cfg,
        STAGE_FUSION,
        if finetune_rpn { "rlsd-ft-rpn" } else { "rlsd" },
        |params, idx, rng| {
            let sample = &ds.train[idx];
            let mut tape = Tape::new();
            let bound = bind(params, &mut tape, |name| {
                finetune_rpn || !name.starts_with("rpn.")
            });
            let (unrolls, map) = region_unrolls(
                &mut tape,
                &bound,
                &ctx,
                &sample.image,
                finetune_rpn,
                DropoutMode::Train,
                rng,
            )?;
            let y = multi_hot(&sample.labels, classes);
            let fused = fused_scores(&mut tape, &unrolls, classes)?;
            let mut loss = fusion_loss(&mut tape, fused, &y)?;
            if finetune_rpn {
                let batch = sample_minibatch(
                    &ctx.anchors,
                    &[],
                    &gt[idx],
                    SampleMode::Iou,
                    m,
                    pos_iou,
                    neg_iou,
                    rng,
                );
                if !batch.is_empty() {
                    let loc = localization_loss(&mut tape, map, &ctx.anchors, &batch, &gt[idx])?;
                    loss = tape.add(loss, loc)?;
                }
            }
            Ok(Some((tape, bound, loss)))
        },
    )?;
    Ok((params, losses))
}

/// Fraction of cluster-merged ground-truth regions covered by at least one
/// proposal with IoU >= `min_iou`, over all given samples.
pub fn proposal_recall(
    params: &ParamSet,
    cfg: &RunConfig,
    samples: &[Sample],
    image: (f64, f64),
    min_iou: f64,
) -> Result<f64, TrainError> {
    let asm = assemble(cfg, 1);
    let mut hit = 0usize;
    let mut total = 0usize;
    for s in samples {
        let regions = merged_regions(s, cfg.dims.cluster_cutoff, image);
        if regions.is_empty() {
            continue;
        }
        let props = propose(
            params,
            &asm.backbone,
            &cfg.dims.anchor_scales,
            &cfg.dims.anchor_ratios,
            &s.image,
            cfg.train.m,
            cfg.dims.nms_iou,
            cfg.dims.delta_clamp,
        )?;
        for g in &regions {
            total += 1;
            if props.iter().any(|p| iou(&p.bbox, g) >= min_iou) {
                hit += 1;
            }
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

/// The result of a full training run: final parameters, the per-epoch loss
/// trace numbered continuously across stages, and (for chains that pretrain
/// a localizer) its held-out region recall.
pub struct TrainOutcome {
    pub params: ParamSet,
    pub loss_log: Vec<(usize, f64)>,
    pub proposal_recall: Option<f64>,
}

fn number_epochs(stages: Vec<Vec<f64>>) -> Vec<(usize, f64)> {
    stages
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, loss)| (i + 1, loss))
        .collect()
}

/// Run the full regime selected by `cfg.model`.
pub fn train_model(cfg: &RunConfig, ds: &Dataset) -> Result<TrainOutcome, TrainError> {
    match cfg.model {
        ModelKind::MultiCnn => {
            let (params, losses) = train_multi_cnn(cfg, ds)?;
            Ok(TrainOutcome {
                params,
                loss_log: number_epochs(vec![losses]),
                proposal_recall: None,
            })
        }
        ModelKind::CnnLstm => {
            let (params, losses) = pretrain_global_lstm(cfg, ds, None)?;
            Ok(TrainOutcome {
                params,
                loss_log: number_epochs(vec![losses]),
                proposal_recall: None,
            })
        }
        ModelKind::Rlsd | ModelKind::RlsdFtRpn => {
            let finetune = cfg.model == ModelKind::RlsdFtRpn;
            let (loc, loc_losses) = pretrain_localizer(cfg, ds)?;
            let recall = proposal_recall(&loc, cfg, &ds.test, ds.image_size(), 0.5)?;
            log::info!(
                "localizer: held-out region recall@{} = {:.3}",
                cfg.train.m,
                recall
            );
            let (lstm, lstm_losses) = pretrain_global_lstm(cfg, ds, Some(&loc))?;

            // Assemble the fused parameter set: proposal head from the
            // localizer stage, backbone/encoder/decoder from the global
            // stage (whose backbone was warm-started from the localizer's,
            // so the frozen head still sees features it was trained on).
            let classes = ds.classes();
            let asm = assemble(cfg, classes);
            let mut rng = stage_init_rng(cfg.train.seed, STAGE_FUSION);
            let mut params = ParamSet::new();
            asm.backbone.init_params(&mut params, &mut rng);
            asm.rpn.init_params(&mut params, &mut rng);
            asm.encoder.init_params(&mut params, &mut rng);
            asm.lstm.init_params(&mut params, &mut rng);
            params.adopt_values(&loc);
            params.adopt_values(&lstm);

            if finetune {
                log::info!("localizer: fine-tuning");
            } else {
                log::info!("localizer: frozen");
            }
            let (params, fuse_losses) = train_rlsd(cfg, ds, params, finetune)?;
            Ok(TrainOutcome {
                params,
                loss_log: number_epochs(vec![loc_losses, lstm_losses, fuse_losses]),
                proposal_recall: Some(recall),
            })
        }
    }
}

/// Per-label scores for one image under a trained model. Multi-CNN returns
/// its sigmoid outputs; CNN+LSTM the per-label maximum over its fixed-step
/// distributions; the fused models the max-pooled prediction grid over
/// proposal regions (raw maxima, not renormalized).
pub fn score_image(
    params: &ParamSet,
    cfg: &RunConfig,
    model: ModelKind,
    classes: usize,
    image: &Tensor,
) -> Result<Vec<f64>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let asm = assemble(cfg, classes);
    let mut tape = Tape::new();
    let bound = bind_frozen(params, &mut tape);
    match model {
        ModelKind::MultiCnn => {
            let img = tape.leaf(image.clone(), false);
            let scores = multi_cnn_forward(
                &mut tape,
                &asm.backbone,
                &bound,
                img,
                cfg.train.dropout,
                DropoutMode::Eval,
                &mut rng,
            )?;
            Ok(tape.value(scores).data.clone())
        }
        ModelKind::CnnLstm => {
            let img = tape.leaf(image.clone(), false);
            let feat = extract_features(&mut tape, &asm.backbone, &bound, img)?;
            let (w, h) = (image.shape[2] as f64, image.shape[1] as f64);
            let box_id =
                tape.leaf(Tensor::from_vec(vec![4], vec![w / 2.0, h / 2.0, w, h]), false);
            let region = tape.bilinear_sample(
                feat,
                box_id,
                (cfg.dims.grid, cfg.dims.grid),
                asm.backbone.stride() as f64,
            )?;
            let v = encode_region(
                &mut tape,
                &bound,
                region,
                cfg.train.dropout,
                DropoutMode::Eval,
                &mut rng,
            )?;
            let probs = global_lstm_steps(
                &mut tape,
                &bound,
                &asm.lstm,
                v,
                cfg.train.t_max,
                cfg.train.dropout,
                DropoutMode::Eval,
                &mut rng,
            )?;
            let mut scores = vec![0.0; classes];
            for &p in &probs {
                for (l, s) in scores.iter_mut().enumerate() {
                    let v = tape.value(p).data[l];
                    if v > *s {
                        *s = v;
                    }
                }
            }
            Ok(scores)
        }
        ModelKind::Rlsd | ModelKind::RlsdFtRpn => {
            let (w, h) = (image.shape[2] as f64, image.shape[1] as f64);
            let ctx = fusion_context(cfg, classes, (w, h));
            let (unrolls, _) = region_unrolls(
                &mut tape,
                &bound,
                &ctx,
                image,
                false,
                DropoutMode::Eval,
                &mut rng,
            )?;
            let grid = PredictionGrid::from_unrolls(&tape, &unrolls, ctx.t_max, classes);
            Ok(max_pool_fusion(&grid))
        }
    }
}

/// Score every sample of a split into evaluation records (truth labels,
/// object boxes, image size), ready for the metrics suite.
pub fn evaluate_split(
    params: &ParamSet,
    cfg: &RunConfig,
    model: ModelKind,
    ds: &Dataset,
    split: Split,
) -> Result<Vec<EvalRecord>, TrainError> {
    let classes = ds.classes();
    let image_size = ds.image_size();
    let mut records = Vec::new();
    for (i, sample) in ds.split(split).iter().enumerate() {
        let scores = score_image(params, cfg, model, classes, &sample.image)?;
        let objects: Vec<(usize, BBox)> =
            sample.objects.iter().map(|p| (p.label, p.bbox)).collect();
        records.push(EvalRecord {
            image_id: i,
            scores,
            truth: sample.labels.clone(),
            objects: if objects.is_empty() { None } else { Some(objects) },
            image_size,
        });
    }
    Ok(records)
}
