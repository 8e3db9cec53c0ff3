//! Run configuration: a flat dotted-key text format plus the resolved
//! [`RunConfig`] every command works from.
//!
//! The file format is one `key=value` per line with `#` comments, e.g.
//!
//! ```text
//! model=rlsd
//! train.lr=0.01
//! train.epochs=4
//! scene.classes=12
//! ```
//!
//! Resolution order is: preset defaults, then the config file top to
//! bottom, then flag overrides. Putting `preset=paper` in a file resets the
//! size-dependent defaults (backbone widths, proposal count, RPN width) at
//! the point it appears, so later lines can still override individual
//! values. The fully resolved config is echoed verbatim (sorted keys) into
//! checkpoints and reports, and that echo parses back to the same config.

use crate::backbone::BackboneConfig;
use crate::synthdata::SceneSpec;
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    MultiCnn,
    CnnLstm,
    Rlsd,
    RlsdFtRpn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::MultiCnn => "multi-cnn",
            ModelKind::CnnLstm => "cnn-lstm",
            ModelKind::Rlsd => "rlsd",
            ModelKind::RlsdFtRpn => "rlsd-ft-rpn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "multi-cnn" => Ok(ModelKind::MultiCnn),
            "cnn-lstm" => Ok(ModelKind::CnnLstm),
            "rlsd" => Ok(ModelKind::Rlsd),
            "rlsd-ft-rpn" => Ok(ModelKind::RlsdFtRpn),
            other => Err(format!(
                "unknown model {other:?}, expected multi-cnn | cnn-lstm | rlsd | rlsd-ft-rpn"
            )),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

/// Optimization hyperparameters. The three pretraining/training stages get
/// separate learning rates and epoch counts; `lr`/`epochs` drive the final
/// stage of whatever model is being trained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub loc_lr: f64,
    pub lstm_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Images per SGD step.
    pub batch: usize,
    /// Region/anchor minibatch size: proposals kept per image and anchors
    /// sampled per localization step. Even, so the anchor sample can split
    /// half positive / half negative.
    pub m: usize,
    /// Maximum label-sequence length per region (excluding the END step).
    pub t_max: usize,
    pub epochs: usize,
    pub loc_epochs: usize,
    pub lstm_epochs: usize,
    pub seed: u64,
    /// Written by trainers into the checkpoint echo.
    pub epochs_completed: usize,
}

/// Architecture sizes shared by all regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub backbone: BackboneConfig,
    pub rpn_hidden: usize,
    /// Bilinear sampling grid is `grid`×`grid` per region.
    pub grid: usize,
    pub encoder_width: usize,
    pub embed: usize,
    pub hidden: usize,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub nms_iou: f64,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub delta_clamp: f64,
    /// Single-linkage cutoff for merging ground-truth boxes into regions,
    /// as a fraction of the image diagonal.
    pub cluster_cutoff: f64,
}

impl ModelDims {
    pub fn desk() -> ModelDims {
        ModelDims {
            backbone: BackboneConfig::desk(),
            rpn_hidden: 32,
            grid: 7,
            encoder_width: 256,
            embed: 64,
            hidden: 128,
            anchor_scales: vec![8.0, 16.0, 24.0, 40.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            nms_iou: 0.7,
            pos_iou: 0.7,
            neg_iou: 0.3,
            delta_clamp: 4.0,
            cluster_cutoff: 0.3,
        }
    }

    pub fn paper() -> ModelDims {
        ModelDims {
            backbone: BackboneConfig::paper(),
            rpn_hidden: 256,
            grid: 7,
            encoder_width: 4096,
            embed: 256,
            hidden: 512,
            anchor_scales: vec![64.0, 128.0, 256.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            nms_iou: 0.7,
            pos_iou: 0.7,
            neg_iou: 0.3,
            delta_clamp: 4.0,
            cluster_cutoff: 0.3,
        }
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }
}

/// Everything a command needs, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub preset: Preset,
    pub train: TrainConfig,
    pub dims: ModelDims,
    pub scene: SceneSpec,
    /// Dataset root, once known (recorded for provenance in echoes).
    pub data: Option<String>,
    /// Output path, once known.
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    pub fn desk() -> RunConfig {
        RunConfig {
            model: ModelKind::Rlsd,
            preset: Preset::Desk,
            train: TrainConfig {
                lr: 0.01,
                loc_lr: 0.02,
                lstm_lr: 0.02,
                momentum: 0.9,
                weight_decay: 1e-4,
                dropout: 0.5,
                batch: 8,
                m: 32,
                t_max: 8,
                epochs: 4,
                loc_epochs: 4,
                lstm_epochs: 6,
                seed: 0,
                epochs_completed: 0,
            },
            dims: ModelDims::desk(),
            scene: SceneSpec::desk(0),
            data: None,
            out: None,
        }
    }

    /// Reset the size-dependent fields to a preset's defaults.
    fn switch_preset(&mut self, preset: Preset) {
        self.preset = preset;
        match preset {
            Preset::Desk => {
                self.dims = ModelDims::desk();
                self.train.m = 32;
            }
            Preset::Paper => {
                self.dims = ModelDims::paper();
                self.train.m = 256;
                self.train.lr = 1e-5;
            }
        }
    }

    /// Apply one dotted key. Unknown keys and malformed values are
    /// diagnostics, never silently ignored.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: e.to_string(),
            })
        }
        match key {
            "model" => {
                self.model = value.parse().map_err(|reason| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    reason,
                })?
            }
            "preset" => match value {
                "desk" => self.switch_preset(Preset::Desk),
                "paper" => self.switch_preset(Preset::Paper),
                other => {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: other.into(),
                        reason: "expected desk | paper".into(),
                    })
                }
            },
            "train.lr" => self.train.lr = num(key, value)?,
            "train.loc_lr" => self.train.loc_lr = num(key, value)?,
            "train.lstm_lr" => self.train.lstm_lr = num(key, value)?,
            "train.momentum" => self.train.momentum = num(key, value)?,
            "train.weight_decay" => self.train.weight_decay = num(key, value)?,
            "train.dropout" => self.train.dropout = num(key, value)?,
            "train.batch" => self.train.batch = num(key, value)?,
            "train.m" => self.train.m = num(key, value)?,
            "train.t_max" => self.train.t_max = num(key, value)?,
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.loc_epochs" => self.train.loc_epochs = num(key, value)?,
            "train.lstm_epochs" => self.train.lstm_epochs = num(key, value)?,
            "train.seed" => self.train.seed = num(key, value)?,
            "train.epochs_completed" => self.train.epochs_completed = num(key, value)?,
            "model.rpn_hidden" => self.dims.rpn_hidden = num(key, value)?,
            "model.grid" => self.dims.grid = num(key, value)?,
            "model.encoder_width" => self.dims.encoder_width = num(key, value)?,
            "model.embed" => self.dims.embed = num(key, value)?,
            "model.hidden" => self.dims.hidden = num(key, value)?,
            "model.nms_iou" => self.dims.nms_iou = num(key, value)?,
            "model.pos_iou" => self.dims.pos_iou = num(key, value)?,
            "model.neg_iou" => self.dims.neg_iou = num(key, value)?,
            "model.delta_clamp" => self.dims.delta_clamp = num(key, value)?,
            "model.cluster_cutoff" => self.dims.cluster_cutoff = num(key, value)?,
            "scene.width" => self.scene.image_size.0 = num(key, value)?,
            "scene.height" => self.scene.image_size.1 = num(key, value)?,
            "scene.classes" => {
                let classes: usize = num(key, value)?;
                // Rebuild the co-occurrence structure at the new size.
                let mut scene = SceneSpec::desk(self.scene.seed);
                if classes != 12 {
                    scene.classes = classes;
                    scene.q = identity_q(classes);
                    scene.small_classes =
                        (0..classes.min(4).max(1)).collect();
                }
                scene.image_size = self.scene.image_size;
                scene.objects_per_image = self.scene.objects_per_image;
                self.scene = scene;
            }
            "scene.min_objects" => self.scene.objects_per_image.0 = num(key, value)?,
            "scene.max_objects" => self.scene.objects_per_image.1 = num(key, value)?,
            "scene.seed" => self.scene.seed = num(key, value)?,
            "scene.small" => {
                let mut small = Vec::new();
                for part in value.split(',').filter(|p| !p.is_empty()) {
                    small.push(num::<usize>(key, part.trim())?);
                }
                self.scene.small_classes = small;
            }
            "run.data" => self.data = Some(value.to_string()),
            "run.out" => self.out = Some(value.to_string()),
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Apply a whole config file (`#` comments and blank lines skipped).
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (pair, _) in parse_dotted(text)? {
            self.apply(&pair.0, &pair.1)?;
        }
        Ok(())
    }

    /// The verbatim echo: `preset` first (applying it resets size defaults,
    /// so every explicit value must come after), then every other key,
    /// sorted, one per line. Parsing this back into a default config
    /// reproduces `self` exactly for anything expressible through [`apply`]
    /// (a programmatically customized co-occurrence matrix is not).
    pub fn to_dotted(&self) -> String {
        let small: Vec<String> =
            self.scene.small_classes.iter().map(|c| c.to_string()).collect();
        let mut pairs: Vec<(String, String)> = vec![
            ("model".into(), self.model.to_string()),
            ("scene.classes".into(), self.scene.classes.to_string()),
            ("train.lr".into(), self.train.lr.to_string()),
            ("train.loc_lr".into(), self.train.loc_lr.to_string()),
            ("train.lstm_lr".into(), self.train.lstm_lr.to_string()),
            ("train.momentum".into(), self.train.momentum.to_string()),
            ("train.weight_decay".into(), self.train.weight_decay.to_string()),
            ("train.dropout".into(), self.train.dropout.to_string()),
            ("train.batch".into(), self.train.batch.to_string()),
            ("train.m".into(), self.train.m.to_string()),
            ("train.t_max".into(), self.train.t_max.to_string()),
            ("train.epochs".into(), self.train.epochs.to_string()),
            ("train.loc_epochs".into(), self.train.loc_epochs.to_string()),
            ("train.lstm_epochs".into(), self.train.lstm_epochs.to_string()),
            ("train.seed".into(), self.train.seed.to_string()),
            ("train.epochs_completed".into(), self.train.epochs_completed.to_string()),
            ("model.rpn_hidden".into(), self.dims.rpn_hidden.to_string()),
            ("model.grid".into(), self.dims.grid.to_string()),
            ("model.encoder_width".into(), self.dims.encoder_width.to_string()),
            ("model.embed".into(), self.dims.embed.to_string()),
            ("model.hidden".into(), self.dims.hidden.to_string()),
            ("model.nms_iou".into(), self.dims.nms_iou.to_string()),
            ("model.pos_iou".into(), self.dims.pos_iou.to_string()),
            ("model.neg_iou".into(), self.dims.neg_iou.to_string()),
            ("model.delta_clamp".into(), self.dims.delta_clamp.to_string()),
            ("model.cluster_cutoff".into(), self.dims.cluster_cutoff.to_string()),
            ("scene.width".into(), self.scene.image_size.0.to_string()),
            ("scene.height".into(), self.scene.image_size.1.to_string()),
            ("scene.min_objects".into(), self.scene.objects_per_image.0.to_string()),
            ("scene.max_objects".into(), self.scene.objects_per_image.1.to_string()),
            ("scene.seed".into(), self.scene.seed.to_string()),
            ("scene.small".into(), small.join(",")),
        ];
        if let Some(data) = &self.data {
            pairs.push(("run.data".into(), data.clone()));
        }
        if let Some(out) = &self.out {
            pairs.push(("run.out".into(), out.clone()));
        }
        pairs.sort();
        let mut text = format!("preset={}\n", self.preset.as_str());
        for (k, v) in pairs {
            text.push_str(&k);
            text.push('=');
            text.push_str(&v);
            text.push('\n');
        }
        text
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.train;
        for (name, lr) in [("train.lr", t.lr), ("train.loc_lr", t.loc_lr), ("train.lstm_lr", t.lstm_lr)]
        {
            if !(lr > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be > 0, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(ConfigError::Invalid(format!(
                "train.momentum must be in [0, 1), got {}",
                t.momentum
            )));
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return Err(ConfigError::Invalid(format!(
                "train.dropout must be in [0, 1), got {}",
                t.dropout
            )));
        }
        if t.m == 0 || t.m % 2 != 0 {
            return Err(ConfigError::Invalid(format!("train.m must be even and > 0, got {}", t.m)));
        }
        if t.batch == 0 {
            return Err(ConfigError::Invalid("train.batch must be >= 1".into()));
        }
        if t.t_max == 0 {
            return Err(ConfigError::Invalid("train.t_max must be >= 1".into()));
        }
        if self.dims.grid == 0 {
            return Err(ConfigError::Invalid("model.grid must be >= 1".into()));
        }
        if self.train.weight_decay < 0.0 {
            return Err(ConfigError::Invalid("train.weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

fn identity_q(l: usize) -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; l]; l];
    for (i, row) in q.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    q
}

/// Tokenize config text into `((key, value), line_number)` pairs.
pub fn parse_dotted(text: &str) -> Result<Vec<((String, String), usize)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
        };
        pairs.push(((key.trim().to_string(), value.trim().to_string()), i + 1));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_validate() {
        let cfg = RunConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.m, 32);
        assert_eq!(cfg.train.t_max, 8);
        assert_eq!(cfg.train.dropout, 0.5);
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.dims.anchors_per_cell(), 12);
    }

    #[test]
    fn echo_round_trips_exactly() {
        let mut cfg = RunConfig::desk();
        cfg.apply("train.lr", "1e-5").unwrap();
        cfg.apply("model", "cnn-lstm").unwrap();
        cfg.apply("run.data", "data/desk").unwrap();
        cfg.apply("scene.small", "0, 2, 5").unwrap();
        let echo = cfg.to_dotted();
        let mut back = RunConfig::desk();
        back.apply_text(&echo).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_dotted(), echo);
        assert_eq!(back.train.lr, 1e-5);
        assert_eq!(back.scene.small_classes, vec![0, 2, 5]);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let mut cfg = RunConfig::desk();
        cfg.apply_text("# full line comment\n\ntrain.epochs=9  # trailing\n").unwrap();
        assert_eq!(cfg.train.epochs, 9);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_diagnosed() {
        let mut cfg = RunConfig::desk();
        let err = cfg.apply("train.learning_rate", "0.1").unwrap_err();
        assert!(err.to_string().contains("train.learning_rate"), "{err}");

        let err = cfg.apply("train.lr", "fast").unwrap_err();
        assert!(err.to_string().contains("fast"), "{err}");

        let err = cfg.apply_text("just a line\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");

        let err = cfg.apply("model", "resnet").unwrap_err();
        assert!(err.to_string().contains("resnet"), "{err}");
    }

    #[test]
    fn later_values_override_earlier_ones() {
        let mut cfg = RunConfig::desk();
        cfg.apply_text("train.epochs=3\ntrain.epochs=7\n").unwrap();
        assert_eq!(cfg.train.epochs, 7);
        // Flag overrides run after the file.
        cfg.apply("train.epochs", "11").unwrap();
        assert_eq!(cfg.train.epochs, 11);
    }

    #[test]
    fn preset_switch_resets_size_defaults_in_order() {
        let mut cfg = RunConfig::desk();
        cfg.apply_text("preset=paper\ntrain.m=64\n").unwrap();
        assert_eq!(cfg.train.m, 64);
        assert_eq!(cfg.dims.backbone.stride(), 16);

        let mut cfg = RunConfig::desk();
        cfg.apply_text("train.m=64\npreset=paper\n").unwrap();
        assert_eq!(cfg.train.m, 256);
        assert_eq!(cfg.train.lr, 1e-5);
    }

    #[test]
    fn invariants_are_enforced() {
        let mut cfg = RunConfig::desk();
        cfg.train.momentum = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::desk();
        cfg.train.m = 33;
        assert!(cfg.validate().unwrap_err().to_string().contains("even"));

        let mut cfg = RunConfig::desk();
        cfg.train.lr = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scene_classes_rebuilds_a_consistent_spec() {
        let mut cfg = RunConfig::desk();
        cfg.apply("scene.classes", "6").unwrap();
        assert_eq!(cfg.scene.classes, 6);
        assert_eq!(cfg.scene.q.len(), 6);
        cfg.scene.validate().unwrap();
        // Back to 12 restores the structured desk matrix.
        cfg.apply("scene.classes", "12").unwrap();
        assert_eq!(cfg.scene.q[0][4], 0.8);
    }

    #[test]
    fn echo_survives_a_preset_with_later_overrides() {
        // A dim changed after switching presets must not be clobbered when
        // the echo is re-applied (the echo puts `preset` first).
        let mut cfg = RunConfig::desk();
        cfg.apply_text("preset=paper\nmodel.grid=5\ntrain.m=64\n").unwrap();
        let mut back = RunConfig::desk();
        back.apply_text(&cfg.to_dotted()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.dims.grid, 5);
        assert_eq!(back.train.m, 64);
    }

    #[test]
    fn echo_preserves_a_custom_class_count() {
        let mut cfg = RunConfig::desk();
        cfg.apply("scene.classes", "6").unwrap();
        cfg.apply("scene.small", "1, 3").unwrap();
        let mut back = RunConfig::desk();
        back.apply_text(&cfg.to_dotted()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.scene.classes, 6);
        assert_eq!(back.scene.small_classes, vec![1, 3]);
    }
}
