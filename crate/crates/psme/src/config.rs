//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and
//! defaults to [`RunConfig::default`]; unknown or repeated keys are errors.
//! Lists use these forms:
//!
//! - `backbone.stages = 16:3:2, 32:3:2` (channels:kernel:pool per stage)
//! - `ps.grouped_blocks = 3:4 5:6 7:8 11:10 | 3:4 5:6 7:8 11:10`
//!   (kernel:channels per branch, blocks separated by `|`)
//!
//! `ps.input_length` is also the segmented signal length.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use psme_core::attention::AttentionConfig;
use psme_core::backbone::StageSpec;
use psme_core::me::TemporalWeighting;
use psme_core::model::{Arm, FusionMechanism, ModelConfig};
use psme_core::psnet::InceptionBranchSpec;
use psme_core::signal::SegmentConfig;
use psme_core::wavelet::WaveletSpec;

use crate::IoError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub wavelet: WaveletSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            wavelet: WaveletSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn segment(&self) -> SegmentConfig {
        SegmentConfig {
            target_len: self.model.ps.input_length,
            wavelet: self.wavelet,
        }
    }
}

pub const KEYS: &[&str] = &[
    "arm",
    "fusion",
    "weighting",
    "num_classes",
    "epochs",
    "batch_size",
    "seed",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "backbone.input_size",
    "backbone.input_pool",
    "backbone.stages",
    "backbone.feature_dim",
    "depth_attention.tokens",
    "depth_attention.d_model",
    "depth_attention.heads",
    "depth_attention.residual",
    "depth_attention.layer_norm",
    "fusion_attention.tokens",
    "fusion_attention.d_model",
    "fusion_attention.heads",
    "fusion_attention.residual",
    "fusion_attention.layer_norm",
    "ps.input_length",
    "ps.stem_kernel",
    "ps.grouped_blocks",
    "ps.mixed_blocks",
    "ps.feature_dim",
    "wavelet.order",
    "wavelet.levels",
];

fn stages_text(s: &[StageSpec]) -> String {
    s.iter().map(|s| format!("{}:{}:{}", s.channels, s.kernel, s.pool)).collect::<Vec<_>>().join(", ")
}

fn blocks_text(b: &[Vec<InceptionBranchSpec>]) -> String {
    b.iter()
        .map(|blk| blk.iter().map(|s| format!("{}:{}", s.kernel_size, s.out_channels)).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join(" | ")
}

fn attention_text(out: &mut String, prefix: &str, a: &AttentionConfig) {
    let _ = writeln!(out, "{}.tokens = {}", prefix, a.tokens);
    let _ = writeln!(out, "{}.d_model = {}", prefix, a.d_model);
    let _ = writeln!(out, "{}.heads = {}", prefix, a.heads);
    let _ = writeln!(out, "{}.residual = {}", prefix, a.residual);
    let _ = writeln!(out, "{}.layer_norm = {}", prefix, a.layer_norm);
}

/// Canonical text form. [`parse`] reads it back to an equal config.
pub fn to_text(c: &RunConfig) -> String {
    let m = &c.model;
    let mut out = String::new();
    let _ = writeln!(out, "arm = {}", m.arm.name());
    let _ = writeln!(out, "fusion = {}", m.fusion.name());
    let _ = writeln!(out, "weighting = {}", m.weighting.name());
    let _ = writeln!(out, "num_classes = {}", m.num_classes);
    let _ = writeln!(out, "epochs = {}", m.epochs);
    let _ = writeln!(out, "batch_size = {}", m.batch_size);
    let _ = writeln!(out, "seed = {}", m.seed);
    let _ = writeln!(out, "lr = {}", m.adam.lr);
    let _ = writeln!(out, "beta1 = {}", m.adam.beta1);
    let _ = writeln!(out, "beta2 = {}", m.adam.beta2);
    let _ = writeln!(out, "eps = {}", m.adam.eps);
    let _ = writeln!(out, "backbone.input_size = {}", m.backbone.input_size);
    let _ = writeln!(out, "backbone.input_pool = {}", m.backbone.input_pool);
    let _ = writeln!(out, "backbone.stages = {}", stages_text(&m.backbone.stages));
    let _ = writeln!(out, "backbone.feature_dim = {}", m.backbone.feature_dim);
    attention_text(&mut out, "depth_attention", &m.depth_attention);
    attention_text(&mut out, "fusion_attention", &m.fusion_attention);
    let _ = writeln!(out, "ps.input_length = {}", m.ps.input_length);
    let _ = writeln!(out, "ps.stem_kernel = {}", m.ps.stem_kernel);
    let _ = writeln!(out, "ps.grouped_blocks = {}", blocks_text(&m.ps.grouped_blocks));
    let _ = writeln!(out, "ps.mixed_blocks = {}", blocks_text(&m.ps.mixed_blocks));
    let _ = writeln!(out, "ps.feature_dim = {}", m.ps.feature_dim);
    let _ = writeln!(out, "wavelet.order = {}", c.wavelet.order);
    let _ = writeln!(out, "wavelet.levels = {}", c.wavelet.levels);
    out
}

struct Ctx<'a> {
    path: &'a Path,
    line: usize,
}

impl Ctx<'_> {
    fn err(&self, msg: impl Into<String>) -> IoError {
        IoError::Config {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, key: &str, v: &str) -> Result<T, IoError> {
        v.parse().map_err(|_| self.err(format!("`{}`: cannot parse `{}`", key, v)))
    }

    fn list<T>(&self, key: &str, v: &str, fields: usize, sep: char, make: impl Fn(&[usize]) -> T) -> Result<Vec<T>, IoError> {
        v.split(sep)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| {
                let parts = item.split(':').map(|p| self.num::<usize>(key, p.trim())).collect::<Result<Vec<_>, _>>()?;
                if parts.len() != fields {
                    return Err(self.err(format!("`{}`: `{}` needs {} `:`-separated numbers", key, item, fields)));
                }
                Ok(make(&parts))
            })
            .collect()
    }

    fn blocks(&self, key: &str, v: &str) -> Result<Vec<Vec<InceptionBranchSpec>>, IoError> {
        v.split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|b| self.list(key, b, 2, ' ', |p| InceptionBranchSpec::new(p[0], p[1])))
            .collect()
    }
}

fn set(c: &mut RunConfig, cx: &Ctx, key: &str, v: &str) -> Result<(), IoError> {
    let m = &mut c.model;
    let attn = |a: &mut AttentionConfig, field: &str| -> Result<(), IoError> {
        match field {
            "tokens" => a.tokens = cx.num(key, v)?,
            "d_model" => a.d_model = cx.num(key, v)?,
            "heads" => a.heads = cx.num(key, v)?,
            "residual" => a.residual = cx.num(key, v)?,
            "layer_norm" => a.layer_norm = cx.num(key, v)?,
            _ => unreachable!("key table and parser disagree"),
        }
        Ok(())
    };
    match key {
        "arm" => m.arm = Arm::parse(v).ok_or_else(|| cx.err(format!("unknown arm `{}`", v)))?,
        "fusion" => m.fusion = FusionMechanism::parse(v).ok_or_else(|| cx.err(format!("unknown fusion `{}`", v)))?,
        "weighting" => m.weighting = TemporalWeighting::parse(v).ok_or_else(|| cx.err(format!("unknown weighting `{}`", v)))?,
        "num_classes" => m.num_classes = cx.num(key, v)?,
        "epochs" => m.epochs = cx.num(key, v)?,
        "batch_size" => m.batch_size = cx.num(key, v)?,
        "seed" => m.seed = cx.num(key, v)?,
        "lr" => m.adam.lr = cx.num(key, v)?,
        "beta1" => m.adam.beta1 = cx.num(key, v)?,
        "beta2" => m.adam.beta2 = cx.num(key, v)?,
        "eps" => m.adam.eps = cx.num(key, v)?,
        "backbone.input_size" => m.backbone.input_size = cx.num(key, v)?,
        "backbone.input_pool" => m.backbone.input_pool = cx.num(key, v)?,
        "backbone.stages" => {
            m.backbone.stages = cx.list(key, v, 3, ',', |p| StageSpec {
                channels: p[0],
                kernel: p[1],
                pool: p[2],
            })?
        }
        "backbone.feature_dim" => m.backbone.feature_dim = cx.num(key, v)?,
        "ps.input_length" => m.ps.input_length = cx.num(key, v)?,
        "ps.stem_kernel" => m.ps.stem_kernel = cx.num(key, v)?,
        "ps.grouped_blocks" => m.ps.grouped_blocks = cx.blocks(key, v)?,
        "ps.mixed_blocks" => m.ps.mixed_blocks = cx.blocks(key, v)?,
        "ps.feature_dim" => m.ps.feature_dim = cx.num(key, v)?,
        "wavelet.order" => c.wavelet.order = cx.num(key, v)?,
        "wavelet.levels" => c.wavelet.levels = cx.num(key, v)?,
        _ => match key.split_once('.') {
            Some(("depth_attention", f)) => attn(&mut m.depth_attention, f)?,
            Some(("fusion_attention", f)) => attn(&mut m.fusion_attention, f)?,
            _ => unreachable!("key table and parser disagree"),
        },
    }
    Ok(())
}

/// Parses a config document. `path` only labels errors.
pub fn parse(text: &str, path: &Path) -> Result<RunConfig, IoError> {
    let mut c = RunConfig::default();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let cx = Ctx { path, line: i + 1 };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| cx.err(format!("expected `key = value`, got `{}`", line)))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(cx.err(format!("unknown key `{}`", key)));
        }
        if let Some(prev) = seen.insert(key.to_string(), i + 1) {
            return Err(cx.err(format!("`{}` already set on line {}", key, prev)));
        }
        set(&mut c, &cx, key, value)?;
    }
    let cx = Ctx { path, line: 0 };
    c.wavelet = WaveletSpec::new(c.wavelet.order, c.wavelet.levels).map_err(|e| cx.err(e.to_string()))?;
    c.model.ps.num_classes = c.model.num_classes;
    psme_core::model::Model::new(c.model.clone()).map_err(|e| cx.err(e.to_string()))?;
    Ok(c)
}

pub fn load(path: &Path) -> Result<RunConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> Result<RunConfig, IoError> {
        parse(text, Path::new("run.cfg"))
    }

    #[test]
    fn empty_is_default_and_text_round_trips() {
        assert_eq!(p("# nothing\n\n").unwrap(), RunConfig::default());
        let d = RunConfig::default();
        assert_eq!(p(&to_text(&d)).unwrap(), d);
        let mut c = p("arm = colour+ps\nfusion = concat\nweighting = uniform\nlr = 0.003\nbackbone.stages = 4:3:2\nps.grouped_blocks = 3:1 5:2 | 3:2 7:3\nps.mixed_blocks =\ndepth_attention.tokens = 16\ndepth_attention.d_model = 16").unwrap();
        assert_eq!(c.model.arm, Arm::ColourPs);
        assert_eq!(c.model.ps.grouped_blocks[1][1], InceptionBranchSpec::new(7, 3));
        assert!(c.model.ps.mixed_blocks.is_empty());
        assert_eq!(p(&to_text(&c)).unwrap(), c);
        c.model.seed = 7;
        assert_ne!(p(&to_text(&c)).unwrap(), RunConfig::default());
    }

    #[test]
    fn every_key_is_written() {
        let text = to_text(&RunConfig::default());
        let written: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap().trim()).collect();
        assert_eq!(written, KEYS);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = p("epochs = 3\nepoch = 4").unwrap_err();
        assert!(matches!(e, IoError::Config { line: 2, .. }), "{}", e);
        assert!(matches!(p("epochs = 3\nepochs = 4").unwrap_err(), IoError::Config { line: 2, .. }));
        assert!(matches!(p("lr = fast").unwrap_err(), IoError::Config { line: 1, .. }));
        assert!(matches!(p("arm = voice").unwrap_err(), IoError::Config { .. }));
        assert!(matches!(p("backbone.stages = 4:3").unwrap_err(), IoError::Config { .. }));
        assert!(matches!(p("lr").unwrap_err(), IoError::Config { .. }));
        // structurally invalid models are rejected at load time
        assert!(matches!(p("depth_attention.heads = 3").unwrap_err(), IoError::Config { line: 0, .. }));
    }
}
