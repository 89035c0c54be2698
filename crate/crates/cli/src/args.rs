//! Command-line grammar. Every argument struct is also the `args` object of a
//! run manifest, so value types serialise to the same strings they parse from.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use featviz::attribution::{ConvRule, ReluRule, TargetSpec, DEFAULT_EPSILON};
use featviz::occlusion::Fill;
use featviz::reconstruction::Init;
use featviz::viz::{Colormap, Normalization, RenderSpec, Upsample};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    name = "featviz",
    version,
    about = "Explain CNN decisions: attribution, occlusion, CAM, reconstruction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the top class scores for an image.
    Forward(ForwardArgs),
    /// Backward attribution map (gradient, deconvnet, guided, LRP).
    Attribute(AttributeArgs),
    /// Occlusion sweep heatmap.
    Occlude(OccludeArgs),
    /// Class activation map of a network ending in global average pooling.
    Cam(CamArgs),
    /// Gradient-ascent input reconstruction.
    Reconstruct(ReconstructArgs),
    /// Layer table with shapes and parameter counts.
    Inspect(InspectArgs),
    /// Re-run a recorded manifest.
    Replay(ReplayArgs),
}

/// Parses `text` with `FromStr`, for serde `try_from = "String"`.
macro_rules! string_serde {
    ($t:ty) => {
        impl TryFrom<String> for $t {
            type Error = String;
            fn try_from(s: String) -> Result<Self, String> {
                s.parse()
            }
        }
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.to_string()
            }
        }
    };
}

/// `AxB` pair of positive integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pair(pub usize, pub usize);

impl FromStr for Pair {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once('x')
            .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| format!("expected a positive integer, got {t:?}"))
        };
        Ok(Pair(parse(a)?, parse(b)?))
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}
string_serde!(Pair);

/// `gray`, `rgb:R,G,B` (0-255) or `random:SEED`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FillArg {
    Gray,
    Rgb(u8, u8, u8),
    Random(u64),
}

impl FillArg {
    pub fn fill(self) -> Fill {
        match self {
            FillArg::Gray => Fill::gray(),
            FillArg::Rgb(r, g, b) => Fill::Solid {
                values: [r, g, b].iter().map(|&v| v as f32 / 255.0).collect(),
            },
            FillArg::Random(seed) => Fill::Random {
                seed,
                low: 0.0,
                high: 1.0,
            },
        }
    }

    pub fn seed(self) -> Option<u64> {
        match self {
            FillArg::Random(seed) => Some(seed),
            _ => None,
        }
    }
}

impl FromStr for FillArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "gray" {
            return Ok(FillArg::Gray);
        }
        if let Some(rest) = s.strip_prefix("rgb:") {
            let parts: Vec<u8> = rest
                .split(',')
                .map(|p| p.trim().parse::<u8>())
                .collect::<Result<_, _>>()
                .map_err(|_| format!("expected rgb:R,G,B with values 0-255, got {s:?}"))?;
            if let [r, g, b] = parts[..] {
                return Ok(FillArg::Rgb(r, g, b));
            }
            return Err(format!("expected three rgb components, got {s:?}"));
        }
        if let Some(seed) = s.strip_prefix("random:") {
            return seed
                .parse()
                .map(FillArg::Random)
                .map_err(|_| format!("expected random:SEED, got {s:?}"));
        }
        Err(format!(
            "expected gray, rgb:R,G,B or random:SEED, got {s:?}"
        ))
    }
}

impl fmt::Display for FillArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillArg::Gray => write!(f, "gray"),
            FillArg::Rgb(r, g, b) => write!(f, "rgb:{r},{g},{b}"),
            FillArg::Random(seed) => write!(f, "random:{seed}"),
        }
    }
}
string_serde!(FillArg);

/// `none`, `nearest:F` or `bilinear:F`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UpsampleArg(pub Upsample);

impl FromStr for UpsampleArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(UpsampleArg(Upsample::None));
        }
        let (mode, factor) = s
            .split_once(':')
            .ok_or_else(|| format!("expected none, nearest:F or bilinear:F, got {s:?}"))?;
        let factor: usize = factor.parse().ok().filter(|&f| f > 0).ok_or_else(|| {
            format!("upsampling factor must be a positive integer, got {factor:?}")
        })?;
        match mode {
            "nearest" => Ok(UpsampleArg(Upsample::Nearest { factor })),
            "bilinear" => Ok(UpsampleArg(Upsample::Bilinear { factor })),
            _ => Err(format!("unknown upsampling mode {mode:?}")),
        }
    }
}

impl fmt::Display for UpsampleArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Upsample::None => write!(f, "none"),
            Upsample::Nearest { factor } => write!(f, "nearest:{factor}"),
            Upsample::Bilinear { factor } => write!(f, "bilinear:{factor}"),
        }
    }
}
string_serde!(UpsampleArg);

/// `absmax` or `percentile:Q`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NormalizeArg(pub Normalization);

impl FromStr for NormalizeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "absmax" {
            return Ok(NormalizeArg(Normalization::AbsMax));
        }
        let q = s
            .strip_prefix("percentile:")
            .ok_or_else(|| format!("expected absmax or percentile:Q, got {s:?}"))?;
        let q: f32 = q.parse().map_err(|_| format!("bad percentile {q:?}"))?;
        if !(q > 0.0 && q <= 100.0) {
            return Err(format!("percentile must be in (0, 100], got {q}"));
        }
        Ok(NormalizeArg(Normalization::PercentileClip { q }))
    }
}

impl fmt::Display for NormalizeArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Normalization::AbsMax => write!(f, "absmax"),
            Normalization::PercentileClip { q } => write!(f, "percentile:{q}"),
        }
    }
}
string_serde!(NormalizeArg);

/// `zeros` or `rand:SEED` (uniform in [-0.1, 0.1)).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InitArg {
    #[default]
    Zeros,
    Rand(u64),
}

impl InitArg {
    pub fn init(self) -> Init {
        match self {
            InitArg::Zeros => Init::Zeros,
            InitArg::Rand(seed) => Init::RandomUniform {
                seed,
                low: -0.1,
                high: 0.1,
            },
        }
    }
}

impl FromStr for InitArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "zeros" {
            return Ok(InitArg::Zeros);
        }
        s.strip_prefix("rand:")
            .and_then(|seed| seed.parse().ok())
            .map(InitArg::Rand)
            .ok_or_else(|| format!("expected zeros or rand:SEED, got {s:?}"))
    }
}

impl fmt::Display for InitArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitArg::Zeros => write!(f, "zeros"),
            InitArg::Rand(seed) => write!(f, "rand:{seed}"),
        }
    }
}
string_serde!(InitArg);

/// `LAYER:CHANNEL:Y:X` internal unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UnitArg {
    pub layer: usize,
    pub channel: usize,
    pub y: usize,
    pub x: usize,
}

impl FromStr for UnitArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<usize> = s
            .split(':')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| format!("expected LAYER:CHANNEL:Y:X, got {s:?}"))?;
        match parts[..] {
            [layer, channel, y, x] => Ok(UnitArg {
                layer,
                channel,
                y,
                x,
            }),
            _ => Err(format!("expected LAYER:CHANNEL:Y:X, got {s:?}")),
        }
    }
}

impl fmt::Display for UnitArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.layer, self.channel, self.y, self.x)
    }
}
string_serde!(UnitArg);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReluRuleArg {
    #[default]
    Backprop,
    Deconvnet,
    Guided,
}

impl From<ReluRuleArg> for ReluRule {
    fn from(r: ReluRuleArg) -> Self {
        match r {
            ReluRuleArg::Backprop => ReluRule::Backprop,
            ReluRuleArg::Deconvnet => ReluRule::Deconvnet,
            ReluRuleArg::Guided => ReluRule::Guided,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvRuleArg {
    #[default]
    Gradient,
    Lrp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColormapArg {
    #[default]
    Signed,
    Grayscale,
    Hot,
}

/// Rendering flags shared by the image-producing subcommands.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderArgs {
    #[arg(long, value_enum, default_value_t)]
    pub colormap: ColormapArg,
    /// `absmax` or `percentile:Q`.
    #[arg(long, default_value = "absmax")]
    pub normalize: NormalizeArg,
    /// `none`, `nearest:F` or `bilinear:F`.
    #[arg(long, default_value = "none")]
    pub upsample: UpsampleArg,
}

impl RenderArgs {
    pub fn spec(&self) -> RenderSpec {
        RenderSpec {
            colormap: match self.colormap {
                ColormapArg::Signed => Colormap::Signed,
                ColormapArg::Grayscale => Colormap::Grayscale,
                ColormapArg::Hot => Colormap::Hot,
            },
            normalization: self.normalize.0,
            upsample: self.upsample.0,
        }
    }
}

/// Either `--class C` or `--unit L:C:Y:X`.
#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[group(required = true, multiple = false)]
pub struct TargetArgs {
    /// Pre-softmax class score to explain.
    #[arg(long)]
    pub class: Option<usize>,
    /// Internal unit `LAYER:CHANNEL:Y:X` (layer output, zero-based).
    #[arg(long)]
    pub unit: Option<UnitArg>,
}

impl TargetArgs {
    pub fn target(&self) -> TargetSpec {
        match (self.class, self.unit) {
            (Some(class_index), _) => TargetSpec::ClassUnit { class_index },
            (None, Some(u)) => TargetSpec::InternalUnit {
                layer_index: u.layer,
                channel: u.channel,
                y: u.y,
                x: u.x,
            },
            (None, None) => unreachable!("clap requires one target flag"),
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// PPM/PGM image or `.fvt` tensor.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub topk: usize,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long, value_enum, default_value_t)]
    pub relu_rule: ReluRuleArg,
    #[arg(long, value_enum, default_value_t)]
    pub conv_rule: ConvRuleArg,
    /// Stabiliser for `--conv-rule lrp`.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f32,
    /// Rendered map (PPM).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the raw map as an `.fvt` tensor.
    #[arg(long)]
    pub raw: Option<PathBuf>,
    #[command(flatten)]
    pub render: RenderArgs,
}

impl AttributeArgs {
    pub fn conv_rule(&self) -> ConvRule {
        match self.conv_rule {
            ConvRuleArg::Gradient => ConvRule::Gradient,
            ConvRuleArg::Lrp => ConvRule::LrpEpsilon {
                epsilon: self.epsilon,
            },
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccludeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Box size `BHxBW`.
    #[arg(long = "box")]
    pub box_size: Pair,
    /// Grid stride `SYxSX`.
    #[arg(long, default_value = "1x1")]
    pub stride: Pair,
    /// `gray`, `rgb:R,G,B` or `random:SEED`.
    #[arg(long, default_value = "gray")]
    pub fill: FillArg,
    /// Threads for the sweep; 0 uses every core. Falls back to
    /// FEATVIZ_WORKERS, then 1. Results do not depend on it.
    #[arg(long, env = "FEATVIZ_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub raw: Option<PathBuf>,
    #[command(flatten)]
    pub render: RenderArgs,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub class: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub raw: Option<PathBuf>,
    #[command(flatten)]
    pub render: RenderArgs,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[command(group = clap::ArgGroup::new("objective").required(true).args(["maximize_class", "invert_layer"]))]
pub struct ReconstructArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Maximise this pre-softmax class score.
    #[arg(long)]
    pub maximize_class: Option<usize>,
    /// Match the output of this layer to `--reference`.
    #[arg(long, requires = "reference")]
    pub invert_layer: Option<usize>,
    /// Target representation as an `.fvt` tensor, or an image whose
    /// representation at `--invert-layer` is computed first.
    #[arg(long, requires = "invert_layer")]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_p: f32,
    #[arg(long, default_value_t = 6.0)]
    pub p: f32,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_tv: f32,
    /// `zeros` or `rand:SEED`.
    #[arg(long, default_value = "zeros")]
    pub init: InitArg,
    /// Snapshot period in steps; 0 writes only the final iterate.
    #[arg(long, default_value_t = 0)]
    pub record_every: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq)]
pub struct ReplayArgs {
    /// Manifest written next to an earlier output.
    pub manifest: PathBuf,
    /// Write the outputs here (same file names) instead of their recorded paths.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
