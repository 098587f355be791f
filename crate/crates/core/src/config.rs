//! Architecture hyperparameters, named presets, and the `key = value`
//! config file format.

use crate::error::{Error, Result};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Which local extractor the sequence blocks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Vector attention: one attention weight per channel.
    Va,
    /// Grouped vector attention: one weight per channel group.
    Gva,
    /// MLP embedding followed by channelwise max over neighbors.
    Mlp,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 3] = [OperatorKind::Va, OperatorKind::Gva, OperatorKind::Mlp];
}

impl FromStr for OperatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "va" => Ok(OperatorKind::Va),
            "gva" => Ok(OperatorKind::Gva),
            "mlp" => Ok(OperatorKind::Mlp),
            other => Err(Error::Config(format!("unknown operator '{other}'"))),
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperatorKind::Va => "va",
            OperatorKind::Gva => "gva",
            OperatorKind::Mlp => "mlp",
        })
    }
}

/// Decoder strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    /// Upsample every branch to the finest branch scale and sum.
    Sum,
    /// Progressively merge adjacent branches coarse-to-fine.
    Pg,
    /// Progressive merge with a sequence block after each merge.
    Pgr,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 3] = [DecoderKind::Sum, DecoderKind::Pg, DecoderKind::Pgr];
}

impl FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(DecoderKind::Sum),
            "pg" => Ok(DecoderKind::Pg),
            "pgr" => Ok(DecoderKind::Pgr),
            other => Err(Error::Config(format!("unknown decoder '{other}'"))),
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Sum => "sum",
            DecoderKind::Pg => "pg",
            DecoderKind::Pgr => "pgr",
        })
    }
}

pub const NUM_STAGES: usize = 4;

/// Full architecture description. All forward passes, weight enumeration,
/// and cost estimates derive from this struct alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Modules per stage (M_1..M_4); each module is a per-branch chain of
    /// blocks followed by one fusion unit.
    pub modules: [usize; 4],
    /// Sequence blocks per module (B_1..B_4).
    pub blocks: [usize; 4],
    /// Base channels per stage (C_1..C_4); branch j of stage i is
    /// `2^(j-1) * C_i` wide.
    pub channels: [usize; 4],
    /// Stem embedding width C_0.
    pub stem_channels: usize,
    /// Neighbors per scale (K_1..K_4); the stem scale reuses K_1.
    pub neighbors: [usize; 4],
    /// Base group count for grouped vector attention; branch j uses
    /// `groups * 2^(j-1)` groups so the group size stays constant.
    pub groups: usize,
    /// Grid cell edge lengths (meters) for scales 1..4.
    pub grid_sizes: [f64; 4],
    pub operator: OperatorKind,
    pub num_classes: usize,
    pub decoder: DecoderKind,
    /// Relative-position term inside attention (off by default).
    pub pos_encoding: bool,
    /// Model input width C_raw (xyz plus extra channels).
    pub input_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset_l()
    }
}

impl ModelConfig {
    fn base() -> Self {
        ModelConfig {
            modules: [1, 1, 5, 4],
            blocks: [2, 2, 2, 2],
            channels: [64, 32, 32, 32],
            stem_channels: 32,
            neighbors: [16, 16, 16, 16],
            groups: 8,
            grid_sizes: [0.1, 0.2, 0.4, 0.8],
            operator: OperatorKind::Gva,
            num_classes: 13,
            decoder: DecoderKind::Pgr,
            pos_encoding: false,
            input_channels: 3,
        }
    }

    pub fn preset_t() -> Self {
        ModelConfig {
            modules: [1, 1, 2, 1],
            channels: [64, 16, 16, 16],
            ..Self::base()
        }
    }

    pub fn preset_s() -> Self {
        ModelConfig {
            modules: [1, 1, 3, 2],
            channels: [64, 16, 16, 16],
            ..Self::base()
        }
    }

    pub fn preset_b() -> Self {
        ModelConfig {
            modules: [1, 1, 3, 2],
            channels: [64, 32, 32, 32],
            ..Self::base()
        }
    }

    pub fn preset_l() -> Self {
        Self::base()
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "T" | "t" => Ok(Self::preset_t()),
            "S" | "s" => Ok(Self::preset_s()),
            "B" | "b" => Ok(Self::preset_b()),
            "L" | "l" => Ok(Self::preset_l()),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    /// Channel width of branch j (1-based) inside stage i (1-based).
    pub fn branch_width(&self, stage: usize, branch: usize) -> usize {
        debug_assert!((1..=NUM_STAGES).contains(&stage) && branch >= 1 && branch <= stage);
        self.channels[stage - 1] << (branch - 1)
    }

    /// Group count used by attention blocks on branch j (scale j). The stem
    /// block (scale 0) uses the base group count.
    pub fn branch_groups(&self, branch: usize) -> usize {
        if branch == 0 {
            self.groups
        } else {
            self.groups << (branch - 1)
        }
    }

    /// Neighbor count for a scale; scale 0 reuses K_1.
    pub fn scale_neighbors(&self, scale: usize) -> usize {
        if scale == 0 {
            self.neighbors[0]
        } else {
            self.neighbors[scale - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, vals) in [
            ("modules", &self.modules[..]),
            ("blocks", &self.blocks[..]),
            ("channels", &self.channels[..]),
            ("neighbors", &self.neighbors[..]),
        ] {
            if vals.iter().any(|&v| v == 0) {
                return Err(Error::Config(format!("{name} entries must be positive")));
            }
        }
        if self.stem_channels == 0 || self.num_classes == 0 || self.input_channels < 3 {
            return Err(Error::Config(
                "stem_channels and num_classes must be positive; input_channels >= 3".into(),
            ));
        }
        if self.groups == 0 {
            return Err(Error::Config("groups must be positive".into()));
        }
        // groups * 2^(j-1) must divide 2^(j-1) * C_i, i.e. groups | C_i.
        for (i, &c) in self.channels.iter().enumerate() {
            if c % self.groups != 0 {
                return Err(Error::Config(format!(
                    "groups {} does not divide stage {} channels {}",
                    self.groups,
                    i + 1,
                    c
                )));
            }
        }
        if self.stem_channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "groups {} does not divide stem channels {}",
                self.groups, self.stem_channels
            )));
        }
        for w in self.grid_sizes.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("grid_sizes must be strictly increasing".into()));
            }
        }
        if self.grid_sizes[0] <= 0.0 || self.grid_sizes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("grid_sizes must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Loads a config: a preset letter or a path to a `key = value` file.
pub fn load_config(spec: &str) -> Result<ModelConfig> {
    if matches!(spec, "T" | "t" | "S" | "s" | "B" | "b" | "L" | "l") {
        return ModelConfig::preset(spec);
    }
    let text = std::fs::read_to_string(Path::new(spec))
        .map_err(|e| Error::Config(format!("cannot read config '{spec}': {e}")))?;
    parse_config(&text)
}

fn parse_list<T: FromStr>(value: &str, key: &str, n: usize) -> Result<Vec<T>> {
    let items: Vec<&str> = value.split(',').map(str::trim).collect();
    if items.len() != n {
        return Err(Error::Config(format!(
            "{key}: expected {n} comma-separated values, got {}",
            items.len()
        )));
    }
    items
        .iter()
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("{key}: invalid value '{s}'")))
        })
        .collect()
}

/// Parses the line-oriented config format. Unset keys keep the default
/// (preset L) value.
pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", idx + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "modules" => cfg.modules = parse_list::<usize>(value, key, 4)?.try_into().unwrap(),
            "blocks" => cfg.blocks = parse_list::<usize>(value, key, 4)?.try_into().unwrap(),
            "channels" => cfg.channels = parse_list::<usize>(value, key, 4)?.try_into().unwrap(),
            "stem_channels" => {
                cfg.stem_channels = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid stem_channels '{value}'")))?
            }
            "neighbors" => cfg.neighbors = parse_list::<usize>(value, key, 4)?.try_into().unwrap(),
            "groups" => {
                cfg.groups = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid groups '{value}'")))?
            }
            "grid_sizes" => cfg.grid_sizes = parse_list::<f64>(value, key, 4)?.try_into().unwrap(),
            "operator" => cfg.operator = value.parse()?,
            "num_classes" => {
                cfg.num_classes = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid num_classes '{value}'")))?
            }
            "decoder" => cfg.decoder = value.parse()?,
            "pos_encoding" => {
                cfg.pos_encoding = match value {
                    "true" | "on" | "1" => true,
                    "false" | "off" | "0" => false,
                    other => return Err(Error::Config(format!("invalid pos_encoding '{other}'"))),
                }
            }
            "input_channels" => {
                cfg.input_channels = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid input_channels '{value}'")))?
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
