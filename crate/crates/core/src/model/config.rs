use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::BlockConfig;

/// Order of alignment and fusion within a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Paradigm {
    /// Align, then fuse.
    #[default]
    AF,
    /// Fuse, then align.
    FA,
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Paradigm::AF => "AF",
            Paradigm::FA => "FA",
        })
    }
}

impl FromStr for Paradigm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AF" | "af" => Ok(Paradigm::AF),
            "FA" | "fa" => Ok(Paradigm::FA),
            other => Err(Error::Config(format!("unknown paradigm `{other}` (expected AF or FA)"))),
        }
    }
}

/// Component variants: M1 has no SAM, CFM or DCM; M2, M3 and M4 enable
/// exactly one of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    M1,
    M2,
    M3,
    M4,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::M1, Variant::M2, Variant::M3, Variant::M4, Variant::Full];

    /// `(use_sam, use_cfm, use_dcm)`.
    pub fn toggles(self) -> (bool, bool, bool) {
        match self {
            Variant::M1 => (false, false, false),
            Variant::M2 => (true, false, false),
            Variant::M3 => (false, true, false),
            Variant::M4 => (false, false, true),
            Variant::Full => (true, true, true),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::M1 => "M1",
            Variant::M2 => "M2",
            Variant::M3 => "M3",
            Variant::M4 => "M4",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected M1..M4 or full)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stages: usize,
    pub channels: usize,
    pub window_size: usize,
    pub num_heads: usize,
    pub ffn_expansion: f64,
    pub paradigm: Paradigm,
    pub use_sam: bool,
    pub use_cfm: bool,
    pub use_dcm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            channels: 32,
            window_size: 8,
            num_heads: 4,
            ffn_expansion: 2.0,
            paradigm: Paradigm::AF,
            use_sam: true,
            use_cfm: true,
            use_dcm: true,
        }
    }
}

impl ModelConfig {
    /// `C = 16`, `T = 2`.
    pub fn desk() -> Self {
        Self {
            stages: 2,
            channels: 16,
            ..Self::default()
        }
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            channels: self.channels,
            window_size: self.window_size,
            num_heads: self.num_heads,
            ffn_expansion: self.ffn_expansion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("stages must be at least 1".into()));
        }
        self.block().validate()
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        (self.use_sam, self.use_cfm, self.use_dcm) = v.toggles();
        self
    }

    pub fn with_stages(mut self, stages: usize) -> Self {
        self.stages = stages;
        self
    }

    pub fn with_paradigm(mut self, p: Paradigm) -> Self {
        self.paradigm = p;
        self
    }

    pub fn variant(&self) -> Variant {
        Variant::ALL
            .into_iter()
            .find(|v| v.toggles() == (self.use_sam, self.use_cfm, self.use_dcm))
            .unwrap_or(Variant::Full)
    }
}
