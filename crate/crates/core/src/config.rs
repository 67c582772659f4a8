//! Architecture hyperparameters and the flat `key = value` text format.

use std::fmt::Write as _;

use crate::blocks::LrcabVariant;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: usize,
    pub blocks: usize,
    pub scale: usize,
    pub mssa_windows: Vec<(usize, usize)>,
    pub bsgm_window: (usize, usize),
    /// LR training patch side; also the BSGM tile side.
    pub train_patch: usize,
    pub bsgm_enabled: bool,
    pub lrcab_variant: LrcabVariant,
    pub share_scores: bool,
    pub ca_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 60,
            blocks: 12,
            scale: 4,
            mssa_windows: vec![(4, 4), (8, 8), (16, 16)],
            bsgm_window: (4, 4),
            train_patch: 64,
            bsgm_enabled: true,
            lrcab_variant: LrcabVariant::Lrcab,
            share_scores: true,
            ca_ratio: 2,
        }
    }
}

pub fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("expected HxW, got `{s}`")))?;
    Ok((parse_num(a)?, parse_num(b)?))
}

pub fn parse_num<N: std::str::FromStr>(s: &str) -> Result<N> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("not a number: `{s}`")))
}

pub fn parse_bool(s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Error::Config(format!("not a boolean: `{other}`"))),
    }
}

/// Splits `key = value` lines, dropping blanks and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ModelConfig {
    /// Small configuration used by tests and smoke runs.
    pub fn tiny(channels: usize, blocks: usize, scale: usize) -> Self {
        ModelConfig {
            channels,
            blocks,
            scale,
            mssa_windows: vec![(2, 2), (4, 4), (8, 8)],
            bsgm_window: (2, 2),
            train_patch: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.blocks == 0 || self.scale == 0 {
            return bad(format!(
                "channels, blocks and scale must be positive (got {}, {}, {})",
                self.channels, self.blocks, self.scale
            ));
        }
        let n = self.mssa_windows.len();
        if n == 0 || self.channels % n != 0 {
            return bad(format!("channels {} not divisible by {} attention scales", self.channels, n));
        }
        if self.mssa_windows.iter().any(|&(h, w)| h == 0 || w == 0)
            || self.mssa_windows.windows(2).any(|p| p[1].0 <= p[0].0 || p[1].1 <= p[0].1)
        {
            return bad(format!("attention windows must be positive and strictly increasing: {:?}", self.mssa_windows));
        }
        if self.ca_ratio == 0 || self.channels % self.ca_ratio != 0 {
            return bad(format!("channels {} not divisible by ca_ratio {}", self.channels, self.ca_ratio));
        }
        let (bh, bw) = self.bsgm_window;
        if bh == 0 || bw == 0 || self.train_patch == 0 || self.train_patch % bh != 0 || self.train_patch % bw != 0 {
            return bad(format!(
                "train_patch {} must be a positive multiple of bsgm_window {:?}",
                self.train_patch, self.bsgm_window
            ));
        }
        Ok(())
    }

    /// Applies one key; returns false for keys this type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "channels" => self.channels = parse_num(value)?,
            "blocks" => self.blocks = parse_num(value)?,
            "scale" => self.scale = parse_num(value)?,
            "mssa_windows" => {
                self.mssa_windows = value.split(',').map(parse_pair).collect::<Result<_>>()?;
            }
            "bsgm_window" => self.bsgm_window = parse_pair(value)?,
            "train_patch" => self.train_patch = parse_num(value)?,
            "bsgm" => self.bsgm_enabled = parse_bool(value)?,
            "lrcab_variant" => self.lrcab_variant = value.parse()?,
            "share_scores" => self.share_scores = parse_bool(value)?,
            "ca_ratio" => self.ca_ratio = parse_num(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses a file holding only model keys; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            if !cfg.set(&k, &v)? {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let pair = |(h, w): (usize, usize)| format!("{h}x{w}");
        let mut s = String::new();
        let windows: Vec<_> = self.mssa_windows.iter().copied().map(pair).collect();
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "blocks = {}", self.blocks);
        let _ = writeln!(s, "scale = {}", self.scale);
        let _ = writeln!(s, "mssa_windows = {}", windows.join(","));
        let _ = writeln!(s, "bsgm_window = {}", pair(self.bsgm_window));
        let _ = writeln!(s, "train_patch = {}", self.train_patch);
        let _ = writeln!(s, "bsgm = {}", self.bsgm_enabled);
        let _ = writeln!(s, "lrcab_variant = {}", self.lrcab_variant);
        let _ = writeln!(s, "share_scores = {}", self.share_scores);
        let _ = writeln!(s, "ca_ratio = {}", self.ca_ratio);
        s
    }
}
